import json
import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from objdepth.errors import (
    DefinitionMissingError,
    InvalidArgumentError,
    MissingEmbeddingError,
    ParseError,
)
from objdepth.objects import (
    EMBED_DIM,
    SIZE_PHRASES,
    Detection,
    DetectionSet,
    EmbeddingProvider,
    build_phrase_def,
    build_phrase_def_sz,
    build_phrases,
    choose_partner,
    embed_text,
    parse_detections,
    project_objects,
    read_embedding_cache,
    size_ratio_index,
    size_ratio_phrase,
    write_detections,
    write_embedding_cache,
)

CHAIR_DEF = "a seat for one person, with a support for the back"
TABLE_DEF = "a piece of furniture having a smooth flat top"


def chair(bbox=(30.0, 30.0, 20.0, 20.0)):
    return Detection("chair.n.01", CHAIR_DEF, bbox, 0.9)


def table(bbox=(70.0, 40.0, 20.0, 20.0)):
    return Detection("table.n.02", TABLE_DEF, bbox, 0.8)


def write_jsonl(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records))
    return path


class TestParse:
    def test_empty_detection_list(self, tmp_path):
        path = write_jsonl(tmp_path / "d.jsonl", [{"image_id": "a", "width": 10, "height": 8, "detections": []}])
        (s,) = parse_detections(path)
        assert (s.image_id, s.width, s.height, len(s)) == ("a", 10, 8, 0)

    def test_one_record(self, tmp_path):
        det = {"label": "chair.n.01", "definition": CHAIR_DEF, "bbox_cxcywh": [30, 30, 20, 10], "score": 0.5}
        path = write_jsonl(tmp_path / "d.jsonl", [{"image_id": "a", "width": 100, "height": 80, "detections": [det]}])
        (s,) = parse_detections(path)
        assert s.detections == [Detection("chair.n.01", CHAIR_DEF, (30.0, 30.0, 20.0, 10.0), 0.5)]
        assert s.warnings == []

    def test_right_edge_clamped(self, tmp_path, caplog):
        det = {"label": "chair.n.01", "definition": CHAIR_DEF, "bbox_cxcywh": [90, 40, 40, 20], "score": 1}
        path = write_jsonl(tmp_path / "d.jsonl", [{"image_id": "a", "width": 100, "height": 80, "detections": [det]}])
        (s,) = parse_detections(path)
        # x-extent [70, 110] clipped to [70, 100]
        assert s.detections[0].bbox == (85.0, 40.0, 30.0, 20.0)
        assert len(s.warnings) == 1 and "clamped" in caplog.text

    @pytest.mark.parametrize(
        "line2, field",
        [
            ("{not json", None),
            ('{"image_id": "b", "width": 10, "height": 10}', "detections"),
            ('{"image_id": "b", "width": "10", "height": 10, "detections": []}', "width"),
            (
                '{"image_id": "b", "width": 10, "height": 10, "detections": '
                '[{"label": "x.n.01", "definition": "d", "bbox_cxcywh": [1, 1, 0, 1], "score": 1}]}',
                "detections[0].bbox_cxcywh",
            ),
            (
                '{"image_id": "b", "width": 10, "height": 10, "detections": '
                '[{"label": "x.n.01", "definition": "d", "bbox_cxcywh": [1, 1, 1, 1], "score": 2}]}',
                "detections[0].score",
            ),
            (
                '{"image_id": "b", "width": 10, "height": 10, "detections": '
                '[{"label": "x.n.01", "bbox_cxcywh": [1, 1, 1, 1], "score": 1}]}',
                "detections[0].definition",
            ),
        ],
    )
    def test_malformed_names_line_and_field(self, tmp_path, line2, field):
        path = tmp_path / "d.jsonl"
        path.write_text('{"image_id": "a", "width": 10, "height": 10, "detections": []}\n' + line2 + "\n")
        with pytest.raises(ParseError) as info:
            parse_detections(path)
        assert info.value.line == 2
        assert info.value.field == field
        assert "line 2" in str(info.value)

    def test_round_trip(self, tmp_path):
        sets = [DetectionSet("x", 100, 80, [chair(), table()]), DetectionSet("y", 100, 80, [])]
        write_detections(tmp_path / "d.jsonl", sets)
        back = parse_detections(tmp_path / "d.jsonl")
        assert [(s.image_id, s.detections) for s in back] == [(s.image_id, s.detections) for s in sets]


class TestPhrases:
    def test_def_only(self):
        assert build_phrase_def(chair()) == f"This is a/an chair, defined as {CHAIR_DEF}."

    def test_lemma_underscores(self):
        d = Detection("stop_sign.n.01", "a traffic sign", (5, 5, 2, 2))
        assert build_phrase_def(d) == "This is a/an stop sign, defined as a traffic sign."

    def test_missing_definition(self):
        with pytest.raises(DefinitionMissingError):
            build_phrase_def(Detection("chair.n.01", "", (5, 5, 2, 2)))

    def test_def_sz_same_size(self):
        assert build_phrase_def_sz(chair(), table()) == (
            f"This is a/an chair, defined as {CHAIR_DEF}. "
            "This chair appears to be about the same size as the table."
        )

    @pytest.mark.parametrize(
        "log_ratio, phrase",
        [
            (-4.0, "much smaller than"),
            (-3.0, "much smaller than"),
            (-2.4, "smaller than"),
            (-1.0, "a bit smaller than"),
            (-0.2, "about the same size as"),
            (0.0, "about the same size as"),
            (1.4, "a bit bigger than"),
            (2.6, "bigger than"),
            (3.5, "much bigger than"),
        ],
    )
    def test_size_probe(self, log_ratio, phrase):
        assert size_ratio_phrase(math.exp(log_ratio) * 400.0, 400.0) == phrase
        assert size_ratio_phrase(math.exp(log_ratio), 1.0) == phrase

    def test_interior_boundaries_half_integer(self):
        assert size_ratio_phrase(math.exp(0.49), 1) == "about the same size as"
        assert size_ratio_phrase(math.exp(0.51), 1) == "a bit bigger than"
        assert size_ratio_phrase(math.exp(2.99), 1) == "bigger than"

    def test_bad_area(self):
        with pytest.raises(InvalidArgumentError):
            size_ratio_phrase(0.0, 1.0)

    @given(st.floats(1e-3, 1e5), st.floats(1e-3, 1e5))
    def test_antisymmetry(self, a, b):
        if abs(abs(math.log(a) - math.log(b)) - 3.0) < 1e-6:
            return  # the printed edges are asymmetric by construction
        assert size_ratio_index(a, b) == 6 - size_ratio_index(b, a)

    def test_partner_never_self(self):
        dets = DetectionSet("img", 100, 80, [chair(), table(), chair((50, 50, 4, 4))])
        for i in range(3):
            for epoch in range(10):
                assert choose_partner(dets, i, seed=1, epoch=epoch) != i

    def test_singleton_falls_back(self):
        dets = DetectionSet("img", 100, 80, [chair()])
        assert build_phrases(dets, "def_sz_rel", seed=0) == [build_phrase_def(chair())]

    def test_deterministic(self):
        dets = DetectionSet("img", 100, 80, [chair(), table(), chair((50, 50, 4, 4))])
        a = build_phrases(dets, "def_sz_rel", seed=5, epoch=2)
        assert a == build_phrases(dets, "def_sz_rel", seed=5, epoch=2)

    def test_partner_order_independent(self):
        items = [chair(), table(), chair((50, 50, 4, 4)), table((10, 10, 6, 6))]
        fwd = DetectionSet("img", 100, 80, items)
        rev = DetectionSet("img", 100, 80, items[::-1])
        assert build_phrases(fwd, "def_sz_rel", 3, 1) == build_phrases(rev, "def_sz_rel", 3, 1)[::-1]

    def test_fixture_set_strings(self):
        dets = DetectionSet("img", 100, 80, [chair(), table()])
        assert build_phrases(dets, "def_only") == [
            f"This is a/an chair, defined as {CHAIR_DEF}.",
            f"This is a/an table, defined as {TABLE_DEF}.",
        ]
        assert build_phrases(dets, "def_sz_rel") == [
            f"This is a/an chair, defined as {CHAIR_DEF}. This chair appears to be about the same size as the table.",
            f"This is a/an table, defined as {TABLE_DEF}. This table appears to be about the same size as the chair.",
        ]

    def test_phrase_scale_has_seven_entries(self):
        assert len(SIZE_PHRASES) == 7 and SIZE_PHRASES[3] == "about the same size as"


class TestEmbeddings:
    def test_mock_deterministic_unit(self):
        p = EmbeddingProvider("mock")
        a, b = embed_text(p, "hello"), embed_text(EmbeddingProvider("mock"), "hello")
        np.testing.assert_array_equal(a, b)
        assert a.shape == (EMBED_DIM,) and np.linalg.norm(a) == pytest.approx(1.0)

    def test_mock_distinct(self):
        p = EmbeddingProvider("mock")
        assert float(p.embed("a chair") @ p.embed("a table")) < 1.0

    def test_zeros(self):
        np.testing.assert_array_equal(EmbeddingProvider("zeros").embed("anything"), np.zeros(EMBED_DIM))

    def test_cache_mode_and_miss(self, tmp_path):
        vec = np.arange(EMBED_DIM, dtype=np.float32) / 7
        write_embedding_cache(tmp_path / "c.bin", {"hello": vec, "héllo wörld": -vec})
        p = EmbeddingProvider("cache", cache=tmp_path / "c.bin")
        np.testing.assert_array_equal(p.embed("hello"), vec.astype(np.float64))
        np.testing.assert_array_equal(p.embed("héllo wörld"), -vec.astype(np.float64))
        with pytest.raises(MissingEmbeddingError, match="nope"):
            p.embed("nope")

    def test_cache_layout(self, tmp_path):
        write_embedding_cache(tmp_path / "c.bin", {"ab": np.ones(EMBED_DIM)})
        raw = (tmp_path / "c.bin").read_bytes()
        assert raw[:4] == b"OBJC"
        assert raw[4:12] == (1).to_bytes(4, "little") + (1).to_bytes(4, "little")
        assert raw[12:16] == (2).to_bytes(4, "little") and raw[16:18] == b"ab"
        assert len(raw) == 18 + 4 * EMBED_DIM
        assert np.frombuffer(raw[18:], "<f4")[0] == 1.0

    def test_truncated_cache(self, tmp_path):
        write_embedding_cache(tmp_path / "c.bin", {"ab": np.ones(EMBED_DIM)})
        raw = (tmp_path / "c.bin").read_bytes()
        (tmp_path / "t.bin").write_bytes(raw[:-10])
        with pytest.raises(ParseError):
            read_embedding_cache(tmp_path / "t.bin")
        (tmp_path / "m.bin").write_bytes(b"NOPE" + raw[4:])
        with pytest.raises(ParseError):
            read_embedding_cache(tmp_path / "m.bin")


class TestProjection:
    def test_zero(self):
        out = project_objects(np.zeros((3, EMBED_DIM)), np.ones((128, EMBED_DIM)), np.zeros(128))
        np.testing.assert_array_equal(out, 0)

    def test_identity_block_selects(self):
        w = np.zeros((128, EMBED_DIM))
        w[:, :128] = np.eye(128)
        e = np.zeros((1, EMBED_DIM))
        e[0, 17] = 1.0
        out = project_objects(e, w)
        assert out[0, 17] == 1.0 and out.sum() == 1.0

    def test_matches_matmul_oracle(self, rng):
        e, w, b = rng.normal(size=(5, EMBED_DIM)), rng.normal(size=(128, EMBED_DIM)), rng.normal(size=128)
        want = np.array([[sum(e[i, k] * w[j, k] for k in range(EMBED_DIM)) + b[j] for j in range(128)] for i in range(5)])
        np.testing.assert_allclose(project_objects(e, w, b), want, atol=1e-6)
        lin = torch.nn.Linear(EMBED_DIM, 128).double()
        got = project_objects(torch.tensor(e), lin.weight, lin.bias).detach().numpy()
        np.testing.assert_allclose(got, lin(torch.tensor(e)).detach().numpy(), atol=1e-12)

    def test_mismatch(self, rng):
        with pytest.raises(InvalidArgumentError):
            project_objects(rng.normal(size=(2, 100)), rng.normal(size=(128, EMBED_DIM)))
