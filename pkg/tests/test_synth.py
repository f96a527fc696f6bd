import json
import os

import numpy as np
import pytest

from objdepth.errors import InvalidArgumentError, ParseError
from objdepth.objects import parse_detections
from objdepth.pfm import read_pfm, write_pfm
from objdepth.synth import CatalogueEntry, SceneSpec, generate_scene, write_split

UNIT = CatalogueEntry("box.n.01", "a cube one metre on a side", (1.0, 1.0), (0.5, 0.5, 0.5), 0)


def test_deterministic():
    a = generate_scene(SceneSpec(seed=7), 3)
    b = generate_scene(SceneSpec(seed=7), 3)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1].values, b[1].values)
    assert a[2].detections == b[2].detections


def test_seed_changes_scene():
    a, b = generate_scene(SceneSpec(seed=7), 3), generate_scene(SceneSpec(seed=8), 3)
    assert not np.array_equal(a[0], b[0])


def test_pinhole_size():
    spec = SceneSpec(seed=0, height=128, width=128, min_objects=1, max_objects=1,
                     object_depth=(2.0, 2.0), noise=0.0, catalogue=(UNIT,))
    image, depth, dets = generate_scene(spec, 0)
    (det,) = dets.detections
    assert det.bbox[2] == pytest.approx(50.0) and det.bbox[3] == pytest.approx(50.0)
    # depth under the box is the object depth
    cx, cy = int(det.bbox[0]), int(det.bbox[1])
    assert depth.values[cy, cx] == pytest.approx(2.0)
    assert np.count_nonzero(np.isclose(depth.values, 2.0)) == 50 * 50


def test_zero_objects():
    spec = SceneSpec(seed=1, min_objects=0, max_objects=0)
    image, depth, dets = generate_scene(spec, 0)
    assert len(dets) == 0
    np.testing.assert_allclose(depth.values[0], 9.5)
    np.testing.assert_allclose(depth.values[-1], 8.0)


def test_depth_range_and_boxes_inside():
    spec = SceneSpec(seed=2)
    for i in range(20):
        image, depth, dets = generate_scene(spec, i)
        assert image.shape == (64, 80, 3) and 0 <= image.min() and image.max() <= 1
        assert spec.d_min <= depth.values.min() and depth.values.max() <= spec.d_max
        for det in dets.detections:
            cx, cy, w, h = det.bbox
            assert 0 <= cx - w / 2 and cx + w / 2 <= 80 and 0 <= cy - h / 2 and cy + h / 2 <= 64


def test_size_depth_invariant():
    # the class width and the box width recover the object depth
    spec = SceneSpec(seed=4)
    sizes = {e.label: e.size for e in spec.catalogue}
    for i in range(10):
        _, depth, dets = generate_scene(spec, i)
        for det in dets.detections:
            cx, cy, w, h = det.bbox
            recovered = spec.focal * sizes[det.label][0] / w
            assert spec.d_min <= recovered <= spec.d_max
            assert h == pytest.approx(spec.focal * sizes[det.label][1] / recovered)
            # occluders can only bring the surface closer
            assert depth.values[int(cy), int(cx)] <= recovered + 1e-9


def test_empty_catalogue():
    with pytest.raises(InvalidArgumentError):
        SceneSpec(catalogue=()).validate()


@pytest.mark.parametrize("n", [0, 4])
def test_write_split(tmp_path, n):
    manifest = write_split(SceneSpec(seed=5), n, str(tmp_path))
    assert manifest["count"] == n and len(manifest["entries"]) == n
    assert len(parse_detections(tmp_path / "detections.jsonl")) == n
    on_disk = json.loads((tmp_path / "manifest.json").read_text())
    assert on_disk == manifest
    for entry in manifest["entries"]:
        assert read_pfm(tmp_path / entry["image"]).shape == (64, 80, 3)
        assert read_pfm(tmp_path / entry["depth"]).shape == (64, 80)


def test_split_checksums_reproducible(tmp_path):
    a = write_split(SceneSpec(seed=6), 3, str(tmp_path / "a"))
    b = write_split(SceneSpec(seed=6), 3, str(tmp_path / "b"))
    assert a["entries"] == b["entries"] and a["detections_sha256"] == b["detections_sha256"]


class TestPfm:
    def test_round_trip(self, tmp_path, rng):
        gray, rgb = rng.random((5, 7)).astype(np.float32), rng.random((4, 6, 3)).astype(np.float32)
        write_pfm(tmp_path / "g.pfm", gray)
        write_pfm(tmp_path / "c.pfm", rgb)
        np.testing.assert_array_equal(read_pfm(tmp_path / "g.pfm"), gray)
        np.testing.assert_array_equal(read_pfm(tmp_path / "c.pfm"), rgb)

    def test_header_and_row_order(self, tmp_path):
        data = np.array([[1.0, 2.0], [3.0, 4.0]])
        write_pfm(tmp_path / "g.pfm", data)
        raw = (tmp_path / "g.pfm").read_bytes()
        assert raw.startswith(b"Pf\n2 2\n-1.0\n")
        assert np.frombuffer(raw[-16:], "<f4").tolist() == [3.0, 4.0, 1.0, 2.0]

    @pytest.mark.parametrize("blob", [b"P6\n2 2\n-1.0\n", b"Pf\n2 x\n-1.0\n", b"Pf\n2 2\n-1.0\n" + b"\0" * 12, b"Pf\n2"])
    def test_corrupt(self, tmp_path, blob):
        (tmp_path / "bad.pfm").write_bytes(blob)
        with pytest.raises(ParseError):
            read_pfm(tmp_path / "bad.pfm")
