"""Object detections -> language phrases -> text embeddings -> object features.

Detections are produced elsewhere and ingested from a JSON-lines file; text
embeddings come from a provider (deterministic mock, a binary cache file, or
zeros for the control ablation).
"""

import hashlib
import json
import logging
import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    DefinitionMissingError,
    InvalidArgumentError,
    MissingEmbeddingError,
    ParseError,
)

logger = logging.getLogger(__name__)

EMBED_DIM = 512
SIZE_PHRASES = (
    "much smaller than",
    "smaller than",
    "a bit smaller than",
    "about the same size as",
    "a bit bigger than",
    "bigger than",
    "much bigger than",
)
SIZE_EDGE = 3.0
# log-ratios this close to an edge count as on it (exp/log round trips drift)
EDGE_TOL = 1e-9
LANGUAGE_MODES = ("def_only", "def_sz_rel", "ctrl_zeros")


@dataclass(frozen=True)
class Detection:
    label: str
    definition: str
    bbox: tuple  # (cx, cy, w, h) in pixels
    score: float = 1.0

    @property
    def area(self):
        return self.bbox[2] * self.bbox[3]

    @property
    def lemma(self):
        return label_lemma(self.label)

    def key(self):
        return (self.label, self.definition, tuple(self.bbox), self.score)


@dataclass
class DetectionSet:
    image_id: str
    width: int
    height: int
    detections: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def __len__(self):
        return len(self.detections)

    def geometry(self):
        """n x 4 array of (cx, cy, w, h) normalised by the image size."""
        if not self.detections:
            return np.zeros((0, 4))
        boxes = np.array([d.bbox for d in self.detections], dtype=np.float64)
        return boxes / np.array([self.width, self.height, self.width, self.height], dtype=np.float64)

    def mirrored(self):
        """Detections of the horizontally flipped image."""
        dets = [
            replace(d, bbox=(self.width - d.bbox[0], d.bbox[1], d.bbox[2], d.bbox[3]))
            for d in self.detections
        ]
        return DetectionSet(self.image_id, self.width, self.height, dets)

    def to_record(self):
        return {
            "image_id": self.image_id,
            "width": self.width,
            "height": self.height,
            "detections": [
                {
                    "label": d.label,
                    "definition": d.definition,
                    "bbox_cxcywh": [float(v) for v in d.bbox],
                    "score": float(d.score),
                }
                for d in self.detections
            ],
        }


def label_lemma(label):
    """'stop_sign.n.01' -> 'stop sign'."""
    return label.split(".", 1)[0].replace("_", " ")


def _require(record, name, kind, line):
    if name not in record:
        raise ParseError("missing field", line=line, field=name)
    value = record[name]
    if kind is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)
    elif kind is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    else:
        ok = isinstance(value, kind)
    if not ok:
        raise ParseError(f"expected {kind.__name__}, got {type(value).__name__}", line=line, field=name)
    return value


def _parse_detection(raw, width, height, image_id, line, idx, warnings):
    prefix = f"detections[{idx}]"
    if not isinstance(raw, dict):
        raise ParseError("detection must be an object", line=line, field=prefix)
    try:
        label = _require(raw, "label", str, line)
        definition = _require(raw, "definition", str, line)
        bbox = _require(raw, "bbox_cxcywh", list, line)
        score = _require(raw, "score", float, line)
    except ParseError as exc:
        raise ParseError(str(exc).split(": ", 1)[-1], line=line, field=f"{prefix}.{exc.field}") from None
    if not label:
        raise ParseError("empty label", line=line, field=f"{prefix}.label")
    if len(bbox) != 4 or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v) for v in bbox
    ):
        raise ParseError("bbox must be four finite numbers", line=line, field=f"{prefix}.bbox_cxcywh")
    cx, cy, w, h = (float(v) for v in bbox)
    if w <= 0 or h <= 0:
        raise ParseError("bbox width and height must be positive", line=line, field=f"{prefix}.bbox_cxcywh")
    if not 0.0 <= score <= 1.0:
        raise ParseError("score must lie in [0, 1]", line=line, field=f"{prefix}.score")
    box = (cx, cy, w, h)
    x0, x1, y0, y1 = cx - w / 2, cx + w / 2, cy - h / 2, cy + h / 2
    if x0 < 0 or y0 < 0 or x1 > width or y1 > height:
        x0, x1 = max(x0, 0.0), min(x1, float(width))
        y0, y1 = max(y0, 0.0), min(y1, float(height))
        if x1 <= x0 or y1 <= y0:
            raise ParseError("bbox lies entirely outside the image", line=line, field=f"{prefix}.bbox_cxcywh")
        box = ((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)
        msg = f"{image_id}: {prefix} bbox {(cx, cy, w, h)} clamped to {box}"
        logger.warning(msg)
        warnings.append(msg)
    return Detection(label, definition, box, score)


def parse_detections(path):
    """Read a JSON-lines detection file (one image record per non-blank line)."""
    sets = []
    with open(path, encoding="utf-8") as fh:
        for line_no, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                record = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", line=line_no) from None
            if not isinstance(record, dict):
                raise ParseError("record must be an object", line=line_no)
            image_id = _require(record, "image_id", str, line_no)
            width = _require(record, "width", int, line_no)
            height = _require(record, "height", int, line_no)
            if width <= 0 or height <= 0:
                raise ParseError("image dimensions must be positive", line=line_no, field="width/height")
            raw_dets = _require(record, "detections", list, line_no)
            warnings = []
            dets = [
                _parse_detection(raw, width, height, image_id, line_no, i, warnings)
                for i, raw in enumerate(raw_dets)
            ]
            sets.append(DetectionSet(image_id, width, height, dets, warnings))
    return sets


def write_detections(path, sets):
    with open(path, "w", encoding="utf-8") as fh:
        for s in sets:
            fh.write(json.dumps(s.to_record(), sort_keys=True) + "\n")


# phrases


def build_phrase_def(d):
    if not d.definition:
        raise DefinitionMissingError(f"no definition for {d.label!r}")
    return f"This is a/an {d.lemma}, defined as {d.definition}."


def size_ratio_index(area_i, area_j):
    """Index into SIZE_PHRASES for the apparent-area ratio area_i / area_j."""
    if not (area_i > 0 and area_j > 0):
        raise InvalidArgumentError(f"areas must be positive, got {area_i} and {area_j}")
    log_ratio = math.log(area_i) - math.log(area_j)
    if log_ratio <= -SIZE_EDGE + EDGE_TOL:
        return 0
    if log_ratio > SIZE_EDGE + EDGE_TOL:
        return 6
    # interior boundaries sit at half-integers; ties round away from zero
    k = math.copysign(math.floor(abs(log_ratio) + 0.5), log_ratio)
    return int(min(max(k, -2), 2)) + 3


def size_ratio_phrase(area_i, area_j):
    return SIZE_PHRASES[size_ratio_index(area_i, area_j)]


def build_phrase_def_sz(d_i, d_j):
    comparison = size_ratio_phrase(d_i.area, d_j.area)
    return f"{build_phrase_def(d_i)} This {d_i.lemma} appears to be {comparison} the {d_j.lemma}."


def derived_seed(*parts):
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def choose_partner(detset, i, seed, epoch=0):
    """Index of a random other detection for object ``i``.

    The draw is seeded per object (run seed, image id, epoch and the object's
    own content) and made over the other objects in a canonical order, so the
    chosen partner does not depend on the order of the detection list.
    """
    others = [j for j in range(len(detset.detections)) if j != i]
    if not others:
        return None
    others.sort(key=lambda j: detset.detections[j].key())
    rng = np.random.default_rng(derived_seed(seed, detset.image_id, epoch, detset.detections[i].key()))
    return others[int(rng.integers(len(others)))]


def build_phrases(detset, mode, seed=0, epoch=0):
    """Language input for every detection under a language mode."""
    if mode not in LANGUAGE_MODES:
        raise InvalidArgumentError(f"unknown language mode {mode!r}")
    phrases = []
    for i, d in enumerate(detset.detections):
        j = choose_partner(detset, i, seed, epoch) if mode == "def_sz_rel" else None
        if j is None:
            phrases.append(build_phrase_def(d))
        else:
            phrases.append(build_phrase_def_sz(d, detset.detections[j]))
    return phrases


# embeddings

CACHE_MAGIC = b"OBJC"
CACHE_VERSION = 1


class EmbeddingProvider:
    """Text -> 512-d vector. Modes: ``mock``, ``cache`` or ``zeros``."""

    def __init__(self, mode="mock", cache=None, salt=0):
        if mode not in ("mock", "cache", "zeros"):
            raise InvalidArgumentError(f"unknown embedding mode {mode!r}")
        if mode == "cache" and cache is None:
            raise InvalidArgumentError("cache mode needs a cache (dict or path)")
        if isinstance(cache, (str, bytes)) or hasattr(cache, "__fspath__"):
            cache = read_embedding_cache(cache)
        self.mode = mode
        self.cache = cache or {}
        self.salt = salt

    def embed(self, text):
        if self.mode == "zeros":
            return np.zeros(EMBED_DIM)
        if self.mode == "cache":
            try:
                return np.asarray(self.cache[text], dtype=np.float64)
            except KeyError:
                raise MissingEmbeddingError(f"no cached embedding for {text!r}") from None
        rng = np.random.default_rng(derived_seed("embed", self.salt, text))
        vec = rng.standard_normal(EMBED_DIM)
        return vec / np.linalg.norm(vec)

    def embed_many(self, texts):
        if not texts:
            return np.zeros((0, EMBED_DIM))
        return np.stack([self.embed(t) for t in texts])


def embed_text(provider, text):
    return provider.embed(text)


def write_embedding_cache(path, entries):
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<II", CACHE_VERSION, len(entries)))
        for key, vec in entries.items():
            vec = np.asarray(vec, dtype="<f4").ravel()
            if vec.size != EMBED_DIM:
                raise InvalidArgumentError(f"embedding for {key!r} has {vec.size} values, need {EMBED_DIM}")
            raw = key.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(vec.tobytes())


def read_embedding_cache(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CACHE_MAGIC:
        raise ParseError(f"{path}: bad magic {data[:4]!r}")
    if len(data) < 12:
        raise ParseError(f"{path}: truncated header")
    version, count = struct.unpack_from("<II", data, 4)
    if version != CACHE_VERSION:
        raise ParseError(f"{path}: unsupported cache version {version}")
    entries = {}
    pos = 12
    vec_bytes = 4 * EMBED_DIM
    for i in range(count):
        if pos + 4 > len(data):
            raise ParseError(f"{path}: truncated at record {i}")
        (klen,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if pos + klen + vec_bytes > len(data):
            raise ParseError(f"{path}: truncated at record {i}")
        key = data[pos : pos + klen].decode("utf-8")
        pos += klen
        entries[key] = np.frombuffer(data, dtype="<f4", count=EMBED_DIM, offset=pos).astype(np.float64)
        pos += vec_bytes
    if pos != len(data):
        raise ParseError(f"{path}: {len(data) - pos} trailing bytes after {count} records")
    return entries


def project_objects(embeddings, weight, bias=None):
    """Affine map of n x 512 embeddings through a (out, 512) weight matrix."""
    if embeddings.ndim != 2 or embeddings.shape[1] != weight.shape[1]:
        raise InvalidArgumentError(
            f"embeddings {tuple(embeddings.shape)} incompatible with weight {tuple(weight.shape)}"
        )
    out = embeddings @ weight.T
    if bias is not None:
        out = out + bias
    return out
