"""Seeded synthetic scenes with a planted apparent-size / depth relationship.

Objects are textured rectangles whose on-screen size follows the pinhole
model ``size_px = focal * size_m / depth``, so an object's box dimensions and
its class (known true size) together determine its depth.
"""

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .binning import DepthRaster
from .errors import InvalidArgumentError
from .objects import Detection, DetectionSet, write_detections
from .pfm import write_pfm


@dataclass(frozen=True)
class CatalogueEntry:
    label: str
    definition: str
    size: tuple  # (width, height) in metres
    colour: tuple  # RGB in [0, 1]
    stripe: int  # texture period in pixels, 0 for solid


CATALOGUE = (
    CatalogueEntry("crate.n.01", "a sturdy box used for shipping goods", (0.6, 0.5), (0.75, 0.55, 0.25), 4),
    CatalogueEntry("stool.n.01", "a backless seat for a single person", (0.4, 0.7), (0.35, 0.2, 0.1), 0),
    CatalogueEntry("cabinet.n.01", "a tall upright case with doors and shelves", (0.9, 1.8), (0.55, 0.6, 0.7), 6),
    CatalogueEntry("barrel.n.02", "a round container with bulging sides", (0.6, 0.9), (0.2, 0.4, 0.2), 3),
    CatalogueEntry("stop_sign.n.01", "a flat sign instructing vehicles to halt", (0.75, 0.75), (0.85, 0.1, 0.1), 0),
    CatalogueEntry("door.n.01", "a hinged panel that closes an entrance", (0.9, 2.0), (0.45, 0.3, 0.2), 8),
    CatalogueEntry("lamp.n.02", "a small device that gives off light", (0.3, 0.5), (0.95, 0.9, 0.5), 2),
    CatalogueEntry("bench.n.01", "a long seat for several people", (1.6, 0.8), (0.3, 0.3, 0.35), 5),
)


@dataclass
class SceneSpec:
    seed: int = 0
    height: int = 64
    width: int = 80
    min_objects: int = 1
    max_objects: int = 4
    focal: float = 100.0
    d_min: float = 1e-3
    d_max: float = 10.0
    object_depth: tuple = (1.5, 7.5)
    background_depth: tuple = (9.5, 8.0)  # (top row, bottom row)
    noise: float = 0.02
    catalogue: tuple = field(default=CATALOGUE)

    def validate(self):
        if not self.catalogue:
            raise InvalidArgumentError("object catalogue is empty")
        if not 0 <= self.min_objects <= self.max_objects:
            raise InvalidArgumentError("need 0 <= min_objects <= max_objects")
        lo, hi = self.object_depth
        for d in (lo, hi, *self.background_depth):
            if not self.d_min <= d <= self.d_max:
                raise InvalidArgumentError(f"depth {d} outside [{self.d_min}, {self.d_max}]")
        if not 0 < lo <= hi:
            raise InvalidArgumentError("object depth range must be positive and ordered")
        return self

    def to_dict(self):
        out = asdict(self)
        out["catalogue"] = [e.label for e in self.catalogue]
        out["object_depth"] = list(self.object_depth)
        out["background_depth"] = list(self.background_depth)
        return out


def _place(rng, spec, entry):
    """Sample a depth and a box that fits fully inside the image."""
    sw, sh = entry.size
    lo, hi = spec.object_depth
    depth = rng.uniform(lo, hi)
    # push the object back until its projection fits the frame
    fit = spec.focal * max(sw / spec.width, sh / spec.height)
    depth = min(max(depth, fit), spec.d_max)
    w, h = spec.focal * sw / depth, spec.focal * sh / depth
    cx = rng.uniform(w / 2, spec.width - w / 2)
    cy = rng.uniform(h / 2, spec.height - h / 2)
    return depth, (cx, cy, w, h)


def _pixel_span(centre, extent, limit):
    """Pixels whose centres fall inside [centre - extent/2, centre + extent/2)."""
    a = int(np.ceil(centre - extent / 2 - 0.5))
    b = int(np.ceil(centre + extent / 2 - 0.5))
    return max(a, 0), min(max(b, a + 1), limit)


def generate_scene(spec, index):
    """(image H x W x 3 in [0, 1], DepthRaster, DetectionSet), deterministic in (seed, index)."""
    spec.validate()
    rng = np.random.default_rng([spec.seed, index])
    h, w = spec.height, spec.width
    top, bottom = spec.background_depth
    depth = np.repeat(np.linspace(top, bottom, h)[:, None], w, axis=1)
    image = np.empty((h, w, 3))
    image[:] = rng.uniform(0.15, 0.85, size=3)

    n = int(rng.integers(spec.min_objects, spec.max_objects + 1))
    placed = []
    for _ in range(n):
        entry = spec.catalogue[int(rng.integers(len(spec.catalogue)))]
        d, box = _place(rng, spec, entry)
        placed.append((d, box, entry))

    # paint far to near so nearer objects occlude
    for d, (cx, cy, bw, bh), entry in sorted(placed, key=lambda p: -p[0]):
        y0, y1 = _pixel_span(cy, bh, h)
        x0, x1 = _pixel_span(cx, bw, w)
        patch = np.empty((y1 - y0, x1 - x0, 3))
        patch[:] = entry.colour
        if entry.stripe:
            cols = np.arange(x0, x1) - x0
            dark = (cols // entry.stripe) % 2 == 1
            patch[:, dark] *= 0.6
        image[y0:y1, x0:x1] = patch
        depth[y0:y1, x0:x1] = np.minimum(depth[y0:y1, x0:x1], d)

    if spec.noise:
        image = image + rng.normal(0.0, spec.noise, size=image.shape)
    image = np.clip(image, 0.0, 1.0)
    detections = [Detection(e.label, e.definition, box, 1.0) for _, box, e in placed]
    detset = DetectionSet(f"scene_{index:05d}", w, h, detections)
    return image, DepthRaster(depth), detset


def _sha256(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def write_split(spec, n, out_dir):
    """Write n scenes as PFM rasters plus one detection file; returns the manifest dict."""
    spec.validate()
    img_dir = os.path.join(out_dir, "images")
    depth_dir = os.path.join(out_dir, "depths")
    try:
        os.makedirs(img_dir, exist_ok=True)
        os.makedirs(depth_dir, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create split directory {out_dir}: {exc}") from exc
    entries, detsets = [], []
    for i in range(n):
        image, depth, dets = generate_scene(spec, i)
        img_rel = os.path.join("images", f"{dets.image_id}.pfm")
        depth_rel = os.path.join("depths", f"{dets.image_id}.pfm")
        for rel, data in ((img_rel, image), (depth_rel, depth.values)):
            path = os.path.join(out_dir, rel)
            try:
                write_pfm(path, data)
            except OSError as exc:
                raise OSError(f"failed writing {path}: {exc}") from exc
        entries.append(
            {
                "image_id": dets.image_id,
                "image": img_rel,
                "depth": depth_rel,
                "image_sha256": _sha256(os.path.join(out_dir, img_rel)),
                "depth_sha256": _sha256(os.path.join(out_dir, depth_rel)),
            }
        )
        detsets.append(dets)
    det_path = os.path.join(out_dir, "detections.jsonl")
    write_detections(det_path, detsets)
    manifest = {
        "spec": spec.to_dict(),
        "count": n,
        "detections": "detections.jsonl",
        "detections_sha256": _sha256(det_path),
        "entries": entries,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
