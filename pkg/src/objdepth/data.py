"""Loading synthetic splits and turning detections into padded model inputs."""

import json
import os
from dataclasses import dataclass

import numpy as np
import torch

from .binning import DepthRaster
from .errors import EvaluationError, InvalidArgumentError
from .metrics import valid_mask
from .objects import EMBED_DIM, EmbeddingProvider, build_phrases, parse_detections
from .pfm import read_pfm


@dataclass
class Sample:
    image_id: str
    image: np.ndarray  # H x W x 3
    depth: DepthRaster
    detections: object  # DetectionSet or None when the detection file lacks the image

    def flipped(self):
        depth = DepthRaster(self.depth.values[:, ::-1].copy(), self.depth.mask[:, ::-1].copy())
        dets = self.detections.mirrored() if self.detections is not None else None
        return Sample(self.image_id, self.image[:, ::-1].copy(), depth, dets)


def load_split(data_dir, d_min=None, d_max=None):
    """Samples of a split written by ``synth.write_split``, in manifest order."""
    with open(os.path.join(data_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    by_id = {s.image_id: s for s in parse_detections(os.path.join(data_dir, manifest["detections"]))}
    samples = []
    for entry in manifest["entries"]:
        image = read_pfm(os.path.join(data_dir, entry["image"]))
        depth = read_pfm(os.path.join(data_dir, entry["depth"]))
        mask = None if d_min is None else valid_mask(depth, d_min, d_max)
        samples.append(Sample(entry["image_id"], image, DepthRaster(depth, mask), by_id.get(entry["image_id"])))
    return samples


def require_detections(sample):
    if sample.detections is None:
        raise EvaluationError(f"no detection entry for image {sample.image_id!r}")
    return sample.detections


class ObjectInputs:
    """Phrase building + embedding lookup for a language mode, memoised per phrase."""

    def __init__(self, language_mode, embedding_mode="mock", cache=None, seed=0):
        if language_mode == "ctrl_zeros":
            self.provider = EmbeddingProvider("zeros")
        else:
            self.provider = EmbeddingProvider(embedding_mode, cache=cache or None)
        # phrases are still built for ctrl_zeros so the data path is identical
        self.phrase_mode = "def_only" if language_mode == "ctrl_zeros" else language_mode
        self.seed = seed
        self._memo = {}

    @classmethod
    def from_config(cls, cfg):
        return cls(cfg.language_mode, cfg.embedding_mode, cfg.embedding_cache or None, cfg.seed)

    def embed(self, phrase):
        vec = self._memo.get(phrase)
        if vec is None:
            vec = self._memo[phrase] = self.provider.embed(phrase)
        return vec

    def batch(self, detsets, epoch=0, dtype=torch.float64):
        """Padded (B, N, 512) embeddings, (B, N, 4) geometry and (B, N) mask, N >= 1."""
        if not detsets:
            raise InvalidArgumentError("empty batch")
        n = max(1, max(len(d) for d in detsets))
        b = len(detsets)
        emb = np.zeros((b, n, EMBED_DIM))
        geom = np.zeros((b, n, 4))
        mask = np.zeros((b, n), dtype=bool)
        for i, dets in enumerate(detsets):
            k = len(dets)
            if not k:
                continue
            phrases = build_phrases(dets, self.phrase_mode, self.seed, epoch)
            emb[i, :k] = np.stack([self.embed(p) for p in phrases])
            geom[i, :k] = dets.geometry()
            mask[i, :k] = True
        return (
            torch.as_tensor(emb, dtype=dtype),
            torch.as_tensor(geom, dtype=dtype),
            torch.as_tensor(mask),
        )


def stack_samples(samples, dtype=torch.float64):
    images = torch.as_tensor(np.stack([s.image.transpose(2, 0, 1) for s in samples]), dtype=dtype)
    depths = torch.as_tensor(np.stack([s.depth.values for s in samples]), dtype=dtype)
    masks = torch.as_tensor(np.stack([s.depth.mask for s in samples]))
    return images, depths, masks
