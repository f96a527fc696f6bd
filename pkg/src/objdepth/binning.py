"""Adaptive-bin decoding: widths -> centres -> per-pixel expected depth.

Each numpy operation has a torch twin (suffix ``_t``) used inside the
network so gradients flow; the numpy versions are the evaluation path and
run either as numba kernels or as vectorised numpy (see ``_accel``).
"""

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from ._accel import njit, use_numba
from .errors import InvalidArgumentError

N_BINS = 256
WIDTH_EPS = 1e-3
DEPTH_RANGE_NYU = (1e-3, 10.0)
DEPTH_RANGE_KITTI = (1e-3, 80.0)


@dataclass
class DepthRaster:
    """H x W depths in metres with a validity mask (all-true by default)."""

    values: np.ndarray
    mask: np.ndarray = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise InvalidArgumentError(f"depth raster must be 2-d, got shape {self.values.shape}")
        if self.mask is None:
            self.mask = np.ones(self.values.shape, dtype=bool)
        else:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != self.values.shape:
                raise InvalidArgumentError(
                    f"mask shape {self.mask.shape} != values shape {self.values.shape}"
                )

    @property
    def shape(self):
        return self.values.shape

    def valid_values(self):
        return self.values[self.mask]


def normalize_widths(raw, eps=WIDTH_EPS):
    """Map raw head outputs onto the simplex: ``(relu(raw) + eps) / sum``."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 1 or raw.size == 0:
        raise InvalidArgumentError("raw widths must be a non-empty vector")
    shifted = np.maximum(raw, 0.0) + eps
    return shifted / shifted.sum()


def bin_centres(widths, d_min, d_max):
    """Centre of every bin: d_min + span * (w_i / 2 + sum of preceding widths)."""
    if not d_min < d_max:
        raise InvalidArgumentError(f"need d_min < d_max, got {d_min} >= {d_max}")
    widths = np.asarray(widths, dtype=np.float64)
    if widths.ndim != 1 or widths.size == 0:
        raise InvalidArgumentError("widths must be a non-empty vector")
    if np.any(widths < 0):
        raise InvalidArgumentError("bin widths must be non-negative")
    preceding = np.concatenate(([0.0], np.cumsum(widths)[:-1]))
    return d_min + (d_max - d_min) * (widths / 2.0 + preceding)


@njit
def _expected_depth_kernel(probs, centres, out):
    h, w, n = probs.shape
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for k in range(n):
                acc += probs[y, x, k] * centres[k]
            out[y, x] = acc
    return out


def _expected_depth_numpy(probs, centres):
    return probs @ centres


def expected_depth(probs, centres):
    """Per-pixel dot product of an (h, w, n_bins) probability raster with the centres."""
    probs = np.asarray(probs, dtype=np.float64)
    centres = np.asarray(centres, dtype=np.float64)
    if probs.ndim != 3 or centres.ndim != 1 or probs.shape[-1] != centres.shape[0]:
        raise InvalidArgumentError(
            f"probabilities {probs.shape} do not match {centres.shape[0]} bin centres"
        )
    if use_numba():
        out = np.empty(probs.shape[:2], dtype=np.float64)
        return _expected_depth_kernel(np.ascontiguousarray(probs), centres, out)
    return _expected_depth_numpy(probs, centres)


def _source_coords(n_out, n_in):
    """Half-pixel-centre source indices and weights for one axis."""
    scale = n_in / n_out
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    src = np.maximum(src, 0.0)
    i0 = np.floor(src).astype(np.int64)
    i0 = np.minimum(i0, n_in - 1)
    i1 = np.where(i0 < n_in - 1, i0 + 1, i0)
    return i0, i1, src - i0


@njit
def _upsample_kernel(src, y0, y1, wy, x0, x1, wx, out):
    for i in range(out.shape[0]):
        a0 = y0[i]
        a1 = y1[i]
        ly = wy[i]
        for j in range(out.shape[1]):
            b0 = x0[j]
            b1 = x1[j]
            lx = wx[j]
            top = (1.0 - lx) * src[a0, b0] + lx * src[a0, b1]
            bot = (1.0 - lx) * src[a1, b0] + lx * src[a1, b1]
            out[i, j] = (1.0 - ly) * top + ly * bot
    return out


def _upsample_numpy(src, y0, y1, wy, x0, x1, wx):
    wy = wy[:, None]
    wx = wx[None, :]
    top = (1.0 - wx) * src[np.ix_(y0, x0)] + wx * src[np.ix_(y0, x1)]
    bot = (1.0 - wx) * src[np.ix_(y1, x0)] + wx * src[np.ix_(y1, x1)]
    return (1.0 - wy) * top + wy * bot


def upsample_bilinear(raster, target_h, target_w):
    """Bilinear resize with half-pixel centres (``align_corners=False`` semantics).

    Accepts a 2-d array or a DepthRaster; a raster's mask is resampled with
    nearest-neighbour lookup on the same grid.
    """
    if target_h < 1 or target_w < 1:
        raise InvalidArgumentError(f"target size must be positive, got {target_h}x{target_w}")
    as_raster = isinstance(raster, DepthRaster)
    src = raster.values if as_raster else np.asarray(raster, dtype=np.float64)
    if src.ndim != 2 or min(src.shape) < 1:
        raise InvalidArgumentError(f"source must be a non-empty 2-d raster, got {src.shape}")
    h, w = src.shape
    if (h, w) == (target_h, target_w):
        values = src.copy()
    else:
        y0, y1, wy = _source_coords(target_h, h)
        x0, x1, wx = _source_coords(target_w, w)
        if use_numba():
            out = np.empty((target_h, target_w), dtype=np.float64)
            values = _upsample_kernel(np.ascontiguousarray(src), y0, y1, wy, x0, x1, wx, out)
        else:
            values = _upsample_numpy(src, y0, y1, wy, x0, x1, wx)
    if not as_raster:
        return values
    ys = np.minimum((np.arange(target_h) * h) // target_h, h - 1)
    xs = np.minimum((np.arange(target_w) * w) // target_w, w - 1)
    return DepthRaster(values, raster.mask[np.ix_(ys, xs)])


# torch twins, batched over the leading dimension


def normalize_widths_t(raw, eps=WIDTH_EPS):
    shifted = torch.relu(raw) + eps
    return shifted / shifted.sum(dim=-1, keepdim=True)


def bin_centres_t(widths, d_min, d_max):
    preceding = torch.cumsum(widths, dim=-1) - widths
    return d_min + (d_max - d_min) * (widths / 2.0 + preceding)


def expected_depth_t(probs, centres):
    """probs (B, n_bins, h, w), centres (B, n_bins) -> (B, h, w)."""
    return torch.einsum("bkhw,bk->bhw", probs, centres)


def upsample_bilinear_t(depth, size):
    """(B, h, w) -> (B, H, W)."""
    return F.interpolate(depth.unsqueeze(1), size=size, mode="bilinear", align_corners=False).squeeze(1)
