"""Scale-invariant log depth loss and the bidirectional Chamfer bin-density loss.

numpy versions return values plus closed-form gradients (used for checking
and evaluation); the ``_t`` torch versions are what training backpropagates
through.
"""

from dataclasses import dataclass

import numpy as np
import torch

from ._accel import njit, use_numba
from .binning import DepthRaster
from .errors import DomainError, EmptyGroundTruthError, InvalidArgumentError

SILOG_SCALE = 10.0
SILOG_VARIANTS = {"as_printed": 0.15, "variance_form": -0.85}
DEFAULT_BETA = 0.1


@dataclass
class LossBreakdown:
    silog: float
    bin_density: float
    total: float
    valid_pixel_count: int


def _silog_coeff(variant):
    try:
        return SILOG_VARIANTS[variant]
    except KeyError:
        raise InvalidArgumentError(
            f"unknown silog variant {variant!r}; expected one of {sorted(SILOG_VARIANTS)}"
        ) from None


def _as_raster(x):
    return x if isinstance(x, DepthRaster) else DepthRaster(x)


def _log_ratios(pred, gt):
    pred, gt = _as_raster(pred), _as_raster(gt)
    if pred.shape != gt.shape:
        raise InvalidArgumentError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    if not np.array_equal(pred.mask, gt.mask):
        raise InvalidArgumentError("prediction and ground-truth masks must be identical")
    mask = gt.mask
    n = int(mask.sum())
    if n == 0:
        raise EmptyGroundTruthError("no valid ground-truth pixels")
    d, d_star = pred.values[mask], gt.values[mask]
    if np.any(d <= 0) or np.any(d_star <= 0):
        raise DomainError("depths must be positive on valid pixels")
    return np.log(d) - np.log(d_star), d, mask


def silog_loss(pred, gt, variant="as_printed"):
    """``10 * sqrt(mean(g^2) + lam / N^2 * (sum g)^2)`` with g the per-pixel log ratio.

    ``variant="as_printed"`` uses lam = +0.15; ``"variance_form"`` uses
    lam = -0.85 (the variance-plus-bias form), floored at zero under the root.
    """
    lam = _silog_coeff(variant)
    g, _, _ = _log_ratios(pred, gt)
    n = g.size
    inner = np.sum(g * g) / n + lam / n**2 * np.sum(g) ** 2
    return SILOG_SCALE * float(np.sqrt(max(inner, 0.0)))


def silog_loss_grad(pred, gt, variant="as_printed"):
    """d silog / d pred as an H x W array (zero on masked-out pixels).

    Returns zeros where the loss is exactly zero (the root is not
    differentiable there).
    """
    lam = _silog_coeff(variant)
    g, d, mask = _log_ratios(pred, gt)
    n = g.size
    inner = np.sum(g * g) / n + lam / n**2 * np.sum(g) ** 2
    grad = np.zeros(mask.shape)
    if inner <= 0:
        return grad
    dl_dg = SILOG_SCALE / (2.0 * np.sqrt(inner)) * (2.0 * g / n + 2.0 * lam * np.sum(g) / n**2)
    grad[mask] = dl_dg / d
    return grad


@njit
def _nearest_kernel(a, sorted_b, order, out):
    m = sorted_b.shape[0]
    for i in range(a.shape[0]):
        x = a[i]
        lo = 0
        hi = m
        while lo < hi:
            mid = (lo + hi) // 2
            if sorted_b[mid] < x:
                lo = mid + 1
            else:
                hi = mid
        best = -1
        best_d = 0.0
        if lo < m:
            best = order[lo]
            best_d = (sorted_b[lo] - x) ** 2
        if lo > 0:
            v = sorted_b[lo - 1]
            j = lo - 1
            while j > 0 and sorted_b[j - 1] == v:
                j -= 1
            cand = order[j]
            dist = (x - v) ** 2
            if best < 0 or dist < best_d or (dist == best_d and cand < best):
                best = cand
                best_d = dist
        out[i] = best
    return out


def _nearest_numpy(a, sorted_b, order):
    m = sorted_b.size
    pos = np.searchsorted(sorted_b, a, side="left")
    right = np.minimum(pos, m - 1)
    left_pos = np.maximum(pos - 1, 0)
    left = np.searchsorted(sorted_b, sorted_b[left_pos], side="left")
    d_right = np.where(pos < m, (sorted_b[right] - a) ** 2, np.inf)
    d_left = np.where(pos > 0, (a - sorted_b[left]) ** 2, np.inf)
    i_right, i_left = order[right], order[left]
    take_left = (d_left < d_right) | ((d_left == d_right) & (i_left < i_right))
    return np.where(take_left, i_left, i_right)


def nearest_indices(a, b):
    """Index into ``b`` of the nearest neighbour of every element of ``a``.

    Ties resolve to the lowest index in ``b``.
    """
    a = np.ascontiguousarray(a, dtype=np.float64).ravel()
    b = np.ascontiguousarray(b, dtype=np.float64).ravel()
    order = np.argsort(b, kind="stable")
    sorted_b = b[order]
    if use_numba():
        return _nearest_kernel(a, sorted_b, order, np.empty(a.size, dtype=np.int64))
    return _nearest_numpy(a, sorted_b, order)


def _check_sets(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise InvalidArgumentError("chamfer needs two non-empty point sets")
    return a, b


def chamfer_1d(a, b):
    """Mean over ``a`` of the squared distance to the nearest element of ``b``."""
    a, b = _check_sets(a, b)
    idx = nearest_indices(a, b)
    return float(np.mean((a - b[idx]) ** 2))


def chamfer_1d_grad(a, b):
    """Gradients of :func:`chamfer_1d` with respect to ``a`` and ``b``."""
    a, b = _check_sets(a, b)
    idx = nearest_indices(a, b)
    diff = 2.0 * (a - b[idx]) / a.size
    grad_b = np.zeros_like(b)
    np.add.at(grad_b, idx, -diff)
    return diff, grad_b


def _gt_points(gt):
    gt = _as_raster(gt)
    points = gt.valid_values()
    if points.size == 0:
        raise EmptyGroundTruthError("no valid ground-truth pixels")
    return points


def bin_density_loss(gt, centres):
    """chamfer(gt depths, centres) + chamfer(centres, gt depths)."""
    points = _gt_points(gt)
    return chamfer_1d(points, centres) + chamfer_1d(centres, points)


def bin_density_loss_grad(gt, centres):
    """d bin_density_loss / d centres."""
    points = _gt_points(gt)
    _, g_fwd = chamfer_1d_grad(points, centres)
    g_bwd, _ = chamfer_1d_grad(centres, points)
    return g_fwd + g_bwd


def loss_breakdown(pred, gt, centres, beta=DEFAULT_BETA, variant="as_printed"):
    silog = silog_loss(pred, gt, variant)
    density = bin_density_loss(gt, centres)
    return LossBreakdown(silog, density, silog + beta * density, int(_as_raster(gt).mask.sum()))


# torch twins; batched over images, masks select valid pixels per image


def silog_loss_t(pred, gt, mask, variant="as_printed"):
    """Mean over the batch of the per-image loss. pred/gt/mask are (B, H, W)."""
    lam = _silog_coeff(variant)
    losses = []
    for p, t, m in zip(pred, gt, mask):
        g = torch.log(p[m]) - torch.log(t[m])
        n = g.numel()
        if n == 0:
            raise EmptyGroundTruthError("no valid ground-truth pixels")
        inner = torch.sum(g * g) / n + lam / n**2 * torch.sum(g) ** 2
        losses.append(SILOG_SCALE * torch.sqrt(torch.clamp(inner, min=0.0)))
    return torch.stack(losses).mean()


def chamfer_1d_t(a, b):
    dist = (a[:, None] - b[None, :]) ** 2
    return dist.min(dim=1).values.mean()


def bin_density_loss_t(gt, mask, centres):
    """gt/mask (B, H, W), centres (B, n_bins)."""
    losses = []
    for t, m, c in zip(gt, mask, centres):
        points = t[m]
        if points.numel() == 0:
            raise EmptyGroundTruthError("no valid ground-truth pixels")
        dist = (points[:, None] - c[None, :]) ** 2
        losses.append(dist.min(dim=1).values.mean() + dist.min(dim=0).values.mean())
    return torch.stack(losses).mean()
