"""Eigen-style depth metrics, the streaming running average, and evaluation reports."""

import json
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple

import numpy as np

from ._accel import njit, use_numba
from .binning import DepthRaster
from .errors import DomainError, EmptyGroundTruthError, InvalidArgumentError

METRIC_NAMES = ("abs_rel", "sq_rel", "rms", "rmsl", "log10", "delta1", "delta2", "delta3")


@dataclass(frozen=True)
class MetricSet:
    abs_rel: float
    sq_rel: float
    rms: float
    rmsl: float
    log10: float
    delta1: float
    delta2: float
    delta3: float

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class RunningAverage:
    ave: float = 0.0
    n: int = 0


def running_update(acc, val):
    """``ave_{n+1} = (ave_n * n + val) / (n + 1)``."""
    if acc.n < 0:
        raise InvalidArgumentError("running-average count must be non-negative")
    return RunningAverage((acc.ave * acc.n + val) / (acc.n + 1), acc.n + 1)


class MetricAccumulator:
    """One running average per metric, updated one image at a time."""

    def __init__(self):
        self.averages = {name: RunningAverage() for name in METRIC_NAMES}

    def update(self, metrics):
        for name in METRIC_NAMES:
            self.averages[name] = running_update(self.averages[name], getattr(metrics, name))

    @property
    def count(self):
        return self.averages[METRIC_NAMES[0]].n

    def result(self):
        return MetricSet(**{name: acc.ave for name, acc in self.averages.items()})


@njit
def _metric_sums_kernel(d, t):
    abs_rel = 0.0
    sq_rel = 0.0
    sq = 0.0
    sq_log = 0.0
    log10 = 0.0
    c1 = 0
    c2 = 0
    c3 = 0
    inv_ln10 = 1.0 / np.log(10.0)
    for i in range(d.shape[0]):
        diff = d[i] - t[i]
        abs_rel += abs(diff) / t[i]
        sq_rel += diff * diff / t[i]
        sq += diff * diff
        ld = np.log(d[i]) - np.log(t[i])
        sq_log += ld * ld
        log10 += abs(ld * inv_ln10)
        ratio = max(d[i] / t[i], t[i] / d[i])
        if ratio < 1.25:
            c1 += 1
        if ratio < 1.25**2:
            c2 += 1
        if ratio < 1.25**3:
            c3 += 1
    return abs_rel, sq_rel, sq, sq_log, log10, c1, c2, c3


def _metric_sums_numpy(d, t):
    diff = d - t
    ld = np.log(d) - np.log(t)
    ratio = np.maximum(d / t, t / d)
    return (
        np.sum(np.abs(diff) / t),
        np.sum(diff * diff / t),
        np.sum(diff * diff),
        np.sum(ld * ld),
        np.sum(np.abs(ld / np.log(10.0))),
        np.count_nonzero(ratio < 1.25),
        np.count_nonzero(ratio < 1.25**2),
        np.count_nonzero(ratio < 1.25**3),
    )


def compute_metrics(pred, gt):
    """Metrics over the valid pixels of ``gt``. Sq Rel uses the squared difference."""
    gt = gt if isinstance(gt, DepthRaster) else DepthRaster(gt)
    pred_values = pred.values if isinstance(pred, DepthRaster) else np.asarray(pred, dtype=np.float64)
    if pred_values.shape != gt.shape:
        raise InvalidArgumentError(f"prediction {pred_values.shape} and ground truth {gt.shape} differ")
    d = np.ascontiguousarray(pred_values[gt.mask])
    t = np.ascontiguousarray(gt.values[gt.mask])
    if t.size == 0:
        raise EmptyGroundTruthError("no valid ground-truth pixels")
    if np.any(d <= 0) or np.any(t <= 0):
        raise DomainError("depths must be positive on valid pixels")
    sums = _metric_sums_kernel(d, t) if use_numba() else _metric_sums_numpy(d, t)
    abs_rel, sq_rel, sq, sq_log, log10, c1, c2, c3 = sums
    n = t.size
    return MetricSet(
        abs_rel=float(abs_rel / n),
        sq_rel=float(sq_rel / n),
        rms=float(np.sqrt(sq / n)),
        rmsl=float(np.sqrt(sq_log / n)),
        log10=float(log10 / n),
        delta1=c1 / n,
        delta2=c2 / n,
        delta3=c3 / n,
    )


class Crop(NamedTuple):
    """Half-open pixel rectangle ``[top, bottom) x [left, right)``."""

    top: int
    bottom: int
    left: int
    right: int


def valid_mask(gt, d_min, d_max, crop=None):
    values = gt.values if isinstance(gt, DepthRaster) else np.asarray(gt, dtype=np.float64)
    mask = (values >= d_min) & (values <= d_max)
    if crop is not None:
        top, bottom, left, right = crop
        h, w = values.shape
        if not (0 <= top < bottom <= h and 0 <= left < right <= w):
            raise InvalidArgumentError(f"crop {tuple(crop)} outside image bounds {h}x{w}")
        inside = np.zeros_like(mask)
        inside[top:bottom, left:right] = True
        mask &= inside
    return mask


def format_report(metrics, extra=None):
    """Line-oriented ``key=value`` text."""
    lines = [f"{k}={v}" for k, v in (extra or {}).items()]
    lines += [f"{f.name}={getattr(metrics, f.name):.6f}" for f in fields(metrics)]
    return "\n".join(lines) + "\n"


def write_report(metrics, text_path, json_path, extra=None):
    with open(text_path, "w") as fh:
        fh.write(format_report(metrics, extra))
    payload = dict(extra or {})
    payload["metrics"] = metrics.as_dict()
    with open(json_path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
