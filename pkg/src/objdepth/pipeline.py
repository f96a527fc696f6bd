"""Evaluation (with mirror test-time augmentation), inference and the ablation grid."""

import csv
import itertools
import logging
import os
from dataclasses import dataclass

import numpy as np
import torch

from .binning import DepthRaster
from .checkpoint import load_checkpoint
from .data import ObjectInputs, load_split, require_detections
from .metrics import MetricAccumulator, compute_metrics, valid_mask, write_report
from .model import image_to_tensor
from .pfm import write_pfm
from .train import train

logger = logging.getLogger(__name__)


class ModelPredictor:
    """Callable ``(image, detections) -> H x W depth`` around a trained network."""

    def __init__(self, model, inputs=None):
        self.model = model.eval()
        self.inputs = inputs or ObjectInputs.from_config(model.cfg)

    @torch.no_grad()
    def __call__(self, image, detections):
        dtype = self.model.dtype
        objects = self.inputs.batch([detections], 0, dtype)
        _, depth = self.model(image_to_tensor(image, dtype), *objects)
        return depth[0].cpu().numpy().astype(np.float64)


def predict_tta(predict, image, detections):
    """Average of the prediction and the re-mirrored prediction of the mirrored input."""
    direct = predict(image, detections)
    mirrored = predict(np.ascontiguousarray(image[:, ::-1]), detections.mirrored())
    return 0.5 * (direct + mirrored[:, ::-1])


def evaluate_predictor(predict, samples, tta_mirror=False, d_min=1e-3, d_max=10.0):
    """Stream per-image metrics through running averages, one image at a time."""
    acc = MetricAccumulator()
    per_image = []
    for sample in samples:
        dets = require_detections(sample)
        depth = predict_tta(predict, sample.image, dets) if tta_mirror else predict(sample.image, dets)
        gt = DepthRaster(sample.depth.values, sample.depth.mask & valid_mask(sample.depth, d_min, d_max))
        metrics = compute_metrics(depth, gt)
        acc.update(metrics)
        per_image.append((sample.image_id, metrics))
    return acc.result(), per_image


def evaluate(checkpoint_path, data_dir, tta_mirror=False, out_dir=None, samples=None):
    model, ckpt = load_checkpoint(checkpoint_path)
    cfg = model.cfg
    if samples is None:
        samples = load_split(data_dir, cfg.d_min, cfg.d_max)
    result, per_image = evaluate_predictor(ModelPredictor(model), samples, tta_mirror, cfg.d_min, cfg.d_max)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        extra = {"checkpoint": os.path.abspath(checkpoint_path), "images": len(per_image), "tta_mirror": tta_mirror}
        write_report(result, os.path.join(out_dir, "metrics.txt"), os.path.join(out_dir, "metrics.json"), extra)
    return result


def depth_to_gray(depth, d_min, d_max):
    """Linear map of [d_min, d_max] onto 0..255."""
    scaled = (np.asarray(depth) - d_min) / (d_max - d_min)
    return np.clip(np.round(scaled * 255.0), 0, 255).astype(np.uint8)


def infer(checkpoint_path, image, detections, out_path, vis_path=None, tta_mirror=False):
    model, _ = load_checkpoint(checkpoint_path)
    predict = ModelPredictor(model)
    depth = predict_tta(predict, image, detections) if tta_mirror else predict(image, detections)
    write_pfm(out_path, depth)
    if vis_path:
        from PIL import Image

        Image.fromarray(depth_to_gray(depth, model.cfg.d_min, model.cfg.d_max), mode="L").save(vis_path)
    return depth


# ablation grid

GRID_POS = ("pos", "pos_bbox_wh")
GRID_LANG = ("ctrl_zeros", "def_sz_rel", "def_only")
GRID_SA = (True, False)
TABLE_METRICS = ("abs_rel", "sq_rel", "rms", "rmsl", "log10", "delta1", "delta2", "delta3")


@dataclass
class AblationCell:
    pos_variant: str
    language_mode: str
    object_sa: bool
    metrics: object = None
    error: str = ""


def ablation_cells():
    return [AblationCell(p, l, s) for p, l, s in itertools.product(GRID_POS, GRID_LANG, GRID_SA)]


def split_train_eval(samples, eval_fraction=0.2):
    n_eval = max(1, int(round(len(samples) * eval_fraction)))
    return samples[:-n_eval], samples[-n_eval:]


def run_cell(base_cfg, cell, train_samples, eval_samples, out_dir, tta_mirror=False):
    cfg = base_cfg.with_(pos_variant=cell.pos_variant, language_mode=cell.language_mode, object_sa=cell.object_sa)
    result = train(cfg, None, out_dir, samples=train_samples)
    metrics, _ = evaluate_predictor(ModelPredictor(result.model), eval_samples, tta_mirror, cfg.d_min, cfg.d_max)
    return metrics


def ablation_matrix(base_cfg, data_dir, out_dir, eval_dir=None, cells=None, tta_mirror=False):
    """Train and evaluate every (pos, language, object-SA) cell; failed cells are recorded, not fatal."""
    samples = load_split(data_dir, base_cfg.d_min, base_cfg.d_max)
    if eval_dir:
        train_samples, eval_samples = samples, load_split(eval_dir, base_cfg.d_min, base_cfg.d_max)
    else:
        train_samples, eval_samples = split_train_eval(samples)
    cells = cells if cells is not None else ablation_cells()
    os.makedirs(out_dir, exist_ok=True)
    for cell in cells:
        name = f"{cell.pos_variant}-{cell.language_mode}-{'sa' if cell.object_sa else 'nosa'}"
        try:
            cell.metrics = run_cell(base_cfg, cell, train_samples, eval_samples, os.path.join(out_dir, name), tta_mirror)
        except Exception as exc:  # a failed cell must not stop the grid
            logger.exception("ablation cell %s failed", name)
            cell.error = f"{type(exc).__name__}: {exc}"
    write_ablation_tables(cells, out_dir)
    return cells


def _fmt(cell, metric):
    return "FAILED" if cell.metrics is None else f"{getattr(cell.metrics, metric):.3f}"


def write_ablation_tables(cells, out_dir):
    header = ["Pos. emb.", "Lang.", "SA?", *TABLE_METRICS]
    rows = [
        [c.pos_variant, c.language_mode, "Y" if c.object_sa else "N", *(_fmt(c, m) for m in TABLE_METRICS)]
        for c in cells
    ]
    with open(os.path.join(out_dir, "ablation.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([*header, "error"])
        for row, cell in zip(rows, cells):
            writer.writerow([*row, cell.error])
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(row) + " |" for row in rows]
    with open(os.path.join(out_dir, "ablation.md"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return rows
