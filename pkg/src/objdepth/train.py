"""Training loop: one-cycle AdamW over a synthetic split with per-epoch checkpoints."""

import csv
import json
import logging
import math
import os
import queue
import threading
from dataclasses import dataclass, field

import numpy as np
import torch

from .checkpoint import save_checkpoint
from .data import ObjectInputs, load_split, require_detections, stack_samples
from .errors import NonFiniteLossError
from .losses import bin_density_loss_t, silog_loss_t
from .model import ObjectDepthNet
from .schedule import apply_schedule, make_optimizer

logger = logging.getLogger(__name__)

LOG_FIELDS = ("step", "epoch", "total", "silog", "bin_density", "lr", "momentum")


@dataclass
class TrainResult:
    model: ObjectDepthNet
    checkpoint_path: str
    steps: int
    history: list = field(default_factory=list)


def compute_loss(model, batch, cfg):
    images, depths, masks, objects = batch
    pred, depth = model(images, *objects)
    silog = silog_loss_t(depth, depths, masks, cfg.silog_variant)
    density = bin_density_loss_t(depths, masks, pred.centres)
    return silog + cfg.beta * density, silog, density


def make_batch(samples, inputs, epoch, dtype):
    images, depths, masks = stack_samples(samples, dtype)
    objects = inputs.batch([require_detections(s) for s in samples], epoch, dtype)
    return images, depths, masks, objects


@torch.no_grad()
def split_loss(model, samples, cfg, batch_size=None):
    """Mean total loss over a split (no augmentation, epoch-0 phrases)."""
    inputs = ObjectInputs.from_config(cfg)
    batch_size = batch_size or cfg.batch_size
    totals = []
    for i in range(0, len(samples), batch_size):
        chunk = samples[i : i + batch_size]
        total, _, _ = compute_loss(model, make_batch(chunk, inputs, 0, model.dtype), cfg)
        totals.append(float(total) * len(chunk))
    return sum(totals) / len(samples)


def _epoch_plan(n_samples, cfg, epoch):
    """Shuffled batches of (index, flip) for one epoch, seeded by (seed, epoch)."""
    rng = np.random.default_rng([cfg.seed, epoch, 7])
    order = rng.permutation(n_samples)
    flips = rng.random(n_samples) < 0.5 if cfg.hflip else np.zeros(n_samples, dtype=bool)
    return [
        [(int(i), bool(flips[i])) for i in order[k : k + cfg.batch_size]]
        for k in range(0, n_samples, cfg.batch_size)
    ]


def _prefetch(producer, maxsize=2):
    """Run ``producer`` (a generator) on a worker thread behind a bounded queue."""
    q = queue.Queue(maxsize=maxsize)
    done = object()

    def work():
        try:
            for item in producer:
                q.put(item)
        except BaseException as exc:  # re-raised on the consumer side
            q.put(exc)
        q.put(done)

    thread = threading.Thread(target=work, daemon=True)
    thread.start()
    while True:
        item = q.get()
        if item is done:
            break
        if isinstance(item, BaseException):
            raise item
        yield item
    thread.join()


def _dump_nonfinite(out_dir, step, ids, values):
    path = os.path.join(out_dir, "nonfinite_batch.json")
    with open(path, "w") as fh:
        json.dump({"step": step, "image_ids": ids, "losses": values}, fh, indent=2)
    return path


def train(cfg, data_dir, out_dir, samples=None, model=None):
    """Train from scratch (or from ``model``) and write ``checkpoint.ckpt`` plus a CSV log."""
    cfg.validate()
    os.makedirs(out_dir, exist_ok=True)
    if samples is None:
        samples = load_split(data_dir, cfg.d_min, cfg.d_max)
    model = model or ObjectDepthNet(cfg)
    ckpt_path = os.path.join(out_dir, "checkpoint.ckpt")
    steps_per_epoch = math.ceil(len(samples) / cfg.batch_size) if samples else 0
    total_steps = cfg.max_steps or cfg.epochs * steps_per_epoch
    if total_steps == 0 or not samples:
        save_checkpoint(ckpt_path, model, step=0)
        return TrainResult(model, ckpt_path, 0)

    inputs = ObjectInputs.from_config(cfg)
    optimizer = make_optimizer(model.parameters(), cfg)
    dtype = model.dtype
    history = []

    def batches():
        step, epoch = 0, 0
        while step < total_steps:
            for plan in _epoch_plan(len(samples), cfg, epoch):
                if step >= total_steps:
                    break
                chosen = [samples[i].flipped() if flip else samples[i] for i, flip in plan]
                yield step, epoch, [s.image_id for s in chosen], make_batch(chosen, inputs, epoch, dtype)
                step += 1
            yield None, epoch, None, None  # epoch boundary
            epoch += 1

    model.train()
    with open(os.path.join(out_dir, "train_log.csv"), "w", newline="") as log_fh:
        writer = csv.DictWriter(log_fh, fieldnames=LOG_FIELDS)
        writer.writeheader()
        step = 0
        for step_i, epoch, ids, batch in _prefetch(batches()):
            if step_i is None:
                save_checkpoint(ckpt_path, model, step=step)
                continue
            lr, momentum = apply_schedule(optimizer, step_i, total_steps, cfg)
            optimizer.zero_grad(set_to_none=True)
            total, silog, density = compute_loss(model, batch, cfg)
            if not torch.isfinite(total):
                path = _dump_nonfinite(out_dir, step_i, ids, [total.item(), silog.item(), density.item()])
                raise NonFiniteLossError(f"non-finite loss at step {step_i} (batch {ids}); dump at {path}")
            total.backward()
            optimizer.step()
            row = {
                "step": step_i,
                "epoch": epoch,
                "total": total.item(),
                "silog": silog.item(),
                "bin_density": density.item(),
                "lr": lr,
                "momentum": momentum,
            }
            writer.writerow(row)
            history.append(row)
            step = step_i + 1
            if step_i % 50 == 0:
                logger.info("step %d epoch %d loss %.4f lr %.3g", step_i, epoch, row["total"], lr)
    model.eval()
    save_checkpoint(ckpt_path, model, step=step)
    return TrainResult(model, ckpt_path, step, history)
