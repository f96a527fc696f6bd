"""One-cycle learning-rate / momentum schedule and the AdamW optimiser wiring."""

import math

import torch

from .errors import InvalidArgumentError

ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def _cos_anneal(start, end, frac):
    return end + (start - end) / 2.0 * (1.0 + math.cos(math.pi * frac))


def one_cycle_lr(
    step,
    total_steps,
    max_lr,
    div_factor=25.0,
    final_div_factor=100.0,
    base_momentum=0.85,
    max_momentum=0.95,
    pct_start=0.3,
):
    """(lr, momentum) at ``step`` of a single cosine cycle.

    Warm-up occupies the first ``round(pct_start * total_steps)`` steps
    (lr from max_lr/div_factor up to max_lr, momentum max -> base); the rest
    anneals lr down to max_lr/(div_factor*final_div_factor) while momentum
    returns to its maximum.
    """
    if total_steps < 1:
        raise InvalidArgumentError("total_steps must be at least 1")
    if not 0 <= step <= total_steps:
        raise InvalidArgumentError(f"step {step} outside [0, {total_steps}]")
    initial_lr = max_lr / div_factor
    min_lr = initial_lr / final_div_factor
    warm = max(1, round(pct_start * total_steps))
    if step <= warm:
        frac = step / warm
        return _cos_anneal(initial_lr, max_lr, frac), _cos_anneal(max_momentum, base_momentum, frac)
    frac = (step - warm) / (total_steps - warm)
    return _cos_anneal(max_lr, min_lr, frac), _cos_anneal(base_momentum, max_momentum, frac)


def make_optimizer(params, cfg):
    return torch.optim.AdamW(
        params,
        lr=cfg.base_lr / cfg.div_factor,
        betas=(cfg.max_momentum, ADAM_BETA2),
        eps=ADAM_EPS,
        weight_decay=cfg.weight_decay,
    )


def apply_schedule(optimizer, step, total_steps, cfg):
    lr, momentum = one_cycle_lr(
        step,
        total_steps,
        cfg.base_lr,
        cfg.div_factor,
        cfg.final_div_factor,
        cfg.base_momentum,
        cfg.max_momentum,
        cfg.pct_start,
    )
    for group in optimizer.param_groups:
        group["lr"] = lr
        group["betas"] = (momentum, ADAM_BETA2)
    return lr, momentum
