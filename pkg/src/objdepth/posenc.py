"""MLP positional encoders for object boxes and image patches.

Both variants share the layer chain in -> 32 -> 64 -> 128 -> 256 -> out with
LeakyReLU (slope 0.01) between layers; ``pos`` reads (cx, cy) and
``pos_bbox_wh`` reads (cx, cy, w, h). Geometry must already be normalised to
[0, 1] by the image width and height.
"""

import math

import torch
from torch import nn

from .errors import InvalidArgumentError

HIDDEN_WIDTHS = (32, 64, 128, 256)
LEAKY_SLOPE = 0.01
VARIANT_INPUTS = {"pos": 2, "pos_bbox_wh": 4}


def uniform_fan_in_(module, generator=None):
    """Initialise weight and bias of a Linear/Conv2d uniformly in +-1/sqrt(fan_in)."""
    fan_in = module.weight[0].numel()
    bound = 1.0 / math.sqrt(fan_in)
    with torch.no_grad():
        module.weight.uniform_(-bound, bound, generator=generator)
        if module.bias is not None:
            module.bias.uniform_(-bound, bound, generator=generator)


class PositionalEncoder(nn.Module):
    def __init__(self, variant="pos_bbox_wh", out_dim=128):
        super().__init__()
        if variant not in VARIANT_INPUTS:
            raise InvalidArgumentError(f"unknown positional variant {variant!r}")
        self.variant = variant
        self.in_dim = VARIANT_INPUTS[variant]
        widths = (self.in_dim, *HIDDEN_WIDTHS, out_dim)
        layers = []
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            layers.append(nn.Linear(a, b, bias=True))
            if i < len(widths) - 2:
                layers.append(nn.LeakyReLU(LEAKY_SLOPE))
        self.mlp = nn.Sequential(*layers)

    @property
    def linears(self):
        return [m for m in self.mlp if isinstance(m, nn.Linear)]

    def reset_parameters(self, generator=None):
        for lin in self.linears:
            uniform_fan_in_(lin, generator)

    def select(self, geometry):
        """Columns of an (..., 4) box/patch geometry tensor this variant reads."""
        return geometry[..., : self.in_dim]

    def forward(self, geometry):
        if geometry.shape[-1] != self.in_dim:
            raise InvalidArgumentError(
                f"{self.variant} encoder expects {self.in_dim} inputs, got {geometry.shape[-1]}"
            )
        return self.mlp(geometry)


def encode_positions(geometry, encoder):
    return encoder(geometry)


def add_positional(tokens, embeddings):
    if tokens.shape != embeddings.shape:
        raise InvalidArgumentError(
            f"token shape {tuple(tokens.shape)} != embedding shape {tuple(embeddings.shape)}"
        )
    return tokens + embeddings
