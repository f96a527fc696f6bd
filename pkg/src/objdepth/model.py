"""Depth network: conv encoder-decoder, patch tokens, object/patch self-attention,
image-object cross-attention and the adaptive-bin output head."""

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import binning
from .errors import ConfigurationError, InvalidArgumentError
from .objects import EMBED_DIM
from .posenc import PositionalEncoder, uniform_fan_in_

DTYPES = {"f32": torch.float32, "f64": torch.float64}


def _conv(cin, cout, stride=1):
    return nn.Conv2d(cin, cout, kernel_size=3, stride=stride, padding=1)


class ToyBackbone(nn.Module):
    """Four stride-2 conv stages, then a skip-connected decoder back up to half resolution."""

    def __init__(self, channels=(16, 32, 64, 128), out_channels=128):
        super().__init__()
        c = (3, *channels)
        self.down = nn.ModuleList(_conv(c[i], c[i + 1], stride=2) for i in range(4))
        # each decoder conv fuses the upsampled deeper map with the matching encoder map
        self.up = nn.ModuleList(
            [
                _conv(channels[3] + channels[2], channels[2]),
                _conv(channels[2] + channels[1], channels[1]),
                _conv(channels[1] + channels[0], channels[0]),
            ]
        )
        self.head = nn.Conv2d(channels[0], out_channels, kernel_size=1)

    def forward(self, image):
        h, w = image.shape[-2:]
        if h % 16 or w % 16 or h < 64 or w < 64:
            raise InvalidArgumentError(f"image size {h}x{w} must be multiples of 16 and at least 64")
        skips = []
        x = image
        for conv in self.down:
            x = F.gelu(conv(x))
            skips.append(x)
        for conv, skip in zip(self.up, reversed(skips[:-1])):
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = F.gelu(conv(torch.cat([x, skip], dim=1)))
        return self.head(x)


class PatchEmbed(nn.Module):
    """Non-overlapping patch x patch convolution, flattened row-major into tokens."""

    def __init__(self, in_channels, embed_dim, patch):
        super().__init__()
        self.patch = patch
        self.proj = nn.Conv2d(in_channels, embed_dim, kernel_size=patch, stride=patch)

    def forward(self, dense):
        h, w = dense.shape[-2:]
        if h % self.patch or w % self.patch:
            raise InvalidArgumentError(f"feature map {h}x{w} not divisible by patch size {self.patch}")
        return self.proj(dense).flatten(2).transpose(1, 2)

    def geometry(self, h, w, dtype=torch.float64):
        """(n_patch, 4) normalised (cx, cy, w, h) for an h x w feature map.

        Feature maps sit at half input resolution, so fractions of the map
        equal fractions of the input image.
        """
        rows, cols = h // self.patch, w // self.patch
        cy = (torch.arange(rows, dtype=dtype) + 0.5) / rows
        cx = (torch.arange(cols, dtype=dtype) + 0.5) / cols
        gy, gx = torch.meshgrid(cy, cx, indexing="ij")
        size = torch.tensor([1.0 / cols, 1.0 / rows], dtype=dtype).expand(rows * cols, 2)
        return torch.cat([gx.reshape(-1, 1), gy.reshape(-1, 1), size], dim=1)


def patchify(dense, embed):
    return embed(dense)


class MultiHeadAttention(nn.Module):
    def __init__(self, embed_dim, heads):
        super().__init__()
        if embed_dim % heads:
            raise ConfigurationError(f"embed_dim {embed_dim} not divisible by {heads} heads")
        self.heads = heads
        self.q = nn.Linear(embed_dim, embed_dim)
        self.k = nn.Linear(embed_dim, embed_dim)
        self.v = nn.Linear(embed_dim, embed_dim)
        self.out = nn.Linear(embed_dim, embed_dim)

    def forward(self, query, key, value, key_mask=None):
        """query (B, Lq, E), key/value (B, Lk, E); key_mask (B, Lk) is True for real keys."""
        b, lq, e = query.shape
        lk = key.shape[1]
        dh = e // self.heads
        q = self.q(query).view(b, lq, self.heads, dh).transpose(1, 2)
        k = self.k(key).view(b, lk, self.heads, dh).transpose(1, 2)
        v = self.v(value).view(b, lk, self.heads, dh).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(dh)
        if key_mask is not None:
            scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        return self.out((attn @ v).transpose(1, 2).reshape(b, lq, e))


class FeedForward(nn.Sequential):
    def __init__(self, embed_dim, ff_dim):
        super().__init__(nn.Linear(embed_dim, ff_dim), nn.GELU(), nn.Linear(ff_dim, embed_dim))


class EncoderLayer(nn.Module):
    """Pre-norm transformer encoder layer."""

    def __init__(self, embed_dim, heads, ff_dim):
        super().__init__()
        self.norm1 = nn.LayerNorm(embed_dim)
        self.attn = MultiHeadAttention(embed_dim, heads)
        self.norm2 = nn.LayerNorm(embed_dim)
        self.ff = FeedForward(embed_dim, ff_dim)

    def forward(self, x, mask=None):
        y = self.norm1(x)
        x = x + self.attn(y, y, y, mask)
        return x + self.ff(self.norm2(x))


class SelfAttentionStack(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.layers = nn.ModuleList(
            EncoderLayer(cfg.embed_dim, cfg.heads, cfg.ff_dim) for _ in range(cfg.layers)
        )

    def forward(self, tokens, mask=None):
        for layer in self.layers:
            tokens = layer(tokens, mask)
        return tokens

    def identity_(self):
        """Zero every residual branch so the stack becomes the identity map."""
        with torch.no_grad():
            for layer in self.layers:
                for lin in (layer.attn.out, layer.ff[2]):
                    lin.weight.zero_()
                    lin.bias.zero_()
        return self


class CrossAttention(nn.Module):
    """Visual tokens query the object tokens (keys and values); residual on the visual stream."""

    def __init__(self, embed_dim, heads, ff_dim):
        super().__init__()
        self.norm_q = nn.LayerNorm(embed_dim)
        self.norm_kv = nn.LayerNorm(embed_dim)
        self.attn = MultiHeadAttention(embed_dim, heads)
        self.norm_ff = nn.LayerNorm(embed_dim)
        self.ff = FeedForward(embed_dim, ff_dim)

    def forward(self, visual, objects, object_mask=None):
        if visual.shape[-1] != objects.shape[-1]:
            raise InvalidArgumentError(
                f"visual dim {visual.shape[-1]} != object dim {objects.shape[-1]}"
            )
        kv = self.norm_kv(objects)
        x = visual + self.attn(self.norm_q(visual), kv, kv, object_mask)
        return x + self.ff(self.norm_ff(x))


@dataclass
class BinPrediction:
    widths: torch.Tensor  # (B, n_bins)
    probs: torch.Tensor  # (B, n_bins, h, w)
    centres: torch.Tensor  # (B, n_bins)


class OutputHead(nn.Module):
    """Token 0 -> bin widths; tokens 1..k dotted with dense features -> bin probabilities."""

    def __init__(self, embed_dim, n_bins, kernel_tokens, width_hidden=256):
        super().__init__()
        self.kernel_tokens = kernel_tokens
        self.width_mlp = nn.Sequential(
            nn.Linear(embed_dim, width_hidden), nn.GELU(), nn.Linear(width_hidden, n_bins)
        )
        self.prob_proj = nn.Conv2d(kernel_tokens, n_bins, kernel_size=1)

    def responses(self, sequence, dense):
        kernels = sequence[:, 1 : 1 + self.kernel_tokens]
        return torch.einsum("bke,behw->bkhw", kernels, dense)

    def forward(self, sequence, dense):
        if sequence.shape[1] < self.kernel_tokens + 1:
            raise ConfigurationError(
                f"sequence of {sequence.shape[1]} tokens is too short for "
                f"1 width token + {self.kernel_tokens} kernel tokens"
            )
        if dense.shape[1] != sequence.shape[-1]:
            raise InvalidArgumentError(
                f"dense channels {dense.shape[1]} != token dim {sequence.shape[-1]}"
            )
        widths = binning.normalize_widths_t(self.width_mlp(sequence[:, 0]))
        probs = torch.softmax(self.prob_proj(self.responses(sequence, dense)), dim=1)
        return widths, probs


class ObjectDepthNet(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        e = cfg.embed_dim
        att = cfg.attention
        self.backbone = ToyBackbone(cfg.backbone_channels, out_channels=e)
        self.patch_embed = PatchEmbed(e, e, cfg.patch_size)
        self.pos_encoder = PositionalEncoder(cfg.pos_variant, out_dim=e)
        self.patch_sa = SelfAttentionStack(att)
        self.object_proj = nn.Linear(EMBED_DIM, e)
        self.object_sa = SelfAttentionStack(att)
        self.null_token = nn.Parameter(torch.zeros(e))
        self.cross = CrossAttention(e, att.heads, att.ff_dim)
        self.head = OutputHead(e, cfg.n_bins, cfg.kernel_tokens)
        self.reset_parameters(cfg.seed)
        self.to(DTYPES[cfg.precision])

    @property
    def dtype(self):
        return self.null_token.dtype

    def reset_parameters(self, seed):
        gen = torch.Generator().manual_seed(seed)
        for module in self.modules():
            if isinstance(module, (nn.Linear, nn.Conv2d)):
                uniform_fan_in_(module, gen)
        # plain 1/sqrt(fan_in) bounds shrink activations through the conv stack
        for module in self.backbone.modules():
            if isinstance(module, nn.Conv2d):
                bound = math.sqrt(6.0 / module.weight[0].numel())
                with torch.no_grad():
                    module.weight.uniform_(-bound, bound, generator=gen)
        with torch.no_grad():
            bound = 1.0 / math.sqrt(self.cfg.embed_dim)
            self.null_token.uniform_(-bound, bound, generator=gen)
            self.head.prob_proj.bias.zero_()

    def encode_objects(self, embeddings, geometry, mask):
        """Object tokens (B, N, E) and key mask; empty sets get the null token."""
        tokens = self.object_proj(embeddings) + self.pos_encoder(self.pos_encoder.select(geometry))
        empty = ~mask.any(dim=1)
        if empty.any():
            slot0 = torch.zeros_like(mask)
            slot0[:, 0] = True
            use_null = (empty[:, None] & slot0)[..., None]
            tokens = torch.where(use_null, self.null_token.expand_as(tokens), tokens)
            mask = mask | (empty[:, None] & slot0)
        if self.cfg.object_sa:
            tokens = self.object_sa(tokens, mask)
        return tokens, mask

    def forward(self, images, obj_embeddings, obj_geometry, obj_mask):
        """images (B, 3, H, W); objects padded to (B, N>=1, ...) with mask True on real entries."""
        if obj_embeddings.shape[1] == 0:
            b = images.shape[0]
            obj_embeddings = images.new_zeros(b, 1, EMBED_DIM)
            obj_geometry = images.new_zeros(b, 1, 4)
            obj_mask = torch.zeros(b, 1, dtype=torch.bool)
        dense = self.backbone(images)
        patches = self.patch_embed(dense)
        geom = self.patch_embed.geometry(*dense.shape[-2:], dtype=dense.dtype)
        patches = patches + self.pos_encoder(self.pos_encoder.select(geom))
        patches = self.patch_sa(patches)
        objects, mask = self.encode_objects(obj_embeddings, obj_geometry, obj_mask)
        sequence = self.cross(patches, objects, mask)
        widths, probs = self.head(sequence, dense)
        centres = binning.bin_centres_t(widths, self.cfg.d_min, self.cfg.d_max)
        depth_half = binning.expected_depth_t(probs, centres)
        depth = binning.upsample_bilinear_t(depth_half, images.shape[-2:])
        return BinPrediction(widths, probs, centres), depth


def image_to_tensor(image, dtype):
    """H x W x 3 array -> (1, 3, H, W) tensor."""
    return torch.as_tensor(np.ascontiguousarray(np.asarray(image).transpose(2, 0, 1)), dtype=dtype)[None]
