"""Token-space blocks: windowed attention, residual Swin blocks and MUST.

Token matrices are ``[B, L, d]`` with an accompanying ``grid = (h, w)``,
``L = h * w``, token ``i`` sitting at pixel ``(i // w, i % w)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import torch
from torch import nn

from .autograd import Conv2d, DimensionError, LayerNorm, Linear, activation, linear, softmax

Grid = tuple[int, int]


def tokens_to_image(tokens: torch.Tensor, grid: Grid) -> torch.Tensor:
    b, l, d = tokens.shape
    return tokens.transpose(1, 2).reshape(b, d, *grid)


def image_to_tokens(img: torch.Tensor) -> torch.Tensor:
    return img.flatten(2).transpose(1, 2)


def patch_embed(features: torch.Tensor, patch_size: int, proj: Linear) -> tuple[torch.Tensor, Grid]:
    """Flatten each ``p x p`` patch (row, column, channel order) and project it."""
    b, c, h, w = features.shape
    p = patch_size
    if h % p or w % p:
        raise DimensionError(f"patch_embed: grid {h}x{w} not divisible by patch size {p}")
    x = features.reshape(b, c, h // p, p, w // p, p).permute(0, 2, 4, 3, 5, 1)
    x = x.reshape(b, (h // p) * (w // p), p * p * c)
    return proj(x), (h // p, w // p)


def patch_unembed(tokens: torch.Tensor, grid: Grid, patch_size: int, proj: Linear) -> torch.Tensor:
    """Inverse layout of :func:`patch_embed` after a learned projection."""
    b = tokens.shape[0]
    h, w = grid
    p = patch_size
    x = proj(tokens)
    c = x.shape[-1] // (p * p)
    x = x.reshape(b, h, w, p, p, c).permute(0, 5, 1, 3, 2, 4)
    return x.reshape(b, c, h * p, w * p)


def effective_window(grid: Grid, window_size: int, shift: int) -> tuple[int, int]:
    """A grid no larger than the window is attended as one unshifted window."""
    h, w = grid
    if min(h, w) <= window_size:
        return min(h, w), 0
    return window_size, shift


def window_partition(x: torch.Tensor, ws: int) -> torch.Tensor:
    """``[B, h, w, d]`` -> ``[B * nW, ws * ws, d]``."""
    b, h, w, d = x.shape
    x = x.reshape(b, h // ws, ws, w // ws, ws, d).permute(0, 1, 3, 2, 4, 5)
    return x.reshape(-1, ws * ws, d)


def window_reverse(windows: torch.Tensor, ws: int, h: int, w: int) -> torch.Tensor:
    d = windows.shape[-1]
    x = windows.reshape(-1, h // ws, w // ws, ws, ws, d).permute(0, 1, 3, 2, 4, 5)
    return x.reshape(-1, h, w, d)


@lru_cache(maxsize=None)
def relative_position_index(ws: int, table_ws: int) -> torch.Tensor:
    """Row of the ``(2*table_ws - 1)^2`` bias table for every pair in a ``ws`` window."""
    ys, xs = torch.meshgrid(torch.arange(ws), torch.arange(ws), indexing="ij")
    coords = torch.stack([ys.flatten(), xs.flatten()])
    rel = coords[:, :, None] - coords[:, None, :] + (table_ws - 1)
    return rel[0] * (2 * table_ws - 1) + rel[1]


@lru_cache(maxsize=None)
def shifted_window_mask(h: int, w: int, ws: int, shift: int) -> torch.Tensor:
    """``[nW, n, n]`` bool, True where a pair straddles a cyclic-shift seam."""
    labels = torch.zeros(1, h, w, 1)
    cnt = 0
    spans = (slice(0, -ws), slice(-ws, -shift), slice(-shift, None))
    for hs in spans:
        for wsl in spans:
            labels[:, hs, wsl, :] = cnt
            cnt += 1
    lw = window_partition(labels, ws).squeeze(-1)
    return lw[:, :, None] != lw[:, None, :]


class WindowAttention(nn.Module):
    """Multi-head self-attention inside (optionally cyclically shifted) windows."""

    def __init__(self, dim: int, heads: int, window_size: int):
        super().__init__()
        if dim % heads:
            raise DimensionError(f"embedding dim {dim} is not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.window_size = window_size
        # no key bias: it shifts every logit in a row equally, so softmax ignores it
        self.qkv = Linear(dim, 3 * dim, bias=False)
        self.q_bias = nn.Parameter(torch.zeros(dim))
        self.v_bias = nn.Parameter(torch.zeros(dim))
        self.proj = Linear(dim, dim)
        self.bias_table = nn.Parameter(torch.zeros((2 * window_size - 1) ** 2, heads))

    def attend(self, x: torch.Tensor, grid: Grid, shift: int = 0, return_weights: bool = False):
        """Attention output before the output projection."""
        b, l, d = x.shape
        h, w = grid
        if l != h * w:
            raise DimensionError(f"token count {l} does not match grid {h}x{w}")
        ws, shift = effective_window(grid, self.window_size, shift)
        if h % ws or w % ws:
            raise DimensionError(f"grid {h}x{w} is not divisible by window size {ws}")
        n = ws * ws
        hd = d // self.heads

        x = x.reshape(b, h, w, d)
        if shift:
            x = torch.roll(x, shifts=(-shift, -shift), dims=(1, 2))
        win = window_partition(x, ws)
        qkv_bias = torch.cat([self.q_bias, torch.zeros_like(self.q_bias), self.v_bias])
        qkv = linear(win, self.qkv.weight, qkv_bias).reshape(-1, n, 3, self.heads, hd).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        logits = (q / math.sqrt(hd)) @ k.transpose(-2, -1)

        idx = relative_position_index(ws, self.window_size).reshape(-1)
        bias = self.bias_table[idx].reshape(n, n, self.heads).permute(2, 0, 1)
        logits = logits + bias
        if shift:
            blocked = shifted_window_mask(h, w, ws, shift)
            nw = blocked.shape[0]
            logits = logits.reshape(b, nw, self.heads, n, n)
            logits = logits.masked_fill(blocked[None, :, None], float("-inf"))
            logits = logits.reshape(-1, self.heads, n, n)
        attn = softmax(logits)

        out = (attn @ v).transpose(1, 2).reshape(-1, n, d)
        out = window_reverse(out, ws, h, w)
        if shift:
            out = torch.roll(out, shifts=(shift, shift), dims=(1, 2))
        out = out.reshape(b, l, d)
        return (out, attn) if return_weights else out

    def forward(self, x: torch.Tensor, grid: Grid, shift: int = 0) -> torch.Tensor:
        return self.proj(self.attend(x, grid, shift))


class SwinLayer(nn.Module):
    """Pre-norm residual attention followed by a pre-norm residual MLP."""

    def __init__(self, dim: int, heads: int, window_size: int, shift: int = 0, mlp_ratio: float = 2.0):
        super().__init__()
        self.shift = shift
        self.norm1 = LayerNorm(dim)
        self.attn = WindowAttention(dim, heads, window_size)
        self.norm2 = LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.fc1 = Linear(dim, hidden)
        self.fc2 = Linear(hidden, dim)

    def forward(self, x: torch.Tensor, grid: Grid) -> torch.Tensor:
        x = x + self.attn(self.norm1(x), grid, self.shift)
        return x + self.fc2(activation(self.fc1(self.norm2(x)), "gelu"))


class RSTB(nn.Module):
    """Residual Swin block (bottleneck form): STL stack, 3x3 conv, block residual."""

    def __init__(self, dim: int, depth: int, heads: int, window_size: int, mlp_ratio: float = 2.0):
        super().__init__()
        self.layers = nn.ModuleList(
            SwinLayer(dim, heads, window_size, 0 if i % 2 == 0 else window_size // 2, mlp_ratio)
            for i in range(depth)
        )
        self.conv = Conv2d(dim, dim, 3)

    def forward(self, x: torch.Tensor, grid: Grid) -> torch.Tensor:
        y = x
        for layer in self.layers:
            y = layer(y, grid)
        y = image_to_tokens(self.conv(tokens_to_image(y, grid)))
        return x + y


class PatchMerge(nn.Module):
    """Concatenate each 2x2 token group, normalize, project ``4d -> 2d``."""

    def __init__(self, dim: int):
        super().__init__()
        self.norm = LayerNorm(4 * dim)
        self.reduction = Linear(4 * dim, 2 * dim, bias=False)

    def forward(self, x: torch.Tensor, grid: Grid) -> tuple[torch.Tensor, Grid]:
        b, l, d = x.shape
        h, w = grid
        if h % 2 or w % 2:
            raise DimensionError(f"PatchMerge needs an even grid, got {h}x{w}")
        v = x.reshape(b, h, w, d)
        v = torch.cat([v[:, 0::2, 0::2], v[:, 1::2, 0::2], v[:, 0::2, 1::2], v[:, 1::2, 1::2]], dim=-1)
        v = v.reshape(b, (h // 2) * (w // 2), 4 * d)
        return self.reduction(self.norm(v)), (h // 2, w // 2)


class PatchExpand(nn.Module):
    """Project ``d -> 2d`` and unfold every token into a 2x2 block of ``d/2`` tokens."""

    def __init__(self, dim: int):
        super().__init__()
        if dim % 2:
            raise DimensionError(f"PatchExpand needs an even dim, got {dim}")
        self.expand = Linear(dim, 2 * dim, bias=False)
        self.norm = LayerNorm(dim // 2)

    def forward(self, x: torch.Tensor, grid: Grid) -> tuple[torch.Tensor, Grid]:
        b, l, d = x.shape
        h, w = grid
        y = self.expand(x).reshape(b, h, w, 2, 2, d // 2).permute(0, 1, 3, 2, 4, 5)
        y = y.reshape(b, 4 * l, d // 2)
        return self.norm(y), (2 * h, 2 * w)


class TokenMix(nn.Module):
    """Fuse decoder tokens with skip tokens: concat, ``2d -> d``, normalize."""

    def __init__(self, dim: int):
        super().__init__()
        self.mix = Linear(2 * dim, dim)
        self.norm = LayerNorm(dim)

    def forward(self, up: torch.Tensor, skip: torch.Tensor) -> torch.Tensor:
        if up.shape != skip.shape:
            raise DimensionError(f"TokenMix: paths disagree, {tuple(up.shape)} vs {tuple(skip.shape)}")
        return self.norm(self.mix(torch.cat([up, skip], dim=-1)))


class RSTBDown(nn.Module):
    def __init__(self, dim: int, depth: int, heads: int, window_size: int, mlp_ratio: float = 2.0):
        super().__init__()
        self.block = RSTB(dim, depth, heads, window_size, mlp_ratio)
        self.merge = PatchMerge(dim)

    def forward(self, x: torch.Tensor, grid: Grid) -> tuple[torch.Tensor, Grid, torch.Tensor]:
        skip = self.block(x, grid)
        merged, grid = self.merge(skip, grid)
        return merged, grid, skip


class RSTBUp(nn.Module):
    """Expand ``dim -> dim/2``, mix with the skip path, then an RSTB at ``dim/2``."""

    def __init__(self, dim: int, depth: int, heads: int, window_size: int, mlp_ratio: float = 2.0):
        super().__init__()
        self.expand = PatchExpand(dim)
        self.mix = TokenMix(dim // 2)
        self.block = RSTB(dim // 2, depth, heads, window_size, mlp_ratio)

    def forward(self, x: torch.Tensor, grid: Grid, skip: torch.Tensor) -> tuple[torch.Tensor, Grid]:
        y, grid = self.expand(x, grid)
        y = self.mix(y, skip)
        return self.block(y, grid), grid


@dataclass
class MustConfig:
    dim: int = 12
    levels: int = 3
    depth: int = 2
    heads: tuple[int, ...] = field(default=(3, 6, 12))
    bottleneck_heads: int = 24
    bottleneck_blocks: int = 2
    window_size: int = 4
    mlp_ratio: float = 2.0
    patch_size: int = 1

    def validate(self, h: int, w: int) -> None:
        """Raise ``DimensionError`` if an ``h x w`` input cannot pass through."""
        p = self.patch_size
        if len(self.heads) != self.levels:
            raise DimensionError(f"need one head count per level ({self.levels}), got {self.heads}")
        for i, heads in enumerate(self.heads):
            if (self.dim << i) % heads:
                raise DimensionError(f"level {i}: dim {self.dim << i} not divisible by {heads} heads")
        if (self.dim << self.levels) % self.bottleneck_heads:
            raise DimensionError(
                f"bottleneck dim {self.dim << self.levels} not divisible by {self.bottleneck_heads} heads"
            )
        multiple = p << self.levels
        if h % multiple or w % multiple:
            raise DimensionError(
                f"MUST input {h}x{w} must be a multiple of {multiple} "
                f"(patch {p} x 2^{self.levels} levels)"
            )
        gh, gw = h // p, w // p
        for level in range(self.levels + 1):
            ws, _ = effective_window((gh, gw), self.window_size, 0)
            if gh % ws or gw % ws:
                raise DimensionError(
                    f"level {level} grid {gh}x{gw} is not divisible by window size {ws}; "
                    f"use inputs that are multiples of {multiple * self.window_size}"
                )
            gh, gw = gh // 2, gw // 2


class MUST(nn.Module):
    """Multi-scale Swin encoder-decoder mapping ``[B, C, h, w]`` to the same shape."""

    def __init__(self, in_chans: int, cfg: MustConfig):
        super().__init__()
        self.cfg = cfg
        p, d = cfg.patch_size, cfg.dim
        self.embed = Linear(p * p * in_chans, d)
        self.down = nn.ModuleList(
            RSTBDown(d << i, cfg.depth, cfg.heads[i], cfg.window_size, cfg.mlp_ratio)
            for i in range(cfg.levels)
        )
        self.bottleneck = nn.ModuleList(
            RSTB(d << cfg.levels, cfg.depth, cfg.bottleneck_heads, cfg.window_size, cfg.mlp_ratio)
            for _ in range(cfg.bottleneck_blocks)
        )
        self.up = nn.ModuleList(
            RSTBUp(d << (i + 1), cfg.depth, cfg.heads[i], cfg.window_size, cfg.mlp_ratio)
            for i in reversed(range(cfg.levels))
        )
        self.unembed = Linear(d, p * p * in_chans)

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        self.cfg.validate(*feats.shape[-2:])
        tokens, grid = patch_embed(feats, self.cfg.patch_size, self.embed)
        skips = []
        for blk in self.down:
            tokens, grid, skip = blk(tokens, grid)
            skips.append(skip)
        for blk in self.bottleneck:
            tokens = blk(tokens, grid)
        for blk in self.up:
            tokens, grid = blk(tokens, grid, skips.pop())
        return patch_unembed(tokens, grid, self.cfg.patch_size, self.unembed)
