"""Image-domain denoisers used inside each cascade.

All of them map ``[B, C, h, w]`` to the same shape and end in a residual
``x_out = x_in + r(x_in)``; zeroing the last conv layer makes ``r`` vanish.
"""

from __future__ import annotations

from dataclasses import replace

import torch
from torch import nn

from .autograd import Conv2d, ConvTranspose2d, activation
from .swin import MUST, RSTB, MustConfig, image_to_tokens, tokens_to_image


def lrelu(x: torch.Tensor) -> torch.Tensor:
    return activation(x, "leaky_relu")


class ConvBlock(nn.Module):
    """``depth`` (3x3 conv, leaky ReLU) pairs wrapped in a residual."""

    def __init__(self, chans: int, depth: int = 2):
        super().__init__()
        self.convs = nn.ModuleList(Conv2d(chans, chans, 3) for _ in range(depth))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = x
        for conv in self.convs:
            y = lrelu(conv(y))
        return x + y


def _rms_scale(x: torch.Tensor) -> torch.Tensor:
    return x.pow(2).mean(dim=(1, 2, 3), keepdim=True).sqrt() + 1e-6


class HumusBlock(nn.Module):
    """Hybrid denoiser: conv features at full resolution, MUST at half resolution.

    ``f_H`` is one 3x3 conv to ``dim_high`` channels.  ``f_L`` is a conv
    block, a stride-2 conv to ``2 * dim_high`` channels and another conv
    block.  MUST refines those low-resolution features, and ``f_R``
    upsamples them, concatenates the high-resolution features and maps back
    to the input channels.

    With ``normalize`` the residual branch sees ``x / rms(x)`` and its output
    is rescaled by ``rms(x)``, which keeps the identity path exact.
    """

    def __init__(
        self,
        in_chans: int,
        dim_high: int = 6,
        must: MustConfig | None = None,
        conv_depth: int = 2,
        normalize: bool = True,
    ):
        super().__init__()
        d = 2 * dim_high
        must = replace(must or MustConfig(), dim=d)
        self.normalize = normalize
        self.high = Conv2d(in_chans, dim_high, 3)
        self.low_pre = ConvBlock(dim_high, conv_depth)
        self.down = Conv2d(dim_high, d, 3, stride=2)
        self.low_post = ConvBlock(d, conv_depth)
        self.must = MUST(d, must)
        self.up = ConvTranspose2d(d, dim_high)
        self.rec = ConvBlock(2 * dim_high, conv_depth)
        self.final = Conv2d(2 * dim_high, in_chans, 3)

    def extract_high_res(self, x: torch.Tensor) -> torch.Tensor:
        return self.high(x)

    def extract_low_res(self, f_high: torch.Tensor) -> torch.Tensor:
        return self.low_post(lrelu(self.down(self.low_pre(f_high))))

    def reconstruct(self, f_high: torch.Tensor, f_deep: torch.Tensor) -> torch.Tensor:
        up = self.up(f_deep)
        return self.final(self.rec(torch.cat([f_high, up], dim=1)))

    def residual(self, x: torch.Tensor) -> torch.Tensor:
        f_high = self.extract_high_res(x)
        f_deep = self.must(self.extract_low_res(f_high))
        return self.reconstruct(f_high, f_deep)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if not self.normalize:
            return x + self.residual(x)
        scale = _rms_scale(x)
        return x + scale * self.residual(x / scale)


class SwinIRDenoiser(nn.Module):
    """Single-scale residual Swin stack at full resolution (the Un-SS denoiser)."""

    def __init__(
        self,
        in_chans: int,
        dim: int = 6,
        blocks: int = 3,
        depth: int = 2,
        heads: int = 3,
        window_size: int = 4,
        mlp_ratio: float = 2.0,
        normalize: bool = True,
    ):
        super().__init__()
        self.normalize = normalize
        self.first = Conv2d(in_chans, dim, 3)
        self.body = nn.ModuleList(RSTB(dim, depth, heads, window_size, mlp_ratio) for _ in range(blocks))
        self.after = Conv2d(dim, dim, 3)
        self.final = Conv2d(dim, in_chans, 3)

    def residual(self, x: torch.Tensor) -> torch.Tensor:
        feats = self.first(x)
        grid = tuple(feats.shape[-2:])
        tokens = image_to_tokens(feats)
        for blk in self.body:
            tokens = blk(tokens, grid)
        deep = self.after(tokens_to_image(tokens, grid))
        return self.final(feats + deep)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if not self.normalize:
            return x + self.residual(x)
        scale = _rms_scale(x)
        return x + scale * self.residual(x / scale)


class MustDenoiser(nn.Module):
    """MUST applied directly at full resolution (the Un-MS / Un-MS-Patch2 denoiser)."""

    def __init__(self, in_chans: int, must: MustConfig, normalize: bool = True):
        super().__init__()
        self.normalize = normalize
        self.first = Conv2d(in_chans, must.dim, 3)
        self.must = MUST(must.dim, must)
        self.final = Conv2d(must.dim, in_chans, 3)

    def residual(self, x: torch.Tensor) -> torch.Tensor:
        feats = self.first(x)
        return self.final(feats + self.must(feats))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if not self.normalize:
            return x + self.residual(x)
        scale = _rms_scale(x)
        return x + scale * self.residual(x / scale)


class UNet(nn.Module):
    """Plain convolutional U-Net: stride-2 conv down, transposed conv up."""

    def __init__(self, in_chans: int, out_chans: int, chans: int = 8, pools: int = 2):
        super().__init__()
        self.inc = nn.Sequential(Conv2d(in_chans, chans, 3), Conv2d(chans, chans, 3))
        self.downs = nn.ModuleList()
        self.enc = nn.ModuleList()
        for i in range(pools):
            c = chans << i
            self.downs.append(Conv2d(c, 2 * c, 3, stride=2))
            self.enc.append(Conv2d(2 * c, 2 * c, 3))
        self.ups = nn.ModuleList()
        self.dec = nn.ModuleList()
        for i in reversed(range(pools)):
            c = chans << i
            self.ups.append(ConvTranspose2d(2 * c, c))
            self.dec.append(nn.Sequential(Conv2d(2 * c, c, 3), Conv2d(c, c, 3)))
        self.out = Conv2d(chans, out_chans, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = x
        for conv in self.inc:
            y = lrelu(conv(y))
        skips = []
        for down, enc in zip(self.downs, self.enc):
            skips.append(y)
            y = lrelu(enc(lrelu(down(y))))
        for up, dec in zip(self.ups, self.dec):
            y = torch.cat([lrelu(up(y)), skips.pop()], dim=1)
            for conv in dec:
                y = lrelu(conv(y))
        return self.out(y)


class UNetDenoiser(nn.Module):
    """Residual wrapper so the U-Net slots into the same cascade scaffold."""

    def __init__(self, in_chans: int, chans: int = 8, pools: int = 2, normalize: bool = True):
        super().__init__()
        self.normalize = normalize
        self.unet = UNet(in_chans, in_chans, chans, pools)

    @property
    def final(self) -> Conv2d:
        return self.unet.out

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if not self.normalize:
            return x + self.unet(x)
        scale = _rms_scale(x)
        return x + scale * self.unet(x / scale)
