"""Unrolled k-space network: sensitivity estimation, cascades, ASR windows.

Inside the network a k-space window of ``S = 2a + 1`` adjacent slices with
``N`` coils each is held as ``[B, S, N, H, W]``; flattening the two middle
axes gives the coil-axis concatenation used on the wire (``[S*N, H, W]``).
"""

from __future__ import annotations

import torch
from torch import nn

from .block import HumusBlock, MustDenoiser, SwinIRDenoiser, UNet, UNetDenoiser
from .mri import apply_mask, expand, fft2c, ifft2c, reduce, rss
from .config import must_config


class InfeasibleError(ValueError):
    pass


def asr_indices(c: int, a: int, k: int) -> list[int]:
    """Slice indices ``c-a .. c+a`` (0-based), clamped to ``[0, K-1]``."""
    if not 0 <= c < k:
        raise IndexError(f"center slice {c} outside volume of {k} slices")
    return [min(max(i, 0), k - 1) for i in range(c - a, c + a + 1)]


def asr_assemble(kspace: torch.Tensor, c: int, a: int) -> torch.Tensor:
    """``[K, N, H, W]`` volume -> ``[(2a+1) * N, H, W]`` window around slice ``c``."""
    k, n, h, w = kspace.shape
    return kspace[asr_indices(c, a, k)].reshape(-1, h, w)


def complex_to_channels(x: torch.Tensor) -> torch.Tensor:
    """``[B, S, H, W]`` complex -> ``[B, 2S, H, W]`` real (re, im per slice)."""
    b, s, h, w = x.shape
    return torch.view_as_real(x).permute(0, 1, 4, 2, 3).reshape(b, 2 * s, h, w)


def channels_to_complex(x: torch.Tensor) -> torch.Tensor:
    b, c, h, w = x.shape
    x = x.reshape(b, c // 2, 2, h, w).permute(0, 1, 3, 4, 2).contiguous()
    return torch.view_as_complex(x)


def acs_mask(mask: torch.Tensor) -> torch.Tensor:
    """Contiguous sampled run around ``W // 2`` for each row of a ``[B, W]`` mask."""
    out = torch.zeros_like(mask, dtype=torch.bool)
    w = mask.shape[-1]
    c = w // 2
    cols = mask.to(torch.bool)
    for b in range(mask.shape[0]):
        if not cols[b, c]:
            continue
        lo, hi = c, c
        while lo > 0 and cols[b, lo - 1]:
            lo -= 1
        while hi < w - 1 and cols[b, hi + 1]:
            hi += 1
        out[b, lo : hi + 1] = True
    return out


class SensitivityEstimator(nn.Module):
    """Coil maps from the ACS block, refined by a small residual U-Net.

    The refinement's last layer starts at zero, so an untrained estimator
    returns the RSS-normalized low-resolution coil images.
    """

    def __init__(self, chans: int = 8, pools: int = 2):
        super().__init__()
        self.unet = UNet(2, 2, chans, pools)
        self.unet.out.zero_()

    def forward(self, k_tilde: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """``k_tilde`` is ``[B, S, N, H, W]``, ``mask`` is ``[B, W]``."""
        acs = acs_mask(mask)
        if not bool(acs.any(dim=-1).all()):
            raise InfeasibleError("mask has no sampled center block to estimate sensitivities from")
        b, s, n, h, w = k_tilde.shape
        imgs = ifft2c(apply_mask(k_tilde, acs[:, None, None, None, :]))
        imgs = imgs / rss(imgs, dim=2).unsqueeze(2)
        chans = torch.view_as_real(imgs).reshape(-1, h, w, 2).permute(0, 3, 1, 2)
        chans = chans + self.unet(chans)
        refined = torch.view_as_complex(chans.permute(0, 2, 3, 1).contiguous()).reshape(b, s, n, h, w)
        return refined / rss(refined, dim=2).unsqueeze(2)


class Cascade(nn.Module):
    """One unrolled step ``k - mu * M(k - k_tilde) + F E (D(x) - x)``, ``x = R F^-1 k``.

    The regularizer term is the denoiser's correction ``D(x) - x``, so a
    denoiser whose residual branch outputs zero contributes exactly nothing.
    """

    def __init__(self, denoiser: nn.Module, mu_init: float = 1.0):
        super().__init__()
        self.denoiser = denoiser
        self.mu = nn.Parameter(torch.tensor(float(mu_init)))

    def regularizer(self, k: torch.Tensor, maps: torch.Tensor) -> torch.Tensor:
        x = complex_to_channels(reduce(ifft2c(k), maps))
        correction = channels_to_complex(self.denoiser(x) - x)
        return fft2c(expand(correction, maps))

    def forward(self, k: torch.Tensor, k_tilde: torch.Tensor, mask: torch.Tensor, maps: torch.Tensor) -> torch.Tensor:
        # k - mu * M(k - k_tilde), written as a blend on the sampled columns so
        # that mu = 1 lands exactly on the measurements
        m = mask[:, None, None, None, :].to(torch.bool)
        dc = torch.where(m, (1 - self.mu) * k + self.mu * k_tilde, k)
        return dc + self.regularizer(k, maps)


def build_denoiser(cfg, in_chans: int) -> nn.Module:
    """Denoiser for ``cfg.variant`` (a :class:`~humusnet.config.ModelConfig`)."""
    must = must_config(cfg)
    if cfg.variant == "humus":
        return HumusBlock(in_chans, cfg.embed_dim // 2, must, cfg.conv_depth, cfg.normalize)
    if cfg.variant in ("un-ms", "un-ms-patch2"):
        return MustDenoiser(in_chans, must, cfg.normalize)
    if cfg.variant == "un-ss":
        return SwinIRDenoiser(
            in_chans, cfg.embed_dim, cfg.ss_blocks, cfg.depth, cfg.ss_heads,
            cfg.window_size, cfg.mlp_ratio, cfg.normalize,
        )
    if cfg.variant == "unet-denoiser":
        return UNetDenoiser(in_chans, cfg.unet_chans, cfg.unet_pools, cfg.normalize)
    raise ValueError(f"unknown variant {cfg.variant!r}")


class HumusNet(nn.Module):
    """``T`` cascades around a shared sensitivity estimate; outputs the center slice."""

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        self.slices = 2 * cfg.asr + 1
        self.sme = SensitivityEstimator(cfg.sme_chans, cfg.sme_pools)
        self.cascades = nn.ModuleList(
            Cascade(build_denoiser(cfg, 2 * self.slices), cfg.mu_init) for _ in range(cfg.cascades)
        )
        if cfg.zero_init_residual:
            for c in self.cascades:
                c.denoiser.final.zero_()

    def split(self, k_tilde: torch.Tensor) -> torch.Tensor:
        b, c, h, w = k_tilde.shape
        if c % self.slices:
            raise ValueError(f"{c} coil channels cannot be split into {self.slices} slices")
        return k_tilde.reshape(b, self.slices, c // self.slices, h, w)

    def forward(self, k_tilde: torch.Tensor, mask: torch.Tensor, return_intermediates: bool = False):
        """``k_tilde``: ``[B, S*N, H, W]`` complex, ``mask``: ``[B, W]``.

        Returns the ``[B, H, W]`` center-slice magnitude, plus the list of
        per-cascade magnitudes when ``return_intermediates`` is set.
        """
        k_t = self.split(k_tilde)
        maps = self.sme(k_t, mask)
        k = k_t
        center = self.cfg.asr
        intermediates = []
        for cascade in self.cascades:
            k = cascade(k, k_t, mask, maps)
            if return_intermediates:
                intermediates.append(rss(ifft2c(k[:, center])))
        out = rss(ifft2c(k[:, center]))
        return (out, intermediates) if return_intermediates else out

    def mus(self) -> list[float]:
        return [float(c.mu.detach()) for c in self.cascades]


def zero_filled(k_tilde: torch.Tensor, slices: int = 1) -> torch.Tensor:
    """RSS of the inverse FFT of the center slice of a ``[B, S*N, H, W]`` window."""
    b, c, h, w = k_tilde.shape
    k = k_tilde.reshape(b, slices, c // slices, h, w)[:, slices // 2]
    return rss(ifft2c(k))
