"""Acquisition physics: centered FFTs, Cartesian masks, coil expand/reduce."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


class UnsupportedSizeError(ValueError):
    pass


class InfeasibleMaskError(ValueError):
    pass


def _check_pow2(x: torch.Tensor) -> None:
    for axis, n in zip("HW", x.shape[-2:]):
        if n < 1 or n & (n - 1):
            raise UnsupportedSizeError(f"axis {axis} has extent {n}; only powers of two are supported")


def fft2c(x: torch.Tensor) -> torch.Tensor:
    """Centered, orthonormal 2-D DFT over the last two axes."""
    _check_pow2(x)
    x = torch.fft.ifftshift(x, dim=(-2, -1))
    x = torch.fft.fft2(x, dim=(-2, -1), norm="ortho")
    return torch.fft.fftshift(x, dim=(-2, -1))


def ifft2c(k: torch.Tensor) -> torch.Tensor:
    _check_pow2(k)
    k = torch.fft.ifftshift(k, dim=(-2, -1))
    k = torch.fft.ifft2(k, dim=(-2, -1), norm="ortho")
    return torch.fft.fftshift(k, dim=(-2, -1))


@dataclass
class Mask:
    """Phase-encode column selection (binary, along the last image axis)."""

    columns: np.ndarray
    acceleration: float
    center_fraction: float

    @property
    def width(self) -> int:
        return self.columns.shape[0]

    def tensor(self) -> torch.Tensor:
        """``[W]`` float tensor (1 sampled, 0 missing) broadcasting over columns."""
        return torch.from_numpy(self.columns.astype(np.float32))

    def acs_columns(self) -> np.ndarray:
        """Boolean vector marking the contiguous sampled run around ``W // 2``."""
        acs = np.zeros_like(self.columns)
        c = self.width // 2
        if not self.columns[c]:
            return acs
        lo = c
        while lo > 0 and self.columns[lo - 1]:
            lo -= 1
        hi = c
        while hi < self.width - 1 and self.columns[hi + 1]:
            hi += 1
        acs[lo : hi + 1] = True
        return acs


def center_count(width: int, center_fraction: float) -> int:
    return int(round(width * center_fraction))


def make_mask(width: int, acceleration: float, center_fraction: float, seed: int) -> Mask:
    """Random line mask: a fixed low-frequency block plus Bernoulli columns.

    The block of ``round(W * center_fraction)`` adjacent columns around the
    zero frequency is always sampled.  Every other column is kept with
    probability ``(W/acc - n_center) / (W - n_center)`` so the expected
    number of sampled lines is ``W / acc``.
    """
    if width < 8:
        raise InfeasibleMaskError(f"mask width must be >= 8, got {width}")
    if acceleration < 1:
        raise InfeasibleMaskError(f"acceleration must be >= 1, got {acceleration}")
    n_center = center_count(width, center_fraction)
    target = width / acceleration
    if target < n_center:
        raise InfeasibleMaskError(
            f"W/acc = {target:.2f} lines cannot hold a {n_center}-line center block"
        )
    rest = width - n_center
    prob = 1.0 if rest == 0 else float(np.clip((target - n_center) / rest, 0.0, 1.0))
    rng = np.random.default_rng(seed)
    cols = rng.random(width) < prob
    pad = (width - n_center + 1) // 2
    cols[pad : pad + n_center] = True
    return Mask(cols, float(acceleration), float(center_fraction))


def apply_mask(k: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Zero unsampled columns.  ``mask`` broadcasts against the last axis."""
    return torch.where(mask.to(torch.bool), k, torch.zeros((), dtype=k.dtype))


def expand(x: torch.Tensor, maps: torch.Tensor) -> torch.Tensor:
    """``[..., H, W]`` image -> ``[..., N, H, W]`` coil images ``S_i * x``."""
    return maps * x.unsqueeze(-3)


def reduce(coils: torch.Tensor, maps: torch.Tensor) -> torch.Tensor:
    """Combine coil images: ``sum_i conj(S_i) * x_i``."""
    return (maps.conj() * coils).sum(dim=-3)


def forward_model(x: torch.Tensor, maps: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    return apply_mask(fft2c(expand(x, maps)), mask)


def adjoint_model(k: torch.Tensor, maps: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    return reduce(ifft2c(apply_mask(k, mask)), maps)


def rss(coils: torch.Tensor, dim: int = -3) -> torch.Tensor:
    """Root-sum-of-squares magnitude across the coil axis."""
    power = (coils.real**2 + coils.imag**2).sum(dim=dim)
    # clamp keeps the sqrt derivative finite at exactly-zero pixels
    return torch.sqrt(power.clamp_min(torch.finfo(power.dtype).tiny))


def normalize_maps(maps: torch.Tensor, dim: int = -3) -> torch.Tensor:
    """Scale maps so ``sum_i |S_i|^2 = 1`` at every pixel."""
    return maps / rss(maps, dim=dim).unsqueeze(dim).to(maps.dtype)
