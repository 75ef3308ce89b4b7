"""SSIM, PSNR and NMSE, plus the SSIM training loss.

``data_range`` is always the maximum of the target *volume*, applied to
every slice of that volume.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

WIN = 7
K1 = 0.01
K2 = 0.03
PSNR_CAP = 100.0


def ssim_map(x: torch.Tensor, y: torch.Tensor, data_range) -> torch.Tensor:
    """Local SSIM over every valid 7x7 window (no padding).

    ``x`` and ``y`` are ``[H, W]`` or ``[B, H, W]``; ``data_range`` is a float
    or a ``[B]`` tensor.  Returns ``[B, H-6, W-6]``.
    """
    if x.shape != y.shape:
        raise ValueError(f"ssim: shapes differ, {tuple(x.shape)} vs {tuple(y.shape)}")
    if x.shape[-1] < WIN or x.shape[-2] < WIN:
        raise ValueError(f"ssim: image {tuple(x.shape[-2:])} is smaller than the {WIN}x{WIN} window")
    x = x.reshape(-1, 1, *x.shape[-2:])
    y = y.reshape(-1, 1, *y.shape[-2:])
    dr = torch.as_tensor(data_range, dtype=x.dtype).reshape(-1, 1, 1, 1)
    c1 = (K1 * dr) ** 2
    c2 = (K2 * dr) ** 2
    pool = lambda t: F.avg_pool2d(t, WIN, stride=1)  # noqa: E731
    ux, uy = pool(x), pool(y)
    uxx, uyy, uxy = pool(x * x), pool(y * y), pool(x * y)
    cov_norm = WIN * WIN / (WIN * WIN - 1)
    vx = cov_norm * (uxx - ux * ux)
    vy = cov_norm * (uyy - uy * uy)
    vxy = cov_norm * (uxy - ux * uy)
    num = (2 * ux * uy + c1) * (2 * vxy + c2)
    den = (ux * ux + uy * uy + c1) * (vx + vy + c2)
    return (num / den).squeeze(1)


def ssim(x: torch.Tensor, y: torch.Tensor, data_range) -> torch.Tensor:
    """Mean SSIM (a 0-d tensor, differentiable)."""
    return ssim_map(x, y, data_range).mean()


def ssim_loss(pred: torch.Tensor, target: torch.Tensor, data_range) -> torch.Tensor:
    return 1.0 - ssim(pred, target, data_range)


def _np(a) -> np.ndarray:
    if isinstance(a, torch.Tensor):
        a = a.detach().cpu().numpy()
    return np.asarray(a, dtype=np.float64)


def psnr(pred, target, data_range: float) -> float:
    pred, target = _np(pred), _np(target)
    mse = float(np.mean((pred - target) ** 2))
    if mse < data_range**2 * 1e-10:
        return PSNR_CAP
    return float(10.0 * np.log10(data_range**2 / mse))


def nmse(pred, target) -> float:
    pred, target = _np(pred), _np(target)
    return float(np.sum((pred - target) ** 2) / np.sum(target**2))


@dataclass
class MetricReport:
    ssim: float
    psnr: float
    nmse: float
    data_range: float
    per_slice: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def evaluate_volume(pred: torch.Tensor, target: torch.Tensor, data_range: float | None = None) -> MetricReport:
    """Per-slice metrics for ``[K, H, W]`` magnitudes and their means."""
    if data_range is None:
        data_range = float(target.max())
    rows = []
    for i in range(target.shape[0]):
        p64, t64 = pred[i].detach().double(), target[i].detach().double()
        rows.append({
            "slice": i,
            "ssim": float(ssim(p64, t64, data_range)),
            "psnr": psnr(p64, t64, data_range),
            "nmse": nmse(p64, t64),
        })
    return MetricReport(
        ssim=float(np.mean([r["ssim"] for r in rows])),
        psnr=float(np.mean([r["psnr"] for r in rows])),
        nmse=float(np.mean([r["nmse"] for r in rows])),
        data_range=float(data_range),
        per_slice=rows,
    )
