"""Training, evaluation and reconstruction drivers."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import checkpoint
from .config import RunConfig, validate
from .metrics import evaluate_volume, nmse, psnr, ssim, ssim_loss
from .mri import apply_mask, expand, fft2c, make_mask
from .phantom import DatasetError, PhantomVolume, generate_volume, read_dataset, write_dataset
from .unrolled import HumusNet, asr_assemble, zero_filled

log = logging.getLogger(__name__)


class NumericError(RuntimeError):
    """Training produced a non-finite loss."""


def generate_dataset(cfg: RunConfig) -> dict:
    d = cfg.data
    volumes = [
        generate_volume(
            i, d.seed * 100_003 + i, d.height, d.width, d.slices, d.coils,
            d.acceleration, d.center_fraction, d.noise_sigma,
        )
        for i in range(d.volumes)
    ]
    return write_dataset(volumes, d.dir)


def split_volumes(n: int, val_fraction: float, split: int) -> tuple[list[int], list[int]]:
    order = np.random.default_rng(split).permutation(n)
    n_val = max(1, int(round(n * val_fraction)))
    return sorted(order[n_val:].tolist()), sorted(order[:n_val].tolist())


def load_split(cfg: RunConfig) -> tuple[list[PhantomVolume], list[PhantomVolume]]:
    volumes = read_dataset(cfg.data.dir)
    d = cfg.data
    for v in volumes:
        k, n, h, w = v.shape
        if (h, w, n) != (d.height, d.width, d.coils):
            raise DatasetError(
                f"volume {v.id} is {h}x{w} with {n} coils; config expects "
                f"{d.height}x{d.width} with {d.coils}"
            )
    train_idx, val_idx = split_volumes(len(volumes), cfg.optim.val_fraction, cfg.optim.split)
    return [volumes[i] for i in train_idx], [volumes[i] for i in val_idx]


def lr_at(cfg: RunConfig, epoch: int) -> float:
    """Learning rate for 1-based ``epoch``; drops once after ``lr_drop_epoch``."""
    o = cfg.optim
    return o.lr * (o.lr_drop_factor if epoch > o.lr_drop_epoch else 1.0)


@dataclass
class Batch:
    kspace: torch.Tensor  # [B, S*N, H, W]
    mask: torch.Tensor  # [B, W]
    target: torch.Tensor  # [B, H, W]
    data_range: torch.Tensor  # [B]


class TrainingSampler:
    """Retrospectively undersampled training windows with a fresh mask each epoch.

    Every random draw is seeded by ``(seed, epoch, ...)`` so an epoch can be
    replayed exactly after resuming from a checkpoint.
    """

    def __init__(self, cfg: RunConfig, volumes: list[PhantomVolume]):
        self.cfg = cfg
        self.volumes = volumes
        self.full = [fft2c(expand(v.slices, v.maps)) for v in volumes]
        self.rms = [float(k.abs().pow(2).mean().sqrt()) for k in self.full]

    def epoch_samples(self, epoch: int) -> list[tuple[int, int]]:
        rng = np.random.default_rng([self.cfg.optim.seed, epoch])
        per = self.cfg.optim.slices_per_volume
        samples = []
        for vi, v in enumerate(self.volumes):
            k = v.shape[0]
            centers = range(k) if per <= 0 or per >= k else sorted(rng.choice(k, per, replace=False))
            samples.extend((vi, int(c)) for c in centers)
        order = rng.permutation(len(samples))
        return [samples[i] for i in order]

    def make(self, epoch: int, vi: int, c: int) -> tuple[torch.Tensor, torch.Tensor]:
        d, a = self.cfg.data, self.cfg.model.asr
        seed = [self.cfg.optim.seed, epoch, vi, c]
        mask = make_mask(d.width, d.acceleration, d.center_fraction, seed=seed)
        full = asr_assemble(self.full[vi], c, a)
        sigma = self.volumes[vi].noise_sigma
        if sigma > 0:
            rng = np.random.default_rng(seed + [1])
            std = sigma * self.rms[vi] / math.sqrt(2)
            z = rng.normal(0, std, size=(2, *full.shape)).astype(np.float32)
            full = full + torch.complex(torch.from_numpy(z[0]), torch.from_numpy(z[1]))
        m = mask.tensor()
        return apply_mask(full, m), m

    def batches(self, epoch: int):
        samples = self.epoch_samples(epoch)
        bs = self.cfg.optim.batch_size
        for i in range(0, len(samples), bs):
            chunk = samples[i : i + bs]
            ks, ms, ts, drs = [], [], [], []
            for vi, c in chunk:
                k, m = self.make(epoch, vi, c)
                ks.append(k)
                ms.append(m)
                ts.append(self.volumes[vi].target[c])
                drs.append(self.volumes[vi].data_range)
            yield Batch(torch.stack(ks), torch.stack(ms), torch.stack(ts), torch.tensor(drs))


def validation_windows(vol: PhantomVolume, a: int) -> tuple[torch.Tensor, torch.Tensor]:
    """All center-slice windows of a volume with its stored (fixed) mask."""
    k = vol.shape[0]
    windows = torch.stack([asr_assemble(vol.kspace, c, a) for c in range(k)])
    mask = vol.mask.tensor().expand(k, -1)
    return windows, mask


def mask_hash(volumes: list[PhantomVolume]) -> str:
    h = hashlib.sha256()
    for v in volumes:
        h.update(v.mask.columns.astype(np.uint8).tobytes())
    return h.hexdigest()[:16]


@torch.no_grad()
def reconstruct_volume(net: HumusNet, vol: PhantomVolume, batch_size: int = 4) -> torch.Tensor:
    windows, mask = validation_windows(vol, net.cfg.asr)
    outs = [net(windows[i : i + batch_size], mask[i : i + batch_size]) for i in range(0, len(windows), batch_size)]
    return torch.cat(outs)


def zero_filled_volume(vol: PhantomVolume) -> torch.Tensor:
    return zero_filled(vol.kspace)


def _aggregate(rows: list[dict]) -> dict:
    return {key: float(np.mean([r[key] for r in rows])) for key in ("ssim", "psnr", "nmse")}


def evaluate(net: HumusNet, volumes: list[PhantomVolume], batch_size: int = 4) -> dict:
    """Metric report over ``volumes`` plus the zero-filled baseline."""
    net.eval()
    rows, zf_rows, ranges = [], [], {}
    for vol in volumes:
        dr = vol.data_range
        ranges[str(vol.id)] = dr
        rep = evaluate_volume(reconstruct_volume(net, vol, batch_size), vol.target, dr)
        zf = evaluate_volume(zero_filled_volume(vol), vol.target, dr)
        rows += [{"volume": vol.id, "data_range": dr, **r} for r in rep.per_slice]
        zf_rows += zf.per_slice
    net.train()
    return {**_aggregate(rows), "data_range": ranges, "per_slice": rows, "zero_filled": _aggregate(zf_rows)}


class Trainer:
    def __init__(self, cfg: RunConfig, out: str | Path | None = None):
        validate(cfg)
        self.cfg = cfg
        self.out = Path(out or cfg.out)
        self.out.mkdir(parents=True, exist_ok=True)
        torch.manual_seed(cfg.optim.seed)
        self.net = HumusNet(cfg.model)
        self.opt = torch.optim.Adam(self.net.parameters(), lr=cfg.optim.lr, betas=(0.9, 0.999), eps=1e-8)
        self.train_vols, self.val_vols = load_split(cfg)
        self.sampler = TrainingSampler(cfg, self.train_vols)
        self.epoch = 0
        self.best = -math.inf

    @property
    def log_path(self) -> Path:
        return self.out / "train.log"

    def meta(self) -> dict:
        return {
            "config": self.cfg.to_dict(),
            "state": {"epoch": self.epoch, "best_val_ssim": self.best, "seed": self.cfg.optim.seed},
        }

    def save(self, name: str) -> Path:
        path = self.out / name
        checkpoint.save(path, self.meta(), self.net, self.opt)
        return path

    def resume(self, path: str | Path) -> None:
        meta, tensors = checkpoint.load(path)
        checkpoint.restore(self.net, tensors, self.opt, meta)
        self.epoch = int(meta["state"]["epoch"])
        self.best = float(meta["state"]["best_val_ssim"])

    def train_epoch(self, epoch: int) -> float:
        lr = lr_at(self.cfg, epoch)
        for group in self.opt.param_groups:
            group["lr"] = lr
        total, count = 0.0, 0
        for batch in self.sampler.batches(epoch):
            out = self.net(batch.kspace, batch.mask)
            loss = ssim_loss(out, batch.target, batch.data_range)
            if not torch.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}")
            self.opt.zero_grad()
            loss.backward()
            self.opt.step()
            total += loss.item() * len(batch.target)
            count += len(batch.target)
        return total / count

    def fit(self, epochs: int | None = None) -> list[dict]:
        """Train up to ``epochs`` (default: the configured count); returns the log rows."""
        last = epochs or self.cfg.optim.epochs
        rows = []
        val_hash = mask_hash(self.val_vols)
        for epoch in range(self.epoch + 1, last + 1):
            train_loss = self.train_epoch(epoch)
            report = evaluate(self.net, self.val_vols, self.cfg.optim.batch_size)
            self.epoch = epoch
            row = {
                "epoch": epoch,
                "lr": lr_at(self.cfg, epoch),
                "train_loss": train_loss,
                "val_ssim": report["ssim"],
                "val_psnr": report["psnr"],
                "val_nmse": report["nmse"],
                "zero_filled_ssim": report["zero_filled"]["ssim"],
                "mu": self.net.mus(),
                "val_mask_hash": val_hash,
            }
            if not all(math.isfinite(m) for m in row["mu"]):
                raise NumericError(f"non-finite step size at epoch {epoch}")
            with self.log_path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(row) + "\n")
            log.info("epoch %d loss %.4f val ssim %.4f", epoch, train_loss, report["ssim"])
            if report["ssim"] > self.best:
                self.best = report["ssim"]
                self.save("best.ckpt")
            self.save("last.ckpt")
            rows.append(row)
        return rows


def load_model(path: str | Path) -> tuple[HumusNet, RunConfig, dict]:
    meta, tensors = checkpoint.load(path)
    cfg = RunConfig.from_dict(meta["config"])
    net = HumusNet(cfg.model)
    checkpoint.restore(net, tensors)
    net.eval()
    return net, cfg, meta


def reconstruct_slice(net: HumusNet, vol: PhantomVolume, c: int) -> dict[str, torch.Tensor]:
    """Ground truth, zero-filled, final and per-cascade magnitudes for slice ``c``."""
    window = asr_assemble(vol.kspace, c, net.cfg.asr)[None]
    mask = vol.mask.tensor()[None]
    with torch.no_grad():
        out, inter = net(window, mask, return_intermediates=True)
    images = {
        "target": vol.target[c],
        "zero_filled": zero_filled(vol.kspace[c][None])[0],
        "recon": out[0],
    }
    for t, img in enumerate(inter, start=1):
        images[f"cascade_{t:02d}"] = img[0]
    return images


def write_pgm(path: str | Path, img: torch.Tensor | np.ndarray) -> dict:
    """16-bit binary PGM, min-max scaled; returns the scale for the sidecar."""
    a = img.detach().cpu().numpy() if isinstance(img, torch.Tensor) else np.asarray(img)
    a = a.astype(np.float64)
    lo, hi = float(a.min()), float(a.max())
    q = np.zeros_like(a) if hi <= lo else (a - lo) / (hi - lo)
    q = np.round(q * 65535).astype(">u2")
    h, w = q.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n65535\n".encode("ascii") + q.tobytes())
    return {"min": lo, "max": hi}


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    # exactly one whitespace byte ends the header; pixel bytes may look like whitespace
    header = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if header is None:
        raise ValueError("not a binary PGM")
    w, h, maxval = (int(g) for g in header.groups())
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(raw, dtype=dtype, count=w * h, offset=header.end()).reshape(h, w)


def write_images(images: dict[str, torch.Tensor], out: str | Path) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    scales = {name: write_pgm(out / f"{name}.pgm", img) for name, img in images.items()}
    (out / "scales.json").write_text(json.dumps(scales, indent=2), encoding="utf-8")
    return scales


def metrics_row(pred: torch.Tensor, target: torch.Tensor, data_range: float) -> dict:
    p, t = pred.double(), target.double()
    return {"ssim": float(ssim(p, t, data_range)), "psnr": psnr(p, t, data_range), "nmse": nmse(p, t)}
