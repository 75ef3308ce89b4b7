"""Matched-budget comparison runs shared by the scripts and the trend checks."""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field
from pathlib import Path

from .config import RunConfig, preset
from .phantom import read_manifest
from .train import Trainer, generate_dataset


@dataclass
class Budget:
    """Data and schedule shared by every arm of a comparison."""

    volumes: int = 20
    slices: int = 8
    size: int = 32
    coils: int = 4
    acceleration: float = 4.0
    epochs: int = 4
    lr: float = 1e-3
    batch_size: int = 4
    slices_per_volume: int = 0
    data_seed: int = 0


def budget_config(name: str, budget: Budget, root: str | Path, seed: int) -> RunConfig:
    """Preset ``name`` resized to ``budget``; ``seed`` drives init, masks and the split."""
    cfg = preset(name)
    d, o = cfg.data, cfg.optim
    d.volumes, d.slices, d.coils = budget.volumes, budget.slices, budget.coils
    d.height = d.width = budget.size
    d.acceleration = budget.acceleration
    d.seed = budget.data_seed
    d.dir = str(Path(root) / "data" / f"{budget.size}px_{budget.volumes}v_s{budget.data_seed}_acc{budget.acceleration:g}")
    o.epochs, o.lr, o.batch_size = budget.epochs, budget.lr, budget.batch_size
    o.lr_drop_epoch = budget.epochs  # no drop inside short runs
    o.slices_per_volume = budget.slices_per_volume
    o.seed = o.split = seed
    cfg.out = str(Path(root) / "runs" / f"{name}_seed{seed}")
    return cfg


def ensure_data(cfg: RunConfig) -> None:
    try:
        if read_manifest(cfg.data.dir)["volume_count"] == cfg.data.volumes:
            return
    except Exception:
        pass
    generate_dataset(cfg)


def run_trial(cfg: RunConfig) -> dict:
    ensure_data(cfg)
    log = Path(cfg.out) / "train.log"
    if log.exists():
        log.unlink()
    rows = Trainer(cfg).fit()
    last = rows[-1]
    return {
        "val_ssim": last["val_ssim"],
        "val_psnr": last["val_psnr"],
        "zero_filled_ssim": last["zero_filled_ssim"],
        "train_loss": last["train_loss"],
    }


@dataclass
class Arm:
    name: str
    cfgs: list[RunConfig]
    results: list[dict] = field(default_factory=list)

    @property
    def ssims(self) -> list[float]:
        return [r["val_ssim"] for r in self.results]

    @property
    def mean(self) -> float:
        return statistics.fmean(self.ssims)

    @property
    def std(self) -> float:
        return statistics.pstdev(self.ssims)


def compare(arms: list[Arm], progress=None) -> list[Arm]:
    for arm in arms:
        for cfg in arm.cfgs:
            arm.results.append(run_trial(cfg))
            if progress:
                progress(arm.name, cfg.optim.seed, arm.results[-1])
    return arms


def table(arms: list[Arm]) -> str:
    lines = [f"{'arm':<18} {'mean SSIM':>10} {'std':>8}  per-seed"]
    for arm in arms:
        seeds = " ".join(f"{s:.4f}" for s in arm.ssims)
        lines.append(f"{arm.name:<18} {arm.mean:>10.4f} {arm.std:>8.4f}  {seeds}")
    return "\n".join(lines)
