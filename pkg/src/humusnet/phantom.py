"""Synthetic multicoil volumes and their on-disk format.

Each volume is a stack of slices cut through a random set of ellipsoids, so
neighbouring slices share structure.  Coil maps are smooth Gaussian bumps
placed around the field of view.  A dataset directory holds ``manifest.json``
and one ``vol_<id>.bin`` per volume.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .mri import Mask, apply_mask, expand, fft2c, make_mask, normalize_maps

MAGIC = b"HUMUSDS1"
MANIFEST_VERSION = "HUMUSDS1"
DEFAULT_NOISE_SIGMA = 0.005


class DatasetError(Exception):
    """Base class for dataset read failures."""


class VersionError(DatasetError):
    pass


class TruncatedFileError(DatasetError):
    pass


class ChecksumError(DatasetError):
    pass


def _grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    y = (np.arange(h) - h / 2) / (h / 2)
    x = (np.arange(w) - w / 2) / (w / 2)
    return np.meshgrid(y, x, indexing="ij")


def _slice_positions(k: int) -> np.ndarray:
    return np.zeros(1) if k == 1 else np.linspace(-0.5, 0.5, k)


def generate_phantom(seed: int, h: int, w: int, k: int) -> torch.Tensor:
    """Complex ``[K, H, W]`` volume with magnitudes in ``[0, 1]``.

    Slices are cross-sections of 5-12 random ellipsoids: a large body that
    spans every slice, then smaller structures painted on top in order.  The
    in-plane radii of each structure shrink towards its ends and its centre
    drifts linearly along the slice axis.  A smooth quadratic phase, also
    drifting with slice position, multiplies the magnitude.
    """
    rng = np.random.default_rng(seed)
    yy, xx = _grid(h, w)
    zs = _slice_positions(k)
    n_inner = int(rng.integers(4, 12))

    # columns: cy, cx, cz, ry, rx, rz, theta, intensity, drift_y, drift_x
    shapes = [
        [
            rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), 0.0,
            rng.uniform(0.7, 0.85), rng.uniform(0.6, 0.8), 2.0,
            rng.uniform(-0.3, 0.3), rng.uniform(0.35, 0.6),
            rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05),
        ]
    ]
    for _ in range(n_inner):
        shapes.append([
            rng.uniform(-0.45, 0.45), rng.uniform(-0.45, 0.45), rng.uniform(-0.4, 0.4),
            rng.uniform(0.06, 0.3), rng.uniform(0.06, 0.3), rng.uniform(0.3, 0.9),
            rng.uniform(0, np.pi), rng.uniform(0.0, 1.0),
            rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2),
        ])
    phase_coef = rng.uniform(-1, 1, size=6) * np.array([np.pi, 0.8, 0.8, 0.4, 0.4, 0.4])
    phase_drift = rng.uniform(-0.5, 0.5, size=3)

    vol = np.zeros((k, h, w), dtype=np.complex128)
    for s, z in enumerate(zs):
        mag = np.zeros((h, w))
        for cy, cx, cz, ry, rx, rz, th, val, dy, dx in shapes:
            frac = 1.0 - ((z - cz) / rz) ** 2
            if frac <= 0:
                continue
            scale = np.sqrt(frac)
            py = yy - (cy + dy * z)
            px = xx - (cx + dx * z)
            u = np.cos(th) * py + np.sin(th) * px
            v = -np.sin(th) * py + np.cos(th) * px
            inside = (u / (ry * scale)) ** 2 + (v / (rx * scale)) ** 2 <= 1.0
            mag[inside] = val
        c = phase_coef
        phase = (
            c[0] + phase_drift[0] * z
            + (c[1] + phase_drift[1] * z) * yy
            + (c[2] + phase_drift[2] * z) * xx
            + c[3] * yy**2 + c[4] * yy * xx + c[5] * xx**2
        )
        vol[s] = mag * np.exp(1j * phase)
    return torch.from_numpy(vol.astype(np.complex64))


def generate_coil_maps(seed: int, n: int, h: int, w: int) -> torch.Tensor:
    """Complex ``[N, H, W]`` maps normalized so ``sum_i |S_i|^2 = 1``."""
    rng = np.random.default_rng(seed)
    yy, xx = _grid(h, w)
    offset = rng.uniform(0, 2 * np.pi)
    maps = np.empty((n, h, w), dtype=np.complex128)
    for i in range(n):
        ang = offset + 2 * np.pi * i / n + rng.uniform(-0.3, 0.3) * np.pi / n
        radius = rng.uniform(0.9, 1.1)
        cy, cx = radius * np.sin(ang), radius * np.cos(ang)
        width = rng.uniform(0.7, 1.0)
        bump = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width**2))
        ramp = rng.uniform(-np.pi, np.pi) + rng.uniform(-1, 1) * yy + rng.uniform(-1, 1) * xx
        maps[i] = bump * np.exp(1j * ramp)
    maps /= np.sqrt((np.abs(maps) ** 2).sum(axis=0, keepdims=True))
    return torch.from_numpy(maps.astype(np.complex64))


def simulate_acquisition(
    slices: torch.Tensor,
    maps: torch.Tensor,
    mask: Mask | torch.Tensor,
    noise_sigma: float,
    seed: int,
) -> torch.Tensor:
    """Masked multicoil k-space ``[K, N, H, W]`` with complex Gaussian noise.

    The noise has ``E|z|^2 = (noise_sigma * rms)^2`` where ``rms`` is the
    root-mean-square of the noiseless fully sampled k-space of the volume.
    """
    m = mask.tensor() if isinstance(mask, Mask) else mask
    full = fft2c(expand(slices, maps))
    if noise_sigma > 0:
        rms = full.abs().pow(2).mean().sqrt().item()
        rng = np.random.default_rng(seed)
        std = noise_sigma * rms / np.sqrt(2.0)
        z = rng.normal(0, std, size=(2, *full.shape)).astype(np.float32)
        full = full + torch.complex(torch.from_numpy(z[0]), torch.from_numpy(z[1]))
    return apply_mask(full, m)


@dataclass
class PhantomVolume:
    id: int
    seed: int
    slices: torch.Tensor  # complex [K, H, W], ground truth
    maps: torch.Tensor  # complex [N, H, W]
    kspace: torch.Tensor  # complex [K, N, H, W], masked
    mask: Mask
    noise_sigma: float

    @property
    def shape(self) -> tuple[int, int, int, int]:
        k, n, h, w = self.kspace.shape
        return k, n, h, w

    @property
    def target(self) -> torch.Tensor:
        """Ground-truth magnitudes ``[K, H, W]``."""
        return self.slices.abs()

    @property
    def data_range(self) -> float:
        return float(self.target.max())


def volume_seeds(seed: int) -> dict[str, int]:
    """Independent child seeds for the random parts of one volume."""
    children = np.random.SeedSequence(seed).generate_state(4)
    return dict(zip(("phantom", "maps", "mask", "noise"), (int(c) for c in children)))


def generate_volume(
    vol_id: int,
    seed: int,
    h: int,
    w: int,
    k: int,
    n: int,
    acceleration: float,
    center_fraction: float,
    noise_sigma: float = DEFAULT_NOISE_SIGMA,
) -> PhantomVolume:
    seeds = volume_seeds(seed)
    slices = generate_phantom(seeds["phantom"], h, w, k)
    maps = generate_coil_maps(seeds["maps"], n, h, w)
    mask = make_mask(w, acceleration, center_fraction, seeds["mask"])
    kspace = simulate_acquisition(slices, maps, mask, noise_sigma, seeds["noise"])
    return PhantomVolume(vol_id, seed, slices, maps, kspace, mask, noise_sigma)


# --- persistence -----------------------------------------------------------


def _f32(t: torch.Tensor) -> bytes:
    return t.detach().cpu().numpy().astype("<f4").tobytes()


def encode_volume(vol: PhantomVolume) -> bytes:
    k, n, h, w = vol.shape
    payload = b"".join([
        struct.pack("<4I", k, n, h, w),
        _f32(vol.slices.real), _f32(vol.slices.imag),
        _f32(vol.maps.real), _f32(vol.maps.imag),
        _f32(vol.kspace.real), _f32(vol.kspace.imag),
        vol.mask.columns.astype(np.uint8).tobytes(),
    ])
    return MAGIC + payload + struct.pack("<I", zlib.crc32(payload))


def decode_volume(raw: bytes) -> tuple[tuple[int, int, int, int], dict[str, np.ndarray]]:
    if len(raw) < len(MAGIC) + 16:
        raise TruncatedFileError(f"file has {len(raw)} bytes, shorter than its header")
    if raw[: len(MAGIC)] != MAGIC:
        raise VersionError(f"bad magic {raw[:len(MAGIC)]!r}, expected {MAGIC!r}")
    k, n, h, w = struct.unpack_from("<4I", raw, len(MAGIC))
    sizes = [("slices", (k, h, w)), ("maps", (n, h, w)), ("kspace", (k, n, h, w))]
    body = sum(2 * 4 * int(np.prod(s)) for _, s in sizes) + w
    expected = len(MAGIC) + 16 + body + 4
    if len(raw) != expected:
        raise TruncatedFileError(f"file has {len(raw)} bytes, header implies {expected}")
    payload = raw[len(MAGIC) : -4]
    (stored,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(payload) != stored:
        raise ChecksumError("CRC32 mismatch; file is corrupted")

    arrays = {}
    off = 16
    for name, shape in sizes:
        count = int(np.prod(shape))
        parts = []
        for _ in range(2):
            parts.append(np.frombuffer(payload, dtype="<f4", count=count, offset=off).reshape(shape))
            off += 4 * count
        arrays[name] = parts[0].astype(np.float32) + 1j * parts[1].astype(np.float32)
        arrays[name] = arrays[name].astype(np.complex64)
    arrays["mask"] = np.frombuffer(payload, dtype=np.uint8, count=w, offset=off).astype(bool)
    return (k, n, h, w), arrays


def write_volume(vol: PhantomVolume, path: Path) -> None:
    Path(path).write_bytes(encode_volume(vol))


def manifest_entry(vol: PhantomVolume) -> dict:
    k, n, h, w = vol.shape
    return {
        "id": vol.id,
        "seed": vol.seed,
        "K": k, "N": n, "H": h, "W": w,
        "acceleration": vol.mask.acceleration,
        "center_fraction": vol.mask.center_fraction,
        "noise_sigma": vol.noise_sigma,
        "path": f"vol_{vol.id}.bin",
    }


def write_dataset(volumes: list[PhantomVolume], directory: str | Path) -> dict:
    """Write all volumes plus ``manifest.json``; returns the manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for vol in volumes:
        entry = manifest_entry(vol)
        write_volume(vol, directory / entry["path"])
        entries.append(entry)
    manifest = {"version": MANIFEST_VERSION, "volume_count": len(entries), "volumes": entries}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return manifest


def read_manifest(directory: str | Path) -> dict:
    path = Path(directory) / "manifest.json"
    if not path.exists():
        raise DatasetError(f"no manifest.json in {directory}")
    manifest = json.loads(path.read_text(encoding="utf-8"))
    if manifest.get("version") != MANIFEST_VERSION:
        raise VersionError(f"manifest version {manifest.get('version')!r}, expected {MANIFEST_VERSION!r}")
    if manifest.get("volume_count") != len(manifest.get("volumes", [])):
        raise DatasetError("manifest volume_count does not match its volume list")
    return manifest


def read_volume(path: str | Path, entry: dict | None = None) -> PhantomVolume:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError as err:
        raise DatasetError(f"missing volume file {path}") from err
    shape, arrays = decode_volume(raw)
    entry = entry or {}
    if entry and shape != (entry["K"], entry["N"], entry["H"], entry["W"]):
        raise DatasetError(f"{path.name}: header shape {shape} disagrees with manifest")
    mask = Mask(
        arrays["mask"],
        float(entry.get("acceleration", 0.0)),
        float(entry.get("center_fraction", 0.0)),
    )
    return PhantomVolume(
        id=int(entry.get("id", -1)),
        seed=int(entry.get("seed", -1)),
        slices=torch.from_numpy(arrays["slices"]),
        maps=torch.from_numpy(arrays["maps"]),
        kspace=torch.from_numpy(arrays["kspace"]),
        mask=mask,
        noise_sigma=float(entry.get("noise_sigma", 0.0)),
    )


def read_dataset(directory: str | Path) -> list[PhantomVolume]:
    directory = Path(directory)
    manifest = read_manifest(directory)
    return [read_volume(directory / e["path"], e) for e in manifest["volumes"]]
