"""Checkpoint files.

Layout (little-endian)::

    b"HUMUSCP1"
    u32 length, UTF-8 JSON echo (run config + training state)
    u32 record count
    per record: u32 name length, name, u32 rank, rank x u32 extents, f32 payload
    u32 CRC32 of everything between the magic and the checksum
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np
import torch

MAGIC = b"HUMUSCP1"


class CheckpointError(Exception):
    pass


def encode(meta: dict, tensors: dict[str, torch.Tensor]) -> bytes:
    echo = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [struct.pack("<I", len(echo)), echo, struct.pack("<I", len(tensors))]
    for name, t in tensors.items():
        raw_name = name.encode("utf-8")
        arr = t.detach().cpu().numpy().astype("<f4")
        parts.append(struct.pack("<I", len(raw_name)) + raw_name)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    payload = b"".join(parts)
    return MAGIC + payload + struct.pack("<I", zlib.crc32(payload))


def decode(raw: bytes) -> tuple[dict, dict[str, torch.Tensor]]:
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    if len(raw) < len(MAGIC) + 12:
        raise CheckpointError("checkpoint truncated")
    payload = raw[len(MAGIC) : -4]
    (crc,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(payload) != crc:
        raise CheckpointError("checkpoint CRC32 mismatch")
    off = 0

    def take(fmt: str):
        nonlocal off
        vals = struct.unpack_from(fmt, payload, off)
        off += struct.calcsize(fmt)
        return vals

    (n,) = take("<I")
    meta = json.loads(payload[off : off + n].decode("utf-8"))
    off += n
    (count,) = take("<I")
    tensors = {}
    for _ in range(count):
        (n,) = take("<I")
        name = payload[off : off + n].decode("utf-8")
        off += n
        (rank,) = take("<I")
        shape = take(f"<{rank}I") if rank else ()
        size = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(payload, dtype="<f4", count=size, offset=off).reshape(shape)
        off += 4 * size
        tensors[name] = torch.from_numpy(arr.astype(np.float32))
    if off != len(payload):
        raise CheckpointError("trailing bytes after the last record")
    return meta, tensors


def save(path: str | Path, meta: dict, model: torch.nn.Module, optimizer=None) -> None:
    tensors = {f"model.{k}": v for k, v in model.state_dict().items() if v.is_floating_point()}
    if optimizer is not None:
        names = {id(p): k for k, p in model.named_parameters()}
        steps = {}
        for group in optimizer.param_groups:
            for p in group["params"]:
                state = optimizer.state.get(p)
                if not state:
                    continue
                key = names[id(p)]
                tensors[f"adam.exp_avg.{key}"] = state["exp_avg"]
                tensors[f"adam.exp_avg_sq.{key}"] = state["exp_avg_sq"]
                steps[key] = int(state["step"])
        meta = {**meta, "adam_steps": steps}
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(encode(meta, tensors))
    tmp.replace(path)


def load(path: str | Path) -> tuple[dict, dict[str, torch.Tensor]]:
    return decode(Path(path).read_bytes())


def restore(model: torch.nn.Module, tensors: dict[str, torch.Tensor], optimizer=None, meta=None) -> None:
    state = {k[len("model."):]: v for k, v in tensors.items() if k.startswith("model.")}
    model.load_state_dict(state, strict=True)
    if optimizer is None:
        return
    steps = (meta or {}).get("adam_steps", {})
    params = dict(model.named_parameters())
    for key, step in steps.items():
        p = params[key]
        optimizer.state[p] = {
            "step": torch.tensor(float(step)),
            "exp_avg": tensors[f"adam.exp_avg.{key}"].clone(),
            "exp_avg_sq": tensors[f"adam.exp_avg_sq.{key}"].clone(),
        }
