"""Binary checkpoint format.

Layout (little-endian)::

    b"DSNC" | version u32 | entry count u32
    per entry: name length u32 | UTF-8 name | 4 x u32 dims | float32 payload

Model weights are stored as ``param/<name>``, optimizer velocities as
``velocity/<name>`` and scalar metadata as ``meta/<key>`` (shape 1x1x1x1).
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import FormatError

MAGIC = b"DSNC"
VERSION = 1
MODEL_KINDS = ("unet", "dscnn")


def encode(entries: Mapping[str, np.ndarray]) -> bytes:
    parts = [struct.pack("<4sII", MAGIC, VERSION, len(entries))]
    for name, arr in entries.items():
        arr = np.asarray(arr)
        if arr.ndim != 4:
            raise FormatError(f"checkpoint entry {name!r} must be rank 4, got {arr.shape}")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw + struct.pack("<4I", *arr.shape))
        parts.append(arr.astype("<f4").tobytes())
    return b"".join(parts)


def decode(data: bytes, source: str = "<bytes>") -> dict[str, np.ndarray]:
    if len(data) < 12 or data[:4] != MAGIC:
        raise FormatError(f"{source}: bad checkpoint magic {data[:4]!r}, expected 'DSNC'")
    _, version, count = struct.unpack_from("<4sII", data, 0)
    if version != VERSION:
        raise FormatError(f"{source}: unsupported checkpoint version {version}")
    pos = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + nlen].decode("utf-8")
            pos += nlen
            dims = struct.unpack_from("<4I", data, pos)
            pos += 16
            nbytes = 4 * int(np.prod(dims))
            if pos + nbytes > len(data):
                raise FormatError(f"{source}: truncated payload for {name!r}")
            out[name] = np.frombuffer(data, dtype="<f4", count=nbytes // 4, offset=pos) \
                .reshape(dims).astype(np.float32)
            pos += nbytes
    except (struct.error, UnicodeDecodeError) as exc:
        raise FormatError(f"{source}: truncated or corrupt checkpoint") from exc
    if pos != len(data):
        raise FormatError(f"{source}: {len(data) - pos} trailing bytes")
    return out


def save_entries(path, entries: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode(entries))


def load_entries(path) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes(), str(path))


def _scalar(v: float) -> np.ndarray:
    return np.full((1, 1, 1, 1), v, dtype=np.float32)


def save_checkpoint(path, model, state=None) -> None:
    """Write model weights, architecture metadata and (optionally) optimizer state."""
    entries = {
        "meta/kind": _scalar(MODEL_KINDS.index(model.kind)),
        "meta/in_channels": _scalar(model.in_ch),
        "meta/base_channels": _scalar(model.base_ch),
    }
    for name, p in model.params.items():
        entries[f"param/{name}"] = p.data
    if state is not None:
        entries["meta/step"] = _scalar(state.step)
        for name, v in state.velocity.items():
            entries[f"velocity/{name}"] = v
    save_entries(path, entries)


def read_meta(entries: Mapping[str, np.ndarray]) -> dict[str, int | str]:
    try:
        kind = MODEL_KINDS[int(entries["meta/kind"].item())]
        meta = {
            "kind": kind,
            "in_channels": int(entries["meta/in_channels"].item()),
            "base_channels": int(entries["meta/base_channels"].item()),
        }
    except (KeyError, IndexError) as exc:
        raise FormatError("checkpoint lacks model metadata") from exc
    if "meta/step" in entries:
        meta["step"] = int(entries["meta/step"].item())
    return meta


def load_checkpoint(path, expect_kind: str | None = None, state=None):
    """Rebuild the model stored at ``path``; restore optimizer state into ``state``."""
    from .architectures import build_model

    entries = load_entries(path)
    meta = read_meta(entries)
    if expect_kind is not None and meta["kind"] != expect_kind:
        raise FormatError(f"{path}: checkpoint holds a {meta['kind']!r} model, expected {expect_kind!r}")
    model = build_model(meta["kind"], meta["in_channels"], meta["base_channels"])
    for name, p in model.params.items():
        key = f"param/{name}"
        if key not in entries:
            raise FormatError(f"{path}: missing parameter {name!r}")
        if entries[key].shape != p.shape:
            raise FormatError(f"{path}: parameter {name!r} has shape {entries[key].shape}, "
                              f"model expects {p.shape}")
        p.data = entries[key].copy()
    if state is not None:
        state.step = int(meta.get("step", 0))
        state.velocity = {k[len("velocity/"):]: v.copy() for k, v in entries.items()
                          if k.startswith("velocity/")}
    return model, meta
