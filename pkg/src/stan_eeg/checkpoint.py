"""Versioned binary checkpoints for the backbone and discriminator.

Layout (all integers little-endian)::

    8 bytes   magic  b"STANCKPT"
    u32       format version (1)
    u32       length of the JSON header that follows
    ...       UTF-8 JSON: {"stan": StanConfig, "discriminator": DiscriminatorConfig | null,
                           "frozen": bool, "meta": {...}}
    u32       number of parameter blobs
    per blob:
      u16     name length, then the UTF-8 name ("backbone.<path>" or "discriminator.<path>")
      u8      ndim, then ndim x u32 dimensions
      ...     prod(dims) x f64 little-endian, row-major
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from .discriminator import DiscriminatorConfig, DiscriminatorParams
from .errors import ParseError
from .model import StanConfig, StanModel, StanParams, freeze
from .nn import named_parameters

MAGIC = b"STANCKPT"
VERSION = 1


def _write_blobs(buf: io.BytesIO, blobs: list[tuple[str, np.ndarray]]) -> None:
    buf.write(struct.pack("<I", len(blobs)))
    for name, arr in blobs:
        enc = name.encode("utf-8")
        buf.write(struct.pack("<H", len(enc)))
        buf.write(enc)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def save_checkpoint(
    path: str | Path,
    model: StanModel,
    disc: DiscriminatorParams | None = None,
    disc_cfg: DiscriminatorConfig | None = None,
    meta: dict | None = None,
) -> None:
    header = {
        "stan": model.cfg.to_dict(),
        "discriminator": disc_cfg.to_dict() if disc_cfg is not None else None,
        "frozen": model.frozen,
        "meta": meta or {},
    }
    blobs = [(f"backbone.{n}", t.data) for n, t in named_parameters(model.params)]
    if disc is not None:
        blobs += [(f"discriminator.{n}", t.data) for n, t in named_parameters(disc)]
    buf = io.BytesIO()
    buf.write(MAGIC)
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<II", VERSION, len(head)))
    buf.write(head)
    _write_blobs(buf, blobs)
    Path(path).write_bytes(buf.getvalue())


def _read(raw: bytes, pos: int, fmt: str):
    size = struct.calcsize(fmt)
    if pos + size > len(raw):
        raise ParseError("truncated checkpoint", pos)
    return struct.unpack_from(fmt, raw, pos), pos + size


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Return the JSON header and the raw named arrays."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ParseError("not a STAN checkpoint (bad magic)", 0)
    (version, hlen), pos = _read(raw, 8, "<II")
    if version != VERSION:
        raise ParseError(f"unsupported checkpoint version {version}", 8)
    try:
        header = json.loads(raw[pos:pos + hlen].decode("utf-8"))
    except ValueError as exc:
        raise ParseError(f"corrupt checkpoint header: {exc}", pos) from None
    pos += hlen
    (count,), pos = _read(raw, pos, "<I")
    arrays = {}
    for _ in range(count):
        (nlen,), pos = _read(raw, pos, "<H")
        name = raw[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,), pos = _read(raw, pos, "<B")
        shape, pos = _read(raw, pos, f"<{ndim}I")
        n_bytes = 8 * int(np.prod(shape))
        if pos + n_bytes > len(raw):
            raise ParseError(f"truncated data for {name}", pos)
        arrays[name] = np.frombuffer(raw, dtype="<f8", count=n_bytes // 8, offset=pos).reshape(shape).copy()
        pos += n_bytes
    return header, arrays


def _fill(obj, prefix: str, arrays: dict[str, np.ndarray]) -> None:
    for name, t in named_parameters(obj):
        key = f"{prefix}.{name}"
        if key not in arrays:
            raise ParseError(f"checkpoint is missing parameter {key}")
        if arrays[key].shape != t.shape:
            raise ParseError(f"parameter {key} has shape {arrays[key].shape}, expected {t.shape}")
        t.data = arrays[key]


def load_checkpoint(path: str | Path):
    """Rebuild ``(model, disc_params | None, disc_cfg | None, meta)``."""
    header, arrays = read_checkpoint(path)
    cfg = StanConfig(**header["stan"])
    rng = np.random.default_rng(0)
    model = StanModel(cfg, StanParams.init(cfg, rng))
    _fill(model.params, "backbone", arrays)
    disc = disc_cfg = None
    if header.get("discriminator") is not None:
        disc_cfg = DiscriminatorConfig(**header["discriminator"])
        disc = DiscriminatorParams.init(disc_cfg, cfg, rng)
        _fill(disc, "discriminator", arrays)
    if header.get("frozen"):
        freeze(model)
    return model, disc, disc_cfg, header.get("meta", {})
