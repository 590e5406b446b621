"""Binary parameter checkpoints.

Layout: magic ``SHNETCKPT1``, then one record per parameter in order:
name length (u32 LE), UTF-8 name, rank (u32 LE), extents (u32 LE each),
raw little-endian float64 payload.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import DataError, ShapeError

MAGIC = b"SHNETCKPT1"


def save_checkpoint(path, named_params):
    """``named_params``: iterable of (name, numpy array or Tensor)."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        for name, value in named_params:
            arr = np.asarray(getattr(value, "data", value), dtype=np.float64)
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype("<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint back into an ordered {name: array} dict."""
    with open(path, "rb") as f:
        blob = f.read()
    if not blob.startswith(MAGIC):
        raise DataError(f"{path}: not a parameter checkpoint (bad magic)")
    out = {}
    off = len(MAGIC)
    while off < len(blob):
        try:
            (nlen,) = struct.unpack_from("<I", blob, off)
            off += 4
            name = blob[off:off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<I", blob, off)
            off += 4
            shape = struct.unpack_from(f"<{rank}I", blob, off)
            off += 4 * rank
            count = int(np.prod(shape, dtype=np.int64)) if rank else 1
            arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape(shape)
            off += 8 * count
        except (struct.error, ValueError) as exc:
            raise DataError(f"{path}: truncated or corrupt checkpoint ({exc})") from exc
        out[name] = arr.astype(np.float64)
    return out


def load_into(model, path):
    """Restore a model's parameters, insisting on identical geometry."""
    stored = load_checkpoint(path)
    params = dict(model.named_parameters())
    missing = sorted(set(params) - set(stored))
    extra = sorted(set(stored) - set(params))
    if missing or extra:
        raise ShapeError(
            f"{path}: parameter names do not match model "
            f"(missing: {missing[:5]}, unexpected: {extra[:5]})")
    diffs = [f"{name}: checkpoint {stored[name].shape} vs model {p.shape}"
             for name, p in params.items() if stored[name].shape != p.shape]
    if diffs:
        raise ShapeError(f"{path}: geometry mismatch; " + "; ".join(diffs[:8]))
    for name, p in params.items():
        p.data[...] = stored[name]
