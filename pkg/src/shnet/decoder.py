"""ASPP decoding, upsampling mask head, and mask file output."""

from __future__ import annotations

import struct

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .nn import Conv2d, Module

ASPP_RATES = (1, 2, 4, 6)
MASK_MAGIC = b"SHNETMASK"


class ASPP(Module):
    """Parallel 3x3 atrous branches plus a global-pool branch, fused by 1x1 conv."""

    def __init__(self, channels, rng):
        self.branches = [Conv2d(channels, channels, 3, rng, pad=r, dilation=r)
                         for r in ASPP_RATES]
        self.pool_proj = Conv2d(channels, channels, 1, rng)
        self.merge = Conv2d(channels * (len(ASPP_RATES) + 1), channels, 1, rng, gain=1.0)

    def __call__(self, x):
        c, h, w = x.shape
        outs = [T.relu(b(x)) for b in self.branches]
        pooled = T.relu(self.pool_proj(T.adaptive_avg_pool2d(x, 1, 1)))
        outs.append(T.expand(pooled, (c, h, w)))
        return self.merge(T.concat(outs, axis=0))


class MaskHead(Module):
    """Two upsample/conv/relu stages, a final bilinear resize to the image
    resolution, then a 1x1 conv to a single sigmoid channel."""

    def __init__(self, channels, rng):
        if channels % 4 != 0:
            raise ConfigError(f"mask head: channels {channels} must be divisible by 4")
        self.up1 = Conv2d(channels, channels // 2, 3, rng, pad=1)
        self.up2 = Conv2d(channels // 2, channels // 4, 3, rng, pad=1)
        self.out = Conv2d(channels // 4, 1, 1, rng, gain=1.0)

    def __call__(self, x, resolution):
        h, w = x.shape[1], x.shape[2]
        x = T.relu(self.up1(T.bilinear_upsample(x, 2 * h, 2 * w)))
        x = T.relu(self.up2(T.bilinear_upsample(x, 4 * h, 4 * w)))
        x = T.bilinear_upsample(x, resolution, resolution)
        return T.sigmoid(self.out(x))


class Decoder(Module):
    def __init__(self, channels, rng):
        self.aspp = ASPP(channels, rng)
        self.head = MaskHead(channels, rng)

    def __call__(self, x, resolution):
        return self.head(self.aspp(x), resolution)


bce_loss = T.bce_loss


def binarize(probs, threshold=0.5):
    return probs > threshold


def write_mask_pgm(path, probs, threshold=0.5):
    """8-bit PGM of the thresholded mask (0 background, 255 object)."""
    mask = binarize(np.asarray(probs).reshape(probs.shape[-2], probs.shape[-1]), threshold)
    data = (mask.astype(np.uint8)) * 255
    with open(path, "wb") as f:
        f.write(f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode())
        f.write(data.tobytes())


def write_mask_probs(path, probs):
    """Raw probability dump: magic, u32 H, u32 W, row-major little-endian f64."""
    arr = np.asarray(probs, dtype=np.float64).reshape(probs.shape[-2], probs.shape[-1])
    with open(path, "wb") as f:
        f.write(MASK_MAGIC)
        f.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
        f.write(arr.astype("<f8").tobytes())


def read_mask_probs(path):
    with open(path, "rb") as f:
        blob = f.read()
    if not blob.startswith(MASK_MAGIC):
        raise ValueError(f"{path}: bad probability-dump magic")
    h, w = struct.unpack_from("<II", blob, len(MASK_MAGIC))
    off = len(MASK_MAGIC) + 8
    return np.frombuffer(blob, dtype="<f8", count=h * w, offset=off).reshape(h, w).copy()
