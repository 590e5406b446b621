"""Small trainable CNN emitting three hierarchical maps at a shared geometry.

Four conv/relu/maxpool blocks; the taps after blocks 2, 3 and 4 are pooled
onto the common H x W grid and projected to the shared channel width with
level-specific 1x1 convolutions.
"""

from __future__ import annotations

from . import tensor as T
from .errors import ShapeError
from .nn import Conv2d, Module

BLOCK_WIDTHS = (16, 32, 64, 64)


class VisualBackbone(Module):
    def __init__(self, channels, feature_size, rng):
        widths = BLOCK_WIDTHS
        self.blocks = [Conv2d(cin, cout, 3, rng, pad=1)
                       for cin, cout in zip((3,) + widths[:-1], widths)]
        self.projections = [Conv2d(widths[i], channels, 1, rng, gain=1.0)
                            for i in (1, 2, 3)]
        self.feature_size = feature_size

    def __call__(self, image):
        if image.ndim != 3 or image.shape[0] != 3 or image.shape[1] != image.shape[2]:
            raise ShapeError(f"backbone: expected square 3 x R x R image, got {image.shape}")
        r = image.shape[1]
        if r % 16 != 0:
            raise ShapeError(f"backbone: resolution {r} is not a multiple of 16")
        x = image
        taps = []
        for i, conv in enumerate(self.blocks):
            x = T.max_pool2d(T.relu(conv(x)), 2)
            if i >= 1:
                taps.append(x)
        s = self.feature_size
        return tuple(proj(T.adaptive_avg_pool2d(tap, s, s))
                     for tap, proj in zip(taps, self.projections))
