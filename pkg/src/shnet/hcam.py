"""Hierarchical cross-modal aggregation.

Each level's word features collapse to a global linguistic context vector;
for every ordered level pair (i, j) a sigmoid-gated 1x1 convolution over
[visual_i ; context_j] produces an affinity map that routes level j's visual
evidence into level i. The gated sums are stacked along a depth axis and
fused to a single map by a depth-collapsing 3d convolution.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .nn import Conv2d, Conv3d, Module
from .tensor import Tensor

LEVELS = (2, 3, 4)
PAIRS = tuple((i, j) for i in LEVELS for j in LEVELS if i != j)


@dataclass
class LevelSplit:
    visual: Tensor   # C x H x W
    words: Tensor    # C x T


def split_sequence(seq):
    """Break a fused token sequence back into its visual and word parts."""
    c = seq.tokens.shape[0]
    h, w = seq.grid
    t = seq.length - seq.split
    visual = T.reshape(T.narrow(seq.tokens, 1, 0, seq.split), (c, h, w))
    words = T.narrow(seq.tokens, 1, seq.split, t)
    return LevelSplit(visual=visual, words=words)


def linguistic_context(words):
    """Length-wise mean of a level's word features: C x T -> C."""
    return T.mean(words, axis=1)


class HCAM(Module):
    def __init__(self, channels, rng, gate_kernel=1):
        pad = gate_kernel // 2
        self.gates = {f"{i}{j}": Conv2d(2 * channels, channels, gate_kernel, rng,
                                        pad=pad, gain=1.0)
                      for i, j in PAIRS}
        self.fuse = Conv3d(channels, channels, (3, 3, 3), rng, pad=(0, 1, 1), gain=1.0)
        self.channels = channels
        self.force_affinity = None  # test hook: 0.0 or 1.0 short-circuits the gates

    def affinity(self, i, j, visual_i, context_j):
        """Sigmoid gate from level j's linguistic context onto level i's map."""
        c, h, w = visual_i.shape
        if self.force_affinity is not None:
            import numpy as np
            return T.tensor(np.full((c, h, w), float(self.force_affinity)))
        ctx = T.expand(T.reshape(context_j, (c, 1, 1)), (c, h, w))
        return T.sigmoid(self.gates[f"{i}{j}"](T.concat([visual_i, ctx], axis=0)))

    def exchange(self, levels):
        """Affinity maps for all six ordered level pairs."""
        contexts = {j: linguistic_context(levels[j].words) for j in LEVELS}
        return {(i, j): self.affinity(i, j, levels[i].visual, contexts[j])
                for i, j in PAIRS}

    def aggregate(self, levels, affinities):
        """Gate-and-sum per level, stack depth-wise, fuse with the 3d conv."""
        c, h, w = levels[LEVELS[0]].visual.shape
        stacked = []
        for i in LEVELS:
            g = levels[i].visual
            for j in LEVELS:
                if j != i:
                    g = T.add(g, T.mul(affinities[(i, j)], levels[j].visual))
            stacked.append(T.reshape(g, (c, 1, h, w)))
        volume = T.concat(stacked, axis=1)            # C x 3 x H x W
        return T.reshape(self.fuse(volume), (c, h, w))

    def gated_sums(self, levels):
        """The per-level aggregates right before the 3d convolution."""
        affinities = self.exchange(levels)
        out = {}
        for i in LEVELS:
            g = levels[i].visual
            for j in LEVELS:
                if j != i:
                    g = T.add(g, T.mul(affinities[(i, j)], levels[j].visual))
            out[i] = g
        return out

    def __call__(self, levels):
        return self.aggregate(levels, self.exchange(levels))
