"""Synchronous multi-modal fusion: one self-attention pass over the joint
visual+linguistic token sequence of a single hierarchy level.

Pixels are flattened row-major into tokens, concatenated length-wise with the
word tokens, layer-normalized per token, offset by learned positional
embeddings, and mixed by full multi-head self-attention so pixel-pixel,
word-word and pixel-word interactions all happen in the same step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .nn import ChannelLayerNorm, Module
from .tensor import Tensor, parameter
from .text import MAX_WORDS


@dataclass
class MultiModalSequence:
    tokens: Tensor        # C x (HW + T)
    split: int            # HW: index separating pixel tokens from word tokens
    grid: tuple           # (H, W) for un-flattening the visual part

    @property
    def length(self):
        return self.tokens.shape[1]


class MultiHeadAttention(Module):
    """Full self-attention over column tokens, with a residual connection.

    Per head the C x (C/h) projections produce queries, keys and values;
    scores are scaled by 1/sqrt(C/h); the concatenated head outputs pass
    through the C x C output projection and the input is added back.

    ``identity_attention`` is a test hook replacing the attention matrix by
    the identity, leaving output = x + Wo(Wv x).
    """

    def __init__(self, channels, heads, rng):
        if channels % heads != 0:
            raise ConfigError(f"attention: channels {channels} not divisible by heads {heads}")
        dh = channels // heads
        std = 1.0 / np.sqrt(channels)
        self.wq = [parameter(rng.normal(0.0, std, size=(channels, dh))) for _ in range(heads)]
        self.wk = [parameter(rng.normal(0.0, std, size=(channels, dh))) for _ in range(heads)]
        self.wv = [parameter(rng.normal(0.0, std, size=(channels, dh))) for _ in range(heads)]
        self.wo = parameter(rng.normal(0.0, std, size=(channels, channels)))
        self.heads = heads
        self.scale = 1.0 / np.sqrt(dh)
        self.identity_attention = False

    def __call__(self, x):
        s = x.shape[1]
        outs = []
        for wq, wk, wv in zip(self.wq, self.wk, self.wv):
            v = T.matmul(T.permute(wv, (1, 0)), x)
            if self.identity_attention:
                attn = T.tensor(np.eye(s))
            else:
                q = T.matmul(T.permute(wq, (1, 0)), x)
                k = T.matmul(T.permute(wk, (1, 0)), x)
                scores = T.scale(T.matmul(T.permute(q, (1, 0)), k), self.scale)
                attn = T.softmax(scores)
            outs.append(T.matmul(v, T.permute(attn, (1, 0))))
        mixed = outs[0] if len(outs) == 1 else T.concat(outs, axis=0)
        return T.add(x, T.matmul(self.wo, mixed))


class SFM(Module):
    def __init__(self, channels, grid_size, heads, rng, max_words=MAX_WORDS):
        self.norm = ChannelLayerNorm(channels)
        self.pos_visual = parameter(rng.normal(0.0, 0.02, size=(channels, grid_size * grid_size)))
        self.pos_word = parameter(rng.normal(0.0, 0.02, size=(channels, max_words)))
        self.attention = MultiHeadAttention(channels, heads, rng)
        self.channels = channels
        self.grid_size = grid_size

    def fuse_tokens(self, visual, words):
        """Flatten, concatenate, normalize, and add positional embeddings."""
        c, h, w = visual.shape
        if words.shape[0] != c:
            raise ShapeError(f"fuse: channel mismatch, visual {visual.shape} vs words {words.shape}")
        if (h, w) != (self.grid_size, self.grid_size):
            raise ShapeError(f"fuse: grid {h}x{w} does not match positional table {self.grid_size}")
        t = words.shape[1]
        x = T.concat([T.reshape(visual, (c, h * w)), words], axis=1)
        x = self.norm(x)
        pos = T.concat([self.pos_visual, T.narrow(self.pos_word, 1, 0, t)], axis=1)
        x = T.add(x, pos)
        return MultiModalSequence(tokens=x, split=h * w, grid=(h, w))

    def __call__(self, visual, words):
        seq = self.fuse_tokens(visual, words)
        fused = self.attention(seq.tokens)
        return MultiModalSequence(tokens=fused, split=seq.split, grid=seq.grid)
