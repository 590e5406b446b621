"""Whole-module forward passes wired up for finite-difference checking.

Each case yields the tensors to perturb (module parameters plus inputs) and
a closure recomputing the scalar loss from the current tensor contents.
Geometries are tiny and freshly randomized per configuration.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .backbone import VisualBackbone
from .config import RunConfig
from .decoder import Decoder
from .hcam import HCAM, LEVELS, LevelSplit
from .model import RefSegModel
from .sfm import SFM
from .text import TextEncoder, Vocabulary


def _case(module, inputs, forward):
    tensors = [p for p in module.parameters() if p.requires_grad] + list(inputs)
    return tensors, forward


def composite_cases(rng):
    """Yield (name, tensors, forward_fn) triples, one per network module."""
    vocab = Vocabulary(["a", "b", "c", "d"])

    hidden = int(rng.integers(2, 5))
    enc = TextEncoder(vocab, hidden, rng, embed_dim=int(rng.integers(2, 4)))
    t_len = int(rng.integers(1, 5))
    toks = [int(k) for k in rng.integers(0, 6, size=t_len)]
    w_text = T.tensor(rng.normal(size=(hidden, t_len)))
    yield ("text_encoder",
           *_case(enc, [], lambda: T.sum_all(T.mul(enc.encode(toks).features, w_text))))

    c = int(rng.integers(2, 5))
    grid = int(rng.integers(1, 3))
    bb = VisualBackbone(c, grid, rng)
    img = T.tensor(rng.uniform(0.0, 1.0, size=(3, 16, 16)), requires_grad=True)
    w_bb = [T.tensor(rng.normal(size=(c, grid, grid))) for _ in range(3)]

    def backbone_loss():
        levels = bb(img)
        total = T.sum_all(T.mul(levels[0], w_bb[0]))
        for v, w in zip(levels[1:], w_bb[1:]):
            total = T.add(T.reshape(total, (1,)), T.reshape(T.sum_all(T.mul(v, w)), (1,)))
        return T.sum_all(total)

    yield ("visual_backbone", *_case(bb, [img], backbone_loss))

    c = 4 * int(rng.integers(1, 3))
    heads = int(rng.choice([1, 2, 4]))
    grid = int(rng.integers(1, 3))
    t_len = int(rng.integers(1, 4))
    sfm = SFM(c, grid, heads, rng)
    vis = T.tensor(rng.normal(size=(c, grid, grid)), requires_grad=True)
    wrd = T.tensor(rng.normal(size=(c, t_len)), requires_grad=True)
    w_sfm = T.tensor(rng.normal(size=(c, grid * grid + t_len)))
    yield ("sfm",
           *_case(sfm, [vis, wrd], lambda: T.sum_all(T.mul(sfm(vis, wrd).tokens, w_sfm))))

    c = int(rng.integers(2, 5))
    grid = int(rng.integers(2, 4))
    t_len = int(rng.integers(1, 4))
    hcam = HCAM(c, rng)
    vis3 = [T.tensor(rng.normal(size=(c, grid, grid)), requires_grad=True) for _ in LEVELS]
    wrd3 = [T.tensor(rng.normal(size=(c, t_len)), requires_grad=True) for _ in LEVELS]
    w_hcam = T.tensor(rng.normal(size=(c, grid, grid)))

    def hcam_loss():
        levels = {lv: LevelSplit(visual=v, words=w)
                  for lv, v, w in zip(LEVELS, vis3, wrd3)}
        return T.sum_all(T.mul(hcam(levels), w_hcam))

    yield ("hcam", *_case(hcam, vis3 + wrd3, hcam_loss))

    c = 4 * int(rng.integers(1, 3))
    grid = int(rng.integers(2, 4))
    res = grid * 8
    dec = Decoder(c, rng)
    feat = T.tensor(rng.normal(size=(c, grid, grid)), requires_grad=True)
    target = T.tensor((rng.uniform(size=(1, res, res)) > 0.5).astype(np.float64))
    yield ("decoder", *_case(dec, [feat], lambda: T.bce_loss(dec(feat, res), target)))

    cfg = RunConfig(variant="shnet", resolution=16, channels=4, heads=2,
                    embed_dim=3, feature_size=2, seed=int(rng.integers(10_000)))
    model = RefSegModel(cfg, vocab, rng)
    img = T.tensor(rng.uniform(0.0, 1.0, size=(3, 16, 16)), requires_grad=True)
    toks = [int(k) for k in rng.integers(0, 6, size=int(rng.integers(1, 4)))]
    target = T.tensor((rng.uniform(size=(1, 16, 16)) > 0.5).astype(np.float64))
    yield ("full_model",
           *_case(model, [img], lambda: T.bce_loss(model.forward(img, toks), target)))
