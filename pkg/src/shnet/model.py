"""Variant assembly: the full architecture and its ablations.

Variants share the backbone, text encoder, and ASPP+upsampling decoder and
differ in the middle:

  baseline        tile the final LSTM state over the grid, concatenate with
                  each visual level, project 1x1 back to C, fuse the three
                  levels with a depth-collapsing 3d conv
  only_sfm        per-level attention fusion, then the plain 3d-conv fusion
  sfm_conv3d      same wiring as only_sfm (the 3d conv IS its fusion step)
  only_hcam       cross-modal aggregation over raw backbone features and
                  raw word features, no attention stage
  shnet           per-level attention fusion feeding the aggregation module
  shnet_no_pe     shnet with positional embeddings zeroed and frozen
  shnet_no_glove  shnet with the embedding file ignored (random init)
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .backbone import VisualBackbone
from .decoder import Decoder
from .errors import ConfigError
from .hcam import HCAM, LEVELS, LevelSplit, split_sequence
from .nn import Conv2d, Conv3d, Module, freeze
from .sfm import SFM
from .text import PAD, TextEncoder


def _stack_depth(maps):
    c, h, w = maps[0].shape
    return T.concat([T.reshape(m, (c, 1, h, w)) for m in maps], axis=1)


class RefSegModel(Module):
    def __init__(self, cfg, vocab, rng):
        c = cfg.channels
        grid = cfg.grid_size
        self.variant = cfg.variant
        self.backbone = VisualBackbone(c, grid, rng)
        emb_path = None if cfg.variant == "shnet_no_glove" else (cfg.embeddings or None)
        self.text = TextEncoder(vocab, c, rng, embed_dim=cfg.embed_dim,
                                embeddings_path=emb_path)

        if cfg.variant == "baseline":
            self.mm_proj = [Conv2d(2 * c, c, 1, rng, gain=1.0) for _ in LEVELS]
            self.fuse = Conv3d(c, c, (3, 3, 3), rng, pad=(0, 1, 1), gain=1.0)
        elif cfg.variant in ("only_sfm", "sfm_conv3d"):
            self.sfm_levels = [SFM(c, grid, cfg.heads, rng) for _ in LEVELS]
            self.fuse = Conv3d(c, c, (3, 3, 3), rng, pad=(0, 1, 1), gain=1.0)
        elif cfg.variant == "only_hcam":
            self.hcam = HCAM(c, rng)
        elif cfg.variant in ("shnet", "shnet_no_pe", "shnet_no_glove"):
            self.sfm_levels = [SFM(c, grid, cfg.heads, rng) for _ in LEVELS]
            self.hcam = HCAM(c, rng)
        else:
            raise ConfigError(f"unknown variant {cfg.variant!r}")

        self.decoder = Decoder(c, rng)
        if cfg.variant == "shnet_no_pe":
            for sfm in self.sfm_levels:
                freeze(sfm.pos_visual, zero=True)
                freeze(sfm.pos_word, zero=True)

    def forward(self, image, token_indices):
        """Image (array or Tensor, 3 x R x R) + token ids -> mask probabilities 1 x R x R."""
        img = image if isinstance(image, T.Tensor) else T.tensor(image)
        resolution = img.shape[1]
        visuals = self.backbone(img)
        words = self.text.encode(token_indices).features

        if self.variant == "baseline":
            c, h, w = visuals[0].shape
            last = T.narrow(words, 1, words.shape[1] - 1, 1)
            tiled = T.expand(T.reshape(last, (c, 1, 1)), (c, h, w))
            fused = [proj(T.concat([v, tiled], axis=0))
                     for v, proj in zip(visuals, self.mm_proj)]
            context = T.reshape(self.fuse(_stack_depth(fused)), visuals[0].shape)
        elif self.variant in ("only_sfm", "sfm_conv3d"):
            parts = [split_sequence(sfm(v, words)).visual
                     for v, sfm in zip(visuals, self.sfm_levels)]
            context = T.reshape(self.fuse(_stack_depth(parts)), visuals[0].shape)
        elif self.variant == "only_hcam":
            levels = {lv: LevelSplit(visual=v, words=words)
                      for lv, v in zip(LEVELS, visuals)}
            context = self.hcam(levels)
        else:
            levels = {lv: split_sequence(sfm(v, words))
                      for lv, (v, sfm) in zip(LEVELS, zip(visuals, self.sfm_levels))}
            context = self.hcam(levels)

        return self.decoder(context, resolution)


def build_model(cfg, vocab, rng=None):
    cfg.validate()
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    return RefSegModel(cfg, vocab, rng)


def count_parameters(model):
    return sum(p.size for p in model.parameters())


def decay_masks_for(model):
    """Exempt the PAD embedding row from weight decay."""
    mask = np.ones_like(model.text.embedding.data)
    mask[PAD] = 0.0
    return {"text.embedding": mask}
