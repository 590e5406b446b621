"""Training loop, evaluation, and single-image prediction."""

from __future__ import annotations

import json
import os
from contextlib import nullcontext
from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .checkpoint import load_into, save_checkpoint
from .data import RefDataset, grammar_vocabulary, read_image
from .decoder import write_mask_pgm, write_mask_probs
from .errors import NumericsError
from .metrics import EvalAccumulator
from .model import build_model, decay_masks_for
from .optim import AdamW, poly_lr
from .text import Vocabulary, tokenize


def _blas_single_thread():
    """Pin BLAS to one thread so reductions are bit-reproducible regardless
    of the host's core count."""
    try:
        from threadpoolctl import threadpool_limits
        return threadpool_limits(limits=1)
    except ImportError:  # pragma: no cover
        return nullcontext()


def load_vocab_for(cfg, manifest=None):
    manifest = manifest or cfg.data
    if manifest:
        vpath = os.path.join(os.path.dirname(os.path.abspath(manifest)), "vocab.txt")
        if os.path.exists(vpath):
            return Vocabulary.load(vpath)
    return Vocabulary(grammar_vocabulary())


@dataclass
class TrainResult:
    checkpoint_path: str
    log_path: str
    losses: list
    lrs: list


def train(cfg, dataset=None, echo=None):
    """Deterministic training: fixed init order, fixed batch order, one
    optimizer step per logged line."""
    cfg.validate()
    ds = dataset if dataset is not None else RefDataset(cfg.data)
    os.makedirs(cfg.out, exist_ok=True)
    vocab = load_vocab_for(cfg)
    model = build_model(cfg, vocab, np.random.default_rng(cfg.seed))
    opt = AdamW(model.named_parameters(), lr=cfg.lr0,
                weight_decay=cfg.weight_decay, decay_masks=decay_masks_for(model))
    order_rng = np.random.default_rng([cfg.seed, 7])

    queue = []
    losses, lrs, lines = [], [], []
    with _blas_single_thread():
        for step in range(cfg.steps):
            batch = []
            while len(batch) < cfg.batch_size:
                if not queue:
                    queue = list(order_rng.permutation(len(ds)))
                batch.append(int(queue.pop()))
            opt.zero_grad()
            total = 0.0
            for i in batch:
                image, words, mask, _ = ds.load(i)
                probs = model.forward(image, vocab.encode(words))
                loss = T.bce_loss(probs, T.tensor(mask))
                total += float(loss.data)
                T.backward(T.scale(loss, 1.0 / cfg.batch_size))
            mean_loss = total / cfg.batch_size
            if not np.isfinite(mean_loss):
                dump = os.path.join(cfg.out, "nan_dump.json")
                with open(dump, "w") as f:
                    json.dump({"step": step, "grad_norms": opt.grad_norms()}, f, indent=2)
                raise NumericsError(f"non-finite loss at step {step}; grad norms in {dump}")
            lr = poly_lr(cfg.lr0, step, cfg.steps, cfg.poly_power)
            opt.step(lr)
            line = f"step={step} lr={lr:.12e} loss={mean_loss:.12e}"
            losses.append(mean_loss)
            lrs.append(lr)
            lines.append(line)
            if echo:
                echo(line)

    ckpt_path = os.path.join(cfg.out, "checkpoint.ckpt")
    save_checkpoint(ckpt_path, model.named_parameters())
    log_path = os.path.join(cfg.out, "train.log")
    with open(log_path, "w") as f:
        f.write("\n".join(lines) + "\n")
    return TrainResult(checkpoint_path=ckpt_path, log_path=log_path,
                       losses=losses, lrs=lrs)


def evaluate(cfg, checkpoint_path, manifest=None, write_reports=True, threshold=0.5):
    """Run a checkpoint over a manifest and report IoU / Precision@X."""
    cfg.validate()
    manifest = manifest or cfg.data
    ds = RefDataset(manifest)
    vocab = load_vocab_for(cfg, manifest)
    model = build_model(cfg, vocab, np.random.default_rng(cfg.seed))
    load_into(model, checkpoint_path)
    acc = EvalAccumulator()
    with _blas_single_thread():
        for i in range(len(ds)):
            image, words, mask, _ = ds.load(i)
            probs = model.forward(image, vocab.encode(words))
            acc.accumulate(probs.data[0] > threshold, mask[0].astype(bool))
    if write_reports:
        os.makedirs(cfg.out, exist_ok=True)
        acc.write_report(os.path.join(cfg.out, "report.txt"),
                         os.path.join(cfg.out, "report.json"))
    return acc


def predict(cfg, checkpoint_path, image_path, expression, out_prefix):
    """Segment one image for one expression; writes <prefix>.pgm and .probs."""
    cfg.validate()
    image = read_image(image_path)
    vocab = load_vocab_for(cfg)
    model = build_model(cfg, vocab, np.random.default_rng(cfg.seed))
    load_into(model, checkpoint_path)
    tokens = vocab.encode(tokenize(expression))
    with _blas_single_thread():
        probs = model.forward(image, tokens)
    os.makedirs(os.path.dirname(os.path.abspath(out_prefix)), exist_ok=True)
    write_mask_pgm(out_prefix + ".pgm", probs.data)
    write_mask_probs(out_prefix + ".probs", probs.data)
    return probs.data


def overfit_single_sample(cfg, sample, steps=500, echo=None):
    """Train on one in-memory sample and return its final IoU (0..1)."""

    class _OneSample:
        def __len__(self):
            return 1

        def load(self, i):
            return sample.image, sample.words, sample.mask, {}

    run_cfg = replace(cfg, batch_size=1, steps=steps)
    result = train(run_cfg, dataset=_OneSample(), echo=echo)
    vocab = load_vocab_for(run_cfg)
    model = build_model(run_cfg, vocab, np.random.default_rng(run_cfg.seed))
    load_into(model, result.checkpoint_path)
    probs = model.forward(sample.image, vocab.encode(sample.words))
    pred = probs.data[0] > 0.5
    gt = sample.mask[0].astype(bool)
    union = np.logical_or(pred, gt).sum()
    iou = float(np.logical_and(pred, gt).sum() / union) if union else 1.0
    return iou, result
