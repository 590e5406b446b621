"""AdamW with decoupled weight decay, and the polynomial learning-rate decay."""

from __future__ import annotations

import numpy as np


def poly_lr(lr0, step, total_steps, power=0.7):
    """lr(t) = lr0 * (1 - t/T)^power; reaches exactly zero at t = T."""
    frac = 1.0 - step / total_steps
    return lr0 * frac ** power if frac > 0.0 else 0.0


class AdamW:
    """Decoupled-decay Adam over a list of (name, parameter) pairs.

    ``decay_mask`` entries (same shape as the parameter, values 0/1) exempt
    individual rows from weight decay; names matching ``no_decay`` suffixes
    (biases, norm gains, positional embeddings) skip decay entirely.
    """

    NO_DECAY_SUFFIXES = (".b", ".gamma", ".beta", "pos_visual", "pos_word")

    def __init__(self, named_params, lr=1.2e-4, beta1=0.9, beta2=0.999,
                 eps=1e-8, weight_decay=9e-5, decay_masks=None):
        self.params = [(name, p) for name, p in named_params if p.requires_grad]
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.decay_masks = decay_masks or {}
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for _, p in self.params]
        self.v = [np.zeros_like(p.data) for _, p in self.params]

    def _decays(self, name):
        return not any(name.endswith(sfx) or sfx in name for sfx in self.NO_DECAY_SUFFIXES)

    def zero_grad(self):
        for _, p in self.params:
            p.zero_grad()

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for (name, p), m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay and self._decays(name):
                decay = self.weight_decay * p.data
                mask = self.decay_masks.get(name)
                if mask is not None:
                    decay = decay * mask
                update = update + decay
            p.data -= lr * update

    def grad_norms(self):
        return {name: float(np.sqrt((p.grad ** 2).sum())) if p.grad is not None else 0.0
                for name, p in self.params}
