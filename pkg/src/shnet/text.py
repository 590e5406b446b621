"""Expression tokenization, vocabulary, embeddings, and the LSTM word encoder."""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DataError
from .nn import Module
from .tensor import Tensor, parameter

PAD, UNK = 0, 1
MAX_WORDS = 25

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text):
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    """Token <-> index map with PAD=0 and UNK=1 reserved."""

    def __init__(self, tokens=()):
        self.index = {"<pad>": PAD, "<unk>": UNK}
        self.tokens = ["<pad>", "<unk>"]
        for tok in tokens:
            self.add(tok)

    def add(self, tok):
        if tok not in self.index:
            self.index[tok] = len(self.tokens)
            self.tokens.append(tok)
        return self.index[tok]

    def encode(self, words):
        return [self.index.get(w, UNK) for w in words]

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, tok):
        return tok in self.index

    def save(self, path):
        with open(path, "w") as f:
            for tok in self.tokens[2:]:
                f.write(tok + "\n")

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls(line.strip() for line in f if line.strip())


def read_embedding_file(path):
    """Parse whitespace-separated ``token v1 .. vd`` lines into {token: vector}."""
    vectors = {}
    dim = None
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            tok, vals = parts[0], parts[1:]
            if dim is None:
                dim = len(vals)
                if dim == 0:
                    raise DataError(f"{path}:{lineno}: no embedding values on line")
            elif len(vals) != dim:
                raise DataError(
                    f"{path}:{lineno}: expected {dim} values, got {len(vals)}")
            try:
                vectors[tok] = np.array([float(v) for v in vals])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: bad float ({exc})") from exc
    return vectors, dim


def build_embedding(vocab, rng, dim, path=None):
    """Trainable |V| x d table; file rows exact, the rest drawn N(0, 0.1^2)."""
    table = rng.normal(0.0, 0.1, size=(len(vocab), dim))
    if path is not None:
        vectors, file_dim = read_embedding_file(path)
        if file_dim is not None and file_dim != dim:
            raise DataError(
                f"{path}: embedding width {file_dim} does not match configured {dim}")
        for tok, vec in vectors.items():
            if tok in vocab:
                table[vocab.index[tok]] = vec
    return parameter(table)


@dataclass
class WordFeatures:
    features: Tensor  # C x T, column i = hidden state at step i
    count: int


class TextEncoder(Module):
    """Embedding lookup + single-layer unidirectional LSTM over the words.

    Gate layout within the 4C preactivation block is input, forget, output,
    candidate; the forget-gate bias starts at +1.
    """

    def __init__(self, vocab, hidden, rng, embed_dim=None, embeddings_path=None):
        embed_dim = hidden if embed_dim is None else embed_dim
        self.embedding = build_embedding(vocab, rng, embed_dim, embeddings_path)
        self.wx = parameter(rng.normal(0.0, 1.0 / np.sqrt(embed_dim), size=(4 * hidden, embed_dim)))
        self.wh = parameter(rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(4 * hidden, hidden)))
        bias = np.zeros((4 * hidden, 1))
        bias[hidden:2 * hidden] = 1.0
        self.b = parameter(bias)
        self.hidden = hidden

    def encode(self, token_indices):
        if len(token_indices) == 0:
            raise ValueError("encode: token sequence is empty")
        if len(token_indices) > MAX_WORDS:
            warnings.warn(f"expression of {len(token_indices)} words truncated to {MAX_WORDS}")
            token_indices = token_indices[:MAX_WORDS]
        n = self.hidden
        emb = T.embedding(self.embedding, token_indices)  # d x T
        h = T.tensor(np.zeros((n, 1)))
        c = T.tensor(np.zeros((n, 1)))
        cols = []
        for t in range(len(token_indices)):
            x_t = T.narrow(emb, 1, t, 1)
            pre = T.add(T.add(T.matmul(self.wx, x_t), T.matmul(self.wh, h)), self.b)
            i = T.sigmoid(T.narrow(pre, 0, 0, n))
            f = T.sigmoid(T.narrow(pre, 0, n, n))
            o = T.sigmoid(T.narrow(pre, 0, 2 * n, n))
            g = T.tanh(T.narrow(pre, 0, 3 * n, n))
            c = T.add(T.mul(f, c), T.mul(i, g))
            h = T.mul(o, T.tanh(c))
            cols.append(h)
        feats = cols[0] if len(cols) == 1 else T.concat(cols, axis=1)
        return WordFeatures(features=feats, count=len(token_indices))
