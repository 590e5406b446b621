"""Dense float64 tensors with reverse-mode automatic differentiation.

Every value in the network is a Tensor wrapping a row-major numpy array.
Operations build an acyclic graph of GraphNode records; ``backward`` on a
scalar loss walks the graph in reverse topological order and accumulates
gradients additively, so a tensor consumed twice receives the sum of both
contributions.

Broadcasting is deliberately strict: two shapes combine only if they have
equal rank and every extent matches or is 1. Anything else needs an
explicit ``reshape``/``expand``.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

__all__ = [
    "Tensor", "GraphNode", "tensor", "parameter",
    "add", "sub", "mul", "scale", "neg", "relu", "sigmoid", "tanh",
    "matmul", "softmax", "layer_norm", "conv2d", "conv3d",
    "max_pool2d", "avg_pool2d", "adaptive_avg_pool2d", "bilinear_upsample",
    "concat", "narrow", "reshape", "permute", "expand",
    "mean", "sum_along", "sum_all", "embedding", "bce_loss", "backward",
]


class GraphNode:
    """One op record: kind, input refs, and the closure holding whatever
    activations its backward needs."""

    __slots__ = ("kind", "inputs", "backward_fn")

    def __init__(self, kind, inputs, backward_fn):
        self.kind = kind
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node")

    def __init__(self, data, requires_grad=False, node=None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node = node

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; scalars fold into scale/shift ops
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return _shift(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return _shift(self, -float(other))

    def __rsub__(self, other):
        return _shift(neg(self), float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not an engine primitive")
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def parameter(data):
    """Leaf tensor with a preallocated gradient buffer."""
    t = Tensor(data, requires_grad=True)
    t.grad = np.zeros_like(t.data)
    return t


def _result(data, kind, inputs, backward_fn):
    if any(t.requires_grad for t in inputs):
        return Tensor(data, requires_grad=True,
                      node=GraphNode(kind, tuple(inputs), backward_fn))
    return Tensor(data)


def _broadcast_shape(sa, sb, kind):
    if len(sa) != len(sb):
        raise ShapeError(f"{kind}: rank mismatch {sa} vs {sb}")
    out = []
    for da, db in zip(sa, sb):
        if da == db or da == 1 or db == 1:
            out.append(max(da, db))
        else:
            raise ShapeError(f"{kind}: incompatible shapes {sa} vs {sb}")
    return tuple(out)


def _unbroadcast(grad, shape):
    """Sum a gradient back down to the (possibly singleton-expanded) shape."""
    axes = tuple(i for i, (d, g) in enumerate(zip(shape, grad.shape)) if d == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise


def add(a, b):
    _broadcast_shape(a.shape, b.shape, "add")

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, "add", (a, b), bwd)


def sub(a, b):
    _broadcast_shape(a.shape, b.shape, "sub")

    def bwd(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _result(a.data - b.data, "sub", (a, b), bwd)


def mul(a, b):
    _broadcast_shape(a.shape, b.shape, "mul")
    da, db = a.data, b.data

    def bwd(g):
        return _unbroadcast(g * db, a.shape), _unbroadcast(g * da, b.shape)

    return _result(da * db, "mul", (a, b), bwd)


def scale(a, c):
    c = float(c)

    def bwd(g):
        return (g * c,)

    return _result(a.data * c, "scale", (a,), bwd)


def _shift(a, c):
    def bwd(g):
        return (g,)

    return _result(a.data + c, "shift", (a,), bwd)


def neg(a):
    def bwd(g):
        return (-g,)

    return _result(-a.data, "neg", (a,), bwd)


def relu(a):
    out = np.maximum(a.data, 0.0)
    mask = a.data > 0.0

    def bwd(g):
        return (g * mask,)

    return _result(out, "relu", (a,), bwd)


def sigmoid(a):
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    e = np.exp(a.data[~pos])
    out[~pos] = e / (1.0 + e)

    def bwd(g):
        return (g * out * (1.0 - out),)

    return _result(out, "sigmoid", (a,), bwd)


def tanh(a):
    out = np.tanh(a.data)

    def bwd(g):
        return (g * (1.0 - out * out),)

    return _result(out, "tanh", (a,), bwd)


# ---------------------------------------------------------------------------
# shape plumbing


def reshape(a, shape):
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")
    old = a.shape

    def bwd(g):
        return (g.reshape(old),)

    return _result(a.data.reshape(shape), "reshape", (a,), bwd)


def permute(a, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        return (g.transpose(inv),)

    return _result(a.data.transpose(axes), "permute", (a,), bwd)


def expand(a, shape):
    """Broadcast singleton extents of ``a`` up to an explicit target shape."""
    shape = tuple(int(s) for s in shape)
    _broadcast_shape(a.shape, shape, "expand")
    old = a.shape

    def bwd(g):
        return (_unbroadcast(g, old),)

    return _result(np.broadcast_to(a.data, shape).copy(), "expand", (a,), bwd)


def concat(tensors, axis):
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat: empty input list")
    ref = list(tensors[0].shape)
    for t in tensors[1:]:
        s = list(t.shape)
        if len(s) != len(ref) or any(i != axis and s[i] != ref[i] for i in range(len(s))):
            raise ShapeError(f"concat: incompatible shapes {tensors[0].shape} vs {t.shape} on axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        return tuple(np.take(g, range(offsets[i], offsets[i + 1]), axis=axis)
                     for i in range(len(sizes)))

    return _result(np.concatenate([t.data for t in tensors], axis=axis),
                   "concat", tuple(tensors), bwd)


def narrow(a, axis, start, length):
    if start < 0 or start + length > a.shape[axis]:
        raise ShapeError(f"narrow: [{start}:{start + length}] out of range for {a.shape} axis {axis}")
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    full = a.shape

    def bwd(g):
        out = np.zeros(full)
        out[idx] = g
        return (out,)

    return _result(a.data[idx].copy(), "narrow", (a,), bwd)


# ---------------------------------------------------------------------------
# reductions


def mean(a, axis):
    n = a.shape[axis]

    def bwd(g):
        return (np.repeat(np.expand_dims(g, axis), n, axis=axis) / n,)

    return _result(a.data.mean(axis=axis), "mean", (a,), bwd)


def sum_along(a, axis):
    n = a.shape[axis]

    def bwd(g):
        return (np.repeat(np.expand_dims(g, axis), n, axis=axis),)

    return _result(a.data.sum(axis=axis), "sum_along", (a,), bwd)


def sum_all(a):
    shape = a.shape

    def bwd(g):
        return (np.full(shape, float(g)),)

    return _result(a.data.sum(), "sum_all", (a,), bwd)


# ---------------------------------------------------------------------------
# linear algebra and attention pieces


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner extents do not match for {a.shape} x {b.shape}")
    da, db = a.data, b.data

    def bwd(g):
        return g @ db.T, da.T @ g

    return _result(da @ db, "matmul", (a, b), bwd)


def softmax(a):
    """Softmax over the last axis, max-subtracted for stability."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _result(out, "softmax", (a,), bwd)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize each column (token) of a C x S matrix over its channels."""
    if x.ndim != 2:
        raise ShapeError(f"layer_norm: expected C x S input, got {x.shape}")
    c = x.shape[0]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layer_norm: affine shape {gamma.shape}/{beta.shape} does not match C={c}")
    mu = x.data.mean(axis=0, keepdims=True)
    var = x.data.var(axis=0, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    gcol = gamma.data[:, None]
    out = gcol * xhat + beta.data[:, None]

    def bwd(g):
        dxhat = g * gcol
        dx = inv * (dxhat - dxhat.mean(axis=0, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=0, keepdims=True))
        return dx, (g * xhat).sum(axis=1), g.sum(axis=1)

    return _result(out, "layer_norm", (x, gamma, beta), bwd)


# ---------------------------------------------------------------------------
# convolution


def _conv_extent(n, k, stride, pad, dilation, what):
    span = n + 2 * pad - dilation * (k - 1) - 1
    if span < 0 or span % stride != 0:
        raise ShapeError(f"{what}: input extent {n} with kernel {k}, stride {stride}, "
                         f"pad {pad}, dilation {dilation} gives no integral output extent")
    out = span // stride + 1
    if out <= 0:
        raise ShapeError(f"{what}: non-positive output extent for input {n}")
    return out


def conv2d(x, w, bias, stride=1, pad=0, dilation=1):
    """Cross-correlation of Cin x H x W input with Cout x Cin x k x k kernel."""
    if x.ndim != 3 or w.ndim != 4:
        raise ShapeError(f"conv2d: expected 3-d input and 4-d kernel, got {x.shape}, {w.shape}")
    cin, h, wd = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ShapeError(f"conv2d: input channels {cin} do not match kernel {w.shape}")
    if bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match Cout={cout}")
    ho = _conv_extent(h, kh, stride, pad, dilation, "conv2d")
    wo = _conv_extent(wd, kw, stride, pad, dilation, "conv2d")

    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad))) if pad else x.data
    s0, s1, s2 = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp, shape=(cin, kh, kw, ho, wo),
        strides=(s0, s1 * dilation, s2 * dilation, s1 * stride, s2 * stride))
    cols = win.reshape(cin * kh * kw, ho * wo).copy()
    wmat = w.data.reshape(cout, cin * kh * kw)
    out = (wmat @ cols + bias.data[:, None]).reshape(cout, ho, wo)

    def bwd(g):
        gm = g.reshape(cout, ho * wo)
        dw = (gm @ cols.T).reshape(w.shape)
        db = gm.sum(axis=1)
        dcols = (wmat.T @ gm).reshape(cin, kh, kw, ho, wo)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i * dilation: i * dilation + ho * stride: stride,
                       j * dilation: j * dilation + wo * stride: stride] += dcols[:, i, j]
        dx = dxp[:, pad: pad + h, pad: pad + wd] if pad else dxp
        return dx, dw, db

    return _result(out, "conv2d", (x, w, bias), bwd)


def conv3d(x, w, bias, stride=1, pad=0):
    """Cross-correlation of Cin x D x H x W input with Cout x Cin x kd x kh x kw kernel.

    ``pad`` is spatial only when given as (pd, ph, pw) with pd possibly 0;
    an int pads all three axes equally.
    """
    if x.ndim != 4 or w.ndim != 5:
        raise ShapeError(f"conv3d: expected 4-d input and 5-d kernel, got {x.shape}, {w.shape}")
    cin, d, h, wd = x.shape
    cout, cin_w, kd, kh, kw = w.shape
    if cin != cin_w:
        raise ShapeError(f"conv3d: input channels {cin} do not match kernel {w.shape}")
    if bias.shape != (cout,):
        raise ShapeError(f"conv3d: bias shape {bias.shape} does not match Cout={cout}")
    pd, ph, pw = (pad, pad, pad) if isinstance(pad, int) else pad
    do = _conv_extent(d, kd, stride, pd, 1, "conv3d")
    ho = _conv_extent(h, kh, stride, ph, 1, "conv3d")
    wo = _conv_extent(wd, kw, stride, pw, 1, "conv3d")

    xp = np.pad(x.data, ((0, 0), (pd, pd), (ph, ph), (pw, pw))) if (pd or ph or pw) else x.data
    s0, s1, s2, s3 = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp, shape=(cin, kd, kh, kw, do, ho, wo),
        strides=(s0, s1, s2, s3, s1 * stride, s2 * stride, s3 * stride))
    cols = win.reshape(cin * kd * kh * kw, do * ho * wo).copy()
    wmat = w.data.reshape(cout, cin * kd * kh * kw)
    out = (wmat @ cols + bias.data[:, None]).reshape(cout, do, ho, wo)

    def bwd(g):
        gm = g.reshape(cout, do * ho * wo)
        dw = (gm @ cols.T).reshape(w.shape)
        db = gm.sum(axis=1)
        dcols = (wmat.T @ gm).reshape(cin, kd, kh, kw, do, ho, wo)
        dxp = np.zeros_like(xp)
        for a in range(kd):
            for i in range(kh):
                for j in range(kw):
                    dxp[:, a: a + do * stride: stride,
                           i: i + ho * stride: stride,
                           j: j + wo * stride: stride] += dcols[:, a, i, j]
        dx = dxp[:, pd: pd + d, ph: ph + h, pw: pw + wd] if (pd or ph or pw) else dxp
        return dx, dw, db

    return _result(out, "conv3d", (x, w, bias), bwd)


# ---------------------------------------------------------------------------
# pooling and resampling


def _pool_view(x, k):
    c, h, w = x.shape
    if h % k or w % k:
        raise ShapeError(f"pool: extents {x.shape} not divisible by window {k}")
    return x.reshape(c, h // k, k, w // k, k).transpose(0, 1, 3, 2, 4).reshape(c, h // k, w // k, k * k)


def max_pool2d(x, k=2):
    if x.ndim != 3:
        raise ShapeError(f"max_pool2d: expected C x H x W, got {x.shape}")
    c, h, w = x.shape
    win = _pool_view(x.data, k)
    idx = win.argmax(axis=3)
    out = np.take_along_axis(win, idx[..., None], axis=3)[..., 0]
    ho, wo = h // k, w // k

    def bwd(g):
        dwin = np.zeros((c, ho, wo, k * k))
        np.put_along_axis(dwin, idx[..., None], g[..., None], axis=3)
        return (dwin.reshape(c, ho, wo, k, k).transpose(0, 1, 3, 2, 4).reshape(c, h, w),)

    return _result(out, "max_pool2d", (x,), bwd)


def avg_pool2d(x, k=2):
    if x.ndim != 3:
        raise ShapeError(f"avg_pool2d: expected C x H x W, got {x.shape}")
    c, h, w = x.shape
    win = _pool_view(x.data, k)
    out = win.mean(axis=3)
    ho, wo = h // k, w // k

    def bwd(g):
        dwin = np.repeat(g[..., None] / (k * k), k * k, axis=3)
        return (dwin.reshape(c, ho, wo, k, k).transpose(0, 1, 3, 2, 4).reshape(c, h, w),)

    return _result(out, "avg_pool2d", (x,), bwd)


def _adaptive_bins(n_in, n_out):
    starts = (np.arange(n_out) * n_in) // n_out
    ends = -((-(np.arange(1, n_out + 1) * n_in)) // n_out)  # ceil
    return starts, ends


def adaptive_avg_pool2d(x, out_h, out_w):
    """Average pooling onto an arbitrary output grid (bins may overlap when
    upsampling, matching the usual floor/ceil bin convention)."""
    if x.ndim != 3:
        raise ShapeError(f"adaptive_avg_pool2d: expected C x H x W, got {x.shape}")
    c, h, w = x.shape
    rs, re = _adaptive_bins(h, out_h)
    cs, ce = _adaptive_bins(w, out_w)
    out = np.empty((c, out_h, out_w))
    for i in range(out_h):
        row = x.data[:, rs[i]:re[i], :]
        for j in range(out_w):
            out[:, i, j] = row[:, :, cs[j]:ce[j]].mean(axis=(1, 2))

    def bwd(g):
        dx = np.zeros((c, h, w))
        for i in range(out_h):
            for j in range(out_w):
                n = (re[i] - rs[i]) * (ce[j] - cs[j])
                dx[:, rs[i]:re[i], cs[j]:ce[j]] += g[:, i, j][:, None, None] / n
        return (dx,)

    return _result(out, "adaptive_avg_pool2d", (x,), bwd)


_interp_cache = {}


def _interp_matrix(n_in, n_out):
    """Dense 1-d bilinear interpolation matrix, align-corners=false convention."""
    key = (n_in, n_out)
    m = _interp_cache.get(key)
    if m is None:
        m = np.zeros((n_out, n_in))
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1.0)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = src - lo
        for i in range(n_out):
            m[i, lo[i]] += 1.0 - frac[i]
            m[i, hi[i]] += frac[i]
        _interp_cache[key] = m
    return m


def bilinear_upsample(x, out_h, out_w):
    if x.ndim != 3:
        raise ShapeError(f"bilinear_upsample: expected C x H x W, got {x.shape}")
    c, h, w = x.shape
    ur = _interp_matrix(h, out_h)
    uc = _interp_matrix(w, out_w)
    tmp = np.einsum("ph,chw->cpw", ur, x.data)
    out = np.einsum("qw,cpw->cpq", uc, tmp)

    def bwd(g):
        t = np.einsum("qw,cpq->cpw", uc, g)
        return (np.einsum("ph,cpw->chw", ur, t),)

    return _result(out, "bilinear_upsample", (x,), bwd)


# ---------------------------------------------------------------------------
# lookup and loss


def embedding(table, indices):
    """Gather table rows by token index; result is d x T (one column per token).

    Gradient scatters back additively, so only rows of used tokens receive
    non-zero gradient.
    """
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1 or idx.size == 0:
        raise ShapeError("embedding: indices must be a non-empty 1-d sequence")
    if idx.min() < 0 or idx.max() >= table.shape[0]:
        raise ShapeError(f"embedding: index out of range for table {table.shape}")
    out = table.data[idx].T.copy()
    vshape = table.shape

    def bwd(g):
        dt = np.zeros(vshape)
        np.add.at(dt, idx, g.T)
        return (dt,)

    return _result(out, "embedding", (table,), bwd)


BCE_CLAMP = 1e-7


def bce_loss(s, y):
    """Mean pixel binary cross-entropy; probabilities clamped away from {0,1}."""
    if s.shape != y.shape:
        raise ShapeError(f"bce_loss: prediction {s.shape} vs target {y.shape}")
    sc = np.clip(s.data, BCE_CLAMP, 1.0 - BCE_CLAMP)
    yd = y.data
    n = sc.size
    loss = -(yd * np.log(sc) + (1.0 - yd) * np.log(1.0 - sc)).mean()

    def bwd(g):
        # the clamped probability enters the gradient too: at saturation this
        # behaves like logit-space BCE and keeps pinned pixels recoverable
        ds = float(g) * (sc - yd) / (sc * (1.0 - sc)) / n
        return ds, None

    return _result(loss, "bce_loss", (s, y), bwd)


# ---------------------------------------------------------------------------
# reverse pass


def backward(loss):
    """Populate gradients of everything the scalar ``loss`` depends on."""
    if loss.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")

    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        t, done = stack.pop()
        if done:
            topo.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for inp in t.node.inputs:
                if id(inp) not in seen and (inp.requires_grad or inp.node is not None):
                    stack.append((inp, False))

    loss.grad = np.ones_like(loss.data)
    for t in reversed(topo):
        node = t.node
        if node is None or t.grad is None:
            continue
        grads = node.backward_fn(t.grad)
        for inp, g in zip(node.inputs, grads):
            if g is None or not inp.requires_grad:
                continue
            if inp.grad is None:
                inp.grad = np.array(g)  # copy: g may alias the output grad
            else:
                inp.grad += g
