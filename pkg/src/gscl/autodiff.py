"""A small reverse-mode tape over numpy arrays, plus Adam.

Only the operators the encoder and the ranking losses need are provided.
Every op returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to per-parent gradients.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class NonFiniteError(FloatingPointError):
    """Raised when a forward value is NaN/Inf before backpropagation."""


class Tensor:
    __slots__ = ("value", "requires_grad", "parents", "backward_fn")

    def __init__(self, value, requires_grad=False, parents=(), backward_fn=None):
        self.value = np.asarray(value)
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, parents, backward_fn):
    parents = tuple(parents)
    needs = any(p.requires_grad for p in parents)
    return Tensor(value, needs, parents if needs else (), backward_fn if needs else None)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and linear algebra
# ---------------------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.value * b.value, (a, b),
                 lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)))


def scale(a, c):
    """Multiply by a constant (scalar or array broadcastable to ``a``)."""
    a = as_tensor(a)
    c = np.asarray(c, dtype=a.dtype)
    return _node(a.value * c, (a,), lambda g: (g * c,))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.value @ b.value, (a, b), lambda g: (g @ b.value.T, a.value.T @ g))


def spmm(adj, x):
    """Constant sparse matrix times a dense tensor."""
    x = as_tensor(x)
    adj_t = adj.T.tocsr()
    return _node(np.asarray(adj @ x.value), (x,), lambda g: (np.asarray(adj_t @ g),))


def relu(x):
    x = as_tensor(x)
    mask = x.value > 0
    return _node(x.value * mask, (x,), lambda g: (g * mask,))


def leaky_relu(x, slope):
    x = as_tensor(x)
    pos = x.value > 0
    factor = np.where(pos, 1.0, slope).astype(x.dtype)
    return _node(x.value * factor, (x,), lambda g: (g * factor,))


def prelu(x, slope):
    """Leaky ReLU with a learnable scalar slope tensor."""
    x, slope = as_tensor(x), as_tensor(slope)
    pos = x.value > 0
    neg_part = np.where(pos, 0, x.value)
    factor = np.where(pos, 1, slope.value).astype(x.dtype)

    def back(g):
        return g * factor, np.asarray((g * neg_part).sum(), dtype=slope.dtype).reshape(slope.shape)

    return _node(x.value * factor, (x, slope), back)


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.value)
    return _node(out, (x,), lambda g: (g * out,))


def log(x):
    x = as_tensor(x)
    return _node(np.log(x.value), (x,), lambda g: (g / x.value,))


def minimum(x, c):
    """Clamp from above at constant ``c``; ties keep the unclamped gradient."""
    x = as_tensor(x)
    keep = x.value <= c
    return _node(np.where(keep, x.value, np.asarray(c, dtype=x.dtype)), (x,), lambda g: (g * keep,))


def sum_all(x):
    x = as_tensor(x)
    return _node(np.asarray(x.value.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean_all(x):
    x = as_tensor(x)
    n = x.value.size
    return _node(np.asarray(x.value.mean()), (x,),
                 lambda g: (np.full(x.shape, g / n, dtype=x.dtype),))


def weighted_sum(x, w):
    """``sum(x * w)`` for a constant weight vector."""
    x = as_tensor(x)
    w = np.asarray(w, dtype=x.dtype)
    return _node(np.asarray((x.value * w).sum()), (x,), lambda g: (g * w,))


# ---------------------------------------------------------------------------
# indexing and segment reductions on 1-D tensors
# ---------------------------------------------------------------------------


def take(x, idx):
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    n = x.shape[0]
    return _node(x.value[idx], (x,),
                 lambda g: (np.bincount(idx, weights=g, minlength=n).astype(x.dtype),))


def concat(parts):
    parts = [as_tensor(p) for p in parts]
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def back(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _node(np.concatenate([p.value for p in parts]), parts, back)


def segment_logsumexp(x, seg, num_segments):
    """Max-shifted log-sum-exp of a 1-D tensor per segment id; empty segments give ``-inf``."""
    x = as_tensor(x)
    seg = np.asarray(seg, dtype=np.int64)
    v = x.value
    m = np.full(num_segments, -np.inf, dtype=v.dtype)
    np.maximum.at(m, seg, v)
    shifted = np.exp(v - m[seg])
    s = np.bincount(seg, weights=shifted, minlength=num_segments)
    with np.errstate(divide="ignore"):
        out = (m + np.log(s)).astype(v.dtype)

    def back(g):
        return (g[seg] * np.exp(v - out[seg]),)

    return _node(out, (x,), back)


# ---------------------------------------------------------------------------
# cosine critic
# ---------------------------------------------------------------------------


def normalize_rows(x):
    """Divide each row by its Euclidean norm."""
    x = as_tensor(x)
    norm = np.sqrt((x.value * x.value).sum(axis=1, keepdims=True))
    if (norm == 0).any():
        raise ZeroDivisionError("cosine critic got a zero-norm row")
    y = x.value / norm

    def back(g):
        return ((g - y * (g * y).sum(axis=1, keepdims=True)) / norm,)

    return _node(y, (x,), back)


def gather_dot(x, rows_a, rows_b, chunk=65536):
    """Row-pair dot products ``x[a_p] . x[b_p]`` for index arrays ``a``, ``b``."""
    x = as_tensor(x)
    rows_a = np.asarray(rows_a, dtype=np.int64)
    rows_b = np.asarray(rows_b, dtype=np.int64)
    xv = x.value
    out = np.empty(rows_a.shape[0], dtype=xv.dtype)
    for s in range(0, rows_a.shape[0], chunk):
        a = rows_a[s:s + chunk]
        b = rows_b[s:s + chunk]
        out[s:s + chunk] = np.einsum("ij,ij->i", xv[a], xv[b])
    n = xv.shape[0]

    def back(g):
        pair = sp.csr_matrix((g, (rows_a, rows_b)), shape=(n, n))
        return (np.asarray(pair @ xv + pair.T @ xv, dtype=xv.dtype),)

    return _node(out, (x,), back)


def cosine(a, b):
    """Cosine similarity of two 1-D tensors."""
    a, b = as_tensor(a), as_tensor(b)
    na = np.linalg.norm(a.value)
    nb = np.linalg.norm(b.value)
    if na == 0 or nb == 0:
        raise ZeroDivisionError("cosine of a zero vector")
    c = float(a.value @ b.value) / (na * nb)

    def back(g):
        ga = g * (b.value / (na * nb) - c * a.value / na**2)
        gb = g * (a.value / (na * nb) - c * b.value / nb**2)
        return ga, gb

    return _node(np.asarray(c, dtype=a.dtype), (a, b), back)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def _toposort(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def grad(loss: Tensor, params) -> list:
    """Gradients of scalar ``loss`` with respect to each tensor in ``params``.

    Parameters the loss does not depend on get zero arrays.
    """
    if loss.value.size != 1:
        raise ValueError("grad needs a scalar loss")
    if not np.isfinite(loss.value).all():
        raise NonFiniteError(f"loss is not finite ({float(loss.value)})")
    grads = {id(loss): np.ones_like(loss.value)}
    if loss.requires_grad:
        for node in reversed(_toposort(loss)):
            g = grads.pop(id(node), None)
            if g is None or node.backward_fn is None:
                if g is not None:
                    grads[id(node)] = g
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if not parent.requires_grad or pg is None:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg
    out = []
    for p in params:
        g = grads.get(id(p))
        out.append(np.zeros_like(p.value) if g is None else np.asarray(g, dtype=p.dtype).reshape(p.shape))
    return out


def finite_diff_check(loss_fn, params, epsilon=1e-5, num_coords=200, seed=0, floor=1e-6):
    """Max relative error between tape gradients and central differences.

    ``loss_fn`` maps a list of tensors to a scalar tensor. ``params`` is a list
    of arrays; up to ``num_coords`` coordinates (all of them when fewer exist)
    are probed. The relative error of one coordinate is
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.
    """
    params = [np.array(p, dtype=np.float64) for p in params]
    leaves = [Tensor(p, requires_grad=True) for p in params]
    analytic = grad(loss_fn(leaves), leaves)

    coords = [(i, j) for i, p in enumerate(params) for j in range(p.size)]
    rng = np.random.default_rng(seed)
    if len(coords) > num_coords:
        pick = rng.choice(len(coords), size=num_coords, replace=False)
        coords = [coords[c] for c in sorted(pick)]

    def value(arrs):
        v = float(loss_fn([Tensor(a) for a in arrs]).value)
        if not np.isfinite(v):
            raise NonFiniteError("loss is not finite at a perturbed point")
        return v

    worst = 0.0
    for i, j in coords:
        plus = [p.copy() for p in params]
        minus = [p.copy() for p in params]
        plus[i].flat[j] += epsilon
        minus[i].flat[j] -= epsilon
        numeric = (value(plus) - value(minus)) / (2 * epsilon)
        a = float(analytic[i].flat[j])
        err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
        worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update with decoupled weight decay, in place.

    Returns ``params`` for convenience.
    """
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        if state.weight_decay:
            update = update + state.lr * state.weight_decay * p
        p -= update.astype(p.dtype)
    return params
