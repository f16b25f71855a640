"""Minimal reverse-mode automatic differentiation over dense float64 matrices.

Each Tensor records its parents plus a closure that maps the output adjoint to
parent adjoints. `backward` walks the tape in reverse topological order and
accumulates gradients into every tensor that requires them. The op set is
exactly what the GNN models and the edge-mask scoring need; no broadcasting
beyond the row-bias case.
"""
from __future__ import annotations

import math

import numpy as np


class AutodiffError(ValueError):
    pass


class Tensor:
    def __init__(self, values, requires_grad=False, parents=(), backward_fn=None):
        v = np.asarray(values, dtype=np.float64)
        if v.ndim == 0:
            v = v.reshape(1, 1)
        elif v.ndim == 1:
            v = v[:, None]
        elif v.ndim != 2:
            raise AutodiffError("tensors are 2-D matrices")
        self.values = v
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = tuple(parents)
        self._backward_fn = backward_fn

    @property
    def shape(self):
        return self.values.shape

    def item(self) -> float:
        if self.values.shape != (1, 1):
            raise AutodiffError("item() needs a scalar tensor")
        return float(self.values[0, 0])

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g


def _op(values, parents, backward_fn):
    if any(p.requires_grad for p in parents):
        return Tensor(values, requires_grad=True, parents=parents,
                      backward_fn=backward_fn)
    return Tensor(values)


def backward(loss: Tensor) -> None:
    """Accumulate dloss/dt into t.grad for every requires_grad tensor
    reachable from `loss`. Repeated calls without clearing add up."""
    if loss.shape != (1, 1):
        raise AutodiffError("backward requires a scalar loss")
    topo, seen = [], set()
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
        for p in t._parents:
            stack.append((p, False))
    adj = {id(loss): np.ones((1, 1))}
    for t in reversed(topo):
        g = adj.pop(id(t), None)
        if g is None:
            continue
        if t.requires_grad:
            t._accumulate(g)
        if t._backward_fn is None:
            continue
        for p, pg in zip(t._parents, t._backward_fn(g)):
            if pg is None:
                continue
            if id(p) in adj:
                adj[id(p)] = adj[id(p)] + pg
            else:
                adj[id(p)] = pg


# ---------------------------------------------------------------------------
# Elementwise / linear algebra ops

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise AutodiffError(f"matmul shape mismatch {a.shape} x {b.shape}")
    out = a.values @ b.values

    def back(g):
        return (g @ b.values.T, a.values.T @ g)
    return _op(out, (a, b), back)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; b may be a (1, k) row bias broadcast over rows of a."""
    if a.shape == b.shape:
        def back(g):
            return (g, g)
    elif b.shape == (1, a.shape[1]):
        def back(g):
            return (g, g.sum(axis=0, keepdims=True))
    else:
        raise AutodiffError(f"add shape mismatch {a.shape} + {b.shape}")
    return _op(a.values + b.values, (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise AutodiffError(f"sub shape mismatch {a.shape} - {b.shape}")

    def back(g):
        return (g, -g)
    return _op(a.values - b.values, (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise AutodiffError(f"mul shape mismatch {a.shape} * {b.shape}")

    def back(g):
        return (g * b.values, g * a.values)
    return _op(a.values * b.values, (a, b), back)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def back(g):
        return (g * c,)
    return _op(a.values * c, (a,), back)


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[0] != b.shape[0]:
        raise AutodiffError(f"concat_cols row mismatch {a.shape} | {b.shape}")
    k = a.shape[1]

    def back(g):
        return (g[:, :k], g[:, k:])
    return _op(np.hstack([a.values, b.values]), (a, b), back)


def row_mean(a: Tensor) -> Tensor:
    n = a.shape[0]

    def back(g):
        return (np.repeat(g, n, axis=0) / n,)
    return _op(a.values.mean(axis=0, keepdims=True), (a,), back)


def sum_all(a: Tensor) -> Tensor:
    def back(g):
        return (np.full_like(a.values, g[0, 0]),)
    return _op(np.array([[a.values.sum()]]), (a,), back)


def relu(a: Tensor) -> Tensor:
    # subgradient at 0 taken as 0
    mask = a.values > 0

    def back(g):
        return (g * mask,)
    return _op(np.where(mask, a.values, 0.0), (a,), back)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.values)

    def back(g):
        return (g * s * (1.0 - s),)
    return _op(s, (a,), back)


# ---------------------------------------------------------------------------
# Losses

def bce_with_logits(logits: Tensor, targets, node_mask) -> Tensor:
    """Mean binary cross-entropy over masked nodes, in the stable
    max(z,0) - z*y + log(1 + exp(-|z|)) form."""
    node_mask = np.asarray(node_mask, dtype=bool)
    m = int(np.count_nonzero(node_mask))
    if m == 0:
        raise AutodiffError("bce_with_logits: empty node mask")
    if logits.shape[1] != 1:
        raise AutodiffError("bce_with_logits expects n x 1 logits")
    z = logits.values[node_mask, 0]
    y = np.asarray(targets, dtype=np.float64)[node_mask]
    loss = np.mean(np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z))))

    def back(g):
        dz = (_sigmoid(z) - y) * (g[0, 0] / m)
        full = np.zeros_like(logits.values)
        full[node_mask, 0] = dz
        return (full,)
    return _op(np.array([[loss]]), (logits,), back)


def l1_diff(a: Tensor, b: Tensor) -> Tensor:
    """Sum of absolute differences; subgradient 0 at exact ties."""
    if a.shape != b.shape:
        raise AutodiffError(f"l1_diff shape mismatch {a.shape} vs {b.shape}")
    diff = a.values - b.values
    sign = np.sign(diff)

    def back(g):
        return (g[0, 0] * sign, -g[0, 0] * sign)
    return _op(np.array([[np.abs(diff).sum()]]), (a, b), back)


# ---------------------------------------------------------------------------
# Sparse aggregation

def edge_aggregate(h: Tensor, src, dst, coef, self_coef=None,
                   scores: Tensor | None = None, score_idx=None,
                   active=None) -> Tensor:
    """out[v] = sum over directed edges e with dst_e = v of
    coef_e * w_e * h[src_e], plus self_coef[v] * h[v] when self loops are used.
    w_e = sigmoid(scores[score_idx_e]) when a score mask is attached, further
    zeroed where active_e is False. Gradients flow into h and into scores."""
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    coef = np.asarray(coef, dtype=np.float64)
    w = coef.copy()
    sig = None
    if scores is not None:
        score_idx = np.asarray(score_idx, dtype=np.int64)
        sig = _sigmoid(scores.values[score_idx, 0])
        w = w * sig
        if active is not None:
            w = w * np.asarray(active, dtype=np.float64)
    out = np.zeros_like(h.values)
    if len(src):
        np.add.at(out, dst, w[:, None] * h.values[src])
    if self_coef is not None:
        out = out + np.asarray(self_coef)[:, None] * h.values

    parents = (h,) if scores is None else (h, scores)

    def back(g):
        gh = np.zeros_like(h.values)
        if len(src):
            np.add.at(gh, src, w[:, None] * g[dst])
        if self_coef is not None:
            gh += np.asarray(self_coef)[:, None] * g
        if scores is None:
            return (gh,)
        gs = np.zeros_like(scores.values)
        if len(src):
            dw = np.einsum("ek,ek->e", g[dst], h.values[src])
            act = np.ones_like(coef) if active is None \
                else np.asarray(active, dtype=np.float64)
            ds = dw * coef * act * sig * (1.0 - sig)
            np.add.at(gs[:, 0], score_idx, ds)
        return (gh, gs)
    return _op(out, parents, back)


# ---------------------------------------------------------------------------
# Edge score mask

SATURATING_SCORE = 50.0
DEFAULT_INIT_SCORE = math.log(0.95 / 0.05)   # sigmoid ~= 0.95


class ScoreMatrix:
    """One learnable score per edge of a host graph. The masked adjacency
    multiplies each edge coefficient by sigmoid(score); `active` carries the
    binarized presence state used during score refinement."""

    def __init__(self, graph, init_score: float = DEFAULT_INIT_SCORE):
        self.host = graph
        self.edge_index = {e: i for i, e in enumerate(graph.edges)}
        m = len(graph.edges)
        self.scores = Tensor(np.full((m, 1), float(init_score)),
                             requires_grad=True)
        self.active = np.ones(m, dtype=bool)

    def rebinarize(self, threshold: float) -> None:
        self.active = _sigmoid(self.scores.values[:, 0]) > threshold

    def score_of(self, u: int, v: int) -> float:
        return float(self.scores.values[self.edge_index[(min(u, v), max(u, v))], 0])


# ---------------------------------------------------------------------------
# Optimizers

class SGD:
    def __init__(self, learning_rate: float):
        if learning_rate <= 0:
            raise AutodiffError("learning_rate must be positive")
        self.learning_rate = float(learning_rate)

    def step(self, params) -> None:
        for p in params:
            if p.grad is not None:
                p.values -= self.learning_rate * p.grad
                p.grad = None


class Adam:
    def __init__(self, learning_rate: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if learning_rate <= 0:
            raise AutodiffError("learning_rate must be positive")
        self.learning_rate = float(learning_rate)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self._state: dict[int, dict] = {}

    def step(self, params) -> None:
        for p in params:
            if p.grad is None:
                continue
            st = self._state.get(id(p))
            if st is None:
                st = {"ref": p, "m": np.zeros_like(p.values),
                      "v": np.zeros_like(p.values), "t": 0}
                self._state[id(p)] = st
            st["t"] += 1
            st["m"] = self.beta1 * st["m"] + (1 - self.beta1) * p.grad
            st["v"] = self.beta2 * st["v"] + (1 - self.beta2) * p.grad ** 2
            mhat = st["m"] / (1 - self.beta1 ** st["t"])
            vhat = st["v"] / (1 - self.beta2 ** st["t"])
            p.values -= self.learning_rate * mhat / (np.sqrt(vhat) + self.eps)
            p.grad = None
