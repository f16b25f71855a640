"""GCN, GraphSAGE and APPNP forward passes plus one optimizer training step.

Forward passes are pure functions of (params, graph[, mask]). A module-level
counter tracks how many model forwards have run, which the editing algorithms
use to assert their per-epoch evaluation budgets.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ScoreMatrix, Tensor
from .graph import Graph, GraphError

ARCHITECTURES = ("gcn", "sage", "appnp")

FORWARD_CALLS = 0


def reset_forward_calls() -> int:
    global FORWARD_CALLS
    old = FORWARD_CALLS
    FORWARD_CALLS = 0
    return old


def _count_forward():
    global FORWARD_CALLS
    FORWARD_CALLS += 1


class NormalizedAdjacency:
    """Per-edge coefficients of the self-loop-augmented, symmetrically
    normalized adjacency D^-1/2 (A + I) D^-1/2, stored as directed arrays
    (each undirected edge appears in both directions)."""

    def __init__(self, graph: Graph):
        self.host = graph
        deg = graph.degrees()
        ea = graph.edge_array()
        u, v = ea[:, 0], ea[:, 1]
        c = 1.0 / np.sqrt((deg[u] + 1.0) * (deg[v] + 1.0))
        self.src = np.concatenate([u, v])
        self.dst = np.concatenate([v, u])
        self.coef = np.concatenate([c, c])
        self.self_coef = 1.0 / (deg + 1.0)
        self.deg = deg
        m = len(ea)
        self.score_idx = np.concatenate([np.arange(m), np.arange(m)])
        # neighbor-mean coefficients (no self loop): 1 / deg(dst)
        safe = np.maximum(deg, 1)
        self.mean_coef = 1.0 / safe[self.dst].astype(np.float64)


def normalize_adjacency(graph: Graph) -> NormalizedAdjacency:
    return NormalizedAdjacency(graph)


@dataclass
class ModelParams:
    architecture: str
    weights: list
    biases: list
    tau: float = 0.1          # APPNP teleport probability
    power_iters: int = 10     # APPNP propagation steps

    def parameters(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self) -> "ModelParams":
        ws = [Tensor(w.values.copy(), requires_grad=True) for w in self.weights]
        bs = [Tensor(b.values.copy(), requires_grad=True) for b in self.biases]
        return ModelParams(self.architecture, ws, bs, self.tau, self.power_iters)


def init_params(architecture: str, in_dim: int, hidden: int, depth: int,
                seed: int, tau: float = 0.1, power_iters: int = 10) -> ModelParams:
    """Glorot-uniform initialization, deterministic under seed."""
    if architecture not in ARCHITECTURES:
        raise GraphError(f"unknown architecture {architecture!r}")
    if depth < 1:
        raise GraphError("depth must be >= 1")
    if not (0.0 < tau < 1.0) and architecture == "appnp":
        if tau != 1.0:  # tau = 1 allowed as the no-propagation edge case
            raise GraphError("tau must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    dims = [in_dim] + [hidden] * (depth - 1) + [1]
    weights, biases = [], []
    for i in range(depth):
        fan_in = dims[i] * (2 if architecture == "sage" else 1)
        fan_out = dims[i + 1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        weights.append(Tensor(w, requires_grad=True))
        biases.append(Tensor(np.zeros((1, fan_out)), requires_grad=True))
    return ModelParams(architecture, weights, biases, tau, power_iters)


def _mask_kwargs(adj: NormalizedAdjacency, mask: ScoreMatrix | None) -> dict:
    if mask is None:
        return {}
    if mask.host is not adj.host and mask.host.edges != adj.host.edges:
        raise GraphError("score mask host does not match the adjacency's graph")
    return {
        "scores": mask.scores,
        "score_idx": adj.score_idx,
        "active": mask.active[adj.score_idx] if len(adj.score_idx) else None,
    }


def gcn_forward(params: ModelParams, graph: Graph,
                mask: ScoreMatrix | None = None,
                adj: NormalizedAdjacency | None = None) -> Tensor:
    _count_forward()
    if adj is None:
        adj = NormalizedAdjacency(graph)
    mk = _mask_kwargs(adj, mask)
    h = Tensor(graph.features)
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = ad.edge_aggregate(h, adj.src, adj.dst, adj.coef,
                              self_coef=adj.self_coef, **mk)
        h = ad.add(ad.matmul(h, w), b)
        if i < last:
            h = ad.relu(h)
    return h


def sage_forward(params: ModelParams, graph: Graph,
                 mask: ScoreMatrix | None = None,
                 adj: NormalizedAdjacency | None = None) -> Tensor:
    _count_forward()
    if adj is None:
        adj = NormalizedAdjacency(graph)
    mk = _mask_kwargs(adj, mask)
    h = Tensor(graph.features)
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        nb = ad.edge_aggregate(h, adj.src, adj.dst, adj.mean_coef,
                               self_coef=None, **mk)
        h = ad.add(ad.matmul(ad.concat_cols(h, nb), w), b)
        if i < last:
            h = ad.relu(h)
    return h


def appnp_forward(params: ModelParams, graph: Graph,
                  mask: ScoreMatrix | None = None,
                  adj: NormalizedAdjacency | None = None) -> Tensor:
    _count_forward()
    if adj is None:
        adj = NormalizedAdjacency(graph)
    mk = _mask_kwargs(adj, mask)
    h = Tensor(graph.features)
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = ad.add(ad.matmul(h, w), b)
        if i < last:
            h = ad.relu(h)
    z = h0 = h
    for _ in range(params.power_iters):
        prop = ad.edge_aggregate(z, adj.src, adj.dst, adj.coef,
                                 self_coef=adj.self_coef, **mk)
        z = ad.add(ad.scale(prop, 1.0 - params.tau), ad.scale(h0, params.tau))
    return z


_FORWARDS = {"gcn": gcn_forward, "sage": sage_forward, "appnp": appnp_forward}


def forward(params: ModelParams, graph: Graph,
            mask: ScoreMatrix | None = None,
            adj: NormalizedAdjacency | None = None) -> Tensor:
    return _FORWARDS[params.architecture](params, graph, mask=mask, adj=adj)


def predict(logits) -> np.ndarray:
    """Label 1 iff logit > 0; an exact zero maps to label 0."""
    vals = logits.values if isinstance(logits, Tensor) else np.asarray(logits)
    return (vals[:, 0] > 0).astype(np.int64)


def train_step(params: ModelParams, graph: Graph, optimizer,
               adj: NormalizedAdjacency | None = None) -> float:
    """One forward, BCE on training nodes, backward, optimizer step.
    Returns the pre-step loss."""
    if not graph.train_mask.any():
        raise GraphError("train_step: empty training mask")
    logits = forward(params, graph, adj=adj)
    loss = ad.bce_with_logits(logits, graph.labels, graph.train_mask)
    value = loss.item()
    ad.backward(loss)
    optimizer.step(params.parameters())
    return value


def train(params: ModelParams, graph: Graph, optimizer, epochs: int) -> list[float]:
    """Plain training loop: `epochs` optimizer steps, no graph editing."""
    adj = NormalizedAdjacency(graph)
    return [train_step(params, graph, optimizer, adj=adj) for _ in range(epochs)]
