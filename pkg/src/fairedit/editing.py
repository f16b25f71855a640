"""Edge-editing training: exhaustive greedy selection by counterfactual
fairness, and gradient-based selection through a sigmoid edge-score mask."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import models
from .autodiff import ScoreMatrix
from .graph import (EdgeEdit, EditKind, Exhaustive, Graph, GraphError,
                    Sampled, apply_edit, candidate_edits)
from .metrics import counterfactual_unfairness


class CandidateCapExceeded(RuntimeError):
    """Exhaustive enumeration refused: the graph is too large."""


@dataclass
class EditTrainConfig:
    alpha: int = 10                 # edit budget: one edit per epoch for the first alpha epochs
    K: int = 1000                   # total training epochs
    rho: float = 0.01               # cross-group add sampling probability
    gamma: float = 0.05             # intra-group delete sampling probability
    mask_iters: int = 5             # score-refinement iterations
    mask_lr: float = 0.01
    binarize_threshold: float = 0.5
    eval_nodes: str = "train"       # which mask feeds edit selection: "train" | "val"
    seed: int = 0
    candidate_cap: int = 500        # max node count for exhaustive enumeration

    def validate(self) -> None:
        if self.alpha < 0 or self.K < 0 or self.alpha > self.K:
            raise GraphError("need 0 <= alpha <= K")
        if not (0.0 <= self.rho <= 1.0 and 0.0 <= self.gamma <= 1.0):
            raise GraphError("rho and gamma must lie in [0, 1]")
        if not (0.0 < self.binarize_threshold < 1.0):
            raise GraphError("binarize_threshold must lie in (0, 1)")
        if self.mask_iters < 1:
            raise GraphError("mask_iters must be >= 1")
        if self.eval_nodes not in ("train", "val"):
            raise GraphError("eval_nodes must be 'train' or 'val'")


@dataclass
class TraceEntry:
    epoch: int
    edit: EdgeEdit
    score: float


@dataclass
class EditTrace:
    entries: list = field(default_factory=list)
    skipped_epochs: list = field(default_factory=list)
    # measured model-forward counts spent on edit selection, per edit epoch
    selection_forwards: dict = field(default_factory=dict)

    def serialize(self) -> str:
        lines = []
        for e in self.entries:
            lines.append(f"{e.epoch} {e.edit.kind.value} {e.edit.u} {e.edit.v} "
                         f"{e.score!r}")
        return "\n".join(lines)


def _eval_mask(graph: Graph, config: EditTrainConfig):
    return graph.train_mask if config.eval_nodes == "train" else graph.val_mask


# ---------------------------------------------------------------------------
# Brute-force selection

def brute_force_select(params, graph: Graph, candidates, eval_mask):
    """Evaluate counterfactual unfairness of every candidate edit under the
    current parameters; return (edit, score) minimizing it. Ties break by
    (Delete < Add, u, v)."""
    if not candidates:
        raise GraphError("brute_force_select: empty candidate list")
    best = None
    for cand in candidates:
        edited = apply_edit(graph, cand)
        fc = counterfactual_unfairness(params, edited, eval_mask)
        key = (fc, cand.sort_key)
        if best is None or key < best[0]:
            best = (key, cand)
    (score, _), edit = best
    return edit, score


# ---------------------------------------------------------------------------
# Gradient-based (FairEdit) selection

def generate_counterfactual_graph(graph: Graph, rho: float, gamma: float,
                                  seed: int):
    """Sample cross-group additions (prob rho) and intra-group deletions
    (prob gamma); returns the perturbed graph and the applied edit list."""
    edits = candidate_edits(graph, Sampled(rho, gamma, seed))
    g = graph
    for e in edits:
        g = apply_edit(g, e)
    return g, edits


def edge_sensitivity_scores(params, graph: Graph, gstar: Graph, edits,
                            mask_iters: int = 5, mask_lr: float = 0.01,
                            binarize_threshold: float = 0.5):
    """Refine sigmoid edge masks on both graphs to maximize the L1 prediction
    gap between them, then read each edit's importance as the magnitude of the
    last-iteration score gradient: added edges from the perturbed graph's
    mask, deleted edges from the original graph's mask.

    Returns (importance map, number of model forwards spent)."""
    expected = set(graph.edges)
    for e in edits:
        if e.kind is EditKind.ADD:
            if e.endpoints in expected:
                raise GraphError(f"edit list inconsistent with graphs: {e}")
            expected.add(e.endpoints)
        else:
            if e.endpoints not in expected:
                raise GraphError(f"edit list inconsistent with graphs: {e}")
            expected.remove(e.endpoints)
    if expected != set(gstar.edges):
        raise GraphError("edit list does not map the graph onto its perturbation")
    if not edits:
        return {}, 0

    mask_g = ScoreMatrix(graph)
    mask_s = ScoreMatrix(gstar)
    adj_g = models.NormalizedAdjacency(graph)
    adj_s = models.NormalizedAdjacency(gstar)

    # only the masks learn: freeze model parameters for the refinement loop
    tensors = params.parameters()
    flags = [t.requires_grad for t in tensors]
    for t in tensors:
        t.requires_grad = False
    n_forwards = 0
    try:
        grad_g = np.zeros_like(mask_g.scores.values)
        grad_s = np.zeros_like(mask_s.scores.values)
        for _ in range(mask_iters):
            out_g = models.forward(params, graph, mask=mask_g, adj=adj_g)
            out_s = models.forward(params, gstar, mask=mask_s, adj=adj_s)
            n_forwards += 2
            loss = ad.l1_diff(out_g, out_s)
            ad.backward(loss)
            grad_g = mask_g.scores.grad if mask_g.scores.grad is not None \
                else np.zeros_like(grad_g)
            grad_s = mask_s.scores.grad if mask_s.scores.grad is not None \
                else np.zeros_like(grad_s)
            # gradient ascent on the gap, then binarize for the next forward
            mask_g.scores.values += mask_lr * grad_g
            mask_s.scores.values += mask_lr * grad_s
            mask_g.scores.zero_grad()
            mask_s.scores.zero_grad()
            mask_g.rebinarize(binarize_threshold)
            mask_s.rebinarize(binarize_threshold)
    finally:
        for t, f in zip(tensors, flags):
            t.requires_grad = f

    importance = {}
    for e in edits:
        if e.kind is EditKind.ADD:
            idx = mask_s.edge_index[e.endpoints]
            importance[e] = abs(float(grad_s[idx, 0]))
        else:
            idx = mask_g.edge_index[e.endpoints]
            importance[e] = abs(float(grad_g[idx, 0]))
    return importance, n_forwards


def select_edit(scores: dict) -> EdgeEdit:
    """Argmax of importance; ties break by (Delete < Add, u, v)."""
    if not scores:
        raise GraphError("select_edit: empty score map")
    return min(scores, key=lambda e: (-scores[e], e.sort_key))


# ---------------------------------------------------------------------------
# Training loops

def train_bruteforce(params, graph: Graph, optimizer, config: EditTrainConfig):
    """Alg.-style loop: one optimizer step per epoch; during the first alpha
    epochs, exhaustively pick and apply the edit minimizing counterfactual
    unfairness under the current parameters."""
    config.validate()
    if config.alpha > 0 and graph.n > config.candidate_cap:
        raise CandidateCapExceeded(
            f"exhaustive enumeration refused for n={graph.n} > "
            f"candidate_cap={config.candidate_cap}")
    trace = EditTrace()
    g = graph
    adj = models.NormalizedAdjacency(g)
    for k in range(1, config.K + 1):
        start = models.FORWARD_CALLS
        models.train_step(params, g, optimizer, adj=adj)
        if k <= config.alpha:
            cands = candidate_edits(g, Exhaustive())
            edit, score = brute_force_select(params, g, cands, _eval_mask(g, config))
            g = apply_edit(g, edit)
            adj = models.NormalizedAdjacency(g)
            trace.entries.append(TraceEntry(k, edit, score))
            trace.selection_forwards[k] = models.FORWARD_CALLS - start
    return params, g, trace


def train_fairedit(params, graph: Graph, optimizer, config: EditTrainConfig):
    """Gradient-approximated editing: per edit epoch, sample a counterfactual
    graph, score the sampled edits through the sigmoid mask, and apply the
    highest-importance edit."""
    config.validate()
    trace = EditTrace()
    g = graph
    adj = models.NormalizedAdjacency(g)
    for k in range(1, config.K + 1):
        models.train_step(params, g, optimizer, adj=adj)
        if k <= config.alpha:
            epoch_seed = config.seed * 1_000_003 + k
            gstar, edits = generate_counterfactual_graph(
                g, config.rho, config.gamma, epoch_seed)
            if not edits:
                trace.skipped_epochs.append(k)
                continue
            scores, n_fwd = edge_sensitivity_scores(
                params, g, gstar, edits,
                mask_iters=config.mask_iters, mask_lr=config.mask_lr,
                binarize_threshold=config.binarize_threshold)
            edit = select_edit(scores)
            g = apply_edit(g, edit)
            adj = models.NormalizedAdjacency(g)
            trace.entries.append(TraceEntry(k, edit, scores[edit]))
            trace.selection_forwards[k] = n_fwd
    return params, g, trace
