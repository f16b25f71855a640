"""Predictive and fairness evaluation: F1, counterfactual unfairness,
instability, statistical parity gap and equal opportunity gap."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import models
from .graph import Graph, disjoint_union, flip_sensitive, perturb_features


class MetricUndefinedError(ValueError):
    """A group-conditional probability has an empty conditioning set."""


def _masked(arr, mask):
    return np.asarray(arr)[np.asarray(mask, dtype=bool)]


def f1_score(pred, truth, mask) -> float:
    """TP / (TP + (FP + FN) / 2); 0 when there are no positives anywhere."""
    if not np.asarray(mask, dtype=bool).any():
        raise MetricUndefinedError("f1_score: empty mask")
    p = _masked(pred, mask)
    t = _masked(truth, mask)
    tp = float(np.sum((p == 1) & (t == 1)))
    fp = float(np.sum((p == 1) & (t == 0)))
    fn = float(np.sum((p == 0) & (t == 1)))
    denom = tp + (fp + fn) / 2.0
    if denom == 0.0:
        return 0.0
    return tp / denom


def delta_sp(pred, sensitive, mask) -> float:
    """|Pr(pred=1 | s=1) - Pr(pred=1 | s=0)| over masked nodes."""
    p = _masked(pred, mask)
    s = _masked(sensitive, mask)
    g1, g0 = p[s == 1], p[s == 0]
    if len(g1) == 0 or len(g0) == 0:
        raise MetricUndefinedError("delta_sp: a sensitive group is empty in the mask")
    return abs(float(np.mean(g1 == 1)) - float(np.mean(g0 == 1)))


def delta_eo(pred, truth, sensitive, mask) -> float:
    """|Pr(pred=1 | y=1, s=1) - Pr(pred=1 | y=1, s=0)| over masked nodes."""
    p = _masked(pred, mask)
    t = _masked(truth, mask)
    s = _masked(sensitive, mask)
    g1 = p[(s == 1) & (t == 1)]
    g0 = p[(s == 0) & (t == 1)]
    if len(g1) == 0 or len(g0) == 0:
        raise MetricUndefinedError(
            "delta_eo: a sensitive group has no positive-class nodes in the mask")
    return abs(float(np.mean(g1 == 1)) - float(np.mean(g0 == 1)))


def counterfactual_unfairness(params, graph: Graph, mask) -> float:
    """Fraction of masked nodes whose predicted label changes when every
    node's sensitive attribute is flipped.

    Runs the model once on the disjoint union of the graph and its flipped
    twin, so each evaluation costs a single forward pass."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise MetricUndefinedError("counterfactual_unfairness: empty mask")
    union = disjoint_union(graph, flip_sensitive(graph))
    pred = models.predict(models.forward(params, union))
    n = graph.n
    return float(np.mean(pred[:n][mask] != pred[n:][mask]))


def instability(params, graph: Graph, mask, sigma: float = 0.1,
                seed: int = 0) -> float:
    """Fraction of masked nodes whose predicted label changes under Gaussian
    feature noise of std sigma."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise MetricUndefinedError("instability: empty mask")
    base = models.predict(models.forward(params, graph))
    noisy = models.predict(models.forward(params, perturb_features(graph, sigma, seed)))
    return float(np.mean(base[mask] != noisy[mask]))


@dataclass
class FairnessReport:
    f1: float
    unfairness: float
    instability: float
    delta_sp: float
    delta_eo: float
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "f1": self.f1,
            "unfairness": self.unfairness,
            "instability": self.instability,
            "delta_sp": self.delta_sp,
            "delta_eo": self.delta_eo,
            "metadata": dict(self.metadata),
        }

    METRIC_ORDER = ("f1", "unfairness", "instability", "delta_sp", "delta_eo")

    def row(self) -> list[float]:
        return [self.f1, self.unfairness, self.instability,
                self.delta_sp, self.delta_eo]


def evaluate(params, graph: Graph, sigma: float = 0.1, seed: int = 0,
             metadata: dict | None = None) -> FairnessReport:
    """All five metrics on the test mask."""
    mask = graph.test_mask
    pred = models.predict(models.forward(params, graph))
    report = FairnessReport(
        f1=f1_score(pred, graph.labels, mask),
        unfairness=counterfactual_unfairness(params, graph, mask),
        instability=instability(params, graph, mask, sigma=sigma, seed=seed),
        delta_sp=delta_sp(pred, graph.sensitive, mask),
        delta_eo=delta_eo(pred, graph.labels, graph.sensitive, mask),
        metadata={"seed": seed, "sigma": sigma, "nodes": "test",
                  "n_eval": int(mask.sum())},
    )
    if metadata:
        report.metadata.update(metadata)
    return report
