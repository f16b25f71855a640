"""Graph data model: ingestion, splits, edge edits, counterfactual views, synthesis.

Graphs are immutable values. Every operation returns a new Graph that shares
the untouched arrays with its input, so views are cheap and safe to hand to
concurrent experiment runs.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from enum import Enum

import numpy as np


class GraphError(ValueError):
    pass


class EditKind(Enum):
    DELETE = "delete"
    ADD = "add"


@dataclass(frozen=True)
class EdgeEdit:
    """A single edge addition or deletion on an undirected edge set."""

    kind: EditKind
    u: int
    v: int

    def __post_init__(self):
        if self.u == self.v:
            raise GraphError(f"self-loop edit on node {self.u}")
        if self.u > self.v:
            u, v = self.v, self.u
            object.__setattr__(self, "u", u)
            object.__setattr__(self, "v", v)

    @staticmethod
    def add(u: int, v: int) -> "EdgeEdit":
        return EdgeEdit(EditKind.ADD, u, v)

    @staticmethod
    def delete(u: int, v: int) -> "EdgeEdit":
        return EdgeEdit(EditKind.DELETE, u, v)

    @property
    def endpoints(self) -> tuple[int, int]:
        return (self.u, self.v)

    @property
    def sort_key(self) -> tuple[int, int, int]:
        # Delete orders before Add; used for deterministic tie-breaking.
        return (0 if self.kind is EditKind.DELETE else 1, self.u, self.v)

    def inverse(self) -> "EdgeEdit":
        kind = EditKind.ADD if self.kind is EditKind.DELETE else EditKind.DELETE
        return EdgeEdit(kind, self.u, self.v)


@dataclass(frozen=True)
class Graph:
    """Undirected graph with node features, a binary sensitive attribute and
    binary labels. Edges are stored once as (u, v) with u < v."""

    features: np.ndarray          # (n, d) float64
    edges: tuple                  # sorted tuple of (u, v), u < v
    sensitive: np.ndarray         # (n,) in {0, 1}
    labels: np.ndarray            # (n,) in {0, 1}
    sensitive_col: int            # column of `features` holding the sensitive attribute
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray

    @staticmethod
    def build(features, edges, sensitive, labels, sensitive_col,
              train_mask=None, val_mask=None, test_mask=None) -> "Graph":
        features = np.asarray(features, dtype=np.float64)
        sensitive = np.asarray(sensitive, dtype=np.int64)
        labels = np.asarray(labels, dtype=np.int64)
        n = features.shape[0]

        def _mask(m):
            if m is None:
                return np.zeros(n, dtype=bool)
            return np.asarray(m, dtype=bool)

        edges = tuple(sorted((min(u, v), max(u, v)) for u, v in edges))
        g = Graph(features, edges, sensitive, labels, int(sensitive_col),
                  _mask(train_mask), _mask(val_mask), _mask(test_mask))
        g.validate()
        return g

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def edge_set(self) -> frozenset:
        es = self.__dict__.get("_edge_set")
        if es is None:
            es = frozenset(self.edges)
            object.__setattr__(self, "_edge_set", es)
        return es

    def edge_array(self) -> np.ndarray:
        if self.edges:
            return np.array(self.edges, dtype=np.int64)
        return np.zeros((0, 2), dtype=np.int64)

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=np.int64)
        ea = self.edge_array()
        if len(ea):
            deg += np.bincount(ea[:, 0], minlength=self.n)
            deg += np.bincount(ea[:, 1], minlength=self.n)
        return deg

    def replace(self, **kw) -> "Graph":
        return dataclasses.replace(self, **kw)

    def validate(self) -> None:
        n = self.n
        if self.sensitive.shape != (n,) or self.labels.shape != (n,):
            raise GraphError("sensitive/labels length must equal node count")
        if not np.isin(self.sensitive, (0, 1)).all():
            raise GraphError("sensitive attribute must be binary")
        if not np.isin(self.labels, (0, 1)).all():
            raise GraphError("labels must be binary")
        if not (0 <= self.sensitive_col < self.d):
            raise GraphError("sensitive_col out of range")
        seen = set()
        for u, v in self.edges:
            if not (0 <= u < n and 0 <= v < n):
                raise GraphError(f"edge ({u}, {v}) endpoint out of range")
            if u == v:
                raise GraphError(f"self-loop at node {u}")
            if u > v:
                raise GraphError(f"edge ({u}, {v}) not stored with u < v")
            if (u, v) in seen:
                raise GraphError(f"duplicate edge ({u}, {v})")
            seen.add((u, v))
        overlap = (self.train_mask & self.val_mask) | \
                  (self.train_mask & self.test_mask) | \
                  (self.val_mask & self.test_mask)
        if overlap.any():
            raise GraphError("train/val/test masks overlap")


# ---------------------------------------------------------------------------
# Ingestion

def _detect_delimiter(header: str) -> str:
    return "\t" if header.count("\t") >= header.count(",") else ","


def load_node_table(path, sensitive_col: str, label_col: str):
    """Load a delimited node table. Returns (features, sensitive, labels,
    sensitive_index) where sensitive_index locates the sensitive column inside
    the feature matrix (the sensitive column stays in the features; the label
    column is dropped)."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        raise GraphError(f"{path}: empty node table")
    delim = _detect_delimiter(lines[0])
    header = [c.strip() for c in lines[0].split(delim)]
    if sensitive_col not in header:
        raise GraphError(f"missing sensitive column {sensitive_col!r}")
    if label_col not in header:
        raise GraphError(f"missing label column {label_col!r}")
    s_idx = header.index(sensitive_col)
    y_idx = header.index(label_col)
    if s_idx == y_idx:
        raise GraphError("sensitive and label columns must differ")

    rows = []
    for i, ln in enumerate(lines[1:], start=2):
        cells = [c.strip() for c in ln.split(delim)]
        if len(cells) != len(header):
            raise GraphError(f"{path}:{i}: expected {len(header)} cells, got {len(cells)}")
        try:
            rows.append([float(c) for c in cells])
        except ValueError as e:
            raise GraphError(f"{path}:{i}: non-numeric cell") from e
    table = np.array(rows, dtype=np.float64)

    sensitive = table[:, s_idx]
    labels = table[:, y_idx]
    for name, col in (("sensitive", sensitive), ("label", labels)):
        if not np.isin(col, (0.0, 1.0)).all():
            raise GraphError(f"{name} column is not binary")

    keep = [j for j in range(len(header)) if j != y_idx]
    features = table[:, keep]
    sensitive_index = keep.index(s_idx)
    return features, sensitive.astype(np.int64), labels.astype(np.int64), sensitive_index


def load_edge_list(path, n: int) -> tuple:
    """Read an undirected edge list ("u v" per line, '#' comments). Duplicate
    and reversed lines collapse to one edge."""
    edges = set()
    with open(path) as fh:
        for i, ln in enumerate(fh, start=1):
            ln = ln.split("#", 1)[0].strip()
            if not ln:
                continue
            parts = ln.split()
            if len(parts) != 2:
                raise GraphError(f"{path}:{i}: malformed line {ln!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError as e:
                raise GraphError(f"{path}:{i}: malformed line {ln!r}") from e
            if u == v:
                raise GraphError(f"{path}:{i}: self-loop {u}")
            if not (0 <= u < n and 0 <= v < n):
                raise GraphError(f"{path}:{i}: node id out of range")
            edges.add((min(u, v), max(u, v)))
    return tuple(sorted(edges))


def save_edge_list(path, edges) -> None:
    with open(path, "w") as fh:
        for u, v in sorted(edges):
            fh.write(f"{u} {v}\n")


# ---------------------------------------------------------------------------
# Preprocessing

def normalize_features(features: np.ndarray, train_mask: np.ndarray,
                       sensitive_col: int) -> np.ndarray:
    """Z-score every non-sensitive column using training-row statistics.
    Zero-variance columns map to all-zero; the sensitive column is untouched."""
    if int(np.count_nonzero(train_mask)) < 2:
        raise GraphError("normalize_features needs >= 2 training rows")
    out = features.astype(np.float64).copy()
    tr = out[train_mask]
    mean = tr.mean(axis=0)
    std = tr.std(axis=0)
    for j in range(out.shape[1]):
        if j == sensitive_col:
            continue
        if std[j] == 0.0:
            out[:, j] = 0.0
        else:
            out[:, j] = (out[:, j] - mean[j]) / std[j]
    return out


def split(n: int, fractions, labels, seed: int, label_known=None):
    """Label-stratified train/val/test masks, deterministic under seed."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise GraphError("need three positive fractions")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise GraphError("fractions must sum to 1")
    labels = np.asarray(labels)
    if label_known is None:
        label_known = np.ones(n, dtype=bool)
    labeled = np.flatnonzero(label_known)
    rng = np.random.default_rng(seed)

    # global targets by largest remainder
    total = len(labeled)
    quota = [f * total for f in fractions]
    targets = [int(q) for q in quota]
    rem = total - sum(targets)
    order = sorted(range(3), key=lambda i: quota[i] - targets[i], reverse=True)
    for i in order[:rem]:
        targets[i] += 1

    masks = [np.zeros(n, dtype=bool) for _ in range(3)]
    per_class = []
    for c in np.unique(labels[labeled]):
        idx = labeled[labels[labeled] == c]
        if len(idx) < 3:
            raise GraphError(f"label class {c} has fewer nodes than splits")
        idx = rng.permutation(idx)
        q = [f * len(idx) for f in fractions]
        alloc = [int(x) for x in q]
        r = len(idx) - sum(alloc)
        o = sorted(range(3), key=lambda i: q[i] - alloc[i], reverse=True)
        for i in o[:r]:
            alloc[i] += 1
        per_class.append((idx, alloc))

    # rebalance: move single nodes between splits until global sizes match targets
    sizes = [sum(a[i] for _, a in per_class) for i in range(3)]
    while sizes != targets:
        i = next(k for k in range(3) if sizes[k] > targets[k])
        j = next(k for k in range(3) if sizes[k] < targets[k])
        donor = max(per_class, key=lambda ca: ca[1][i])
        donor[1][i] -= 1
        donor[1][j] += 1
        sizes[i] -= 1
        sizes[j] += 1

    for idx, alloc in per_class:
        a, b = alloc[0], alloc[0] + alloc[1]
        masks[0][idx[:a]] = True
        masks[1][idx[a:b]] = True
        masks[2][idx[b:]] = True
    return masks[0], masks[1], masks[2]


# ---------------------------------------------------------------------------
# Edits and views

def apply_edit(graph: Graph, edit: EdgeEdit) -> Graph:
    e = edit.endpoints
    if not (0 <= e[0] < graph.n and 0 <= e[1] < graph.n):
        raise GraphError(f"edit endpoint out of range: {e}")
    present = e in graph.edge_set
    if edit.kind is EditKind.ADD:
        if present:
            raise GraphError(f"Add of existing edge {e}")
        edges = tuple(sorted(graph.edges + (e,)))
    else:
        if not present:
            raise GraphError(f"Delete of missing edge {e}")
        edges = tuple(x for x in graph.edges if x != e)
    return graph.replace(edges=edges)


def flip_sensitive(graph: Graph) -> Graph:
    feats = graph.features.copy()
    feats[:, graph.sensitive_col] = 1 - feats[:, graph.sensitive_col]
    return graph.replace(features=feats, sensitive=1 - graph.sensitive)


def perturb_features(graph: Graph, sigma: float, seed: int) -> Graph:
    if sigma < 0:
        raise GraphError("sigma must be >= 0")
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma, size=graph.features.shape) if sigma > 0 \
        else np.zeros_like(graph.features)
    noise[:, graph.sensitive_col] = 0.0
    return graph.replace(features=graph.features + noise)


def disjoint_union(a: Graph, b: Graph) -> Graph:
    """Stack two graphs into one with no edges between the halves."""
    off = a.n
    edges = a.edges + tuple((u + off, v + off) for u, v in b.edges)
    return Graph.build(
        np.vstack([a.features, b.features]), edges,
        np.concatenate([a.sensitive, b.sensitive]),
        np.concatenate([a.labels, b.labels]),
        a.sensitive_col,
        np.concatenate([a.train_mask, b.train_mask]),
        np.concatenate([a.val_mask, b.val_mask]),
        np.concatenate([a.test_mask, b.test_mask]),
    )


# ---------------------------------------------------------------------------
# Candidate edit generation

@dataclass(frozen=True)
class Exhaustive:
    pass


@dataclass(frozen=True)
class Sampled:
    rho: float     # probability of proposing each absent cross-group pair as an Add
    gamma: float   # probability of proposing each present intra-group edge as a Delete
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.rho <= 1.0 and 0.0 <= self.gamma <= 1.0):
            raise GraphError("rho and gamma must lie in [0, 1]")


def candidate_edits(graph: Graph, policy) -> list[EdgeEdit]:
    if isinstance(policy, Exhaustive):
        eset = graph.edge_set
        out = []
        for u in range(graph.n):
            for v in range(u + 1, graph.n):
                if (u, v) in eset:
                    out.append(EdgeEdit.delete(u, v))
                else:
                    out.append(EdgeEdit.add(u, v))
        return out
    if isinstance(policy, Sampled):
        rng = np.random.default_rng(policy.seed)
        s = graph.sensitive
        out = []
        # deletes over present intra-group edges, in stored edge order
        intra = [(u, v) for u, v in graph.edges if s[u] == s[v]]
        draws = rng.random(len(intra))
        for (u, v), r in zip(intra, draws):
            if r < policy.gamma:
                out.append(EdgeEdit.delete(u, v))
        # adds over absent cross-group pairs, lexicographic pair order
        uu, vv = np.triu_indices(graph.n, k=1)
        cross = s[uu] != s[vv]
        uu, vv = uu[cross], vv[cross]
        eset = graph.edge_set
        absent = np.array([(int(u), int(v)) not in eset for u, v in zip(uu, vv)],
                          dtype=bool) if len(uu) else np.zeros(0, dtype=bool)
        uu, vv = uu[absent], vv[absent]
        draws = rng.random(len(uu))
        for u, v, r in zip(uu, vv, draws):
            if r < policy.rho:
                out.append(EdgeEdit.add(int(u), int(v)))
        out.sort(key=lambda e: (e.u, e.v, e.sort_key[0]))
        return out
    raise GraphError(f"unknown candidate policy {policy!r}")


# ---------------------------------------------------------------------------
# Synthetic biased graphs

@dataclass(frozen=True)
class SyntheticSpec:
    n: int
    homophily: float      # probability an edge is intra-group
    edge_density: float   # expected mean degree
    label_bias: float     # corr strength between sensitive attribute and label
    groups: float = 0.5   # fraction of nodes with s = 1
    seed: int = 0
    n_features: int = 8   # noisy continuous features appended after the sensitive column

    def validate(self):
        for name in ("homophily", "groups", "label_bias"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise GraphError(f"{name} must lie in [0, 1]")
        if self.edge_density <= 0:
            raise GraphError("edge_density must be positive")
        if self.n < 4:
            raise GraphError("need at least 4 nodes")


# mean shift of the noisy synthetic features between the two label classes,
# in units of their (unit) standard deviation
FEATURE_SIGNAL = 0.5


def synth_biased_graph(spec: SyntheticSpec) -> Graph:
    """Two-block stochastic block model with homophily-controlled mixing and a
    label correlated with the sensitive attribute."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = spec.n

    s = np.zeros(n, dtype=np.int64)
    n1 = int(round(spec.groups * n))
    s[rng.permutation(n)[:n1]] = 1

    # y agrees with s with probability (1 + label_bias) / 2
    agree = rng.random(n) < (1.0 + spec.label_bias) / 2.0
    y = np.where(agree, s, 1 - s)

    m = int(round(spec.edge_density * n / 2.0))
    m_intra = int(round(m * spec.homophily))
    m_cross = m - m_intra

    uu, vv = np.triu_indices(n, k=1)
    intra_mask = s[uu] == s[vv]
    intra_pairs = np.flatnonzero(intra_mask)
    cross_pairs = np.flatnonzero(~intra_mask)
    if m_intra > len(intra_pairs) or m_cross > len(cross_pairs):
        raise GraphError("infeasible edge density for this node count")

    pick_i = rng.choice(intra_pairs, size=m_intra, replace=False)
    pick_c = rng.choice(cross_pairs, size=m_cross, replace=False)
    pick = np.concatenate([pick_i, pick_c])
    edges = tuple(sorted(zip(uu[pick].tolist(), vv[pick].tolist())))

    # the appended features carry only a weak label signal drowned in unit
    # noise; the dominant shortcut lives in the sensitive attribute and in the
    # homophilous edge structure
    feats = np.empty((n, 1 + spec.n_features))
    feats[:, 0] = s
    feats[:, 1:] = rng.normal(loc=FEATURE_SIGNAL * y[:, None],
                              size=(n, spec.n_features))
    return Graph.build(feats, edges, s, y, sensitive_col=0)


def with_split(graph: Graph, fractions=(0.5, 0.25, 0.25), seed: int = 0) -> Graph:
    tr, va, te = split(graph.n, fractions, graph.labels, seed)
    return graph.replace(train_mask=tr, val_mask=va, test_mask=te)
