"""Activation-graph construction: one sparse weighted graph per semantic axis.

Every graph has the same ``C`` nodes (the feature dimensions).  Only activated
features receive edges: each is linked to its ``k`` nearest activated
neighbours by absolute difference of feature value, and the directed k-NN
relation is symmetrised by union.  Edge weight is the mean influence of the
two endpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ContractError, DegenerateError, ShapeError
from .mdfd import ActivationSet, InfluenceMatrix

EDGE_WEIGHT_FLOOR = 1e-6


def edge_weight(ci, cj):
    """Average influence of two endpoints, floored so no edge has zero mass."""
    w = np.maximum(0.5 * (np.asarray(ci, dtype=np.float64) + np.asarray(cj, dtype=np.float64)), EDGE_WEIGHT_FLOOR)
    return float(w) if w.ndim == 0 else w


@dataclass
class ActivationGraph:
    m: int
    node_count: int
    edges: np.ndarray  # (E, 2) directed pairs (i, j), both directions present
    weights: np.ndarray  # (E,)
    activated: np.ndarray
    node_features: np.ndarray  # (C, 2): [x_i, C_m(i)]

    def edge_list(self):
        return [(int(i), int(j), float(w)) for (i, j), w in zip(self.edges, self.weights)]

    def adjacency(self):
        a = np.zeros((self.node_count, self.node_count))
        a[self.edges[:, 0], self.edges[:, 1]] = self.weights
        return a


@dataclass
class GraphStack:
    patient_id: str
    graphs: list = field(default_factory=list)

    @property
    def M(self):
        return len(self.graphs)

    @property
    def node_count(self):
        return self.graphs[0].node_count if self.graphs else 0


def knn_edges(X, activated, scores, k):
    """Vectorised construction for many graphs at once.

    Parameters
    ----------
    X : (N, C) feature values.
    activated : (N, G, n) sorted activated indices, one row per graph.
    scores : (N, G, C) influence rows; weights use these.
    k : neighbours per activated node before symmetrisation.

    Returns
    -------
    graph, i, j, w : flat arrays of directed edges, graph id ``p*G + g``,
    sorted by (graph, i, j).  Both directions of each undirected edge appear.
    """
    X = np.asarray(X, dtype=np.float64)
    N, C = X.shape
    activated = np.asarray(activated, dtype=np.int64)
    _, G, n = activated.shape
    if n < 2:
        raise DegenerateError(f"activated set of size {n}; at least 2 are needed for an edge")
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    B = N * G
    vals = np.take_along_axis(np.broadcast_to(X[:, None, :], (N, G, C)), activated, axis=2)
    pos = kernels.knn_positions(vals.reshape(B, n), k)  # (B, n, kk)
    kk = pos.shape[2]
    act = activated.reshape(B, n)
    gid = np.repeat(np.arange(B), n * kk)
    src = np.repeat(act, kk, axis=1).reshape(-1)
    nbr = np.take_along_axis(act, pos.reshape(B, n * kk), axis=1).reshape(-1)
    keys = np.concatenate([(gid * C + src) * C + nbr, (gid * C + nbr) * C + src])
    keys = np.unique(keys)
    g_out, rest = np.divmod(keys, C * C)
    i_out, j_out = np.divmod(rest, C)
    s = np.asarray(scores, dtype=np.float64).reshape(B, C)
    w = edge_weight(s[g_out, i_out], s[g_out, j_out])
    return g_out, i_out, j_out, np.atleast_1d(w)


def build_activation_graph(x, activated, scores_row, k, m=0):
    x = np.asarray(getattr(x, "values", x), dtype=np.float64).reshape(-1)
    activated = np.asarray(activated, dtype=np.int64).reshape(-1)
    scores_row = np.asarray(scores_row, dtype=np.float64).reshape(-1)
    C = x.size
    if scores_row.size != C:
        raise ShapeError(f"scores row of width {scores_row.size} for {C} features")
    if activated.size < 2:
        raise DegenerateError(f"dimension {m}: activated set of size {activated.size}")
    if (activated < 0).any() or (activated >= C).any():
        raise ContractError(f"dimension {m}: activated index out of range")
    activated = np.sort(activated)
    _, i, j, w = knn_edges(x[None, :], activated[None, None, :], scores_row[None, None, :], k)
    return ActivationGraph(
        m=m,
        node_count=C,
        edges=np.stack([i, j], axis=1),
        weights=w,
        activated=activated,
        node_features=np.stack([x, scores_row], axis=1),
    )


def build_graph_stack(x, activation_set, scores, k, patient_id=""):
    S = scores.scores if isinstance(scores, InfluenceMatrix) else np.asarray(scores)
    A = activation_set.indices if isinstance(activation_set, ActivationSet) else np.asarray(activation_set)
    if S.shape[0] != A.shape[0]:
        raise ShapeError(f"{A.shape[0]} activated sets for {S.shape[0]} score rows")
    graphs = [build_activation_graph(x, A[m], S[m], k, m=m) for m in range(S.shape[0])]
    return GraphStack(patient_id or getattr(x, "patient_id", ""), graphs)


def complete_edges(activated, scores):
    """All ordered pairs among each graph's activated nodes (the w/o-MAGCS graph)."""
    activated = np.asarray(activated, dtype=np.int64)
    N, G, n = activated.shape
    C = np.asarray(scores).shape[-1]
    B = N * G
    act = activated.reshape(B, n)
    a, b = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    off = a != b
    i = act[:, a[off]].reshape(-1)
    j = act[:, b[off]].reshape(-1)
    g = np.repeat(np.arange(B), off.sum())
    keys = np.unique((g * C + i) * C + j)
    g, rest = np.divmod(keys, C * C)
    i, j = np.divmod(rest, C)
    s = np.asarray(scores, dtype=np.float64).reshape(B, C)
    return g, i, j, np.atleast_1d(edge_weight(s[g, i], s[g, j]))
