"""Population graph over patients and GCN classification, run transductively."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, DegenerateError, ShapeError


@dataclass
class CohortGraph:
    features: np.ndarray  # (N, F)
    adjacency: np.ndarray  # (N, N) symmetric 0/1, zero diagonal
    train_mask: np.ndarray
    test_mask: np.ndarray
    labels: np.ndarray  # -1 marks an unlabelled node

    def __post_init__(self):
        if np.intersect1d(self.train_mask, self.test_mask).size:
            raise ContractError("train and test masks overlap")
        if (self.labels[self.train_mask] < 0).any():
            raise ContractError("a training node has no label")


def cosine_knn_adjacency(F, k_global):
    """Union-symmetrised k-NN graph under cosine similarity.

    Ties are broken towards the lower patient index.  Zero vectors have zero
    similarity to everything.
    """
    F = np.asarray(F, dtype=np.float64)
    N = F.shape[0]
    if N < 2:
        raise DegenerateError(f"cohort of {N} patient(s); at least 2 are needed")
    if k_global < 1:
        raise ContractError(f"k_global must be >= 1, got {k_global}")
    norms = np.linalg.norm(F, axis=1, keepdims=True)
    unit = np.divide(F, norms, out=np.zeros_like(F), where=norms > 0)
    sim = unit @ unit.T
    np.fill_diagonal(sim, -np.inf)
    kk = min(k_global, N - 1)
    nbr = np.argsort(-sim, axis=1, kind="stable")[:, :kk]
    A = np.zeros((N, N))
    A[np.repeat(np.arange(N), kk), nbr.reshape(-1)] = 1.0
    return np.maximum(A, A.T)


def build_cohort_graph(F, k_global=10, labels=None, train_mask=None, test_mask=None):
    F = np.asarray(getattr(F, "data", F), dtype=np.float64)
    N = F.shape[0]
    labels = np.full(N, -1) if labels is None else np.asarray(labels)
    train = np.arange(N) if train_mask is None else np.asarray(train_mask)
    test = np.array([], dtype=np.int64) if test_mask is None else np.asarray(test_mask)
    masked = labels.copy()
    masked[test] = -1
    return CohortGraph(F, cosine_knn_adjacency(F, k_global), train, test, masked)


def normalize_adjacency(A):
    """``D^-1/2 (A + I) D^-1/2`` with ``D`` the degree matrix of ``A + I``."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeError(f"adjacency must be square, got {A.shape}")
    At = A + np.eye(A.shape[0])
    deg = At.sum(axis=1)
    # one square root per pair keeps products such as 1/sqrt(2*2) exact
    return At / np.sqrt(np.outer(deg, deg))


@dataclass
class GcnClassifier:
    params: T.ParameterSet
    gcn_widths: tuple  # (in, h1, h2, ...)
    head_widths: tuple  # (in, hidden, classes)
    activation: str = "elu"
    prefix: str = "cls/"

    @property
    def classes(self):
        return self.head_widths[-1]


def create_classifier(params, rng, in_dim, classes=2, gcn_hidden=(64, 64), head_hidden=32,
                      activation="elu", use_gcn=True):
    gcn_widths = (in_dim,) + tuple(gcn_hidden) if use_gcn else (in_dim,)
    head_widths = (gcn_widths[-1], head_hidden, classes)
    clf = GcnClassifier(params, gcn_widths, head_widths, activation)
    for layer in range(len(gcn_widths) - 1):
        params.glorot(f"{clf.prefix}gcn{layer}", (gcn_widths[layer], gcn_widths[layer + 1]), rng)
    for layer in range(len(head_widths) - 1):
        params.glorot(f"{clf.prefix}mlp_w{layer}", (head_widths[layer], head_widths[layer + 1]), rng)
        params.zeros(f"{clf.prefix}mlp_b{layer}", (1, head_widths[layer + 1]))
    return clf


def gcn_layer(H, A_hat, W, activation="elu"):
    H, W = T.as_tensor(H), T.as_tensor(W)
    A_hat = T.as_tensor(A_hat)
    if A_hat.shape[1] != H.shape[0]:
        raise ShapeError(f"propagation {A_hat.shape} does not match features {H.shape}")
    return T.activation(activation)(A_hat @ (H @ W))


def propagate_cohort(F, A_hat, clf):
    H = F
    for layer in range(len(clf.gcn_widths) - 1):
        H = gcn_layer(H, A_hat, clf.params[f"{clf.prefix}gcn{layer}"], clf.activation)
    return H


def classify(H, clf):
    """MLP head; returns raw logits, one row per patient."""
    H = T.as_tensor(H)
    if H.shape[1] != clf.head_widths[0]:
        raise ShapeError(f"head expects width {clf.head_widths[0]}, got {H.shape[1]}")
    act = T.activation(clf.activation)
    n_layers = len(clf.head_widths) - 1
    for layer in range(n_layers):
        H = T.add_bias(H @ clf.params[f"{clf.prefix}mlp_w{layer}"], clf.params[f"{clf.prefix}mlp_b{layer}"])
        if layer < n_layers - 1:
            H = act(H)
    return H


def cls_loss(labels, logits, train_mask):
    return T.cross_entropy(logits, labels, train_mask)


def predict_proba(logits):
    return T.softmax_np(np.asarray(getattr(logits, "data", logits)))
