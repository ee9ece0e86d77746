"""Multi-dimensional feature discriminator.

The discriminator is an autoencoder over the patient vector whose encoder is
the semantic projection ``R^C -> R^M``.  Feature influence on each semantic
axis is measured by ablating one feature at a time and taking the absolute
change of the projection; the most influential features per axis become that
axis's activated set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError


class PerturbationMethod(str, Enum):
    ZERO_OUT = "zero_out"
    HALVE = "halve"
    SET_TO_ONE = "set_to_one"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            names = ", ".join(m.value for m in cls)
            raise ContractError(f"unknown perturbation method {value!r} (expected {names})") from None


@dataclass
class Discriminator:
    params: T.ParameterSet
    C: int
    M: int
    hidden: int | None
    activation: str = "tanh"
    prefix: str = "sd/"

    def p(self, name):
        return self.params[self.prefix + name]

    @property
    def linear(self):
        return self.hidden is None

    def project(self, x):
        x = T.as_tensor(x)
        if x.data.ndim == 1:
            x = T.reshape(x, (1, -1))
        if x.shape[1] != self.C:
            raise ShapeError(f"project: expected width {self.C}, got shape {x.shape}")
        if self.linear:
            return T.add_bias(x @ self.p("enc_w"), self.p("enc_b"))
        act = T.activation(self.activation)
        h = act(T.add_bias(x @ self.p("enc_w1"), self.p("enc_b1")))
        return T.add_bias(h @ self.p("enc_w2"), self.p("enc_b2"))

    def decode(self, s):
        if self.linear:
            return T.add_bias(s @ self.p("dec_w"), self.p("dec_b"))
        act = T.activation(self.activation)
        h = act(T.add_bias(s @ self.p("dec_w1"), self.p("dec_b1")))
        return T.add_bias(h @ self.p("dec_w2"), self.p("dec_b2"))

    def semantic_weight(self):
        """The M x (input width) map whose rows define the semantic axes."""
        return T.transpose(self.p("enc_w") if self.linear else self.p("enc_w2"))

    def weight_tensors(self):
        names = ("enc_w", "dec_w") if self.linear else ("enc_w1", "enc_w2", "dec_w1", "dec_w2")
        return [self.p(n) for n in names]

    def project_np(self, X):
        """Tape-free forward pass on a plain ``(n, C)`` array."""
        if self.linear:
            return X @ self.p("enc_w").data + self.p("enc_b").data
        act = _NP_ACT[self.activation]
        h = act(X @ self.p("enc_w1").data + self.p("enc_b1").data)
        return h @ self.p("enc_w2").data + self.p("enc_b2").data


_NP_ACT = {
    "tanh": np.tanh,
    "identity": lambda v: v,
    "relu": lambda v: np.maximum(v, 0.0),
    "elu": lambda v: np.where(v > 0, v, np.expm1(np.minimum(v, 0.0))),
    "sigmoid": lambda v: 0.5 * (1.0 + np.tanh(0.5 * v)),
    "leaky_relu": lambda v: np.where(v > 0, v, 0.2 * v),
}


def create_discriminator(C, M, rng, params=None, hidden="auto", activation="tanh"):
    """Build a discriminator; ``hidden=None`` gives a single linear layer."""
    if hidden == "auto":
        hidden = C
    params = T.ParameterSet() if params is None else params
    d = Discriminator(params, C, M, hidden, activation)
    pre = d.prefix
    if hidden is None:
        params.glorot(pre + "enc_w", (C, M), rng)
        params.zeros(pre + "enc_b", (1, M))
        params.glorot(pre + "dec_w", (M, C), rng)
        params.zeros(pre + "dec_b", (1, C))
    else:
        params.glorot(pre + "enc_w1", (C, hidden), rng)
        params.zeros(pre + "enc_b1", (1, hidden))
        params.glorot(pre + "enc_w2", (hidden, M), rng)
        params.zeros(pre + "enc_b2", (1, M))
        params.glorot(pre + "dec_w1", (M, hidden), rng)
        params.zeros(pre + "dec_b1", (1, hidden))
        params.glorot(pre + "dec_w2", (hidden, C), rng)
        params.zeros(pre + "dec_b2", (1, C))
    return d


def project(x, d):
    return d.project(x)


def _ablate(values, method):
    method = PerturbationMethod.parse(method)
    if method is PerturbationMethod.ZERO_OUT:
        return np.zeros_like(values)
    if method is PerturbationMethod.HALVE:
        return values / 2.0
    return np.ones_like(values)


def perturb(x, i, method=PerturbationMethod.ZERO_OUT):
    """Copy of ``x`` with feature ``i`` ablated."""
    x = np.asarray(x, dtype=np.float64)
    if not 0 <= i < x.shape[-1]:
        raise IndexError(f"feature index {i} out of range for width {x.shape[-1]}")
    out = x.copy()
    out[..., i] = _ablate(x[..., i], method)
    return out


@dataclass
class InfluenceMatrix:
    scores: np.ndarray  # (M, C), non-negative
    patient_id: str = ""


def influence_scores_batch(X, d, method=PerturbationMethod.ZERO_OUT):
    """Influence of every feature on every semantic axis, for many patients.

    ``X`` is ``(N, C)``; returns ``(N, M, C)`` with entry ``[p, m, i]`` equal to
    the absolute change of projection ``m`` when feature ``i`` of patient ``p``
    is ablated.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    n, c = X.shape
    if c != d.C:
        raise ShapeError(f"influence_scores: expected width {d.C}, got {c}")
    pert = np.repeat(X[:, None, :], c, axis=1)
    diag = np.arange(c)
    pert[:, diag, diag] = _ablate(X, method)
    base = d.project_np(X)
    moved = d.project_np(pert.reshape(n * c, c)).reshape(n, c, d.M)
    return np.abs(base[:, None, :] - moved).transpose(0, 2, 1)


def influence_scores(x, d, method=PerturbationMethod.ZERO_OUT, patient_id=""):
    values = x.values if hasattr(x, "values") else x
    return InfluenceMatrix(influence_scores_batch(values, d, method)[0], patient_id)


def activated_count(C, paf):
    if not 0.0 < paf <= 1.0:
        raise ContractError(f"paf must lie in (0, 1], got {paf}")
    # round away representation noise such as 0.07 * 100 = 7.000000000000001
    return min(C, max(2, math.ceil(round(paf * C, 9))))


@dataclass
class ActivationSet:
    indices: np.ndarray  # (M, n) sorted ascending per row
    paf: float

    def __getitem__(self, m):
        return self.indices[m]

    def __len__(self):
        return self.indices.shape[0]


def top_indices(scores, n):
    """Row-wise top-``n`` indices (ties to the lower index), sorted ascending."""
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, axis=-1, kind="stable")[..., :n]
    return np.sort(order, axis=-1)


def select_activated(scores, paf):
    s = scores.scores if isinstance(scores, InfluenceMatrix) else np.asarray(scores)
    n = activated_count(s.shape[-1], paf)
    return ActivationSet(top_indices(s, n), paf)


def orthogonality_penalty(d):
    w = d.semantic_weight()
    gram = w @ T.transpose(w)
    return T.sq_sum(gram - np.eye(gram.shape[0]))


def sd_loss(x, d, lambda_l1=1e-4, lambda_l2=1e-4, lambda_orth=1e-3):
    """Reconstruction MSE plus L1, squared-L2 and orthogonality regularisers."""
    x = T.as_tensor(x)
    if x.data.ndim == 1:
        x = T.reshape(x, (1, -1))
    recon = T.mse(d.decode(d.project(x)), x)
    total = recon
    weights = d.weight_tensors()
    if lambda_l1:
        total = total + T.scale(_sum(T.abs_sum(w) for w in weights), lambda_l1)
    if lambda_l2:
        total = total + T.scale(_sum(T.sq_sum(w) for w in weights), lambda_l2)
    if lambda_orth:
        total = total + T.scale(orthogonality_penalty(d), lambda_orth)
    return total


def _sum(terms):
    terms = list(terms)
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out
