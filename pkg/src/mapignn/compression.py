"""Per-modality autoencoders and patient-vector assembly."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, IncompleteSampleError, ShapeError


@dataclass(frozen=True)
class ModalitySpec:
    name: str
    raw_dim: int
    latent_dim: int

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ContractError(f"modality {self.name!r}: latent_dim must be >= 1")
        if self.latent_dim > self.raw_dim:
            raise ContractError(
                f"modality {self.name!r}: latent_dim {self.latent_dim} exceeds raw_dim {self.raw_dim}"
            )

    @property
    def hidden_dim(self):
        return max(self.latent_dim, self.raw_dim // 2)


@dataclass
class FeatureVector:
    values: np.ndarray
    patient_id: str = ""

    def __len__(self):
        return self.values.shape[-1]


def _prefix(spec):
    return f"ae/{spec.name}/"


def init_modality(spec, params, rng):
    """Register encoder and decoder weights for one modality."""
    p, h = _prefix(spec), spec.hidden_dim
    params.glorot(p + "enc_w1", (spec.raw_dim, h), rng)
    params.zeros(p + "enc_b1", (1, h))
    params.glorot(p + "enc_w2", (h, spec.latent_dim), rng)
    params.zeros(p + "enc_b2", (1, spec.latent_dim))
    params.glorot(p + "dec_w1", (spec.latent_dim, h), rng)
    params.zeros(p + "dec_b1", (1, h))
    params.glorot(p + "dec_w2", (h, spec.raw_dim), rng)
    params.zeros(p + "dec_b2", (1, spec.raw_dim))


def _as_rows(v, width, what):
    t = T.as_tensor(v)
    if t.data.ndim == 1:
        t = T.reshape(t, (1, -1))
    if t.shape[-1] != width:
        raise ShapeError(f"{what}: expected width {width}, got shape {t.shape}")
    return t


def encode_modality(raw, spec, params, activation="tanh"):
    """raw -> hidden -> latent; rows are patients."""
    x = _as_rows(raw, spec.raw_dim, f"encode {spec.name}")
    p, act = _prefix(spec), T.activation(activation)
    h = act(T.add_bias(x @ params[p + "enc_w1"], params[p + "enc_b1"]))
    return T.add_bias(h @ params[p + "enc_w2"], params[p + "enc_b2"])


def decode_modality(latent, spec, params, activation="tanh"):
    z = _as_rows(latent, spec.latent_dim, f"decode {spec.name}")
    p, act = _prefix(spec), T.activation(activation)
    h = act(T.add_bias(z @ params[p + "dec_w1"], params[p + "dec_b1"]))
    return T.add_bias(h @ params[p + "dec_w2"], params[p + "dec_b2"])


def reconstruction_loss(raw, spec, params, activation="tanh"):
    x = _as_rows(raw, spec.raw_dim, f"reconstruct {spec.name}")
    z = encode_modality(x, spec, params, activation)
    return T.mse(decode_modality(z, spec, params, activation), x)


def assemble_patient_vector(latents, specs=None, patient_id=""):
    """Concatenate per-modality latents in declaration order.

    Accepts plain arrays (returns a :class:`FeatureVector`) or tensors with one
    row per patient (returns a tensor, keeping the tape intact).
    """
    if specs is not None and len(latents) != len(specs):
        raise IncompleteSampleError(
            f"expected {len(specs)} modalities, got {len(latents)}"
        )
    for pos, z in enumerate(latents):
        if z is None:
            name = specs[pos].name if specs is not None else str(pos)
            raise IncompleteSampleError(f"missing modality {name!r} for patient {patient_id!r}")
    if specs is not None:
        for z, spec in zip(latents, specs):
            width = z.shape[-1]
            if width != spec.latent_dim:
                raise ShapeError(
                    f"modality {spec.name!r}: latent width {width} != {spec.latent_dim}"
                )
    if any(isinstance(z, T.Tensor) for z in latents):
        return T.concat([_as_rows(z, z.shape[-1], "assemble") for z in latents], axis=1)
    values = np.concatenate([np.asarray(z, dtype=np.float64).reshape(-1) for z in latents])
    return FeatureVector(values, patient_id)


def split_patient_vector(values, specs):
    """Inverse of :func:`assemble_patient_vector` along the last axis."""
    bounds = np.cumsum([0] + [s.latent_dim for s in specs])
    values = np.asarray(values)
    if values.shape[-1] != bounds[-1]:
        raise ShapeError(f"vector width {values.shape[-1]} != {bounds[-1]}")
    return [values[..., bounds[i] : bounds[i + 1]] for i in range(len(specs))]


@dataclass
class ZScore:
    """Per-feature standardisation fitted on training rows only."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, raw, rows=None):
        data = raw if rows is None else raw[rows]
        std = data.std(axis=0)
        std[std < 1e-12] = 1.0
        return cls(data.mean(axis=0), std)

    def apply(self, raw):
        return (raw - self.mean) / self.std
