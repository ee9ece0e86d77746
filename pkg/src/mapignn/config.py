"""Training configuration and its flat ``key = value`` file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

from .errors import ConfigError
from .mdfd import PerturbationMethod


@dataclass(frozen=True)
class TrainConfig:
    # stage I
    M: int = 24
    k: int = 5
    paf: float = 0.05
    perturbation: str = "zero_out"
    refresh_every: int = 1
    latent_dim: int = 8
    # stage II
    k_global: int = 10
    gat_layers: int = 2
    gcn_hidden: int = 64
    gcn_layers: int = 2
    head_hidden: int = 32
    per_plane_encoders: bool = False
    attach_at_eval: bool = False
    # loss weights
    lambda_cls: float = 1.0
    lambda_rep: float = 0.3
    lambda_sd: float = 1.0
    lambda_orth: float = 1e-3
    lambda_l1: float = 1e-4
    lambda_l2: float = 1e-4
    # optimiser
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 60
    seed: int = 7
    # nonlinearities
    activation: str = "elu"
    ae_activation: str = "tanh"
    sd_activation: str = "tanh"
    leaky_slope: float = 0.2
    # ablation switches
    disable_mdfd: bool = False
    disable_magcs: bool = False
    disable_hfdan: bool = False
    # evaluation
    folds: int = 5
    threshold: float = 0.5

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("lambda_cls", "lambda_rep", "lambda_sd", "lambda_orth", "lambda_l1", "lambda_l2"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 0.0 < self.paf <= 1.0:
            raise ConfigError(f"paf must lie in (0, 1], got {self.paf}")
        for name in ("M", "k", "k_global", "epochs", "refresh_every", "latent_dim",
                     "gat_layers", "gcn_layers", "gcn_hidden", "head_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.folds < 2:
            raise ConfigError(f"folds must be >= 2, got {self.folds}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        try:
            PerturbationMethod.parse(self.perturbation)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def method(self):
        return PerturbationMethod.parse(self.perturbation)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"


_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _convert(key, text):
    kind = _TYPES[key]
    try:
        if kind == "bool":
            low = text.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None


def parse_config(text, base=None):
    """Read ``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    changes = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        changes[key] = _convert(key, value)
    return (base or TrainConfig()).replace(**changes)


def load_config(path, base=None):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), base)
