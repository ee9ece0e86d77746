"""Dataset files, synthetic cohorts and artefact export.

All formats are line-oriented text with ``,`` separators.  Floats are
written with ``repr`` so every file round-trips exactly.

Dataset file::

    t2w:32,adc:32,hbv:32          <- header, one name:dim token per modality
    p0001,1,0.12,-1.3,...         <- patient_id, label, features in header order
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ParseError


@dataclass
class Dataset:
    modalities: list  # [(name, raw_dim)]
    raw: list  # one (N, raw_dim) array per modality
    labels: np.ndarray
    ids: list

    def __post_init__(self):
        n = len(self.ids)
        if len(set(self.ids)) != n:
            raise ContractError("patient ids must be unique")
        if len(self.raw) != len(self.modalities):
            raise ContractError("one raw array per modality is required")
        for (name, dim), arr in zip(self.modalities, self.raw):
            if arr.shape != (n, dim):
                raise ContractError(f"modality {name!r}: array {arr.shape} != ({n}, {dim})")
        if self.labels.shape != (n,) or (self.labels < 0).any():
            raise ContractError("labels must be non-negative integers, one per patient")

    def __len__(self):
        return len(self.ids)

    @property
    def classes(self):
        return int(self.labels.max()) + 1 if len(self) else 0

    def features(self):
        return np.concatenate(self.raw, axis=1)


@dataclass
class SyntheticSpec:
    N: int = 440
    classes: int = 2
    modality_dims: tuple = (32, 32, 32)
    informative: int = 4
    noise: float = 1.0
    separation: float = 4.0
    seed: int = 7
    folds: int = 5
    names: tuple = field(default=())

    def __post_init__(self):
        if self.noise < 0:
            raise ContractError("noise scale must be >= 0")
        if any(self.informative > d for d in self.modality_dims):
            raise ContractError("informative count exceeds a modality's dimension")
        if self.N < 2 * self.folds:
            raise ContractError(f"N={self.N} is below 2 * folds = {2 * self.folds}")
        if self.classes < 2:
            raise ContractError("at least two classes are required")


def generate_synthetic(spec=None):
    """Class-conditional Gaussian clusters, balanced across classes.

    In each modality a seeded subset of ``informative`` features carries class
    signal: feature ``j`` of that subset has mean ``+separation/2`` for class
    ``j mod classes`` and ``-separation/2`` otherwise.  Every other feature
    has mean zero.  Noise is isotropic with standard deviation ``noise``.
    """
    spec = spec or SyntheticSpec()
    rng = np.random.default_rng(spec.seed)
    names = spec.names or tuple(f"mod{i + 1}" for i in range(len(spec.modality_dims)))
    labels = np.arange(spec.N) % spec.classes
    rng.shuffle(labels)
    raw = []
    half = spec.separation / 2.0
    for dim in spec.modality_dims:
        chosen = np.sort(rng.choice(dim, size=spec.informative, replace=False))
        means = np.zeros((spec.classes, dim))
        for j, feat in enumerate(chosen):
            means[:, feat] = -half
            means[j % spec.classes, feat] = half
        raw.append(means[labels] + spec.noise * rng.standard_normal((spec.N, dim)))
    width = len(str(spec.N))
    ids = [f"p{i:0{width}d}" for i in range(spec.N)]
    return Dataset(list(zip(names, spec.modality_dims)), raw, labels.astype(np.int64), ids)


def _fmt(v):
    return repr(float(v))


def save_dataset(ds, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(f"{n}:{d}" for n, d in ds.modalities) + "\n")
        feats = ds.features()
        for pid, lab, row in zip(ds.ids, ds.labels, feats):
            fh.write(",".join([pid, str(int(lab))] + [_fmt(v) for v in row]) + "\n")


def _parse_header(line, path):
    mods = []
    for tok in line.strip().split(","):
        name, sep, dim = tok.strip().partition(":")
        if not sep or not name:
            raise ParseError(f"header token {tok!r} is not name:dim", line=1, path=path)
        try:
            d = int(dim)
        except ValueError:
            raise ParseError(f"modality {name!r} has non-integer dim {dim!r}", line=1, path=path) from None
        if d < 1:
            raise ParseError(f"modality {name!r} has dim {d}", line=1, path=path)
        mods.append((name, d))
    names = [m[0] for m in mods]
    if len(set(names)) != len(names):
        raise ParseError("duplicate modality name in header", line=1, path=path)
    return mods


def load_dataset(path):
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty dataset file", path=path)
    mods = _parse_header(lines[0], path)
    total = sum(d for _, d in mods)
    ids, labels, rows, seen = [], [], [], set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        pid = parts[0].strip()
        if len(parts) - 2 != total:
            raise ParseError(
                f"row {pid!r} has {len(parts) - 2} features; header declares {total}",
                line=lineno, path=path,
            )
        if pid in seen:
            raise ParseError(f"duplicate patient id {pid!r}", line=lineno, path=path)
        try:
            lab = int(parts[1])
        except ValueError:
            raise ParseError(f"row {pid!r}: unknown label {parts[1]!r}", line=lineno, path=path) from None
        if lab < 0:
            raise ParseError(f"row {pid!r}: unknown label {lab}", line=lineno, path=path)
        try:
            vals = [float(v) for v in parts[2:]]
        except ValueError as exc:
            raise ParseError(f"row {pid!r}: {exc}", line=lineno, path=path) from None
        if not np.isfinite(vals).all():
            raise ParseError(f"row {pid!r}: non-finite feature", line=lineno, path=path)
        seen.add(pid)
        ids.append(pid)
        labels.append(lab)
        rows.append(vals)
    feats = np.array(rows, dtype=np.float64).reshape(len(rows), total)
    bounds = np.cumsum([0] + [d for _, d in mods])
    raw = [feats[:, bounds[i] : bounds[i + 1]].copy() for i in range(len(mods))]
    return Dataset(mods, raw, np.array(labels, dtype=np.int64), ids)


# ---------------------------------------------------------------- graph export


def export_graphs(stack, path, k, paf):
    """Edge list: a ``C,M,k,paf`` header, then one ``m,i,j,w`` line per directed edge."""
    C = stack.node_count
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("C,M,k,paf\n")
        fh.write(f"{C},{stack.M},{k},{_fmt(paf)}\n")
        for g in stack.graphs:
            fh.write(f"# graph {g.m}\n")
            for (i, j), w in zip(g.edges, g.weights):
                fh.write(f"{g.m},{int(i)},{int(j)},{_fmt(w)}\n")


def parse_graphs(path):
    """Returns ``(header, {m: [(i, j, w), ...]})``."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if len(lines) < 2 or lines[0].strip() != "C,M,k,paf":
        raise ParseError("missing graph header", line=1, path=path)
    c, m, k, paf = lines[1].split(",")
    header = {"C": int(c), "M": int(m), "k": int(k), "paf": float(paf)}
    sections = {}
    for lineno, line in enumerate(lines[2:], start=3):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            sections.setdefault(int(line.split()[-1]), [])
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise ParseError(f"edge record {line!r} needs 4 fields", line=lineno, path=path)
        sections.setdefault(int(parts[0]), []).append((int(parts[1]), int(parts[2]), float(parts[3])))
    return header, sections


def export_influence(matrix, path):
    scores = np.asarray(getattr(matrix, "scores", matrix))
    np.savetxt(path, scores, delimiter=",", fmt="%.17g")


def parse_influence(path):
    return np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=np.float64))


# ---------------------------------------------------------------- other records


def save_scores(path, labels, scores, ids=None):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patient_id", "label", "score"] if ids is not None else ["label", "score"])
        for n, (y, s) in enumerate(zip(labels, scores)):
            row = [int(y), _fmt(s)]
            w.writerow([ids[n]] + row if ids is not None else row)


def load_scores(path):
    """Read ``label,score`` (optionally with a leading ``patient_id``) rows."""
    labels, scores = [], []
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("empty scores file", path=path)
    start = 1 if any(c.strip().lower() in ("label", "score") for c in rows[0]) else 0
    for lineno, row in enumerate(rows[start:], start=start + 1):
        if not row:
            continue
        try:
            labels.append(int(row[-2]))
            scores.append(float(row[-1]))
        except (ValueError, IndexError):
            raise ParseError(f"bad score row {row!r}", line=lineno, path=path) from None
    return np.array(labels, dtype=np.int64), np.array(scores, dtype=np.float64)


HISTORY_COLUMNS = ("fold", "epoch", "L_cls", "L_rep", "L_sd", "L")


def save_history(path, histories):
    """Per-epoch losses of every fold as CSV."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for fold, hist in enumerate(histories, start=1):
            for rec in hist:
                w.writerow([fold, rec["epoch"]] + [_fmt(rec[c]) for c in HISTORY_COLUMNS[2:]])
