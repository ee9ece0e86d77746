"""Binary classification metrics and the cross-validation report format."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np
from scipy.stats import rankdata

from .errors import ContractError, ParseError, UndefinedMetricError

METRIC_KEYS = ("ACC", "AUC", "PRE", "REC", "F1", "SPE", "AP", "SCORE")
COUNT_KEYS = ("TP", "FP", "TN", "FN")


def _ratio(num, den):
    return num / den if den else math.nan


@dataclass
class MetricEntry:
    ACC: float
    AUC: float
    PRE: float
    REC: float
    F1: float
    SPE: float
    AP: float
    SCORE: float
    TP: int = 0
    FP: int = 0
    TN: int = 0
    FN: int = 0

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _validate(labels, scores):
    y = np.asarray(labels)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape or y.ndim != 1:
        raise ContractError(f"labels {y.shape} and scores {s.shape} must be equal-length vectors")
    if not np.isin(y, (0, 1)).all():
        raise ContractError("labels must be binary (0/1)")
    if not np.isfinite(s).all() or (s < 0).any() or (s > 1).any():
        raise ContractError("scores must lie in [0, 1]")
    return y.astype(np.int64), s


def roc_auc(labels, scores):
    """Mann-Whitney rank statistic; tied positive/negative pairs earn half credit."""
    y, s = np.asarray(labels), np.asarray(scores, dtype=np.float64)
    P = int((y == 1).sum())
    N = y.size - P
    if P == 0 or N == 0:
        raise UndefinedMetricError("AUC is undefined when only one class is present")
    ranks = rankdata(s, method="average")
    return float((ranks[y == 1].sum() - P * (P + 1) / 2.0) / (P * N))


def average_precision(labels, scores):
    """Step-interpolated area under the precision-recall curve.

    Thresholds run over the distinct scores from high to low; tied scores are
    admitted together.
    """
    y, s = np.asarray(labels), np.asarray(scores, dtype=np.float64)
    P = int((y == 1).sum())
    if P == 0 or P == y.size:
        raise UndefinedMetricError("AP is undefined when only one class is present")
    order = np.argsort(-s, kind="stable")
    s_sorted, y_sorted = s[order], y[order]
    cut = np.r_[np.flatnonzero(np.diff(s_sorted)), y.size - 1]
    tp = np.cumsum(y_sorted)[cut]
    precision = tp / (cut + 1.0)
    recall = tp / P
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def threshold_metrics(labels, scores, threshold=0.5):
    y = np.asarray(labels)
    pred = np.asarray(scores) >= threshold
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    tn = int(np.sum(~pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    pre = tp / (tp + fp) if tp + fp else 0.0
    rec = _ratio(tp, tp + fn)
    spe = _ratio(tn, tn + fp)
    if math.isnan(rec):
        f1 = math.nan
    else:
        f1 = 2 * pre * rec / (pre + rec) if pre + rec else 0.0
    return {
        "ACC": (tp + tn) / y.size,
        "PRE": pre,
        "REC": rec,
        "F1": f1,
        "SPE": spe,
        "TP": tp,
        "FP": fp,
        "TN": tn,
        "FN": fn,
    }


def compute_metrics(labels, scores, threshold=0.5, allow_single_class=False):
    """Confusion-based rates at ``threshold`` plus AUC, AP and SCORE.

    ``scores`` are positive-class probabilities.  With ``allow_single_class``
    the ranking metrics become NaN instead of raising.
    """
    y, s = _validate(labels, scores)
    out = threshold_metrics(y, s, threshold)
    try:
        auc = roc_auc(y, s)
        ap = average_precision(y, s)
    except UndefinedMetricError:
        if not allow_single_class:
            raise
        auc = ap = math.nan
    return MetricEntry(AUC=auc, AP=ap, SCORE=(auc + ap) / 2.0, **out)


@dataclass
class MetricReport:
    folds: list = field(default_factory=list)
    histories: list = field(default_factory=list, repr=False)
    fold_results: list = field(default_factory=list, repr=False)

    @property
    def mean(self):
        out = {}
        for key in METRIC_KEYS:
            vals = np.array([getattr(f, key) for f in self.folds], dtype=np.float64)
            vals = vals[~np.isnan(vals)]
            out[key] = float(vals.mean()) if vals.size else math.nan
        for key in COUNT_KEYS:
            out[key] = int(sum(getattr(f, key) for f in self.folds))
        return out

    def to_text(self):
        lines = []
        for i, entry in enumerate(self.folds, start=1):
            lines.append(f"[fold {i}]")
            lines.extend(_kv(entry.as_dict()))
            lines.append("")
        lines.append("[mean]")
        lines.extend(_kv(self.mean))
        return "\n".join(lines) + "\n"


def _kv(d):
    out = []
    for key in METRIC_KEYS + COUNT_KEYS:
        v = d[key]
        out.append(f"{key}: {v}" if isinstance(v, int) else f"{key}: {float(v)!r}")
    return out


def parse_report(text):
    """Parse :meth:`MetricReport.to_text` output into ``{block: {key: value}}``."""
    blocks, current = {}, None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            blocks[current] = {}
            continue
        if current is None or ":" not in line:
            raise ParseError(f"unexpected line {line!r}", line=lineno)
        key, value = (part.strip() for part in line.split(":", 1))
        blocks[current][key] = int(value) if key in COUNT_KEYS else float(value)
    return blocks
