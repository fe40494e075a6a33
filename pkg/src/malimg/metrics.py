"""Macro-averaged classification metrics and checkpoint selection."""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .exceptions import DegenerateLabels, EmptyHistory, IndexOutOfRange

logger = logging.getLogger(__name__)

TABLE_COLUMNS = ("id", "pt", "fpn", "in", "ta", "mu", "opt", "loss",
                 "p_macro", "r_macro", "f1_macro", "auc_macro", "l_test")


def confusion(preds, truths, n_classes: int) -> np.ndarray:
    """C x C count matrix, rows = true class, columns = predicted class."""
    p = np.asarray(preds, dtype=np.int64).ravel()
    t = np.asarray(truths, dtype=np.int64).ravel()
    if p.shape != t.shape:
        raise ValueError(f"preds and truths differ in length: {p.size} vs {t.size}")
    for name, a in (("preds", p), ("truths", t)):
        if a.size and (a.min() < 0 or a.max() >= n_classes):
            raise IndexOutOfRange(f"{name} contain indices outside 0..{n_classes - 1}")
    return np.bincount(t * n_classes + p, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros_like(num, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


def per_class_prf(cm: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-class precision, recall, F1; 0 wherever a denominator is 0."""
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    precision = _safe_div(tp, cm.sum(axis=0))
    recall = _safe_div(tp, cm.sum(axis=1))
    f1 = _safe_div(2 * precision * recall, precision + recall)
    return precision, recall, f1


def macro_prf(cm: np.ndarray) -> tuple[float, float, float, dict]:
    """Return (P_macro, R_macro, F1_macro, per-class dict) averaged over all classes."""
    p, r, f1 = per_class_prf(cm)
    return float(p.mean()), float(r.mean()), float(f1.mean()), {"precision": p, "recall": r, "f1": f1}


def binary_auc(scores, positives) -> float:
    """Mann-Whitney AUC with midranks for ties."""
    s = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positives, dtype=bool)
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("AUC needs at least one positive and one negative")
    ranks = rankdata(s, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def macro_auc(scores, truths, n_classes: int | None = None) -> tuple[float, np.ndarray]:
    """One-vs-rest AUC per class and their mean over classes with both outcomes.

    Classes lacking positives or negatives get ``nan`` in the per-class
    vector and are left out of the mean.
    """
    s = np.asarray(scores, dtype=np.float64)
    t = np.asarray(truths, dtype=np.int64).ravel()
    if s.ndim != 2 or s.shape[0] != t.size or s.shape[0] < 1:
        raise ValueError(f"scores must be (N, C) with N = len(truths) >= 1, got {s.shape}")
    n_classes = s.shape[1] if n_classes is None else n_classes
    per_class = np.full(n_classes, np.nan)
    for c in range(n_classes):
        pos = t == c
        if pos.all() or not pos.any():
            continue
        per_class[c] = binary_auc(s[:, c], pos)
    valid = ~np.isnan(per_class)
    if not valid.any():
        raise DegenerateLabels("no class has both positive and negative examples")
    if not valid.all():
        logger.warning("AUC undefined for classes %s; excluded from the macro mean",
                       np.flatnonzero(~valid).tolist())
    return float(per_class[valid].mean()), per_class


@dataclass
class MetricsReport:
    precision: list
    recall: list
    f1: list
    auc: list
    p_macro: float
    r_macro: float
    f1_macro: float
    auc_macro: float
    loss: float
    n_examples: int
    class_names: list = field(default_factory=list)
    confusion: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        # nan is not valid JSON
        d["auc"] = [None if (a is None or np.isnan(a)) else a for a in self.auc]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        d = dict(d)
        d["auc"] = [np.nan if a is None else a for a in d["auc"]]
        return cls(**d)


def build_report(scores, truths, loss: float, class_names: Sequence[str] | None = None) -> MetricsReport:
    """Assemble a report from (N, C) class probabilities and integer truths."""
    s = np.asarray(scores, dtype=np.float64)
    n_classes = s.shape[1]
    cm = confusion(s.argmax(axis=1), truths, n_classes)
    p_m, r_m, f_m, per = macro_prf(cm)
    try:
        auc_m, auc_c = macro_auc(s, truths, n_classes)
    except DegenerateLabels:
        logger.warning("AUC undefined for every class on this split")
        auc_m, auc_c = float("nan"), np.full(n_classes, np.nan)
    return MetricsReport(
        precision=per["precision"].tolist(), recall=per["recall"].tolist(), f1=per["f1"].tolist(),
        auc=auc_c.tolist(), p_macro=p_m, r_macro=r_m, f1_macro=f_m, auc_macro=auc_m,
        loss=float(loss), n_examples=int(s.shape[0]),
        class_names=list(class_names or []), confusion=cm.tolist(),
    )


def select_checkpoint(history: Iterable) -> int:
    """Epoch with the best validation F1_macro; ties -> lower val loss -> earlier epoch.

    ``history`` items are ``(epoch, val_f1_macro, val_loss)`` tuples or
    mappings with those keys.
    """
    rows = []
    for h in history:
        if isinstance(h, dict):
            rows.append((int(h["epoch"]), float(h["val_f1_macro"]), float(h["val_loss"])))
        else:
            epoch, f1, loss = h
            rows.append((int(epoch), float(f1), float(loss)))
    if not rows:
        raise EmptyHistory("cannot select a checkpoint from an empty history")
    return min(rows, key=lambda r: (-r[1], r[2], r[0]))[0]


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if np.isnan(v) else f"{v:.4f}"
    return str(v)


def table_row(run_id, flags: dict, report: MetricsReport | None) -> list[str]:
    """One Table-III-shaped CSV row; metric fields are ``nan`` for failed runs."""
    row = [str(run_id)] + [str(flags[k]) for k in TABLE_COLUMNS[1:8]]
    if report is None:
        return row + ["nan"] * 5
    return row + [_fmt(report.p_macro), _fmt(report.r_macro), _fmt(report.f1_macro),
                  _fmt(report.auc_macro), _fmt(report.loss)]


def table_csv(rows: Sequence[Sequence[str]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TABLE_COLUMNS)
    writer.writerows(rows)
    return buf.getvalue()
