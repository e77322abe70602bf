"""Verdict classification metrics, vote-split errors, breakdowns and
run-stability tests."""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import stats
from sklearn.metrics import accuracy_score, precision_recall_fscore_support

from .cases import JURY_SIZE, Verdict

AXES = ("category", "difficulty", "predicted_margin", "ground_margin")


@dataclass(frozen=True)
class PredictionRecord:
    case_id: str
    predicted: Verdict
    predicted_split: tuple[int, int]
    actual: Verdict
    actual_split: tuple[int, int]
    category: str = ""
    rounds_used: int = 0
    tokens_used: int = 0

    def __post_init__(self):
        for name, label, (b, s) in (("predicted", self.predicted, self.predicted_split), ("actual", self.actual, self.actual_split)):
            if min(b, s) < 0:
                raise ValueError(f"{self.case_id}: negative vote count in {name} split")
            if label != (Verdict.SELLER if s > b else Verdict.BUYER):
                raise ValueError(f"{self.case_id}: {name} label disagrees with its split {b}:{s}")
        if sum(self.actual_split) != JURY_SIZE:
            raise ValueError(f"{self.case_id}: actual split must sum to {JURY_SIZE}")

    @property
    def correct(self) -> bool:
        return self.predicted == self.actual

    @property
    def difficulty(self) -> int:
        b, s = self.actual_split
        return abs(b - s)

    @property
    def scaled_predicted_seller(self) -> float:
        """Predicted seller votes on the 17-juror scale."""
        b, s = self.predicted_split
        n = b + s
        return s * JURY_SIZE / n if n else 0.0

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "predicted": self.predicted.label,
            "predicted_split": list(self.predicted_split),
            "actual": self.actual.label,
            "actual_split": list(self.actual_split),
            "category": self.category,
            "difficulty": self.difficulty,
            "rounds_used": self.rounds_used,
            "tokens_used": self.tokens_used,
        }


@dataclass(frozen=True)
class MetricsReport:
    n_cases: int
    accuracy: float
    weighted_f1: float
    macro_f1: float
    macro_recall: float
    macro_precision: float
    mae: float
    rmse: float
    token_total: int

    def to_dict(self) -> dict:
        return asdict(self)


def _labels(records: Sequence[PredictionRecord]) -> tuple[np.ndarray, np.ndarray]:
    if not records:
        raise ValueError("metrics need at least one record")
    y_true = np.array([int(r.actual) for r in records])
    y_pred = np.array([int(r.predicted) for r in records])
    return y_true, y_pred


def classification_metrics(records: Sequence[PredictionRecord]) -> tuple[float, float, float, float, float]:
    """(accuracy, weighted F1, macro F1, macro recall, macro precision) over
    both classes; a class with a zero denominator scores 0."""
    y_true, y_pred = _labels(records)
    labels = [int(Verdict.BUYER), int(Verdict.SELLER)]
    acc = accuracy_score(y_true, y_pred)
    p, r, f, _ = precision_recall_fscore_support(y_true, y_pred, labels=labels, average="macro", zero_division=0)
    _, _, wf, _ = precision_recall_fscore_support(y_true, y_pred, labels=labels, average="weighted", zero_division=0)
    return float(acc), float(wf), float(f), float(r), float(p)


def vote_regression(records: Sequence[PredictionRecord]) -> tuple[float, float]:
    """(MAE, RMSE) of the seller vote count on the 17-juror scale."""
    if not records:
        raise ValueError("metrics need at least one record")
    err = np.array([r.scaled_predicted_seller - r.actual_split[1] for r in records], dtype=np.float64)
    return float(np.mean(np.abs(err))), float(np.sqrt(np.mean(err**2)))


def evaluate(records: Sequence[PredictionRecord]) -> MetricsReport:
    acc, wf1, mf1, mrec, mprec = classification_metrics(records)
    mae, rmse = vote_regression(records)
    return MetricsReport(len(records), acc, wf1, mf1, mrec, mprec, mae, rmse, sum(r.tokens_used for r in records))


def _split_key(b: int, s: int) -> str:
    hi, lo = max(b, s), min(b, s)
    return f"{hi}:{lo}"


def _bucket(record: PredictionRecord, axis: str):
    if axis == "category":
        return record.category or "unknown"
    if axis == "difficulty":
        return record.difficulty
    if axis == "ground_margin":
        return _split_key(*record.actual_split)
    if axis == "predicted_margin":
        return _split_key(*record.predicted_split)
    raise ValueError(f"unknown breakdown axis {axis!r}; expected one of {', '.join(AXES)}")


def breakdown(records: Iterable[PredictionRecord], axis: str) -> list[dict]:
    """Per-bucket accuracy and counts. Margins merge b:s with s:b; only
    non-empty buckets appear, sorted by bucket key."""
    if axis not in AXES:
        raise ValueError(f"unknown breakdown axis {axis!r}; expected one of {', '.join(AXES)}")
    groups: dict = defaultdict(list)
    for r in records:
        groups[_bucket(r, axis)].append(r.correct)
    rows = []
    for key in sorted(groups, key=lambda k: (str(type(k)), k)):
        hits = groups[key]
        rows.append({"bucket": key, "count": len(hits), "correct": sum(hits), "accuracy": sum(hits) / len(hits)})
    return rows


# --------------------------------------------------------------------------
# Stability


def cochran_q(outcomes) -> tuple[float, float]:
    """Cochran's Q over a cases x runs matrix of 0/1 correctness."""
    x = np.asarray(outcomes, dtype=np.int64)
    if x.ndim != 2:
        raise ValueError("outcomes must be a 2-D cases x runs matrix")
    n, k = x.shape
    if k < 2 or n < 2:
        raise ValueError("Cochran's Q needs at least 2 runs and 2 cases")
    if not np.isin(x, (0, 1)).all():
        raise ValueError("outcomes must be binary")
    col = x.sum(axis=0)
    row = x.sum(axis=1)
    total = x.sum()
    denom = k * total - np.sum(row**2)
    if denom == 0:
        return 0.0, 1.0
    q = (k - 1) * (k * np.sum(col**2) - total**2) / denom
    return float(q), float(stats.chi2.sf(q, k - 1))


@dataclass(frozen=True)
class PairedT:
    t: float
    p_value: float
    zero_variance: bool = False

    def __iter__(self):
        return iter((self.t, self.p_value))


def paired_t(a: Sequence[float], b: Sequence[float]) -> PairedT:
    """Paired t-test with n-1 degrees of freedom. A constant difference is
    flagged: t is 0 when all differences vanish, else signed infinity."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be 1-D and of equal length")
    n = a.shape[0]
    if n < 2:
        raise ValueError("paired t needs at least 2 pairs")
    d = a - b
    sd = np.std(d, ddof=1)
    mean = float(np.mean(d))
    if sd == 0:
        if mean == 0:
            return PairedT(0.0, 1.0, True)
        return PairedT(math.copysign(math.inf, mean), 0.0, True)
    t = mean / (sd / math.sqrt(n))
    p = 2 * stats.t.sf(abs(t), n - 1)
    return PairedT(float(t), float(p), False)


# --------------------------------------------------------------------------
# Output


def write_report(report: MetricsReport, records: Sequence[PredictionRecord], out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    with open(out / "predictions.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["case_id", "predicted", "pred_buyer", "pred_seller", "actual", "buyer_votes", "seller_votes", "category", "rounds_used", "tokens_used"])
        for r in sorted(records, key=lambda r: r.case_id):
            w.writerow([r.case_id, r.predicted.label, *r.predicted_split, r.actual.label, *r.actual_split, r.category, r.rounds_used, r.tokens_used])
    for axis in AXES:
        with open(out / f"breakdown_{axis}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=["bucket", "count", "correct", "accuracy"])
            w.writeheader()
            w.writerows(breakdown(records, axis))
    return out
