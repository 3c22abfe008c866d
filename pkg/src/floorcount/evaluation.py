"""Accuracy, Accuracy(±1), MAE, RMSE and row-normalised confusion matrices."""
import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInput, InvalidValue, LengthMismatch, MalformedDocument, TooFewRuns
from .head import N_CLASSES

METRICS = ("accuracy", "accuracy_pm1", "mae", "rmse")


@dataclass
class EvalReport:
    accuracy: float
    accuracy_pm1: float
    mae: float
    rmse: float
    confusion: np.ndarray  # [ground truth, prediction], percent of the ground-truth row
    n: int
    empty_rows: list = field(default_factory=list)

    def to_dict(self):
        return {
            "n": self.n,
            "accuracy": self.accuracy,
            "accuracy_pm1": self.accuracy_pm1,
            "mae": self.mae,
            "rmse": self.rmse,
            "empty_rows": list(self.empty_rows),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def confusion_csv(self):
        k = self.confusion.shape[0]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["gt\\pred"] + [str(c) for c in range(k)])
        for g in range(k):
            w.writerow([str(g)] + [f"{v:.4f}" for v in self.confusion[g]])
        return buf.getvalue()


def evaluate(preds, gts, n_classes=N_CLASSES):
    """Metrics over paired floor-class predictions and ground truths."""
    p = np.asarray(preds)
    g = np.asarray(gts)
    if p.shape != g.shape or p.ndim != 1:
        raise LengthMismatch(f"{p.shape} predictions vs {g.shape} labels")
    if len(p) == 0:
        raise EmptyInput("no samples to evaluate")
    if not (np.issubdtype(p.dtype, np.integer) and np.issubdtype(g.dtype, np.integer)):
        if np.any(p != np.round(p)) or np.any(g != np.round(g)):
            raise InvalidValue("labels", "non-integer", "floor classes must be integers")
        p, g = p.astype(int), g.astype(int)
    for name, arr in (("prediction", p), ("ground truth", g)):
        if arr.min() < 0 or arr.max() >= n_classes:
            raise InvalidValue(name, (int(arr.min()), int(arr.max())), f"outside [0, {n_classes - 1}]")
    diff = p - g
    n = len(p)
    counts = np.zeros((n_classes, n_classes))
    np.add.at(counts, (g, p), 1)
    row = counts.sum(axis=1, keepdims=True)
    conf = np.divide(100.0 * counts, row, out=np.zeros_like(counts), where=row > 0)
    return EvalReport(
        accuracy=float(np.count_nonzero(diff == 0) / n),
        accuracy_pm1=float(np.count_nonzero(np.abs(diff) <= 1) / n),
        mae=float(np.mean(np.abs(diff))),
        rmse=float(math.sqrt(np.mean(diff.astype(float) ** 2))),
        confusion=conf,
        n=n,
        empty_rows=[int(i) for i in np.flatnonzero(row[:, 0] == 0)],
    )


def aggregate_runs(reports):
    """Mean and sample standard deviation (n - 1) of each metric across runs."""
    if len(reports) < 2:
        raise TooFewRuns(f"need at least 2 runs, got {len(reports)}")
    out = {}
    for m in METRICS:
        vals = np.array([getattr(r, m) for r in reports], dtype=float)
        out[m] = (float(vals.mean()), float(vals.std(ddof=1)))
    return out


def read_pairs_csv(text):
    """Paired CSV with ``pred`` and ``gt`` columns (floor classes)."""
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or not {"pred", "gt"} <= set(reader.fieldnames):
        raise MalformedDocument("paired CSV needs 'pred' and 'gt' columns")
    try:
        rows = [(int(r["pred"]), int(r["gt"])) for r in reader]
    except (TypeError, ValueError) as exc:
        raise MalformedDocument(f"bad paired row: {exc}") from None
    return [r[0] for r in rows], [r[1] for r in rows]
