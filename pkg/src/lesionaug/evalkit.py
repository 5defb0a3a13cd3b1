"""Ensemble fusion of probability matrices and balanced-accuracy scoring."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .manifest import CLASSES, GT_HEADER, NUM_CLASSES, ClassLabel, DatasetManifest, DataError

PROB_HEADER = GT_HEADER
RENORM_TOL = 1e-6
MIN_ROW_SUM = 1e-9


@dataclass(frozen=True)
class ProbabilityMatrix:
    image_ids: tuple[str, ...]
    probs: np.ndarray  # (n, 7) float64

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=np.float64).reshape(-1, NUM_CLASSES)
        if probs.shape[0] != len(self.image_ids):
            raise ValueError("row count does not match image id count")
        if len(set(self.image_ids)) != len(self.image_ids):
            raise DataError("duplicate image id in probability matrix")
        order = sorted(range(len(self.image_ids)), key=self.image_ids.__getitem__)
        if order != list(range(len(order))):
            object.__setattr__(self, "image_ids", tuple(self.image_ids[i] for i in order))
            probs = probs[order]
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    def __len__(self) -> int:
        return len(self.image_ids)

    def row(self, image_id: str) -> np.ndarray:
        return self.probs[self.image_ids.index(image_id)]


def load_probabilities(csv_text: str) -> ProbabilityMatrix:
    """Parse a probability CSV; rows not summing to 1 (within 1e-6) are renormalized."""
    rows = list(csv.reader(io.StringIO(csv_text, newline="")))
    if not rows or tuple(c.strip() for c in rows[0]) != PROB_HEADER:
        raise DataError(f"bad header, row 1: expected {','.join(PROB_HEADER)}")
    ids: list[str] = []
    data: list[list[float]] = []
    seen: set[str] = set()
    for row_no, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(PROB_HEADER):
            raise DataError(f"expected {len(PROB_HEADER)} cells, got {len(row)}, row {row_no}")
        image_id = row[0].strip()
        if image_id in seen:
            raise DataError(f"duplicate image id {image_id!r}, row {row_no}")
        try:
            values = [float(c) for c in row[1:]]
        except ValueError:
            raise DataError(f"malformed number, row {row_no}") from None
        if any(not math.isfinite(v) for v in values):
            raise DataError(f"non-finite probability, row {row_no}")
        if any(v < 0 for v in values):
            raise DataError(f"negative probability, row {row_no}")
        total = math.fsum(values)
        if total == 0:
            raise DataError(f"all-zero probability row, row {row_no}")
        if total < MIN_ROW_SUM:
            raise DataError(f"probability row sums to {total!r}, row {row_no}")
        if abs(total - 1.0) > RENORM_TOL:
            values = [v / total for v in values]
        seen.add(image_id)
        ids.append(image_id)
        data.append(values)
    return ProbabilityMatrix(tuple(ids), np.array(data, dtype=np.float64).reshape(-1, NUM_CLASSES))


def format_probabilities(pm: ProbabilityMatrix) -> str:
    out = io.StringIO(newline="")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(PROB_HEADER)
    for image_id, row in zip(pm.image_ids, pm.probs):
        w.writerow([image_id] + [repr(float(v)) for v in row])
    return out.getvalue()


@dataclass(frozen=True)
class EnsembleConfig:
    weights: tuple[float, ...]

    def __post_init__(self) -> None:
        w = tuple(float(x) for x in self.weights)
        if not w:
            raise ValueError("at least one weight is required")
        if any(x < 0 or not math.isfinite(x) for x in w):
            raise ValueError("weights must be finite and non-negative")
        if not any(x > 0 for x in w):
            raise ValueError("at least one weight must be positive")
        object.__setattr__(self, "weights", w)


def _check_aligned(matrices: Sequence[ProbabilityMatrix]) -> None:
    ref = matrices[0].image_ids
    for k, m in enumerate(matrices[1:], start=1):
        if m.image_ids == ref:
            continue
        only_ref = set(ref) - set(m.image_ids)
        only_k = set(m.image_ids) - set(ref)
        first = min(only_ref | only_k)
        where = f"model 0 but not model {k}" if first in only_ref else f"model {k} but not model 0"
        raise DataError(f"image id sets differ: first differing id {first!r} is in {where}")


def fuse(matrices: Sequence[ProbabilityMatrix], cfg: EnsembleConfig) -> ProbabilityMatrix:
    """Weighted average of probability rows, weights normalized to sum 1."""
    if not matrices:
        raise ValueError("nothing to fuse")
    if len(cfg.weights) != len(matrices):
        raise ValueError(f"{len(cfg.weights)} weights for {len(matrices)} matrices")
    _check_aligned(matrices)
    total = math.fsum(cfg.weights)
    acc = np.zeros_like(matrices[0].probs)
    for w, m in zip(cfg.weights, matrices):
        acc += w * m.probs
    return ProbabilityMatrix(matrices[0].image_ids, acc / total)


def predict(m: ProbabilityMatrix) -> list[tuple[str, ClassLabel]]:
    # np.argmax returns the first maximum, i.e. the lowest class index on ties
    return [(i, CLASSES[int(k)]) for i, k in zip(m.image_ids, np.argmax(m.probs, axis=1))]


def vote(matrices: Sequence[ProbabilityMatrix], cfg: EnsembleConfig) -> ProbabilityMatrix:
    """Decision-level fusion: each model casts its weight for its argmax class.

    Returns one-hot rows for the winning class so the result flows through the
    same evaluation path; ties go to the lowest class index.
    """
    if len(cfg.weights) != len(matrices):
        raise ValueError(f"{len(cfg.weights)} weights for {len(matrices)} matrices")
    _check_aligned(matrices)
    tally = np.zeros_like(matrices[0].probs)
    rows = np.arange(len(matrices[0]))
    for w, m in zip(cfg.weights, matrices):
        tally[rows, np.argmax(m.probs, axis=1)] += w
    onehot = np.zeros_like(tally)
    onehot[rows, np.argmax(tally, axis=1)] = 1.0
    return ProbabilityMatrix(matrices[0].image_ids, onehot)


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # (7, 7) int64, rows = truth, cols = prediction

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def present(self) -> list[ClassLabel]:
        return [c for c in CLASSES if self.counts[int(c)].sum() > 0]


def confusion(pred: Sequence[tuple[str, ClassLabel]], truth: DatasetManifest) -> ConfusionMatrix:
    labels = truth.labels()
    counts = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    for image_id, p in pred:
        t = labels.get(image_id)
        if t is None:
            raise DataError(f"prediction for unknown image id {image_id!r}")
        counts[int(t), int(p)] += 1
    return ConfusionMatrix(counts)


def per_class_recall(cm: ConfusionMatrix) -> list[float | None]:
    """Recall per class; ``None`` for classes with no true samples."""
    out: list[float | None] = []
    for c in range(NUM_CLASSES):
        support = int(cm.counts[c].sum())
        out.append(int(cm.counts[c, c]) / support if support else None)
    return out


def balanced_accuracy(cm: ConfusionMatrix) -> float:
    recalls = [r for r in per_class_recall(cm) if r is not None]
    if not recalls:
        raise DataError("empty confusion matrix")
    return math.fsum(recalls) / len(recalls)


@dataclass(frozen=True)
class EvaluationReport:
    per_class_recall: tuple[float | None, ...]
    balanced_accuracy: float
    overall_accuracy: float
    n_images: int
    absent: tuple[ClassLabel, ...]
    confusion: ConfusionMatrix


def evaluate(pm: ProbabilityMatrix, truth: DatasetManifest) -> EvaluationReport:
    cm = confusion(predict(pm), truth)
    recalls = per_class_recall(cm)
    n = cm.total
    return EvaluationReport(
        per_class_recall=tuple(recalls),
        balanced_accuracy=balanced_accuracy(cm),
        overall_accuracy=int(np.trace(cm.counts)) / n,
        n_images=n,
        absent=tuple(c for c, r in zip(CLASSES, recalls) if r is None),
        confusion=cm,
    )


def format_report(rep: EvaluationReport) -> str:
    lines = [f"{'class':<6} {'support':>7} {'recall':>8}"]
    for c, r in zip(CLASSES, rep.per_class_recall):
        support = int(rep.confusion.counts[int(c)].sum())
        lines.append(f"{c.code:<6} {support:>7} {'-' if r is None else f'{r:.4f}':>8}")
    lines.append(f"balanced accuracy: {rep.balanced_accuracy:.4f}")
    lines.append(f"overall accuracy:  {rep.overall_accuracy:.4f}  (n={rep.n_images})")
    if rep.absent:
        lines.append(
            "classes without ground-truth samples (excluded from the mean): "
            + ", ".join(c.code for c in rep.absent)
        )
    return "\n".join(lines) + "\n"


def report_metrics_csv(rep: EvaluationReport) -> str:
    out = io.StringIO(newline="")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["metric", "value"])
    w.writerow(["balanced_accuracy", repr(rep.balanced_accuracy)])
    w.writerow(["overall_accuracy", repr(rep.overall_accuracy)])
    w.writerow(["n_images", rep.n_images])
    w.writerow(["classes_present", NUM_CLASSES - len(rep.absent)])
    return out.getvalue()


def report_recall_csv(rep: EvaluationReport) -> str:
    out = io.StringIO(newline="")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["class", "recall"])
    for c, r in zip(CLASSES, rep.per_class_recall):
        w.writerow([c.code, "" if r is None else repr(r)])
    return out.getvalue()


def report_confusion_csv(rep: EvaluationReport) -> str:
    out = io.StringIO(newline="")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["true\\pred"] + [c.code for c in CLASSES])
    for c in CLASSES:
        w.writerow([c.code] + [int(v) for v in rep.confusion.counts[int(c)]])
    return out.getvalue()
