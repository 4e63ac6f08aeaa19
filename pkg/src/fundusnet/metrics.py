"""Confusion matrices and the per-class statistics derived from them.

Class order everywhere is (background, optic disc, fovea, vessels). A 4x4
confusion matrix has truth on rows and prediction on columns. Statistics
with a zero denominator are reported as None, never 0 or NaN.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .network import CLASS_NAMES

N_CLASSES = len(CLASS_NAMES)


def confusion(pred, truth, mask):
    """Count matrix over effective points only."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    mask = np.asarray(mask, dtype=bool)
    if pred.shape != truth.shape or pred.shape != mask.shape:
        raise InvalidInputError(
            f"shape mismatch: pred {pred.shape}, truth {truth.shape}, mask {mask.shape}"
        )
    t = truth[mask].astype(np.int64)
    p = pred[mask].astype(np.int64)
    cm = np.bincount(t * N_CLASSES + p, minlength=N_CLASSES * N_CLASSES)
    return cm.reshape(N_CLASSES, N_CLASSES)


@dataclass
class ClassStats:
    sensitivity: float | None
    specificity: float | None
    overlap: float | None


def class_stats(cm, c):
    """Sensitivity, specificity and overlap (IoU) for class c."""
    cm = np.asarray(cm, dtype=np.int64)
    tp = cm[c, c]
    row = cm[c].sum()
    col = cm[:, c].sum()
    other_rows = cm.sum() - row
    other_hits = other_rows - (col - cm[c, c])

    sens = tp / row if row > 0 else None
    spec = other_hits / other_rows if other_rows > 0 else None
    union = row + col - tp
    over = tp / union if union > 0 else None
    return ClassStats(sens, spec, over)


def accuracy(cm):
    """Trace over grand total; None for an empty matrix."""
    cm = np.asarray(cm, dtype=np.int64)
    total = cm.sum()
    if total == 0:
        return None
    return np.trace(cm) / total


@dataclass
class ImageResult:
    image_id: str
    total: int
    correct: int

    @property
    def percentage(self):
        return 100.0 * self.correct / self.total if self.total else None


@dataclass
class Report:
    images: list
    aggregate: np.ndarray

    @property
    def pooled_total(self):
        return sum(r.total for r in self.images)

    @property
    def pooled_correct(self):
        return sum(r.correct for r in self.images)

    @property
    def pooled_percentage(self):
        """Micro mean: pooled correct over pooled total."""
        total = self.pooled_total
        return 100.0 * self.pooled_correct / total if total else None


def per_image_report(entries):
    """Build a report from (image id, confusion matrix) pairs."""
    images = []
    aggregate = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    for image_id, cm in entries:
        cm = np.asarray(cm, dtype=np.int64)
        images.append(ImageResult(str(image_id), int(cm.sum()), int(np.trace(cm))))
        aggregate += cm
    return Report(images, aggregate)


def _fmt(value, digits=4):
    return "n/a" if value is None else f"{value:.{digits}f}"


def report_csv_rows(report):
    """Per-image CSV rows: image, total, correct, percentage."""
    rows = ["image,total,correct,percentage"]
    for r in report.images:
        rows.append(f"{r.image_id},{r.total},{r.correct},{_fmt(r.percentage, 2)}")
    rows.append(
        f"all,{report.pooled_total},{report.pooled_correct},"
        f"{_fmt(report.pooled_percentage, 2)}"
    )
    return rows


def confusion_csv_rows(cm, percentages=False):
    cm = np.asarray(cm)
    rows = ["truth\\prediction," + ",".join(CLASS_NAMES)]
    for c in range(N_CLASSES):
        if percentages:
            row_total = cm[c].sum()
            cells = [
                _fmt(100.0 * v / row_total, 2) if row_total else "n/a" for v in cm[c]
            ]
        else:
            cells = [str(int(v)) for v in cm[c]]
        rows.append(f"{CLASS_NAMES[c]}," + ",".join(cells))
    return rows


def class_stats_csv_rows(cm):
    rows = ["class,sensitivity,specificity,overlap"]
    for c in range(N_CLASSES):
        s = class_stats(cm, c)
        rows.append(
            f"{CLASS_NAMES[c]},{_fmt(s.sensitivity)},{_fmt(s.specificity)},"
            f"{_fmt(s.overlap)}"
        )
    return rows


def report_text(report):
    """Human-readable summary with the aggregate matrix and class stats."""
    lines = ["Per-image results:"]
    for r in report.images:
        lines.append(
            f"  {r.image_id}: {r.correct}/{r.total} ({_fmt(r.percentage, 2)}%)"
        )
    lines.append(
        f"Pooled accuracy: {report.pooled_correct}/{report.pooled_total} "
        f"({_fmt(report.pooled_percentage, 2)}%)"
    )
    lines.append("Aggregate confusion matrix (truth rows, prediction columns):")
    for row in confusion_csv_rows(report.aggregate)[1:]:
        lines.append("  " + row.replace(",", "\t"))
    lines.append("Per-class statistics:")
    for row in class_stats_csv_rows(report.aggregate)[1:]:
        lines.append("  " + row.replace(",", "\t"))
    return "\n".join(lines)
