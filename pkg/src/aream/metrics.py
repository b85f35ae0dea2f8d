"""mIoU from confusion counts and the background-threshold sweep."""

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError
from .labels import IGNORE
from .tensor import as_tensor

DEFAULT_SWEEP = tuple(round(0.05 * k, 2) for k in range(1, 20))


@dataclass
class IoUReport:
    per_class: dict          # class index -> IoU, evaluated classes only
    miou: float
    confusion: np.ndarray    # (C+1) x (C+1), rows = gt, cols = pred
    missed: np.ndarray       # per gt class, pixels predicted as 255
    best_threshold: float = None
    sweep: list = field(default_factory=list)  # (threshold, miou) pairs

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "iou"])
        for c, v in sorted(self.per_class.items()):
            w.writerow([c, repr(float(v))])
        return buf.getvalue()

    def to_json(self):
        obj = {
            "miou": float(self.miou),
            "per_class": {str(c): float(v) for c, v in sorted(self.per_class.items())},
            "confusion": self.confusion.astype(int).tolist(),
            "best_threshold": self.best_threshold,
            "sweep": [[float(t), float(m)] for t, m in self.sweep],
        }
        return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def confusion_counts(pred, gt, num_classes):
    """Confusion over pixels with gt != 255, plus per-class counts of pred == 255."""
    pred = np.asarray(pred).astype(np.int64).ravel()
    gt = np.asarray(gt).astype(np.int64).ravel()
    k = num_classes + 1
    keep = gt != IGNORE
    pred, gt = pred[keep], gt[keep]
    if np.any(gt >= k) or np.any(gt < 0) or np.any((pred >= k) & (pred != IGNORE)) or np.any(pred < 0):
        raise ArgumentError(f"labels outside 0..{num_classes} (or 255)")
    unl = pred == IGNORE
    conf = np.bincount(gt[~unl] * k + pred[~unl], minlength=k * k).reshape(k, k)
    missed = np.bincount(gt[unl], minlength=k)
    return conf, missed


def report_from_counts(conf, missed):
    if conf.sum() + missed.sum() == 0:
        raise ArgumentError("nothing to evaluate: every ground-truth pixel is ignored")
    inter = np.diag(conf).astype(np.float64)
    union = conf.sum(axis=0) + conf.sum(axis=1) + missed - np.diag(conf)
    per_class = {c: inter[c] / union[c] for c in range(len(inter)) if union[c] > 0}
    miou = float(np.mean(list(per_class.values())))
    return IoUReport(per_class=per_class, miou=miou, confusion=conf, missed=missed)


def _infer_classes(*maps):
    top = 0
    for m in maps:
        m = np.asarray(m)
        valid = m[m != IGNORE]
        if valid.size:
            top = max(top, int(valid.max()))
    return top


def miou(pred, gt, num_classes=None):
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ArgumentError(f"pred shape {pred.shape} != gt shape {gt.shape}")
    if num_classes is None:
        num_classes = _infer_classes(pred, gt)
    return report_from_counts(*confusion_counts(pred, gt, num_classes))


def miou_many(pairs, num_classes):
    """One global confusion accumulated over several (pred, gt) pairs."""
    k = num_classes + 1
    conf = np.zeros((k, k), dtype=np.int64)
    missed = np.zeros(k, dtype=np.int64)
    for pred, gt in pairs:
        if np.shape(pred) != np.shape(gt):
            raise ArgumentError(f"pred shape {np.shape(pred)} != gt shape {np.shape(gt)}")
        c, m = confusion_counts(pred, gt, num_classes)
        conf += c
        missed += m
    return report_from_counts(conf, missed)


def threshold_labels(refined, threshold):
    """Argmax class (1-based) where the top score reaches ``threshold``, else 0."""
    refined = np.asarray(refined)
    top = refined.max(axis=0)
    return np.where(top < threshold, 0, refined.argmax(axis=0) + 1)


def threshold_sweep(refined, gt, thresholds=DEFAULT_SWEEP, num_classes=None):
    """Best mIoU over background thresholds; ties go to the smaller threshold."""
    refined = as_tensor(refined, "refined maps")
    if refined.ndim != 3:
        raise ArgumentError(f"refined maps must be C x H x W, got {refined.shape}")
    if len(thresholds) == 0:
        raise ArgumentError("empty threshold list")
    if any(not 0.0 < t < 1.0 for t in thresholds):
        raise ArgumentError("thresholds must lie in (0, 1)")
    if num_classes is None:
        num_classes = refined.shape[0]
    best = None
    sweep = []
    for t in sorted(thresholds):
        rep = miou(threshold_labels(refined, t), gt, num_classes)
        sweep.append((t, rep.miou))
        if best is None or rep.miou > best.miou:
            best = rep
            best.best_threshold = t
    best.sweep = sweep
    return best
