"""Evaluation metrics and report serialization.

Pixel-level F1 / IoU / AUC and image-level F1 / Accuracy. Conventions that
affect averages, stated once:

* Predicted masks are binarized with a strict ``value > threshold`` rule
  (default 0.5), mirroring the image-level "exceeds" decision.
* An authentic image predicted fully clean scores F1 = IoU = 1.0 (both-empty
  convention); if exactly one of prediction and target is empty the score is
  0.0. This avoids penalizing correct all-negative predictions.
* Corpus pixel metrics are macro by default (per image, then averaged);
  micro (pooled counts) is available via ``average="micro"``.
* AUC is rank-based (Mann-Whitney) with ties counted 0.5 and is undefined
  (``None``) for single-class inputs; macro AUC skips such images.

Everything here is pure and deterministic.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import ValidationError


@dataclass
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def _binary_array(x, name: str) -> np.ndarray:
    arr = np.asarray(x)
    if not np.isin(arr, (0, 1)).all():
        raise ValidationError(f"{name} must be binary")
    return arr.astype(bool)


def confusion(pred, gt) -> ConfusionCounts:
    p = _binary_array(pred, "prediction")
    g = _binary_array(gt, "target")
    if p.shape != g.shape:
        raise ValidationError(f"shape mismatch: prediction {p.shape}, target {g.shape}")
    tp = int(np.sum(p & g))
    fp = int(np.sum(p & ~g))
    fn = int(np.sum(~p & g))
    tn = int(np.sum(~p & ~g))
    return ConfusionCounts(tp, fp, fn, tn)


def binarize(prob, threshold: float = 0.5) -> np.ndarray:
    """Strict thresholding: 1 iff value > threshold."""
    arr = np.asarray(prob)
    if arr.size and (arr.min() < 0 or arr.max() > 1):
        raise ValidationError("probabilities must lie in [0, 1]")
    return (arr > threshold).astype(np.uint8)


def pixel_f1(pred, gt) -> float:
    """F1 = 2TP / (2TP + FP + FN) with the empty-mask conventions above."""
    c = confusion(pred, gt)
    if c.tp + c.fp == 0 and c.tp + c.fn == 0:
        return 1.0
    denom = 2 * c.tp + c.fp + c.fn
    return 2 * c.tp / denom if denom else 0.0


def iou(pred, gt) -> float:
    """Intersection over union with the empty-mask conventions above."""
    c = confusion(pred, gt)
    if c.tp + c.fp == 0 and c.tp + c.fn == 0:
        return 1.0
    denom = c.tp + c.fp + c.fn
    return c.tp / denom if denom else 0.0


def auc(scores, labels) -> float | None:
    """Rank-based AUC with tie correction; None for single-class input."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = _binary_array(labels, "labels").ravel()
    if s.shape != y.shape:
        raise ValidationError(f"shape mismatch: scores {s.shape}, labels {y.shape}")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(s, method="average")
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def image_metrics(scores, labels, threshold: float = 0.5) -> tuple[float | None, float]:
    """Image-level (F1, Accuracy) under the strict "exceeds" rule.

    F1 is None when the corpus has no positive labels.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    if s.size == 0:
        raise ValidationError("image_metrics requires a non-empty corpus")
    y = _binary_array(labels, "labels").ravel()
    if s.shape != y.shape:
        raise ValidationError(f"shape mismatch: scores {s.shape}, labels {y.shape}")
    pred = s > threshold
    acc = float(np.mean(pred == y))
    if not y.any():
        return None, acc
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    denom = 2 * tp + fp + fn
    f1 = 2 * tp / denom if denom else 0.0
    return f1, acc


def corpus_pixel_metrics(
    probs: Sequence[np.ndarray],
    gts: Sequence[np.ndarray],
    threshold: float = 0.5,
    average: str = "macro",
) -> dict:
    """Aggregate pixel F1 / IoU / AUC over a corpus of probability maps."""
    if average not in ("macro", "micro"):
        raise ValidationError(f"unknown average {average!r}")
    if len(probs) != len(gts) or not probs:
        raise ValidationError("need equally many (non-zero) predictions and targets")
    if average == "micro":
        pooled_p = np.concatenate([binarize(p, threshold).ravel() for p in probs])
        pooled_g = np.concatenate([np.asarray(g).ravel() for g in gts])
        pooled_s = np.concatenate([np.asarray(p, dtype=np.float64).ravel() for p in probs])
        return {
            "pixel_f1": pixel_f1(pooled_p, pooled_g),
            "pixel_iou": iou(pooled_p, pooled_g),
            "pixel_auc": auc(pooled_s, pooled_g),
        }
    f1s, ious, aucs = [], [], []
    for p, g in zip(probs, gts):
        pb = binarize(p, threshold)
        f1s.append(pixel_f1(pb, g))
        ious.append(iou(pb, g))
        a = auc(np.asarray(p, dtype=np.float64).ravel(), np.asarray(g).ravel())
        if a is not None:
            aucs.append(a)
    return {
        "pixel_f1": float(np.mean(f1s)),
        "pixel_iou": float(np.mean(ious)),
        "pixel_auc": float(np.mean(aucs)) if aucs else None,
    }


def robustness_curve(eval_fn: Callable[[object], dict], grid: Iterable[object]) -> list[dict]:
    """Evaluate ``eval_fn`` at every severity in ``grid``.

    Each row carries the exact severity object it was computed with. Failures
    are re-raised with the severity attached for context.
    """
    grid = list(grid)
    if not grid:
        raise ValidationError("robustness grid must be non-empty")
    rows = []
    for severity in grid:
        try:
            result = eval_fn(severity)
        except Exception as exc:  # annotate, do not swallow
            raise RuntimeError(f"evaluation failed at severity {severity!r}") from exc
        rows.append({"severity": severity, **result})
    return rows


@dataclass
class EvalReport:
    """Reproducible evaluation summary for one corpus.

    A report is a pure function of (corpus manifest hash, model weights,
    config); serializations of equal reports are byte-identical.
    """

    corpus: str
    n_images: int
    pixel_f1: float
    pixel_iou: float
    pixel_auc: float | None
    image_f1: float | None
    image_acc: float
    pixel_threshold: float
    image_threshold: float
    average: str
    corpus_manifest_sha256: str
    config_sha256: str
    encoder_manifest: dict

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    with open(path, "rb") as fh:
        return sha256_bytes(fh.read())
