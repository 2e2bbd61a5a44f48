"""Accuracy metrics over model snapshots."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import to_model_input
from .errors import ValidationError
from .nn import Model, ModelSnapshot


def _logits_for(model_or_snapshot, samples) -> np.ndarray:
    model = Model.from_snapshot(model_or_snapshot) if isinstance(model_or_snapshot, ModelSnapshot) else model_or_snapshot
    images = np.stack([to_model_input(s.pixels) for s in samples])
    return model.predict_logits(images)


def _topn_hits(logits: np.ndarray, labels: np.ndarray, n: int) -> np.ndarray:
    # stable argsort on negated logits: ties resolve to the lower class index
    order = np.argsort(-logits, axis=1, kind="stable")
    return (order[:, :n] == labels[:, None]).any(axis=1)


def topn_accuracy(model_or_snapshot, samples, n: int) -> float:
    """Fraction of samples whose true label ranks among the n highest logits."""
    samples = list(samples)
    if not samples:
        raise ValidationError("top-N accuracy needs a non-empty test set")
    logits = _logits_for(model_or_snapshot, samples)
    n_classes = logits.shape[1]
    if not 1 <= n <= n_classes:
        raise ValidationError(f"N must be in [1, {n_classes}]")
    labels = np.array([s.label for s in samples])
    return float(_topn_hits(logits, labels, n).mean())


@dataclass(frozen=True)
class EvalReport:
    topn: dict  # N -> accuracy
    sample_count: int
    per_class_top1: dict  # class -> accuracy over that class's samples
    sr_mt: float | None = None  # robustness reference when available

    def to_dict(self) -> dict:
        return {
            "topn": {str(k): v for k, v in sorted(self.topn.items())},
            "sample_count": self.sample_count,
            "per_class_top1": {str(k): v for k, v in sorted(self.per_class_top1.items())},
            "sr_mt": self.sr_mt,
        }


def evaluate(model_or_snapshot, samples, topn_list=(1, 5), sr_mt: float | None = None) -> EvalReport:
    samples = list(samples)
    if not samples:
        raise ValidationError("evaluation needs a non-empty test set")
    logits = _logits_for(model_or_snapshot, samples)
    labels = np.array([s.label for s in samples])
    n_classes = logits.shape[1]
    topn = {}
    for n in topn_list:
        if not 1 <= n <= n_classes:
            raise ValidationError(f"N must be in [1, {n_classes}]")
        topn[int(n)] = float(_topn_hits(logits, labels, n).mean())
    top1 = _topn_hits(logits, labels, 1)
    per_class = {}
    for c in sorted(set(labels.tolist())):
        sel = labels == c
        per_class[int(c)] = float(top1[sel].mean())
    return EvalReport(topn=topn, sample_count=len(samples), per_class_top1=per_class, sr_mt=sr_mt)
