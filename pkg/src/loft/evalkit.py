"""Metrics: grouped accuracy, calibration error with reliability bins, OOD block.

Confidence is always the maximum softmax probability of raw (unadjusted)
logits. Classes are grouped by labeled-training frequency into Many/Medium/Few;
groups with no test samples are reported as undefined rather than zero. The
OOD block treats higher scores as more in-distribution.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass

import numpy as np

from .embedstore import DatasetBundle
from .errors import ContractError, ParameterError
from .head import ClassifierHead, forward, msp, softmax


@dataclass
class GroupAccuracy:
    many: float | None
    medium: float | None
    few: float | None
    overall: float

    def to_dict(self) -> dict:
        return {"many": self.many, "medium": self.medium, "few": self.few, "overall": self.overall}


@dataclass
class ReliabilityBins:
    """Equal-width partition of (0, 1] with per-bin confidence and accuracy."""

    n_bins: int
    lows: np.ndarray
    highs: np.ndarray
    mean_confidence: np.ndarray
    accuracy: np.ndarray
    counts: np.ndarray

    def to_dict(self) -> dict:
        return {
            "n_bins": self.n_bins,
            "lows": self.lows.tolist(),
            "highs": self.highs.tolist(),
            "mean_confidence": self.mean_confidence.tolist(),
            "accuracy": self.accuracy.tolist(),
            "counts": self.counts.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ReliabilityBins":
        return cls(
            n_bins=payload["n_bins"],
            lows=np.array(payload["lows"]),
            highs=np.array(payload["highs"]),
            mean_confidence=np.array(payload["mean_confidence"]),
            accuracy=np.array(payload["accuracy"]),
            counts=np.array(payload["counts"], dtype=np.int64),
        )

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("bin_low,bin_high,mean_conf,acc,count\n")
        for i in range(self.n_bins):
            out.write(
                f"{self.lows[i]:.6f},{self.highs[i]:.6f},"
                f"{self.mean_confidence[i]:.6f},{self.accuracy[i]:.6f},{self.counts[i]}\n"
            )
        return out.getvalue()


@dataclass
class OODMetrics:
    auroc: float
    ap_in: float
    ap_out: float
    fpr_at_95tpr: float

    def to_dict(self) -> dict:
        return {
            "auroc": self.auroc,
            "ap_in": self.ap_in,
            "ap_out": self.ap_out,
            "fpr_at_95tpr": self.fpr_at_95tpr,
        }


@dataclass
class EvalReport:
    groups: GroupAccuracy
    ece: float
    bins: ReliabilityBins
    ood: OODMetrics | None = None

    @property
    def overall_accuracy(self) -> float:
        return self.groups.overall

    def to_json(self) -> str:
        payload = {
            "groups": self.groups.to_dict(),
            "ece": self.ece,
            "bins": self.bins.to_dict(),
            "ood": self.ood.to_dict() if self.ood else None,
        }
        return json.dumps(payload, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        payload = json.loads(text)
        return cls(
            groups=GroupAccuracy(**payload["groups"]),
            ece=payload["ece"],
            bins=ReliabilityBins.from_dict(payload["bins"]),
            ood=OODMetrics(**payload["ood"]) if payload["ood"] else None,
        )


def group_accuracy(
    preds: np.ndarray,
    labels: np.ndarray,
    train_counts: np.ndarray,
    thresholds: tuple[float, float] = (100, 20),
) -> GroupAccuracy:
    """Accuracy per frequency group: Many (> t_many), Few (< t_few), Medium between."""
    t_many, t_few = thresholds
    if not t_many > t_few >= 1:
        raise ParameterError("need thresholds t_many > t_few >= 1")
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    train_counts = np.asarray(train_counts)
    if preds.shape != labels.shape or preds.ndim != 1 or len(preds) == 0:
        raise ContractError("preds/labels must be equal-length non-empty vectors")
    if (labels < 0).any() or (labels >= len(train_counts)).any():
        raise ContractError("test labels must be valid class indices")

    correct = preds == labels
    group_of_class = np.where(
        train_counts > t_many, 0, np.where(train_counts < t_few, 2, 1)
    )
    sample_group = group_of_class[labels]

    def acc_of(group: int) -> float | None:
        mask = sample_group == group
        if not mask.any():
            return None
        return float(correct[mask].mean())

    return GroupAccuracy(
        many=acc_of(0), medium=acc_of(1), few=acc_of(2), overall=float(correct.mean())
    )


def ece(
    confidences: np.ndarray, correct_flags: np.ndarray, n_bins: int = 15
) -> tuple[float, ReliabilityBins]:
    """Expected calibration error over equal-width confidence bins on (0, 1]."""
    conf = np.asarray(confidences, dtype=np.float64)
    correct = np.asarray(correct_flags, dtype=bool)
    if conf.ndim != 1 or len(conf) == 0 or conf.shape != correct.shape:
        raise ContractError("confidences/correct_flags must be equal-length non-empty vectors")
    if (conf <= 0).any() or (conf > 1).any():
        raise ContractError("confidences must lie in (0, 1]")
    if n_bins < 1:
        raise ParameterError("n_bins must be >= 1")

    idx = np.minimum(np.ceil(conf * n_bins).astype(np.int64) - 1, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    conf_sums = np.bincount(idx, weights=conf, minlength=n_bins)
    acc_sums = np.bincount(idx, weights=correct.astype(np.float64), minlength=n_bins)

    nonzero = counts > 0
    mean_conf = np.zeros(n_bins)
    accuracy = np.zeros(n_bins)
    mean_conf[nonzero] = conf_sums[nonzero] / counts[nonzero]
    accuracy[nonzero] = acc_sums[nonzero] / counts[nonzero]

    weights = counts / len(conf)
    value = float((weights * np.abs(accuracy - mean_conf)).sum())
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    bins = ReliabilityBins(
        n_bins=n_bins,
        lows=edges[:-1],
        highs=edges[1:],
        mean_confidence=mean_conf,
        accuracy=accuracy,
        counts=counts,
    )
    return value, bins


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks, ties receiving the mean of their rank range."""
    _, inverse, counts = np.unique(values, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    starts = ends - counts
    return (starts + (counts + 1) / 2.0)[inverse]


def _average_precision(scores_pos: np.ndarray, scores_neg: np.ndarray) -> float:
    """Step-wise precision-recall integral, thresholds at distinct scores."""
    scores = np.concatenate([scores_pos, scores_neg])
    is_pos = np.concatenate([np.ones(len(scores_pos), bool), np.zeros(len(scores_neg), bool)])
    order = np.argsort(-scores, kind="mergesort")
    s, p = scores[order], is_pos[order]
    tp = np.cumsum(p)
    fp = np.cumsum(~p)
    boundary = np.r_[s[1:] != s[:-1], True]
    tp_b, fp_b = tp[boundary], fp[boundary]
    precision = tp_b / (tp_b + fp_b)
    recall = tp_b / len(scores_pos)
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def ood_metrics(scores_id: np.ndarray, scores_ood: np.ndarray) -> OODMetrics:
    """MSP-based separation: AUROC (ties half), AP both ways, FPR at 95% TPR."""
    scores_id = np.asarray(scores_id, dtype=np.float64)
    scores_ood = np.asarray(scores_ood, dtype=np.float64)
    if len(scores_id) == 0 or len(scores_ood) == 0:
        raise ContractError("OOD metrics need both score sets non-empty")
    if not (np.isfinite(scores_id).all() and np.isfinite(scores_ood).all()):
        raise ContractError("scores must be finite")

    n_id, n_ood = len(scores_id), len(scores_ood)
    ranks = _average_ranks(np.concatenate([scores_id, scores_ood]))
    auroc = float((ranks[:n_id].sum() - n_id * (n_id + 1) / 2.0) / (n_id * n_ood))

    ap_in = _average_precision(scores_id, scores_ood)
    ap_out = _average_precision(-scores_ood, -scores_id)

    k = math.ceil(0.95 * n_id)
    threshold = np.sort(scores_id)[::-1][k - 1]
    fpr = float((scores_ood >= threshold).mean())
    return OODMetrics(auroc=auroc, ap_in=ap_in, ap_out=ap_out, fpr_at_95tpr=fpr)


def evaluate(
    head: ClassifierHead,
    bundle: DatasetBundle,
    test_ids: np.ndarray,
    train_counts: np.ndarray,
    ood_weak: np.ndarray | None = None,
    thresholds: tuple[float, float] = (100, 20),
    n_bins: int = 15,
) -> EvalReport:
    """Full report on the balanced test split; raw logits throughout."""
    rows = bundle.rows_for(np.asarray(test_ids))
    labels = bundle.labels[rows]
    if (labels < 0).any():
        raise ContractError("test split contains unlabeled records")
    probs = softmax(forward(head, bundle.weak[rows]))
    preds = probs.argmax(axis=1)
    conf = msp(probs)

    groups = group_accuracy(preds, labels, train_counts, thresholds)
    ece_value, bins = ece(conf, preds == labels, n_bins)

    ood = None
    if ood_weak is not None:
        scores_ood = msp(softmax(forward(head, np.asarray(ood_weak))))
        ood = ood_metrics(conf, scores_ood)
    return EvalReport(groups=groups, ece=ece_value, bins=bins, ood=ood)
