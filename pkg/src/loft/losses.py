"""Training objective: logit-adjusted supervision plus gated consistency.

The supervised term is cross-entropy against logits shifted by
tau * log(prior), counteracting the long-tailed class prior. The unlabeled
term derives targets from the weak view under stop-gradient: samples whose
weak-view confidence clears c_u get a hard argmax target, the rest get the
full weak-view distribution as a soft target; in open-world mode a second
confidence gate at c_ood zeroes out suspected OOD samples entirely. Masked
samples still count in the batch-mean denominator, so the lambda weights
keep their meaning as mask rates shift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .embedstore import ClassPrior
from .errors import ContractError, DegeneratePriorError, ParameterError
from .head import ClassifierHead, Grads, backward, forward, forward_cached, log_softmax, msp, softmax


@dataclass
class LossConfig:
    tau: float = 1.0
    c_u: float = 0.6
    c_ood: float = 0.6
    lambda1: float = 1.0
    lambda2: float = 0.5
    # when set, the confidence/OOD masks read MSP from prior-adjusted logits
    # instead of raw ones; experimentation toggle, off by default
    mask_logit_adjust: bool = False

    def __post_init__(self):
        for name in ("tau", "c_u", "c_ood", "lambda1", "lambda2"):
            if not math.isfinite(getattr(self, name)):
                raise ParameterError(f"{name} must be finite")
        if not 0 < self.c_u < 1:
            raise ParameterError("c_u must lie strictly inside (0, 1)")
        if not 0 < self.c_ood < 1:
            raise ParameterError("c_ood must lie strictly inside (0, 1)")
        if self.tau < 0:
            raise ParameterError("tau must be >= 0")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ParameterError("lambda weights must be >= 0")


@dataclass
class UnlabeledBatchStats:
    """Mask bookkeeping for one unlabeled batch."""

    n_hard: int
    n_soft: int
    n_ood_dropped: int
    mean_msp: float

    def to_dict(self) -> dict:
        return {
            "n_hard": self.n_hard,
            "n_soft": self.n_soft,
            "n_ood_dropped": self.n_ood_dropped,
            "mean_msp": self.mean_msp,
        }


def _adjusted_logits(logits: np.ndarray, prior: ClassPrior, tau: float) -> np.ndarray:
    if tau == 0:
        return logits
    if (prior.probs == 0).any():
        raise DegeneratePriorError(
            "prior has a zero component; tau-scaled log prior is undefined"
        )
    return logits + tau * np.log(prior.probs)


def supervised_loss(
    head: ClassifierHead,
    z_weak: np.ndarray,
    y: np.ndarray,
    prior: ClassPrior,
    tau: float,
) -> tuple[float, Grads]:
    """Mean cross-entropy of prior-adjusted logits on weak views."""
    y = np.atleast_1d(np.asarray(y))
    if y.ndim != 1 or len(y) == 0:
        raise ContractError("supervised batch must be a non-empty label vector")
    if (y < 0).any() or (y >= head.K).any():
        raise ContractError("supervised batch contains non-labeled records")
    logits, cache = forward_cached(head, np.atleast_2d(np.asarray(z_weak)))
    adjusted = _adjusted_logits(logits, prior, tau)
    logp = log_softmax(adjusted)
    n = len(y)
    rows = np.arange(n)
    loss = float(-logp[rows, y].mean())

    dlogits = softmax(adjusted)
    dlogits[rows, y] -= 1.0
    dlogits /= n
    return loss, backward(head, cache, dlogits)


def confidence_mask(probs_weak: np.ndarray, c_u: float) -> np.ndarray:
    """1 iff MSP strictly exceeds the cutoff."""
    return np.asarray(msp(probs_weak)) > c_u


def ood_mask(probs_weak: np.ndarray, c_ood: float) -> np.ndarray:
    """1 iff MSP strictly exceeds the OOD cutoff; 0 marks a suspected OOD sample."""
    return np.asarray(msp(probs_weak)) > c_ood


def unlabeled_loss(
    head: ClassifierHead,
    z_weak: np.ndarray,
    z_strong: np.ndarray,
    labels: np.ndarray,
    cfg: LossConfig,
    open_world: bool = False,
    prior: ClassPrior | None = None,
) -> tuple[float, Grads, UnlabeledBatchStats]:
    """Consistency loss between weak-view targets and strong-view predictions.

    Weak-view probabilities are computed without gradient; only the strong
    path backpropagates. ``labels`` is the batch's label column and must be
    all-sentinel: a labeled record here is a pipeline bug.
    """
    labels = np.atleast_1d(np.asarray(labels))
    if (labels >= 0).any():
        bad = int(np.flatnonzero(labels >= 0)[0])
        raise ContractError(f"labeled record at batch position {bad} in unlabeled loss")
    n = len(labels)
    if n == 0:
        raise ContractError("unlabeled batch is empty")
    z_weak = np.atleast_2d(np.asarray(z_weak))
    z_strong = np.atleast_2d(np.asarray(z_strong))

    logits_weak = forward(head, z_weak)  # stop-gradient: no cache kept
    probs_weak = softmax(logits_weak)
    if cfg.mask_logit_adjust and prior is not None:
        mask_probs = softmax(_adjusted_logits(logits_weak, prior, cfg.tau))
    else:
        mask_probs = probs_weak
    confidences = msp(mask_probs)

    m_conf = (confidences > cfg.c_u).astype(np.float64)
    m_ood = (confidences > cfg.c_ood).astype(np.float64) if open_world else np.ones(n)
    y_hat = probs_weak.argmax(axis=1)

    logits_strong, cache = forward_cached(head, z_strong)
    logp_strong = log_softmax(logits_strong)
    rows = np.arange(n)

    hard_ce = -logp_strong[rows, y_hat]
    soft_ce = -(probs_weak * logp_strong).sum(axis=1)

    w_hard = cfg.lambda1 * m_ood * m_conf
    w_soft = cfg.lambda2 * m_ood * (1.0 - m_conf)
    loss = float((w_hard * hard_ce + w_soft * soft_ce).mean())

    q = softmax(logits_strong)
    hard_target = np.zeros_like(q)
    hard_target[rows, y_hat] = 1.0
    dlogits = (
        w_hard[:, None] * (q - hard_target) + w_soft[:, None] * (q - probs_weak)
    ) / n
    grads = backward(head, cache, dlogits)

    if open_world:
        dropped = m_ood == 0
        stats = UnlabeledBatchStats(
            n_hard=int(((m_ood == 1) & (m_conf == 1)).sum()),
            n_soft=int(((m_ood == 1) & (m_conf == 0)).sum()),
            n_ood_dropped=int(dropped.sum()),
            mean_msp=float(np.mean(msp(probs_weak))),
        )
    else:
        stats = UnlabeledBatchStats(
            n_hard=int((m_conf == 1).sum()),
            n_soft=int((m_conf == 0).sum()),
            n_ood_dropped=0,
            mean_msp=float(np.mean(msp(probs_weak))),
        )
    return loss, grads, stats


def total_loss(
    supervised: tuple[float, Grads], unlabeled: tuple[float, Grads]
) -> tuple[float, Grads]:
    """Sum of the two objectives; lambda weights already live inside the unlabeled term."""
    loss_s, grads_s = supervised
    loss_u, grads_u = unlabeled
    if grads_s.keys() != grads_u.keys():
        raise ContractError("gradient structures do not match")
    merged = {}
    for name in grads_s:
        if grads_s[name].shape != grads_u[name].shape:
            raise ContractError(f"gradient shape mismatch for {name}")
        merged[name] = grads_s[name] + grads_u[name]
    return loss_s + loss_u, merged
