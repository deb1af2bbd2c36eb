"""Prototype-based zero-shot classification and the high-confidence pre-filter.

Class prototypes are fixed vectors in embedding space (encoded text prompts in
the real pipeline, per-class sample means for synthetic data). Predictions are
a softmax over temperature-scaled cosine similarities, so they ignore input
magnitude. The pre-filter keeps only pool samples the prototype classifier is
very sure about, producing a cleaner pool before any training happens.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embedstore import DatasetBundle, read_bundle, write_bundle
from .errors import ContractError, DegenerateInputError, FormatError, ParameterError
from .head import softmax

# Synthetic mean prototypes separate classes by wide cosine gaps (~0.5), so a
# moderate temperature already saturates in-distribution confidence while
# leaving off-distribution samples below the 0.95 pre-filter cutoff. Encoder
# prototypes live in a much narrower cosine band and want ~100.
MEAN_PROTOTYPE_TEMPERATURE = 16.0


@dataclass
class PrototypeBank:
    """K class prototypes plus the softmax temperature for cosine scores."""

    prototypes: np.ndarray  # (K, d)
    temperature: float = 100.0

    def __post_init__(self):
        self.prototypes = np.ascontiguousarray(self.prototypes, dtype=np.float64)
        if self.prototypes.ndim != 2 or self.prototypes.shape[0] < 1:
            raise ParameterError("prototypes must be a (K, d) matrix")
        if not np.isfinite(self.prototypes).all():
            raise ParameterError("prototypes must be finite")
        norms = np.linalg.norm(self.prototypes, axis=1)
        if (norms == 0).any():
            raise ParameterError(
                f"prototype {int(np.flatnonzero(norms == 0)[0])} has zero norm"
            )
        if not (np.isfinite(self.temperature) and self.temperature > 0):
            raise ParameterError("temperature must be finite and positive")

    @property
    def K(self) -> int:
        return int(self.prototypes.shape[0])

    @property
    def d(self) -> int:
        return int(self.prototypes.shape[1])


def zero_shot_predict(z: np.ndarray, bank: PrototypeBank) -> np.ndarray:
    """softmax(temperature * cosine(z, prototype_k)); accepts a vector or a batch."""
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    zb = z[None, :] if single else z
    if zb.ndim != 2 or zb.shape[1] != bank.d:
        raise ContractError(
            f"embedding dimension {zb.shape[-1]} does not match prototypes ({bank.d})"
        )
    norms = np.linalg.norm(zb, axis=1)
    if (norms == 0).any():
        raise DegenerateInputError("zero-norm embedding has no cosine similarity")
    proto = bank.prototypes / np.linalg.norm(bank.prototypes, axis=1, keepdims=True)
    cos = (zb / norms[:, None]) @ proto.T
    probs = softmax(bank.temperature * cos)
    return probs[0] if single else probs


@dataclass
class Stage1Result:
    """Pool records surviving the high-confidence pre-filter, in input order."""

    kept: np.ndarray  # ids
    provisional: np.ndarray  # argmax class per kept record
    confidence: np.ndarray  # zero-shot MSP per kept record
    n_input: int


def stage1_filter(
    bundle: DatasetBundle, ids: np.ndarray, bank: PrototypeBank, t_hc: float
) -> Stage1Result:
    """Keep pool records whose weak-view zero-shot MSP strictly exceeds t_hc.

    Provisional argmax labels ride along as metadata; training recomputes its
    own pseudo-labels from the fine-tuned model and never reads them.
    """
    if not 0 < t_hc < 1:
        raise ParameterError("t_hc must lie strictly inside (0, 1)")
    ids = np.asarray(ids, dtype=np.uint64)
    if len(ids) == 0:
        return Stage1Result(
            kept=ids, provisional=np.array([], dtype=np.int64),
            confidence=np.array([]), n_input=0,
        )
    rows = bundle.rows_for(ids)
    probs = zero_shot_predict(bundle.weak[rows], bank)
    confidence = probs.max(axis=1)
    keep = confidence > t_hc
    return Stage1Result(
        kept=ids[keep],
        provisional=probs.argmax(axis=1)[keep].astype(np.int64),
        confidence=confidence[keep],
        n_input=len(ids),
    )


def class_mean_prototypes(
    bundle: DatasetBundle,
    ids: np.ndarray,
    temperature: float = MEAN_PROTOTYPE_TEMPERATURE,
) -> PrototypeBank:
    """Prototypes as per-class means of weak views over a labeled probe set."""
    ids = np.asarray(ids)
    rows = bundle.rows_for(ids)
    labels = bundle.labels[rows]
    if (labels < 0).any():
        raise ContractError("probe set must be fully labeled")
    protos = np.zeros((bundle.K, bundle.d))
    for k in range(bundle.K):
        members = rows[labels == k]
        if len(members) == 0:
            raise ContractError(f"probe set has no samples for class {k}")
        protos[k] = bundle.weak[members].astype(np.float64).mean(axis=0)
    return PrototypeBank(prototypes=protos, temperature=temperature)


def write_prototypes(bank: PrototypeBank, path: str | Path, class_names: list[str] | None = None) -> None:
    """Store a bank in the bundle format: n = K, label = class index, views duplicated."""
    vecs = bank.prototypes.astype(np.float32)
    names = class_names or [f"class_{k:02d}" for k in range(bank.K)]
    bundle = DatasetBundle(
        ids=np.arange(bank.K, dtype=np.uint64),
        labels=np.arange(bank.K, dtype=np.int32),
        weak=vecs,
        strong=vecs.copy(),
        K=bank.K,
        class_names=names,
        manifest={"source": "prototypes", "temperature": bank.temperature},
    )
    write_bundle(bundle, path)


def read_prototypes(path: str | Path) -> PrototypeBank:
    bundle = read_bundle(path)
    if len(bundle) != bundle.K:
        raise FormatError(
            f"prototype file must hold exactly K={bundle.K} records, found {len(bundle)}"
        )
    if not np.array_equal(np.sort(bundle.labels), np.arange(bundle.K)):
        raise FormatError("prototype labels must enumerate every class exactly once")
    order = np.argsort(bundle.labels)
    temperature = float(bundle.manifest.get("temperature", 100.0))
    return PrototypeBank(
        prototypes=bundle.weak[order].astype(np.float64), temperature=temperature
    )
