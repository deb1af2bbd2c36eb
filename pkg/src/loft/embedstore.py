"""Embedding dataset model: binary bundle files, long-tailed splits, OOD mixing.

A dataset is a flat table of records. Each record holds two embedding views of
one source sample: the weak view (light augmentation, used to derive targets)
and the strong view (heavy augmentation, used to derive predictions). Labels
use two sentinels below zero: ``UNLABELED`` for pool samples whose class is
withheld from training, and ``OOD_TRUTH`` for evaluation-only ground-truth
out-of-distribution flags.

Bundle file layout (little-endian):

    magic "LFTB" | version u32 | d u32 | K u32 | n u64
    n records of { id u64, label i32, weak f32*d, strong f32*d }
    manifest_len u64 | manifest JSON (class_names, source, seed, ...)

Split files are JSON lists of record ids. The true classes of pool records
live in a :class:`SealedTruth` side channel that only evaluation code reads.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import CapacityError, ContractError, FormatError, ParameterError

UNLABELED = -1
OOD_TRUTH = -2

MAGIC = b"LFTB"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sIIIQ")  # magic, version, d, K, n


@dataclass
class EmbeddingRecord:
    """One sample: paired weak/strong embedding views plus label status."""

    id: int
    label: int
    weak: np.ndarray
    strong: np.ndarray

    @property
    def is_labeled(self) -> bool:
        return self.label >= 0


@dataclass(eq=False)
class DatasetBundle:
    """Immutable table of embedding records with class metadata.

    Arrays are column-major views over all records: ``ids`` uint64, ``labels``
    int32, ``weak``/``strong`` float32 of shape (n, d). Arrays are marked
    read-only after construction; bundles are safe to share across workers.
    """

    ids: np.ndarray
    labels: np.ndarray
    weak: np.ndarray
    strong: np.ndarray
    K: int
    class_names: list[str]
    manifest: dict

    def __post_init__(self):
        self.ids = np.ascontiguousarray(self.ids, dtype=np.uint64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int32)
        self.weak = np.ascontiguousarray(self.weak, dtype=np.float32)
        self.strong = np.ascontiguousarray(self.strong, dtype=np.float32)
        self._row_index: dict[int, int] | None = None
        self._validate()
        for arr in (self.ids, self.labels, self.weak, self.strong):
            arr.setflags(write=False)

    def _validate(self) -> None:
        n = len(self.ids)
        if self.weak.ndim != 2 or self.strong.ndim != 2:
            raise ParameterError("embedding views must be 2-d arrays")
        if self.weak.shape != self.strong.shape or self.weak.shape[0] != n:
            raise ParameterError("record columns disagree on length or dimension")
        if self.labels.shape != (n,):
            raise ParameterError("label column length mismatch")
        if self.d <= 0:
            raise ParameterError("embedding dimension must be positive")
        if self.K <= 0:
            raise ParameterError("class count must be positive")
        if len(self.class_names) != self.K:
            raise ParameterError(
                f"expected {self.K} class names, got {len(self.class_names)}"
            )
        if not np.isfinite(self.weak).all() or not np.isfinite(self.strong).all():
            raise ParameterError("embedding components must be finite")
        bad = (self.labels >= self.K) | (self.labels < OOD_TRUTH)
        if bad.any():
            raise ParameterError(
                f"label out of range at row {int(np.flatnonzero(bad)[0])}"
            )
        if len(np.unique(self.ids)) != n:
            raise ParameterError("record ids must be unique")

    @property
    def d(self) -> int:
        return int(self.weak.shape[1])

    def __len__(self) -> int:
        return len(self.ids)

    def record(self, row: int) -> EmbeddingRecord:
        return EmbeddingRecord(
            id=int(self.ids[row]),
            label=int(self.labels[row]),
            weak=self.weak[row],
            strong=self.strong[row],
        )

    @property
    def records(self) -> list[EmbeddingRecord]:
        return [self.record(i) for i in range(len(self))]

    def __iter__(self) -> Iterator[EmbeddingRecord]:
        return (self.record(i) for i in range(len(self)))

    def rows_for(self, ids: Sequence[int] | np.ndarray) -> np.ndarray:
        """Map record ids to row indices; unknown ids raise ContractError."""
        if self._row_index is None:
            self._row_index = {int(v): i for i, v in enumerate(self.ids)}
        try:
            return np.array([self._row_index[int(v)] for v in ids], dtype=np.int64)
        except KeyError as exc:
            raise ContractError(f"unknown record id {exc.args[0]}") from None

    def __eq__(self, other) -> bool:
        if not isinstance(other, DatasetBundle):
            return NotImplemented
        return (
            self.K == other.K
            and self.class_names == other.class_names
            and self.manifest == other.manifest
            and np.array_equal(self.ids, other.ids)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.weak, other.weak)
            and np.array_equal(self.strong, other.strong)
        )


@dataclass
class ClassPrior:
    """Empirical label distribution of a labeled split."""

    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.ascontiguousarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 1 or len(self.probs) == 0:
            raise ParameterError("prior must be a non-empty vector")
        if (self.probs < 0).any():
            raise ParameterError("prior components must be nonnegative")
        if abs(float(self.probs.sum()) - 1.0) > 1e-9:
            raise ParameterError("prior must sum to 1 within 1e-9")

    @classmethod
    def from_counts(cls, counts: Sequence[int] | np.ndarray) -> "ClassPrior":
        counts = np.asarray(counts, dtype=np.float64)
        total = counts.sum()
        if total <= 0:
            raise ParameterError("counts must sum to a positive total")
        return cls(counts / total)


@dataclass
class SplitSpec:
    """Parameters of a long-tailed labeled/unlabeled split.

    ``gamma_u`` is either a regime tag ("consistent", "uniform", "reversed")
    or a positive ratio. ``n1``/``m1`` cap the largest per-class counts.
    """

    n1: int
    gamma_l: float
    m1: int = 0
    gamma_u: str | float = "consistent"
    seed: int = 0

    def __post_init__(self):
        if self.n1 < 1:
            raise ParameterError("n1 must be >= 1")
        if self.m1 < 0:
            raise ParameterError("m1 must be >= 0")
        if not math.isfinite(self.gamma_l) or self.gamma_l < 1:
            raise ParameterError("gamma_l must be a finite ratio >= 1")
        if isinstance(self.gamma_u, str):
            if self.gamma_u not in ("consistent", "uniform", "reversed"):
                raise ParameterError(f"unknown unlabeled regime {self.gamma_u!r}")
        elif not (math.isfinite(self.gamma_u) and self.gamma_u > 0):
            raise ParameterError("numeric gamma_u must be finite and positive")


class SealedTruth:
    """Evaluation-only ground truth for pool records.

    Holds the true class (or OOD_TRUTH) of every record whose label was
    stripped for training. Training code must never call :meth:`lookup`;
    the ``reads`` counter exists so tests can assert that.
    """

    def __init__(self, ids: Sequence[int] | np.ndarray, labels: Sequence[int] | np.ndarray):
        ids = [int(v) for v in ids]
        labels = [int(v) for v in labels]
        if len(ids) != len(labels):
            raise ParameterError("sealed truth ids/labels length mismatch")
        self._map: dict[int, int] = dict(zip(ids, labels))
        self.reads = 0

    def __len__(self) -> int:
        return len(self._map)

    def lookup(self, ids: Sequence[int] | np.ndarray) -> np.ndarray:
        self.reads += 1
        try:
            return np.array([self._map[int(v)] for v in ids], dtype=np.int64)
        except KeyError as exc:
            raise ContractError(f"id {exc.args[0]} not in sealed truth") from None

    def merged(self, other: "SealedTruth") -> "SealedTruth":
        out = SealedTruth([], [])
        out._map = {**self._map, **other._map}
        return out

    def to_json(self) -> str:
        return json.dumps(
            {"evaluation_only": True, "labels": {str(k): v for k, v in sorted(self._map.items())}}
        )

    @classmethod
    def from_json(cls, text: str) -> "SealedTruth":
        payload = json.loads(text)
        items = payload["labels"]
        return cls([int(k) for k in items], list(items.values()))


@dataclass
class Split:
    """Outcome of split construction: id sets plus the sealed truth channel.

    ``labeled`` and ``unlabeled`` are the contract surface; ``test`` carries
    the balanced held-out ids and ``truth`` the sealed ground truth of the
    unlabeled pool.
    """

    labeled: np.ndarray
    unlabeled: np.ndarray
    test: np.ndarray
    truth: SealedTruth


def longtail_profile(n_max: int, gamma: float, k_classes: int) -> np.ndarray:
    """Per-class counts n_max * gamma^(-k/(K-1)), rounded half-up, floored at 1."""
    if k_classes < 1:
        raise ParameterError("need at least one class")
    if k_classes == 1:
        return np.array([max(1, n_max)], dtype=np.int64)
    counts = [
        max(1, math.floor(n_max * gamma ** (-k / (k_classes - 1)) + 0.5))
        for k in range(k_classes)
    ]
    return np.array(counts, dtype=np.int64)


def synth_dataset(
    K: int, d: int, per_class: int, separation: float, seed: int
) -> DatasetBundle:
    """Gaussian-mixture stand-in for frozen-encoder embeddings.

    Class k is centered on a random unit direction scaled by ``separation``
    with unit isotropic noise; the strong view adds extra noise at half the
    base scale, modeling the heavier augmentation. Deterministic per seed.
    """
    if K < 2:
        raise ParameterError("K must be >= 2")
    if d < 2:
        raise ParameterError("d must be >= 2")
    if per_class < 1:
        raise ParameterError("per_class must be >= 1")
    if not math.isfinite(separation) or separation < 0:
        raise ParameterError("separation must be finite and >= 0")

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    directions = rng.standard_normal((K, d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    means = separation * directions

    n = K * per_class
    labels = np.repeat(np.arange(K, dtype=np.int32), per_class)
    weak = means[labels] + rng.standard_normal((n, d))
    strong = weak + 0.5 * rng.standard_normal((n, d))

    manifest = {
        "source": "synthetic",
        "seed": seed,
        "params": {"K": K, "d": d, "per_class": per_class, "separation": separation},
    }
    return DatasetBundle(
        ids=np.arange(n, dtype=np.uint64),
        labels=labels,
        weak=weak.astype(np.float32),
        strong=strong.astype(np.float32),
        K=K,
        class_names=[f"class_{k:02d}" for k in range(K)],
        manifest=manifest,
    )


def _unlabeled_profile(spec: SplitSpec, K: int) -> np.ndarray:
    if spec.m1 == 0:
        return np.zeros(K, dtype=np.int64)
    if spec.gamma_u == "consistent":
        return longtail_profile(spec.m1, spec.gamma_l, K)
    if spec.gamma_u == "uniform":
        return np.full(K, spec.m1, dtype=np.int64)
    if spec.gamma_u == "reversed":
        return longtail_profile(spec.m1, spec.gamma_l, K)[::-1].copy()
    ratio = float(spec.gamma_u)
    if ratio >= 1:
        return longtail_profile(spec.m1, ratio, K)
    # ratio < 1 is a reversed profile; m1 stays the largest per-class count
    return longtail_profile(spec.m1, 1.0 / ratio, K)[::-1].copy()


def make_longtail_split(bundle: DatasetBundle, spec: SplitSpec) -> Split:
    """Draw disjoint labeled/unlabeled/test id sets with exponential profiles.

    Labeled counts follow N_k = n1 * gamma_l^(-k/(K-1)); unlabeled counts
    follow the regime in ``spec``. Remaining samples form a balanced test
    set (equal per-class counts, capped by the scarcest class). The true
    classes of the unlabeled pool are returned only in the sealed channel.
    """
    labeled_counts = longtail_profile(spec.n1, spec.gamma_l, bundle.K)
    unlabeled_counts = _unlabeled_profile(spec, bundle.K)

    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    labeled_rows: list[np.ndarray] = []
    unlabeled_rows: list[np.ndarray] = []
    leftovers: list[np.ndarray] = []
    for k in range(bundle.K):
        rows_k = np.flatnonzero(bundle.labels == k)
        need = int(labeled_counts[k] + unlabeled_counts[k])
        if len(rows_k) < need:
            raise CapacityError(k, need, len(rows_k))
        perm = rng.permutation(rows_k)
        labeled_rows.append(perm[: labeled_counts[k]])
        unlabeled_rows.append(perm[labeled_counts[k] : need])
        leftovers.append(perm[need:])

    test_per_class = min(len(rest) for rest in leftovers)
    test_rows = np.concatenate([rest[:test_per_class] for rest in leftovers]) if test_per_class else np.array([], dtype=np.int64)

    labeled_all = np.concatenate(labeled_rows)
    unlabeled_all = np.concatenate(unlabeled_rows) if sum(map(len, unlabeled_rows)) else np.array([], dtype=np.int64)

    truth = SealedTruth(bundle.ids[unlabeled_all], bundle.labels[unlabeled_all])
    return Split(
        labeled=bundle.ids[labeled_all].astype(np.uint64),
        unlabeled=bundle.ids[unlabeled_all].astype(np.uint64),
        test=bundle.ids[test_rows].astype(np.uint64),
        truth=truth,
    )


def mix_ood(
    bundle: DatasetBundle,
    split: Split,
    ood_pool: DatasetBundle,
    ratio: float,
    seed: int,
) -> tuple[DatasetBundle, Split]:
    """Contaminate the unlabeled pool with OOD records at the given fraction.

    Returns a merged bundle (inlier pool labels stripped to UNLABELED, injected
    records carrying OOD_TRUTH, re-id'd past the existing id range) and an
    updated split whose unlabeled set is the shuffled union. ``ratio`` is the
    OOD fraction of the mixed pool.
    """
    if not (0 <= ratio < 1):
        raise ParameterError("ratio must lie in [0, 1)")
    if ratio == 0:
        return bundle, split
    if ood_pool.d != bundle.d:
        raise FormatError(
            f"OOD pool dimension {ood_pool.d} does not match bundle dimension {bundle.d}"
        )

    n_u = len(split.unlabeled)
    n_ood = round(ratio * n_u / (1.0 - ratio))
    if n_ood > len(ood_pool):
        raise CapacityError(-1, n_ood, len(ood_pool))

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    pick = rng.choice(len(ood_pool), size=n_ood, replace=False)

    next_id = int(bundle.ids.max()) + 1 if len(bundle) else 0
    ood_ids = np.arange(next_id, next_id + n_ood, dtype=np.uint64)

    labels = bundle.labels.copy()
    pool_rows = bundle.rows_for(split.unlabeled)
    stripped = labels[pool_rows]
    stripped[stripped >= 0] = UNLABELED
    labels[pool_rows] = stripped

    merged = DatasetBundle(
        ids=np.concatenate([bundle.ids, ood_ids]),
        labels=np.concatenate([labels, np.full(n_ood, OOD_TRUTH, dtype=np.int32)]),
        weak=np.concatenate([bundle.weak, ood_pool.weak[pick]]),
        strong=np.concatenate([bundle.strong, ood_pool.strong[pick]]),
        K=bundle.K,
        class_names=list(bundle.class_names),
        manifest={
            **bundle.manifest,
            "ood_mixed": {
                "source": ood_pool.manifest.get("source", "unknown"),
                "ratio": ratio,
                "count": n_ood,
                "seed": seed,
            },
        },
    )

    mixed = np.concatenate([np.asarray(split.unlabeled, dtype=np.uint64), ood_ids])
    mixed = mixed[rng.permutation(len(mixed))]
    truth = split.truth.merged(SealedTruth(ood_ids, np.full(n_ood, OOD_TRUTH)))
    return merged, Split(
        labeled=split.labeled, unlabeled=mixed, test=split.test, truth=truth
    )


def class_prior(bundle: DatasetBundle, labeled: Sequence[int] | np.ndarray) -> ClassPrior:
    """Empirical class distribution over the given labeled ids."""
    ids = np.asarray(labeled)
    if len(ids) == 0:
        raise ContractError("cannot estimate a prior from an empty id set")
    rows = bundle.rows_for(ids)
    labels = bundle.labels[rows]
    if (labels < 0).any():
        bad = int(ids[int(np.flatnonzero(labels < 0)[0])])
        raise ContractError(f"record {bad} is not labeled")
    counts = np.bincount(labels, minlength=bundle.K)
    return ClassPrior.from_counts(counts)


def labeled_class_counts(bundle: DatasetBundle, labeled: Sequence[int] | np.ndarray) -> np.ndarray:
    """Per-class training counts for group-accuracy reporting."""
    rows = bundle.rows_for(np.asarray(labeled))
    labels = bundle.labels[rows]
    if (labels < 0).any():
        raise ContractError("labeled id set contains non-labeled records")
    return np.bincount(labels, minlength=bundle.K)


def _record_dtype(d: int) -> np.dtype:
    return np.dtype(
        [("id", "<u8"), ("label", "<i4"), ("weak", "<f4", (d,)), ("strong", "<f4", (d,))]
    )


def write_bundle(bundle: DatasetBundle, path: str | Path) -> None:
    """Serialize a bundle to the binary format; byte-identical per bundle."""
    records = np.empty(len(bundle), dtype=_record_dtype(bundle.d))
    records["id"] = bundle.ids
    records["label"] = bundle.labels
    records["weak"] = bundle.weak
    records["strong"] = bundle.strong

    manifest = dict(bundle.manifest)
    manifest["class_names"] = list(bundle.class_names)
    manifest_bytes = json.dumps(manifest, sort_keys=True).encode("utf-8")

    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, bundle.d, bundle.K, len(bundle)))
        fh.write(records.tobytes())
        fh.write(struct.pack("<Q", len(manifest_bytes)))
        fh.write(manifest_bytes)


def read_bundle(path: str | Path) -> DatasetBundle:
    """Parse and validate a bundle file; malformed input raises FormatError."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError("file too short for header", offset=len(data))
    magic, version, d, K, n = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}", offset=4)
    if d == 0:
        raise FormatError("embedding dimension must be positive", offset=8)

    dtype = _record_dtype(d)
    records_start = _HEADER.size
    records_end = records_start + n * dtype.itemsize
    if len(data) < records_end:
        raise FormatError(
            f"record payload truncated: header declares {n} records "
            f"({n * dtype.itemsize} bytes), file ends early",
            offset=len(data),
        )
    records = np.frombuffer(data, dtype=dtype, count=n, offset=records_start)

    if len(data) < records_end + 8:
        raise FormatError("missing manifest length", offset=records_end)
    (manifest_len,) = struct.unpack_from("<Q", data, records_end)
    manifest_start = records_end + 8
    if len(data) < manifest_start + manifest_len:
        raise FormatError("manifest truncated", offset=len(data))
    try:
        manifest = json.loads(data[manifest_start : manifest_start + manifest_len])
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest is not valid JSON: {exc}", offset=manifest_start)

    class_names = manifest.pop("class_names", None)
    if class_names is None or len(class_names) != K:
        raise FormatError(
            f"manifest must carry exactly {K} class names", offset=manifest_start
        )

    try:
        return DatasetBundle(
            ids=records["id"].copy(),
            labels=records["label"].copy(),
            weak=records["weak"].copy(),
            strong=records["strong"].copy(),
            K=K,
            class_names=list(class_names),
            manifest=manifest,
        )
    except ParameterError as exc:
        raise FormatError(f"invalid bundle contents: {exc}", offset=records_start)


def write_split(split: Split, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, ids in (
        ("labeled", split.labeled),
        ("unlabeled", split.unlabeled),
        ("test", split.test),
    ):
        (out / f"{name}.json").write_text(json.dumps([int(v) for v in ids]))
    (out / "truth.json").write_text(split.truth.to_json())


def read_split(in_dir: str | Path) -> Split:
    src = Path(in_dir)
    parts = {}
    for name in ("labeled", "unlabeled", "test"):
        path = src / f"{name}.json"
        if not path.exists():
            raise FormatError(f"missing split file {path}")
        parts[name] = np.array(json.loads(path.read_text()), dtype=np.uint64)
    truth_path = src / "truth.json"
    truth = (
        SealedTruth.from_json(truth_path.read_text())
        if truth_path.exists()
        else SealedTruth([], [])
    )
    return Split(parts["labeled"], parts["unlabeled"], parts["test"], truth)
