"""Training loop for supervised-only, semi-supervised, and open-world modes.

Each step draws one labeled and one unlabeled batch with replacement from
dedicated seeded streams, evaluates the combined objective on the current
parameter snapshot, and applies a single optimizer update. In open-world mode
the unlabeled pool is pre-filtered once by the zero-shot high-confidence gate
before the loop starts. Runs are fully deterministic per seed, and a
checkpoint restores the exact parameter trajectory, sampler streams included.

Ground truth of pool records stays in the sealed channel: the update path
never reads it, only the periodic log entries do (pseudo-label accuracy).
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .embedstore import DatasetBundle, Split, UNLABELED, class_prior
from .errors import (
    CheckpointVersionError,
    ContractError,
    FormatError,
    ParameterError,
    TrainingDivergenceError,
)
from .head import (
    ClassifierHead,
    OptimizerState,
    apply_gradients,
    forward,
    init_head,
    init_optimizer,
    parameters,
    softmax,
)
from .losses import LossConfig, UnlabeledBatchStats, supervised_loss, total_loss, unlabeled_loss
from .zeroshot import PrototypeBank, stage1_filter

MODES = ("loft", "loft_ow", "supervised_only")

CHECKPOINT_MAGIC = b"LFTC"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    loss: LossConfig = field(default_factory=LossConfig)
    mode: str = "loft"
    t_hc: float = 0.95
    iterations: int = 1000
    batch_labeled: int = 128
    batch_unlabeled: int = 256
    learning_rate: float = 0.2
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    eval_every: int = 100
    adapter_dim: int | None = None
    cosine_lr: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ParameterError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.iterations < 1:
            raise ParameterError("iterations must be >= 1")
        if self.batch_labeled < 1 or self.batch_unlabeled < 1:
            raise ParameterError("batch sizes must be >= 1")
        if not 0 < self.t_hc < 1:
            raise ParameterError("t_hc must lie strictly inside (0, 1)")
        if self.eval_every < 1:
            raise ParameterError("eval_every must be >= 1")

    def to_dict(self) -> dict:
        payload = asdict(self)
        return payload


def config_from_dict(payload: dict) -> TrainConfig:
    payload = dict(payload)
    payload["loss"] = LossConfig(**payload["loss"])
    return TrainConfig(**payload)


@dataclass
class TrainLogEntry:
    step: int
    loss_s: float
    loss_u: float
    stats: UnlabeledBatchStats | None
    test_accuracy: float
    pseudo_label_accuracy: float | None

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "loss_s": self.loss_s,
            "loss_u": self.loss_u,
            "stats": self.stats.to_dict() if self.stats else None,
            "test_accuracy": self.test_accuracy,
            "pseudo_label_accuracy": self.pseudo_label_accuracy,
        }


@dataclass
class TrainLog:
    entries: list[TrainLogEntry] = field(default_factory=list)

    def append(self, entry: TrainLogEntry) -> None:
        if self.entries and entry.step <= self.entries[-1].step:
            raise ContractError("log steps must be strictly increasing")
        self.entries.append(entry)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e.to_dict()) + "\n" for e in self.entries)

    @classmethod
    def from_jsonl(cls, text: str) -> "TrainLog":
        log = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            payload = json.loads(line)
            stats = payload["stats"]
            log.append(
                TrainLogEntry(
                    step=payload["step"],
                    loss_s=payload["loss_s"],
                    loss_u=payload["loss_u"],
                    stats=UnlabeledBatchStats(**stats) if stats else None,
                    test_accuracy=payload["test_accuracy"],
                    pseudo_label_accuracy=payload["pseudo_label_accuracy"],
                )
            )
        return log


@dataclass
class TrainerState:
    """Everything a resumed run needs to continue bit-identically."""

    head: ClassifierHead
    opt: OptimizerState
    step: int
    rng_labeled: np.random.Generator
    rng_unlabeled: np.random.Generator


def _init_state(bundle: DatasetBundle, cfg: TrainConfig) -> TrainerState:
    # seed expansion: child 0 labeled sampler, 1 unlabeled sampler, 2 adapter init
    children = np.random.SeedSequence(cfg.seed).spawn(3)
    head = init_head(bundle.K, bundle.d, cfg.adapter_dim, seed=children[2])
    opt = init_optimizer(head, cfg.learning_rate, cfg.momentum, cfg.weight_decay)
    return TrainerState(
        head=head,
        opt=opt,
        step=0,
        rng_labeled=np.random.default_rng(children[0]),
        rng_unlabeled=np.random.default_rng(children[1]),
    )


def _lr_at(cfg: TrainConfig, step: int) -> float:
    if not cfg.cosine_lr:
        return cfg.learning_rate
    return cfg.learning_rate * 0.5 * (1.0 + math.cos(math.pi * step / cfg.iterations))


def _test_accuracy(head: ClassifierHead, bundle: DatasetBundle, test_rows: np.ndarray, test_labels: np.ndarray) -> float:
    if len(test_rows) == 0:
        return float("nan")
    preds = forward(head, bundle.weak[test_rows]).argmax(axis=1)
    return float((preds == test_labels).mean())


def _pseudo_label_accuracy(
    head: ClassifierHead,
    bundle: DatasetBundle,
    pool_ids: np.ndarray,
    pool_rows: np.ndarray,
    split: Split,
    cfg: TrainConfig,
) -> float | None:
    """Accuracy of hard pseudo-labels against the sealed truth (log-only path)."""
    if split.truth is None or len(split.truth) == 0 or len(pool_rows) == 0:
        return None
    probs = softmax(forward(head, bundle.weak[pool_rows]))
    conf = probs.max(axis=1)
    hard = conf > cfg.loss.c_u
    if cfg.mode == "loft_ow":
        hard &= conf > cfg.loss.c_ood
    if not hard.any():
        return None
    truth = split.truth.lookup(pool_ids[hard])
    inlier = truth >= 0
    if not inlier.any():
        return None
    return float((probs.argmax(axis=1)[hard][inlier] == truth[inlier]).mean())


def train(
    bundle: DatasetBundle,
    split: Split,
    cfg: TrainConfig,
    prototypes: PrototypeBank | None = None,
    state: TrainerState | None = None,
) -> tuple[TrainerState, TrainLog]:
    """Run steps state.step..cfg.iterations; returns final state and log.

    The returned state holds the trained head (``state.head``). Pass a state
    loaded from a checkpoint to resume; the parameter trajectory matches an
    uninterrupted run bit for bit.
    """
    if cfg.mode == "loft_ow" and prototypes is None:
        raise ContractError("loft_ow mode requires a prototype bank for the pre-filter")
    if len(split.labeled) == 0:
        raise ContractError("training requires a non-empty labeled split")

    labeled_rows = bundle.rows_for(split.labeled)
    labeled_y = bundle.labels[labeled_rows]
    if (labeled_y < 0).any():
        raise ContractError("labeled split contains non-labeled records")
    prior = class_prior(bundle, split.labeled)

    # training view: pool labels are sentinels regardless of what the caller's
    # bundle carries, so the update path cannot observe pool ground truth
    train_labels = bundle.labels.copy()
    if len(split.unlabeled):
        pool_rows_all = bundle.rows_for(split.unlabeled)
        stripped = train_labels[pool_rows_all]
        stripped[stripped >= 0] = UNLABELED
        train_labels[pool_rows_all] = stripped

    if cfg.mode == "loft_ow":
        kept = stage1_filter(bundle, split.unlabeled, prototypes, cfg.t_hc)
        pool_ids = kept.kept
    else:
        pool_ids = np.asarray(split.unlabeled, dtype=np.uint64)
    pool_rows = bundle.rows_for(pool_ids) if len(pool_ids) else np.array([], dtype=np.int64)

    use_unlabeled = cfg.mode != "supervised_only"
    if use_unlabeled and len(pool_ids) == 0:
        raise ContractError("semi-supervised modes require a non-empty unlabeled pool")

    test_rows = bundle.rows_for(split.test) if len(split.test) else np.array([], dtype=np.int64)
    test_labels = bundle.labels[test_rows]

    if state is None:
        state = _init_state(bundle, cfg)
    if state.step >= cfg.iterations:
        raise ParameterError(
            f"state is already at step {state.step}, nothing to run up to {cfg.iterations}"
        )

    log = TrainLog()
    for step in range(state.step, cfg.iterations):
        lb = labeled_rows[state.rng_labeled.integers(0, len(labeled_rows), cfg.batch_labeled)]
        sup = supervised_loss(
            state.head,
            bundle.weak[lb].astype(np.float64),
            bundle.labels[lb],
            prior,
            cfg.loss.tau,
        )

        if use_unlabeled:
            ub = pool_rows[state.rng_unlabeled.integers(0, len(pool_rows), cfg.batch_unlabeled)]
            loss_u, grads_u, stats = unlabeled_loss(
                state.head,
                bundle.weak[ub].astype(np.float64),
                bundle.strong[ub].astype(np.float64),
                train_labels[ub],
                cfg.loss,
                open_world=(cfg.mode == "loft_ow"),
                prior=prior,
            )
            loss_value, grads = total_loss(sup, (loss_u, grads_u))
            batch_ids = np.concatenate([bundle.ids[lb], bundle.ids[ub]])
        else:
            loss_u, stats = 0.0, None
            loss_value, grads = sup
            batch_ids = bundle.ids[lb]

        if not math.isfinite(loss_value):
            raise TrainingDivergenceError(step, batch_ids, "non-finite loss")

        state.opt.learning_rate = _lr_at(cfg, step)
        apply_gradients(state.head, state.opt, grads)
        state.step = step + 1

        if state.step % cfg.eval_every == 0 or state.step == cfg.iterations:
            log.append(
                TrainLogEntry(
                    step=state.step,
                    loss_s=sup[0],
                    loss_u=loss_u,
                    stats=stats,
                    test_accuracy=_test_accuracy(state.head, bundle, test_rows, test_labels),
                    pseudo_label_accuracy=_pseudo_label_accuracy(
                        state.head, bundle, pool_ids, pool_rows, split, cfg
                    )
                    if use_unlabeled
                    else None,
                )
            )
    return state, log


def _rng_state_to_json(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _rng_from_json(payload: dict) -> np.random.Generator:
    bit_gen_cls = getattr(np.random, payload["bit_generator"])
    gen = np.random.Generator(bit_gen_cls())
    gen.bit_generator.state = payload
    return gen


def save_checkpoint(state: TrainerState, cfg: TrainConfig, path: str | Path) -> None:
    """Versioned binary: JSON header plus raw float64 parameter/velocity arrays."""
    arrays: list[tuple[str, np.ndarray]] = []
    for name, arr in parameters(state.head).items():
        arrays.append((f"param:{name}", arr))
    for name, arr in state.opt.velocity.items():
        arrays.append((f"velocity:{name}", arr))

    header = {
        "k": state.head.K,
        "d": state.head.d,
        "adapter_dim": state.head.adapter.r if state.head.adapter else None,
        "step": state.step,
        "opt": {
            "learning_rate": state.opt.learning_rate,
            "momentum": state.opt.momentum,
            "weight_decay": state.opt.weight_decay,
            "step": state.opt.step,
        },
        "rng_labeled": _rng_state_to_json(state.rng_labeled),
        "rng_unlabeled": _rng_state_to_json(state.rng_unlabeled),
        "config": cfg.to_dict(),
        "arrays": [{"name": name, "shape": list(arr.shape)} for name, arr in arrays],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype=np.float64).tobytes())


def load_checkpoint(path: str | Path) -> tuple[TrainerState, TrainConfig]:
    """Inverse of save_checkpoint; any inconsistency raises instead of a partial load."""
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise FormatError("file too short for checkpoint header", offset=len(data))
    if data[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {data[:4]!r}", offset=0)
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version}", offset=4)
    (header_len,) = struct.unpack_from("<Q", data, 8)
    header_start = 16
    if len(data) < header_start + header_len:
        raise FormatError("checkpoint header truncated", offset=len(data))
    try:
        header = json.loads(data[header_start : header_start + header_len])
    except json.JSONDecodeError as exc:
        raise FormatError(f"checkpoint header is not valid JSON: {exc}", offset=header_start)

    offset = header_start + header_len
    arrays: dict[str, np.ndarray] = {}
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        nbytes = int(np.prod(shape)) * 8
        if len(data) < offset + nbytes:
            raise FormatError(f"array {spec['name']} truncated", offset=len(data))
        arrays[spec["name"]] = (
            np.frombuffer(data, dtype="<f8", count=int(np.prod(shape)), offset=offset)
            .reshape(shape)
            .copy()
        )
        offset += nbytes
    if offset != len(data):
        raise FormatError("trailing bytes after checkpoint payload", offset=offset)

    cfg = config_from_dict(header["config"])
    adapter_dim = header["adapter_dim"]
    head = init_head(header["k"], header["d"], adapter_dim)
    head.W = arrays["param:W"]
    head.b = arrays["param:b"]
    if adapter_dim is not None:
        head.adapter.down_w = arrays["param:adapter_down_w"]
        head.adapter.down_b = arrays["param:adapter_down_b"]
        head.adapter.up_w = arrays["param:adapter_up_w"]
        head.adapter.up_b = arrays["param:adapter_up_b"]

    opt = OptimizerState(
        learning_rate=header["opt"]["learning_rate"],
        momentum=header["opt"]["momentum"],
        weight_decay=header["opt"]["weight_decay"],
        step=header["opt"]["step"],
        velocity={
            name.split(":", 1)[1]: arr
            for name, arr in arrays.items()
            if name.startswith("velocity:")
        },
    )
    expected = set(parameters(head).keys())
    if set(opt.velocity.keys()) != expected:
        raise FormatError("checkpoint velocity buffers do not match parameters")

    state = TrainerState(
        head=head,
        opt=opt,
        step=header["step"],
        rng_labeled=_rng_from_json(header["rng_labeled"]),
        rng_unlabeled=_rng_from_json(header["rng_unlabeled"]),
    )
    return state, cfg
