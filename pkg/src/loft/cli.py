"""Command-line surface: synth, split, train, eval, sweep.

Every command resolves its flags, runs the corresponding library calls, and
drops a manifest next to its outputs (resolved arguments, input digests, tool
version, seed, wall-clock timing) so a run directory is reproducible from the
manifest alone. Exit codes: 0 success, 2 usage, 3 numerical failure, 4 I/O or
format problems. LOFT_THREADS caps sweep parallelism.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .embedstore import (
    SplitSpec,
    labeled_class_counts,
    make_longtail_split,
    mix_ood,
    read_bundle,
    read_split,
    synth_dataset,
    write_bundle,
    write_split,
)
from .errors import (
    CapacityError,
    ContractError,
    FormatError,
    LoftError,
    ParameterError,
    TrainingDivergenceError,
)
from .evalkit import evaluate
from .losses import LossConfig
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, train
from .zeroshot import class_mean_prototypes, read_prototypes

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

MODE_FLAGS = {"loft": "loft", "loft-ow": "loft_ow", "supervised": "supervised_only"}


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(path: Path, command, args_dict, inputs, outputs, seed, t0) -> None:
    manifest = {
        "tool": "loft",
        "version": __version__,
        "command": command,
        "arguments": {k: v for k, v in sorted(args_dict.items())},
        "inputs": {str(p): _sha256(Path(p)) for p in inputs},
        "outputs": [str(o) for o in outputs],
        "seed": seed,
        "started_utc": datetime.fromtimestamp(t0, tz=timezone.utc).isoformat(),
        "elapsed_seconds": round(time.time() - t0, 3),
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _args_dict(args: argparse.Namespace) -> dict:
    skip = {"func"}
    return {k: v for k, v in vars(args).items() if k not in skip}


def cmd_synth(args) -> int:
    t0 = time.time()
    bundle = synth_dataset(
        K=args.classes,
        d=args.dim,
        per_class=args.per_class,
        separation=args.separation,
        seed=args.seed,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_bundle(bundle, out)
    _write_manifest(
        Path(str(out) + ".manifest.json"),
        "synth", _args_dict(args), [], [out], args.seed, t0,
    )
    return EXIT_OK


def cmd_split(args) -> int:
    t0 = time.time()
    bundle = read_bundle(args.bundle)
    gamma_u = args.gamma_u
    if gamma_u not in ("consistent", "uniform", "reversed"):
        gamma_u = float(gamma_u)
    spec = SplitSpec(n1=args.n1, gamma_l=args.gamma_l, m1=args.m1, gamma_u=gamma_u, seed=args.seed)
    split = make_longtail_split(bundle, spec)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    inputs = [Path(args.bundle)]
    outputs = [out / f"{n}.json" for n in ("labeled", "unlabeled", "test", "truth")]
    train_bundle = args.bundle
    if args.ood_ratio > 0:
        pool = read_bundle(args.ood_pool)
        bundle, split = mix_ood(bundle, split, pool, args.ood_ratio, seed=args.ood_seed)
        pool_path = out / "pool.lftb"
        write_bundle(bundle, pool_path)
        inputs.append(Path(args.ood_pool))
        outputs.append(pool_path)
        train_bundle = str(pool_path)
    write_split(split, out)
    (out / "split_info.json").write_text(
        json.dumps({"train_bundle": train_bundle, "K": bundle.K}, indent=2)
    )
    outputs.append(out / "split_info.json")
    _write_manifest(out / "manifest.json", "split", _args_dict(args), inputs, outputs, args.seed, t0)
    return EXIT_OK


def _build_train_config(args) -> TrainConfig:
    loss = LossConfig(
        tau=args.tau,
        c_u=args.c_u,
        c_ood=args.c_ood,
        lambda1=args.lambda1,
        lambda2=args.lambda2,
    )
    return TrainConfig(
        loss=loss,
        mode=MODE_FLAGS[args.mode],
        t_hc=args.t_hc,
        iterations=args.iters,
        batch_labeled=args.batch_labeled,
        batch_unlabeled=args.batch_unlabeled,
        learning_rate=args.lr,
        momentum=args.momentum,
        weight_decay=args.weight_decay,
        seed=args.seed,
        eval_every=args.eval_every,
        adapter_dim=args.adapter_dim,
        cosine_lr=args.cosine_lr,
    )


def _load_prototypes(args, bundle, split):
    if args.prototypes:
        return read_prototypes(args.prototypes)
    if args.prototypes_from_labeled:
        return class_mean_prototypes(bundle, split.labeled, temperature=args.zs_temperature)
    return None


def _run_train(args, out: Path) -> tuple[Path, list[Path]]:
    bundle = read_bundle(args.bundle)
    split = read_split(args.splits)
    cfg = _build_train_config(args)
    prototypes = _load_prototypes(args, bundle, split)

    state = None
    if args.resume:
        state, _ = load_checkpoint(args.resume)
    state, log = train(bundle, split, cfg, prototypes=prototypes, state=state)

    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "checkpoint.lftc"
    save_checkpoint(state, cfg, ckpt)
    log_path = out / "trainlog.jsonl"
    log_path.write_text(log.to_jsonl())
    return ckpt, [ckpt, log_path]


def cmd_train(args) -> int:
    t0 = time.time()
    out = Path(args.out)
    _, outputs = _run_train(args, out)
    inputs = [Path(args.bundle)] + [Path(args.splits) / f"{n}.json" for n in ("labeled", "unlabeled", "test")]
    if args.prototypes:
        inputs.append(Path(args.prototypes))
    _write_manifest(out / "manifest.json", "train", _args_dict(args), inputs, outputs, args.seed, t0)
    return EXIT_OK


def _run_eval(args, checkpoint: Path, out: Path) -> tuple[float, list[Path]]:
    bundle = read_bundle(args.bundle)
    split = read_split(args.splits)
    state, _ = load_checkpoint(checkpoint)
    counts = labeled_class_counts(bundle, split.labeled)
    ood_weak = None
    if args.ood:
        ood_weak = read_bundle(args.ood).weak
    report = evaluate(
        state.head,
        bundle,
        split.test,
        counts,
        ood_weak=ood_weak,
        thresholds=(args.t_many, args.t_few),
        n_bins=args.bins,
    )
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "report.json"
    report_path.write_text(report.to_json())
    csv_path = out / "reliability.csv"
    csv_path.write_text(report.bins.to_csv())
    return report.groups.overall, [report_path, csv_path]


def cmd_eval(args) -> int:
    t0 = time.time()
    out = Path(args.out)
    _, outputs = _run_eval(args, Path(args.checkpoint), out)
    inputs = [Path(args.bundle), Path(args.checkpoint)]
    if args.ood:
        inputs.append(Path(args.ood))
    _write_manifest(out / "manifest.json", "eval", _args_dict(args), inputs, outputs, None, t0)
    return EXIT_OK


def _parse_grid(text: str) -> list[float]:
    parts = text.split(":")
    if len(parts) != 3:
        raise ParameterError("grid must be start:stop:step")
    start, stop, step = (float(p) for p in parts)
    if step <= 0 or stop < start:
        raise ParameterError("grid needs step > 0 and stop >= start")
    values = []
    v = start
    while v <= stop + 1e-9:
        values.append(round(v, 10))
        v += step
    return values


def _sweep_point(payload: dict) -> tuple[float, float]:
    """One grid point: train then eval in its own subdirectory."""
    args = argparse.Namespace(**payload["args"])
    value = payload["value"]
    out = Path(payload["out"])
    setattr(args, payload["param_attr"], value)
    ckpt, _ = _run_train(args, out)
    accuracy, _ = _run_eval(args, ckpt, out)
    return value, accuracy


def cmd_sweep(args) -> int:
    t0 = time.time()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    values = _parse_grid(args.grid)
    param_attr = {"c-u": "c_u", "c-ood": "c_ood"}[args.param]

    jobs = []
    for value in values:
        sub = out / f"{param_attr}_{value:g}"
        payload = dict(args=_args_dict(args), value=value, out=str(sub), param_attr=param_attr)
        jobs.append(payload)

    workers = int(os.environ.get("LOFT_THREADS", "1"))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_point, jobs))
    else:
        results = [_sweep_point(job) for job in jobs]

    csv_path = out / "sweep.csv"
    with open(csv_path, "w") as fh:
        fh.write(f"{param_attr},accuracy\n")
        for value, accuracy in results:
            fh.write(f"{value:g},{accuracy:.6f}\n")
    _write_manifest(
        out / "manifest.json", "sweep", _args_dict(args),
        [Path(args.bundle)], [csv_path], args.seed, t0,
    )
    return EXIT_OK


def _positive_int(name):
    def parse(text):
        value = int(text)
        if value < 1:
            raise argparse.ArgumentTypeError(f"{name} must be >= 1")
        return value

    return parse


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--bundle", required=True, help="training bundle file")
    p.add_argument("--splits", required=True, help="directory holding split files")
    p.add_argument("--mode", choices=sorted(MODE_FLAGS), default="loft")
    p.add_argument("--c-u", dest="c_u", type=float, default=0.6)
    p.add_argument("--c-ood", dest="c_ood", type=float, default=0.6)
    p.add_argument("--t-hc", dest="t_hc", type=float, default=0.95)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--lambda1", type=float, default=1.0)
    p.add_argument("--lambda2", type=float, default=0.5)
    p.add_argument("--iters", type=_positive_int("--iters"), default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=0.2)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--batch-labeled", type=_positive_int("--batch-labeled"), default=128)
    p.add_argument("--batch-unlabeled", type=_positive_int("--batch-unlabeled"), default=256)
    p.add_argument("--eval-every", type=_positive_int("--eval-every"), default=100)
    p.add_argument("--adapter-dim", type=int, default=None)
    p.add_argument("--cosine-lr", action="store_true")
    p.add_argument("--prototypes", help="prototype bundle file (stage-1 filter)")
    p.add_argument(
        "--prototypes-from-labeled",
        action="store_true",
        help="derive prototypes as labeled-split class means",
    )
    p.add_argument("--zs-temperature", type=float, default=16.0)
    p.add_argument("--resume", help="checkpoint to continue from")


def _add_eval_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--ood", help="bundle of OOD records for the detection block")
    p.add_argument("--t-many", dest="t_many", type=float, default=100)
    p.add_argument("--t-few", dest="t_few", type=float, default=20)
    p.add_argument("--bins", type=_positive_int("--bins"), default=15)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="loft",
        description="Long-tailed semi-supervised training over frozen embeddings",
    )
    parser.add_argument("--version", action="version", version=f"loft {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic embedding bundle")
    p.add_argument("--classes", type=_positive_int("--classes"), required=True)
    p.add_argument("--dim", type=_positive_int("--dim"), required=True)
    p.add_argument("--per-class", dest="per_class", type=_positive_int("--per-class"), required=True)
    p.add_argument("--separation", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="build long-tailed labeled/unlabeled/test splits")
    p.add_argument("--bundle", required=True)
    p.add_argument("--n1", type=_positive_int("--n1"), required=True)
    p.add_argument("--gamma-l", dest="gamma_l", type=float, required=True)
    p.add_argument("--m1", type=int, default=0)
    p.add_argument("--gamma-u", dest="gamma_u", default="consistent",
                   help="consistent, uniform, reversed, or a numeric ratio")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ood-pool", dest="ood_pool")
    p.add_argument("--ood-ratio", dest="ood_ratio", type=float, default=0.0)
    p.add_argument("--ood-seed", dest="ood_seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="run the training loop")
    _add_train_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("--bundle", required=True)
    p.add_argument("--splits", required=True)
    p.add_argument("--checkpoint", required=True)
    _add_eval_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="grid-sweep one threshold, training per point")
    _add_train_flags(p)
    _add_eval_flags(p)
    p.add_argument("--param", choices=("c-u", "c-ood"), required=True)
    p.add_argument("--grid", required=True, help="start:stop:step")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def _validate(parser: argparse.ArgumentParser, args: argparse.Namespace) -> None:
    if args.command == "split" and args.ood_ratio > 0 and not args.ood_pool:
        parser.error("--ood-ratio requires --ood-pool")
    if args.command in ("train", "sweep"):
        if args.mode == "loft-ow" and not (args.prototypes or args.prototypes_from_labeled):
            parser.error("--mode loft-ow requires --prototypes or --prototypes-from-labeled")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _validate(parser, args)
    try:
        return args.func(args)
    except TrainingDivergenceError as exc:
        print(f"loft: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, OSError) as exc:
        print(f"loft: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ParameterError, ContractError, CapacityError) as exc:
        print(f"loft: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LoftError as exc:
        print(f"loft: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
