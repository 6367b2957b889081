"""``icudyn`` command line: synth, split, preprocess, train, evaluate, sweep.

Every command writes its outputs under ``--out`` together with a
``manifest.json`` (command, config snapshot, seeds, input and output SHA-256
checksums, format versions, wall time). Failures print one line
``<CODE>: <message>`` on stderr and exit with 2 (usage), 3 (data) or
4 (numeric).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .errors import DataValidationError, IcudynError, NumericError

log = logging.getLogger("icudyn")

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


# ---------------------------------------------------------------------------
# manifest


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _checksums(paths) -> dict[str, str]:
    out = {}
    for p in paths:
        p = Path(p)
        if p.is_dir():
            for f in sorted(q for q in p.rglob("*") if q.is_file()):
                out[str(f)] = sha256_file(f)
        elif p.exists():
            out[str(p)] = sha256_file(p)
    return out


class RunManifest:
    """Provenance record written next to a command's outputs."""

    def __init__(self, command: str, argv: list[str], config: dict | None, seeds: dict, inputs):
        self.command = command
        self.argv = list(argv)
        self.config = config
        self.seeds = seeds
        self.inputs = _checksums(inputs)
        self.started = time.time()

    def write(self, out_dir, outputs) -> Path:
        from .checkpoint import FORMAT_VERSION
        from .config import CONFIG_VERSION

        out_dir = Path(out_dir)
        path = out_dir / MANIFEST_NAME
        record = {
            "manifest_version": MANIFEST_VERSION,
            "icudyn_version": __version__,
            "command": self.command,
            "argv": self.argv,
            "config": self.config,
            "seeds": self.seeds,
            "inputs": self.inputs,
            "outputs": {k: v for k, v in _checksums(outputs).items() if Path(k) != path},
            "formats": {"checkpoint": FORMAT_VERSION, "config": CONFIG_VERSION, "manifest": MANIFEST_VERSION},
            "started_at": datetime.fromtimestamp(self.started, timezone.utc).isoformat(),
            "wall_time_seconds": round(time.time() - self.started, 3),
        }
        path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


# ---------------------------------------------------------------------------
# commands


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(args) -> None:
    from .catalog import load_catalog, load_demo_catalog
    from .config import load_config
    from .synth import generate_cohort, mortality_fraction, write_cohort

    cfg = load_config(args.config)
    catalog = load_catalog(args.catalog) if args.catalog else load_demo_catalog()
    manifest = RunManifest("synth", args.argv, cfg.to_dict()["synth"], {"synth": cfg.synth.seed},
                           [p for p in (args.config, args.catalog) if p])
    cohort = generate_cohort(cfg.synth, catalog)
    out = _out_dir(args.out)
    paths = write_cohort(cohort, out)
    log.info("%d encounters, mortality %.4f", len(cohort), mortality_fraction(cohort))
    manifest.write(out, paths.values())


def _labeled_patients(events_path, labels_path):
    from .events import read_events_csv, read_labels_csv
    from .pipeline import attach_labels

    events, _ = attach_labels(read_events_csv(events_path), read_labels_csv(labels_path))
    return events["patient_id"].unique()


def cmd_split(args) -> None:
    from .config import seed_override
    from .preprocess import split_patients

    seed = args.seed
    if seed is None:
        env = seed_override()
        seed = 0 if env is None else env
    manifest = RunManifest("split", args.argv, {"train_fraction": args.fraction}, {"split": seed},
                           [args.events, args.labels])
    split = split_patients(_labeled_patients(args.events, args.labels), args.fraction, seed)
    out = _out_dir(args.out)
    split.to_csv(out / "split.csv")
    manifest.write(out, [out / "split.csv"])


def cmd_preprocess(args) -> None:
    from .catalog import load_catalog, load_demo_catalog
    from .events import read_events_csv, read_labels_csv
    from .pipeline import prepare, write_prepared
    from .preprocess import SplitAssignment

    inputs = [args.events, args.labels, args.split] + ([args.catalog] if args.catalog else [])
    manifest = RunManifest("preprocess", args.argv, {"snapshot": args.snapshot}, {}, inputs)
    catalog = load_catalog(args.catalog) if args.catalog else load_demo_catalog()
    split = SplitAssignment.from_csv(args.split)
    data = prepare(read_events_csv(args.events), read_labels_csv(args.labels), catalog, split=split,
                   unknown=args.unknown)
    out = _out_dir(args.out)
    write_prepared(data, out, snapshot=args.snapshot)
    log.info("%d train / %d holdout encounters", len(data.train), len(data.holdout))
    manifest.write(out, [out / "norm_stats.csv", out / "split.csv", out / "encounters.csv", out / "matrices"]
                   + ([out / "snapshots"] if args.snapshot else []))


def _write_history(history, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for i, v in enumerate(history, 1):
            w.writerow([i, repr(float(v))])


def cmd_train(args) -> None:
    import numpy as np

    from .baselines import feature_matrix, save_static, train_lr, train_mlp
    from .config import load_config
    from .model import save_params, train
    from .pipeline import read_prepared

    cfg = load_config(args.config)
    section = {"rnn": cfg.rnn, "lr": cfg.lr, "mlp": cfg.mlp}[args.model]
    snapshot = cfg.to_dict()["train"][args.model]
    manifest = RunManifest("train", args.argv, {args.model: snapshot}, {args.model: section.seed},
                           [p for p in (args.config,) if p] + [Path(args.data) / "encounters.csv",
                                                               Path(args.data) / "matrices" / "train"])
    matrices = read_prepared(args.data, "train")
    if not matrices:
        raise DataValidationError(f"{args.data}: no training encounters")
    out = _out_dir(args.out)
    ckpt = out / f"{args.model}.ckpt"
    if args.model == "rnn":
        result = train(matrices, section)
        save_params(result.params, ckpt)
    else:
        X = feature_matrix(matrices, args.at_hours * 60.0)
        y = np.array([0 if m.survived else 1 for m in matrices])
        result = (train_lr if args.model == "lr" else train_mlp)(X, y, section)
        save_static(result.model, ckpt)
    _write_history(result.history, out / "loss_history.csv")
    manifest.write(out, [ckpt, Path(str(ckpt) + ".manifest.txt"), out / "loss_history.csv"])


def _score(ckpt_path, matrices, observe_hours: float, delta_t: float):
    from .baselines import feature_matrix, from_checkpoint, predict_lr, predict_mlp
    from .checkpoint import read_checkpoint
    from .model import from_checkpoint as rnn_from_checkpoint
    from .model import predict_many

    ckpt = read_checkpoint(ckpt_path)
    if ckpt.model_type == "rnn":
        return ckpt.model_type, predict_many(matrices, [observe_hours * 60.0], delta_t, rnn_from_checkpoint(ckpt))[:, 0]
    model = from_checkpoint(ckpt)
    X = feature_matrix(matrices, observe_hours * 60.0)
    return ckpt.model_type, (predict_lr if ckpt.model_type == "lr" else predict_mlp)(X, model)


def _model_names(types, paths):
    names = []
    for t, p in zip(types, paths):
        name = t if types.count(t) == 1 else f"{t}:{Path(p).stem}"
        if name in names:
            name = f"{name}#{len(names)}"
        names.append(name)
    return names


def cmd_evaluate(args) -> None:
    import numpy as np

    from .config import load_config
    from .evaluation import auc_pvalue, eligible, roc_auc, write_metrics_csv, write_roc_csv
    from .pipeline import read_prepared

    cfg = load_config(args.config)
    n_boot = args.n_boot if args.n_boot is not None else cfg.evaluate.n_boot
    seed = cfg.evaluate.seed
    manifest = RunManifest(
        "evaluate", args.argv,
        {"observe_hours": args.observe_hours, "delta_t_hours": args.delta_t, "n_boot": n_boot},
        {"bootstrap": seed},
        list(args.models) + [Path(args.data) / "encounters.csv", Path(args.data) / "matrices" / "holdout"]
        + ([args.config] if args.config else []),
    )
    matrices = eligible(read_prepared(args.data, "holdout"), args.observe_hours)
    if not matrices:
        raise DataValidationError(f"no holdout encounter has {args.observe_hours} h of data")
    labels = np.array([0 if m.survived else 1 for m in matrices])
    scored = [_score(p, matrices, args.observe_hours, args.delta_t) for p in args.models]
    names = _model_names([t for t, _ in scored], args.models)
    curves = {name: roc_auc(s, labels) for name, (_, s) in zip(names, scored)}
    base = scored[0][1]
    rows = []
    for k, (name, (_, s)) in enumerate(zip(names, scored)):
        p = None if k == 0 else auc_pvalue(s, base, labels, n_boot, seed)
        rows.append({"model": name, "observe_hours": args.observe_hours, "delta_t_hours": args.delta_t,
                     "auc": curves[name].auc, "n": len(matrices), "p_vs_baseline": p})
        log.info("%s AUC %.4f", name, curves[name].auc)
    out = _out_dir(args.out)
    write_metrics_csv(rows, out / "metrics.csv")
    write_roc_csv(curves, out / "roc.csv")
    manifest.write(out, [out / "metrics.csv", out / "roc.csv"])


def _parse_hours(text: str) -> list[float]:
    try:
        hours = [float(h) for h in text.split(",") if h.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated hours, got {text!r}") from None
    if not hours:
        raise argparse.ArgumentTypeError("no hours given")
    return hours


def cmd_sweep(args) -> None:
    from .checkpoint import read_checkpoint
    from .evaluation import observation_sweep
    from .model import from_checkpoint
    from .pipeline import read_prepared

    manifest = RunManifest("sweep", args.argv, {"hours": args.hours, "delta_t_hours": args.delta_t}, {},
                           [args.model, Path(args.data) / "encounters.csv", Path(args.data) / "matrices" / "holdout"])
    ckpt = read_checkpoint(args.model)
    if ckpt.model_type != "rnn":
        raise DataValidationError(f"{args.model}: sweep needs a recurrent model, got {ckpt.model_type}")
    result = observation_sweep(from_checkpoint(ckpt), read_prepared(args.data, "holdout"), args.hours, args.delta_t)
    out = _out_dir(args.out)
    result.to_csv(out / "sweep.csv")
    log.info("sweep over %d encounters (%d excluded)", result.rows[0][2], result.n_excluded)
    manifest.write(out, [out / "sweep.csv"])


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="icudyn", description="Dynamic ICU mortality-risk pipeline.")
    parser.add_argument("--version", action="version", version=f"icudyn {__version__}")
    parser.add_argument("--threads", type=int, default=None, help="cap on BLAS/OpenMP threads")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    p.add_argument("--config", help="run config JSON (synth section)")
    p.add_argument("--catalog", help="variable catalog CSV (default: shipped demo catalog)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="patient-level train/holdout split")
    p.add_argument("--events", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--fraction", type=float, default=0.75)
    p.add_argument("--seed", type=int, default=None, help="default: $ICUDYN_SEED, else 0")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("preprocess", help="normalize, impute and export event grids")
    p.add_argument("--events", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--catalog", help="variable catalog CSV (default: shipped demo catalog)")
    p.add_argument("--split", required=True, help="split.csv from the split command")
    p.add_argument("--snapshot", action="store_true", help="also export 144-column patient snapshots")
    p.add_argument("--unknown", choices=("drop", "error"), default="drop", help="policy for unknown raw names")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train the recurrent model or a static baseline")
    p.add_argument("--model", choices=("rnn", "lr", "mlp"), required=True)
    p.add_argument("--config", help="run config JSON (train section)")
    p.add_argument("--data", required=True, help="output directory of the preprocess command")
    p.add_argument("--at-hours", type=float, default=12.0, help="snapshot time of the static baselines")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="holdout AUCs, ROC points and bootstrap p-values")
    p.add_argument("--models", nargs="+", required=True, help="checkpoints; the first is the p-value reference")
    p.add_argument("--data", required=True)
    p.add_argument("--observe-hours", type=float, default=12.0)
    p.add_argument("--delta-t", type=float, default=12.0, help="prediction horizon of the recurrent model (hours)")
    p.add_argument("--n-boot", type=int, default=None)
    p.add_argument("--config", help="run config JSON (evaluate section)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="recurrent-model AUC versus observation time")
    p.add_argument("--model", required=True, help="rnn checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--hours", type=_parse_hours, default=[1.0, 3.0, 6.0, 9.0, 12.0])
    p.add_argument("--delta-t", type=float, default=12.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else [str(a) for a in argv]
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    if args.threads is not None:
        if args.threads < 1:
            print("E_USAGE: --threads must be >= 1", file=sys.stderr)
            return 2
        # only effective before numpy loads its BLAS; results never depend on it
        for var in _THREAD_VARS:
            os.environ[var] = str(args.threads)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except IcudynError as exc:
        print(f"{exc.code}: {_one_line(exc)}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"E_IO: {_one_line(exc)}", file=sys.stderr)
        return DataValidationError.exit_code
    except (ValueError, KeyError) as exc:
        print(f"E_DATA: {_one_line(exc)}", file=sys.stderr)
        return DataValidationError.exit_code
    except (ArithmeticError, FloatingPointError) as exc:
        print(f"E_NUMERIC: {_one_line(exc)}", file=sys.stderr)
        return NumericError.exit_code
    return 0


def _one_line(exc: BaseException) -> str:
    return " ".join(str(exc).split()) or type(exc).__name__


if __name__ == "__main__":
    sys.exit(main())
