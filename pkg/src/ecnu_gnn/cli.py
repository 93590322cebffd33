"""Batch command-line interface: ``ecnu-gnn <command> ...``.

Commands write their artifacts into a run directory together with a
``manifest.json`` recording the resolved configuration, its hash, the seed,
input file hashes and library versions.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 runtime or numerical error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, config as cfgmod, data, pipeline, score, synth
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .errors import (
    CheckpointError,
    ContractError,
    DataError,
    EcnuError,
    ParseError,
    TrainingError,
)
from .explain import explain_sensor, export_relevance_graph
from .graph import cosine_matrix, save_edge_list

log = logging.getLogger("ecnu_gnn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3
CHECKPOINT_NAME = "checkpoint.ckpt"
MANIFEST_NAME = "manifest.json"


class UsageError(ContractError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# -- helpers ---------------------------------------------------------------


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _versions() -> dict:
    return {"ecnu_gnn": __version__, "numpy": np.__version__, "python": platform.python_version()}


def write_manifest(run_dir: Path, command: str, run_config: cfgmod.RunConfig | None, inputs: dict, extra=None):
    """Record one command's provenance under its own key in ``manifest.json``."""
    path = run_dir / MANIFEST_NAME
    manifest = {"commands": {}}
    if path.exists():
        try:
            manifest = json.loads(path.read_text())
        except json.JSONDecodeError:
            log.warning("replacing unreadable manifest %s", path)
    entry = {
        "inputs": {name: {"path": str(p), "sha256": _sha256(p)} for name, p in sorted(inputs.items())},
        "versions": _versions(),
    }
    if run_config is not None:
        entry.update(config=run_config.to_dict(), config_hash=run_config.digest(), seed=run_config.seed)
    if extra:
        entry.update(extra)
    manifest.setdefault("commands", {})[command] = entry
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _run_config(args) -> cfgmod.RunConfig:
    return cfgmod.resolve(
        profile=args.profile,
        config_path=args.config,
        overrides=cfgmod.parse_overrides(args.set),
        seed=args.seed,
    )


def _load_series(path) -> data.RawSeries:
    if not Path(path).is_file():
        raise DataError(f"no such file: {path}")
    try:
        return data.load_csv(path)
    except ContractError as exc:
        raise DataError(f"{path}: {exc}") from None


def _sidecar(path) -> tuple[data.PreprocessConfig | None, data.NormStats | None]:
    side = Path(str(path) + ".meta.json")
    if not side.exists():
        return None, None
    try:
        return data.read_sidecar(side)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise DataError(f"{side}: unreadable sidecar: {exc}") from None


def _run_dir(path) -> Path:
    run_dir = Path(path)
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def _sensor_id(spec: str, names: list[str]) -> int:
    if spec in names:
        return names.index(spec)
    try:
        idx = int(spec)
    except ValueError:
        raise ContractError(f"unknown sensor {spec!r}") from None
    if not 0 <= idx < len(names):
        raise ContractError(f"sensor id {idx} out of range [0, {len(names)})")
    return idx


# -- commands --------------------------------------------------------------


def cmd_preprocess(args) -> int:
    run_config = _run_config(args)
    run_dir = _run_dir(args.out_dir)
    pcfg = run_config.preprocess
    raw_train = _load_series(args.train)
    try:
        train, stats = data.preprocess(raw_train, pcfg)
        inputs = {"train": args.train}
        outputs = [("train.csv", train, pcfg)]
        if args.test:
            # the start-up trim only concerns the training recording
            test_cfg = replace(pcfg, trim_head=0)
            test, _ = data.preprocess(_load_series(args.test), test_cfg, stats)
            if test.sensor_names != train.sensor_names:
                raise DataError("train and test files have different sensor columns")
            inputs["test"] = args.test
            outputs.append(("test.csv", test, test_cfg))
    except ContractError as exc:
        raise DataError(str(exc)) from None
    for name, series, used_cfg in outputs:
        data.save_csv(series, run_dir / name)
        data.write_sidecar(run_dir / name, used_cfg, stats)
    write_manifest(run_dir, "preprocess", run_config, inputs)
    print(f"wrote {', '.join(name for name, _, _ in outputs)} to {run_dir}")
    return EXIT_OK


def cmd_train(args) -> int:
    run_config = _run_config(args)
    series = _load_series(args.train)
    if series.labels is not None and series.labels.any():
        log.warning("training data carries anomaly labels; they are ignored")
    pcfg, stats = _sidecar(args.train)
    run_dir = _run_dir(args.run_dir)
    metrics_path = run_dir / "metrics.jsonl"
    with metrics_path.open("w") as fh:

        def on_epoch(record):
            fh.write(record.to_json() + "\n")
            fh.flush()
            log.info("epoch %d train %.6g val %.6g", record.epoch, record.train_loss, record.val_loss)

        run = pipeline.train_model(series, run_config.model, run_config.train, on_epoch)
    ckpt = Checkpoint(
        model=run.model,
        seed=run_config.seed,
        sensor_names=series.sensor_names,
        norm_stats=stats,
        robust_stats=run.robust_stats,
        preprocess={} if pcfg is None else pcfg.to_dict(),
        train={
            **run_config.train.to_dict(),
            "best_epoch": run.fit.best_epoch,
            "best_val_loss": run.fit.best_val_loss,
            "epochs_run": len(run.fit.history),
            "score": {"sma_window": run_config.score.sma_window, "grid_size": run_config.score.grid_size},
        },
    )
    save_checkpoint(ckpt, run_dir / CHECKPOINT_NAME)
    adjacency = run.model.graph()
    save_edge_list(adjacency, cosine_matrix(run.model.embeddings), run_dir / "graph.txt")
    write_manifest(run_dir, "train", run_config, {"train": args.train},
                   {"best_epoch": run.fit.best_epoch, "best_val_loss": run.fit.best_val_loss})
    print(f"best epoch {run.fit.best_epoch} val loss {run.fit.best_val_loss:.6g}; "
          f"checkpoint {run_dir / CHECKPOINT_NAME}")
    return EXIT_OK


def _load_ckpt(path) -> Checkpoint:
    if not Path(path).is_file():
        raise DataError(f"no such checkpoint: {path}")
    ckpt = load_checkpoint(path)
    if ckpt.robust_stats is None:
        raise CheckpointError(f"{path}: checkpoint has no robust error statistics")
    return ckpt


def _load_test(path, ckpt: Checkpoint) -> data.RawSeries:
    series = _load_series(path)
    if series.sensor_names != ckpt.sensor_names:
        raise DataError("test sensor columns differ from the checkpoint's")
    _, stats = _sidecar(path)
    if stats is not None and ckpt.norm_stats is not None and not (
        np.array_equal(stats.minimum, ckpt.norm_stats.minimum)
        and np.array_equal(stats.maximum, ckpt.norm_stats.maximum)
    ):
        raise DataError("test data was scaled with different statistics than the training data")
    return series


def cmd_detect(args) -> int:
    run_config = _run_config(args)
    ckpt = _load_ckpt(args.checkpoint)
    series = _load_test(args.test, ckpt)
    if series.labels is None and args.threshold is None:
        raise ContractError("test data has no labels; pass --threshold")
    scfg = run_config.score
    try:
        result = pipeline.detect(ckpt.model, ckpt.robust_stats, series,
                                 scfg.sma_window, scfg.grid_size, args.threshold)
    except ContractError as exc:
        raise DataError(str(exc)) from None
    run_dir = _run_dir(args.run_dir)
    score.write_scores_csv(run_dir / "scores.csv", result.windows.timestamps, result.scores,
                           ckpt.sensor_names, per_sensor=args.per_sensor)
    extra = {
        "mode": "grid_search" if args.threshold is None else "fixed",
        "n_windows": int(len(result.windows)),
        "sma_window": scfg.sma_window,
        "grid_size": scfg.grid_size,
    }
    if result.report is None:
        predicted = (result.scores.smoothed > args.threshold).astype(np.int64)
        report = {"threshold": float(args.threshold), "n_predicted": int(predicted.sum()),
                  "precision": None, "recall": None, "f1": None, "warning": "no labels", **extra}
        (run_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        summary = f"{report['n_predicted']} anomalous windows at threshold {args.threshold}"
    else:
        result.report.extra.update(extra)
        score.write_report(run_dir / "report.json", result.report)
        r = result.report
        summary = f"F1 {r.f1:.4f} precision {r.precision:.4f} recall {r.recall:.4f} threshold {r.threshold:.6g}"
    write_manifest(run_dir, "detect", run_config,
                   {"checkpoint": args.checkpoint, "test": args.test})
    print(summary)
    return EXIT_OK


def cmd_explain(args) -> int:
    ckpt = _load_ckpt(args.checkpoint)
    series = _load_test(args.test, ckpt)
    target = _sensor_id(args.sensor, ckpt.sensor_names)
    try:
        windows = data.make_windows(series, ckpt.model.config.window)
    except ContractError as exc:
        raise DataError(str(exc)) from None
    hits = np.flatnonzero(windows.timestamps == args.time)
    if hits.size == 0:
        raise ContractError(
            f"no window predicts time {args.time}; valid range is "
            f"{int(windows.timestamps[0])}..{int(windows.timestamps[-1])}"
        )
    i = int(hits[0])
    rmap = explain_sensor(ckpt.model, windows.inputs[i], target, timestamp=int(args.time))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    export_relevance_graph(rmap, out, ckpt.sensor_names)
    write_manifest(out.parent, "explain", None,
                   {"checkpoint": args.checkpoint, "test": args.test},
                   {"time": int(args.time), "sensor": target, "output": out.name})
    top = ", ".join(f"{ckpt.sensor_names[j]}={rmap.node_relevance[j]:.4g}" for j in rmap.ranking()[:3])
    print(f"relevance for {ckpt.sensor_names[target]} at {args.time}: {top}")
    return EXIT_OK


def sweep_stats(f1s) -> tuple[float, float]:
    """Mean and sample standard deviation (0 for a single repetition)."""
    f1s = np.asarray(f1s, dtype=np.float64)
    std = float(np.std(f1s, ddof=1)) if f1s.size > 1 else 0.0
    return float(np.mean(f1s)), std


def cmd_sweep(args) -> int:
    run_config = _run_config(args)
    try:
        values = [int(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise ContractError(f"--values must be comma-separated integers, got {args.values!r}") from None
    if not values:
        raise ContractError("--values is empty")
    if args.reps < 1:
        raise ContractError("--reps must be >= 1")
    configs = [cfgmod.with_model(run_config, **{args.param: v}) for v in values]
    train_series = _load_series(args.train)
    test_series = _load_series(args.test)
    if test_series.labels is None:
        raise DataError("sweep needs labeled test data")
    run_dir = _run_dir(args.run_dir)
    rows = []
    for value, vcfg in zip(values, configs):
        f1s = []
        for rep in range(args.reps):
            rcfg = cfgmod.with_seed(vcfg, vcfg.seed + rep)
            try:
                run = pipeline.train_model(train_series, rcfg.model, rcfg.train)
                result = pipeline.detect(run.model, run.robust_stats, test_series,
                                         rcfg.score.sma_window, rcfg.score.grid_size)
            except ContractError as exc:
                raise DataError(f"{args.param}={value}: {exc}") from None
            f1s.append(result.report.f1)
            log.info("%s=%d rep %d F1 %.4f", args.param, value, rep, result.report.f1)
        mean, std = sweep_stats(f1s)
        rows.append((value, mean, std, f1s))
        print(f"{args.param}={value} mean F1 {mean:.4f} std {std:.4f}")
    with (run_dir / "sweep.csv").open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([args.param, "reps", "mean_f1", "std_f1", "f1_values"])
        for value, mean, std, f1s in rows:
            writer.writerow([value, len(f1s), repr(mean), repr(std), ";".join(repr(f) for f in f1s)])
    write_manifest(run_dir, "sweep", run_config, {"train": args.train, "test": args.test},
                   {"param": args.param, "values": values, "reps": args.reps})
    return EXIT_OK


def cmd_synth(args) -> int:
    seed = 0 if args.seed is None else args.seed
    if args.spec:
        if not Path(args.spec).is_file():
            raise DataError(f"no such file: {args.spec}")
        try:
            spec = synth.SynthSpec.from_json(args.spec)
        except (json.JSONDecodeError, TypeError, KeyError) as exc:
            raise ContractError(f"{args.spec}: invalid synth spec: {exc}") from None
        if args.seed is not None:
            spec = replace(spec, seed=seed)
    else:
        spec = synth.default_spec(seed=seed)
    generated = synth.generate(spec)
    run_dir = _run_dir(args.out_dir)
    data.save_csv(generated.train, run_dir / "train.csv")
    data.save_csv(generated.test, run_dir / "test.csv")
    synth.write_edges(generated.edges, run_dir / "edges.txt")
    (run_dir / "spec.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")
    inputs = {"spec": args.spec} if args.spec else {}
    write_manifest(run_dir, "synth", None, inputs, {"seed": spec.seed})
    print(f"wrote train.csv, test.csv, edges.txt to {run_dir}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration file")
    common.add_argument("--seed", type=int, help="seed for initialization, shuffling and synthesis")
    common.add_argument("--profile", choices=sorted(cfgmod.PROFILES), help="hyperparameter profile")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one configuration value (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = _Parser(prog="ecnu-gnn", description="Graph-based multivariate time-series anomaly detection.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("preprocess", parents=[common], help="trim, downsample, impute and scale raw CSVs")
    p.add_argument("train", help="raw training CSV")
    p.add_argument("--test", help="raw test CSV, scaled with the training statistics")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", parents=[common], help="fit a model on a preprocessed CSV")
    p.add_argument("train", help="preprocessed training CSV")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", parents=[common], help="score a preprocessed test CSV")
    p.add_argument("checkpoint")
    p.add_argument("test", help="preprocessed test CSV")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--threshold", type=float, help="fixed threshold (required without labels)")
    p.add_argument("--per-sensor", action="store_true", help="add normalized per-sensor columns")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("explain", parents=[common], help="relevance of every sensor for one prediction")
    p.add_argument("checkpoint")
    p.add_argument("test", help="preprocessed test CSV")
    p.add_argument("--time", type=int, required=True, help="time value of the predicted step")
    p.add_argument("--sensor", required=True, help="target sensor name or id")
    p.add_argument("--out", required=True, help="relevance edge-list output path")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("sweep", parents=[common], help="F1 sensitivity to window or top-k")
    p.add_argument("train", help="preprocessed training CSV")
    p.add_argument("test", help="preprocessed labeled test CSV")
    p.add_argument("--param", choices=("window", "topk"), required=True)
    p.add_argument("--values", required=True, help="comma-separated integers")
    p.add_argument("--reps", type=int, default=1, help="seeds per value (seed, seed+1, ...)")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--spec", help="JSON synthetic spec; the built-in 10-sensor design otherwise")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, (ParseError, DataError, CheckpointError, FileNotFoundError,
                        IsADirectoryError, PermissionError)):
        return EXIT_DATA
    if isinstance(exc, ContractError):
        return EXIT_USAGE
    return EXIT_RUNTIME


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"ecnu-gnn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (EcnuError, OSError, FloatingPointError) as exc:
        print(f"ecnu-gnn {args.command}: error: {exc}", file=sys.stderr)
        if isinstance(exc, TrainingError):
            log.info("training aborted; the best state so far was restored")
        return exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
