"""Command-line entry point: ``mrgnn <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .autodiff import NumericError
from .data import (
    DataFormatError,
    FeatureCache,
    GraphCache,
    LabeledPairDataset,
    balance,
    generate_synthetic,
    load_cci,
    load_ddi,
    write_label_map,
    write_pairs_tsv,
)
from .graph import FeaturizerConfig, FeaturizerConfigError
from .metrics import BINARY_COLUMNS, MULTICLASS_COLUMNS, MetricsReport
from .model import (
    ABLATIONS,
    CheckpointError,
    ModelConfig,
    MrGnnModel,
    forward_pair,
    load_checkpoint,
    save_checkpoint,
)
from .smiles import SmilesError, parse
from .training import NumericFailure, SplitSpec, TrainConfig, evaluate, prepare, split_dataset, train

log = logging.getLogger("mrgnn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

DEFAULTS = {
    "task": "binary",
    "threshold": 900,
    "seed": 0,
    "ablation": None,
    "linear_conv": False,
    "conv_widths": [384, 384, 384],
    "represent_size": 128,
    "hidden_size": 64,
    "d_max": 10,
    "feature_dim": 75,
    "learning_rate": 1e-4,
    "epochs": 100,
    "batch_size": 32,
    "patience": 10,
    "beta1": 0.9,
    "beta2": 0.999,
    "eps": 1e-8,
    "split": None,  # 9-1 for binary, 60-20-20 for multiclass
    "balance": False,
}
SPLITS = {"9-1": "ratio_9_1_with_fifth_val", "60-20-20": "fractions_60_20_20"}
SWEEPABLE = ("represent_size", "conv_size", "hidden_size", "learning_rate")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _threshold(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"threshold must be an integer, got {text!r}") from None
    if not 0 < value <= 999:
        raise argparse.ArgumentTypeError("threshold must be in 1..999")
    return value


def _shared(p: argparse.ArgumentParser, data: bool = True) -> None:
    if data:
        p.add_argument("--data", help="pair TSV file")
    p.add_argument("--task", choices=("binary", "multiclass"), default=None)
    p.add_argument("--threshold", type=_threshold, default=None, help="CCI positive score cut (900/800/700/N)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", help="flat JSON config file; CLI flags override it")
    p.add_argument("--ablation", choices=ABLATIONS, default=None)
    p.add_argument("--linear-conv", action="store_true", default=None, help="skip tanh after each convolution")
    p.add_argument("--out-dir", default=None)
    p.add_argument("--cache-dir", default=None, help="feature cache directory")
    p.add_argument("-v", "--verbose", action="store_true")


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--conv-size", type=int, default=None, help="width of every conv layer")
    p.add_argument("--layers", type=int, default=None, help="number of conv layers")
    p.add_argument("--represent-size", type=int, default=None, help="graph-state / LSTM width")
    p.add_argument("--hidden-size", type=int, default=None, help="FC hidden width")
    p.add_argument("--d-max", type=int, default=None)
    p.add_argument("--learning-rate", "--lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--split", choices=tuple(SPLITS), default=None)
    p.add_argument("--balance", action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mrgnn", description="Multi-resolution graph network for pair interaction prediction")
    parser.add_argument("--version", action="version", version=f"mrgnn {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-synthetic", help="write a synthetic two-motif pair TSV")
    p.add_argument("--pairs", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--motif", default="carboxyl-ringoh")
    p.add_argument("--out", required=True, help="output TSV path")

    p = sub.add_parser("featurize", help="parse and featurize every molecule into the cache")
    _shared(p)

    p = sub.add_parser("train", help="split, train, evaluate, write artifacts")
    _shared(p)
    _model_flags(p)
    p.add_argument("--resume", default=None, help="warm-start from this checkpoint")

    p = sub.add_parser("evaluate", help="metrics of a checkpoint on a dataset")
    _shared(p)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("predict", help="label distribution for one ordered pair")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("smiles_a")
    p.add_argument("smiles_b")

    p = sub.add_parser("sweep", help="one-at-a-time hyperparameter sensitivity")
    _shared(p)
    _model_flags(p)
    p.add_argument("--grid", action="append", default=[], metavar="NAME=V1,V2,...",
                   help=f"values for one of {', '.join(SWEEPABLE)}; repeatable")
    return parser


# --- configuration ------------------------------------------------------------------


def resolve_config(args: argparse.Namespace) -> dict:
    """Built-in defaults, then the config file, then explicit flags."""
    cfg = dict(DEFAULTS)
    cfg["conv_widths"] = list(DEFAULTS["conv_widths"])
    if getattr(args, "config", None):
        try:
            file_cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise DataError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"config file {args.config} is not valid JSON: {exc}") from None
        _merge(cfg, file_cfg, source=args.config)
    flags = {
        "task": args.task, "threshold": args.threshold, "seed": args.seed, "ablation": args.ablation,
        "linear_conv": args.linear_conv,
    }
    for key in ("represent_size", "hidden_size", "d_max", "learning_rate", "epochs", "batch_size", "patience",
                "split", "balance", "conv_size", "layers"):
        flags[key] = getattr(args, key, None)
    _merge(cfg, {k: v for k, v in flags.items() if v is not None}, source="command line")
    if cfg["split"] is None:
        cfg["split"] = "9-1" if cfg["task"] == "binary" else "60-20-20"
    return cfg


def _merge(cfg: dict, updates: dict, source: str) -> None:
    for key, value in updates.items():
        if key == "conv_size":
            cfg["conv_widths"] = [int(value)] * len(cfg["conv_widths"])
        elif key == "layers":
            cfg["conv_widths"] = [cfg["conv_widths"][-1]] * int(value)
        elif key in DEFAULTS:
            cfg[key] = list(value) if key == "conv_widths" else value
        else:
            raise UsageError(f"unknown config key {key!r} in {source}")


def model_config(cfg: dict, k: int) -> ModelConfig:
    base = ModelConfig(
        in_dim=int(cfg["feature_dim"]), conv_widths=tuple(int(w) for w in cfg["conv_widths"]),
        c_g=int(cfg["represent_size"]), c_k=int(cfg["hidden_size"]), k=k, d_max=int(cfg["d_max"]),
        linear_conv=bool(cfg["linear_conv"]),
    )
    return base.with_ablation(cfg["ablation"])


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        learning_rate=float(cfg["learning_rate"]), epochs=int(cfg["epochs"]), batch_size=int(cfg["batch_size"]),
        seed=int(cfg["seed"]), beta1=float(cfg["beta1"]), beta2=float(cfg["beta2"]), eps=float(cfg["eps"]),
        patience=int(cfg["patience"]),
    )


def _featurizer(cfg: dict) -> FeaturizerConfig:
    return FeaturizerConfig(output_dim=int(cfg["feature_dim"]))


def load_dataset(path: str | None, task: str, threshold: int) -> LabeledPairDataset:
    if not path:
        raise UsageError("--data is required")
    if not Path(path).is_file():
        raise DataError(f"data file not found: {path}")
    return load_cci(path, threshold) if task == "binary" else load_ddi(path)


def _sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _graphs(cfg: dict, cache_dir: str | None) -> GraphCache:
    feat = _featurizer(cfg)
    return GraphCache(feat, FeatureCache(cache_dir, feat) if cache_dir else None)


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def _write_report(out: Path, report: MetricsReport, prefix: str = "metrics") -> None:
    (out / f"{prefix}.json").write_text(report.to_json() + "\n", encoding="utf-8")
    (out / f"{prefix}.csv").write_text(report.to_csv(), encoding="utf-8")


# --- subcommands ------------------------------------------------------------------------


def cmd_gen_synthetic(args) -> int:
    if args.pairs < 2:
        raise UsageError("--pairs must be at least 2")
    ds = generate_synthetic(args.pairs, args.seed, args.motif)
    # CCI-style scores so any threshold reads them back as 0/1
    write_pairs_tsv(args.out, ((r.smiles_a, r.smiles_b, 999 if r.label else 0) for r in ds.records))
    print(json.dumps({"out": args.out, "pairs": len(ds), "positives": int(ds.labels.sum())}))
    return EXIT_OK


def cmd_featurize(args) -> int:
    cfg = resolve_config(args)
    if not args.cache_dir:
        raise UsageError("--cache-dir is required")
    data = load_dataset(args.data, cfg["task"], cfg["threshold"])
    cache = FeatureCache(args.cache_dir, _featurizer(cfg))
    cache.warm(data)
    print(json.dumps({"records": len(data), "hits": cache.hits, "misses": cache.misses,
                      "skipped": data.metadata.get("skipped", 0)}, sort_keys=True))
    return EXIT_OK


def run_experiment(cfg: dict, data: LabeledPairDataset, cache_dir: str | None = None,
                   out: Path | None = None, resume: str | None = None):
    """Split, train and evaluate; returns (model, test report, train result)."""
    if cfg["balance"]:
        data = balance(data, cfg["seed"])
    tr, va, te = split_dataset(data, SplitSpec(SPLITS[cfg["split"]], seed=int(cfg["seed"])))
    graphs = _graphs(cfg, cache_dir)
    mcfg = model_config(cfg, data.k)
    model = MrGnnModel(mcfg, seed=int(cfg["seed"]))
    start_epoch = 0
    if resume:
        warm, manifest = load_checkpoint(resume)
        if warm.config != mcfg:
            raise DataError(f"checkpoint {resume} was trained with a different model configuration")
        model = warm
        start_epoch = int(manifest["extra"].get("epochs_run", 0))
    samples = [prepare(d, graphs, mcfg.d_max) for d in (tr, va, te)]

    log_fh = open(out / "epochs.jsonl", "a" if resume else "w", encoding="utf-8") if out else None
    try:
        def on_epoch(entry):
            if log_fh:
                log_fh.write(json.dumps(entry, sort_keys=True) + "\n")
                log_fh.flush()
            log.info("epoch %d train_loss=%.5f val_loss=%s", entry["epoch"], entry["train_loss"], entry.get("val_loss"))

        result = train(model, samples[0], train_config(cfg), samples[1] or None, on_epoch, start_epoch=start_epoch)
    finally:
        if log_fh:
            log_fh.close()
    report = evaluate(model, samples[2])
    report.extra["best_epoch"] = result.best_epoch
    return model, report, result


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out_dir or "run")
    data = load_dataset(args.data, cfg["task"], cfg["threshold"])
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": "train",
        "config": cfg,
        "seed": cfg["seed"],
        "data": {"path": str(args.data), "sha256": _sha256(args.data), **{k: v for k, v in data.metadata.items() if k != "label_map"}},
        "featurizer": _featurizer(cfg).to_dict(),
        "version": __version__,
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    _write_json(out / "manifest.json", manifest)
    if "label_map" in data.metadata:
        write_label_map(out / "label_map.json", data.metadata["label_map"])

    model, report, result = run_experiment(cfg, data, args.cache_dir, out, args.resume)
    epochs_run = result.history[-1]["epoch"] + 1 if result.history else 0
    extra = {"task": cfg["task"], "threshold": cfg["threshold"], "label_map": data.metadata.get("label_map"),
             "epochs_run": epochs_run, "best_epoch": result.best_epoch}
    save_checkpoint(out / "model.ckpt", model, _featurizer(cfg), extra)
    _write_report(out, report)
    manifest["finished_at"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    _write_json(out / "manifest.json", manifest)
    print(report.to_json())
    return EXIT_OK


def _load_model(path: str):
    if not Path(path).is_file():
        raise DataError(f"checkpoint not found: {path}")
    model, manifest = load_checkpoint(path)
    feat = FeaturizerConfig.from_dict(manifest["featurizer"]) if manifest.get("featurizer") else FeaturizerConfig(
        output_dim=model.config.in_dim)
    return model, manifest, feat


def cmd_evaluate(args) -> int:
    model, manifest, feat = _load_model(args.checkpoint)
    extra = manifest.get("extra", {})
    task = args.task or extra.get("task") or ("binary" if model.config.k == 2 else "multiclass")
    threshold = args.threshold or extra.get("threshold") or 900
    data = load_dataset(args.data, task, threshold)
    if data.k != model.config.k:
        raise DataError(f"checkpoint predicts k={model.config.k} labels but {args.data} has k={data.k}")
    data = _align_labels(data, extra.get("label_map"))
    graphs = GraphCache(feat, FeatureCache(args.cache_dir, feat) if args.cache_dir else None)
    report = evaluate(model, prepare(data, graphs, model.config.d_max))
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_report(out, report, "eval_metrics")
    print(report.to_json())
    return EXIT_OK


def _align_labels(data: LabeledPairDataset, trained_map: dict | None) -> LabeledPairDataset:
    """Re-index DDI labels with the map used at training time."""
    own = data.metadata.get("label_map")
    if not trained_map or not own or own == trained_map:
        return data
    inverse = {v: k for k, v in own.items()}
    missing = sorted(set(own) - set(trained_map), key=int)
    if missing:
        raise DataError(f"labels {missing} were not seen when the checkpoint was trained")
    records = [replace(r, label=trained_map[inverse[r.label]]) for r in data.records]
    return LabeledPairDataset(records, data.k, {**data.metadata, "label_map": dict(trained_map)})


def cmd_predict(args) -> int:
    model, manifest, feat = _load_model(args.checkpoint)
    graphs = GraphCache(feat)
    trace = forward_pair(model, graphs(args.smiles_a), graphs(args.smiles_b))
    probs = [float(p) for p in trace.R]
    idx = int(np.argmax(probs))
    label_map = (manifest.get("extra") or {}).get("label_map")
    label = idx
    if label_map:
        inverse = {v: k for k, v in label_map.items()}
        label = int(inverse[idx])
    print(json.dumps({"label": label, "label_index": idx, "probabilities": probs}))
    return EXIT_OK


def _parse_grid(specs: Sequence[str]) -> list[tuple[str, list]]:
    grid = []
    for spec in specs:
        name, sep, values = spec.partition("=")
        name = name.strip().replace("-", "_")
        if not sep or name not in SWEEPABLE:
            raise UsageError(f"bad --grid {spec!r}; expected NAME=V1,V2 with NAME in {SWEEPABLE}")
        cast = float if name == "learning_rate" else int
        try:
            vals = [cast(v) for v in values.split(",") if v.strip()]
        except ValueError:
            raise UsageError(f"bad value list in --grid {spec!r}") from None
        if not vals:
            raise UsageError(f"--grid {spec!r} has no values")
        grid.append((name, vals))
    if not grid:
        raise UsageError("sweep needs at least one --grid NAME=V1,V2,...")
    return grid


def cmd_sweep(args) -> int:
    grid = _parse_grid(args.grid)
    cfg = resolve_config(args)
    data = load_dataset(args.data, cfg["task"], cfg["threshold"])
    out = Path(args.out_dir or "sweep")
    out.mkdir(parents=True, exist_ok=True)
    columns = BINARY_COLUMNS if data.k == 2 else MULTICLASS_COLUMNS
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["param", "value", *columns, "test_loss", "best_epoch"])
    for name, values in grid:
        for value in values:
            point = json.loads(json.dumps(cfg))
            _merge(point, {name: value}, source="grid")
            _, report, result = run_experiment(point, data, args.cache_dir)
            writer.writerow([name, value, *(repr(float(report.values[c])) for c in columns),
                             repr(float(report.loss)), result.best_epoch])
            log.info("sweep %s=%s done", name, value)
    (out / "sweep.csv").write_text(buf.getvalue(), encoding="utf-8")
    _write_json(out / "sweep_manifest.json", {"command": "sweep", "config": cfg, "grid": dict(grid),
                                              "data_sha256": _sha256(args.data), "version": __version__})
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


COMMANDS = {
    "gen-synthetic": cmd_gen_synthetic,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "sweep": cmd_sweep,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"mrgnn {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericFailure, NumericError, FloatingPointError) as exc:
        print(f"mrgnn {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, DataFormatError, SmilesError, CheckpointError, FeaturizerConfigError,
            FileNotFoundError, ValueError) as exc:
        print(f"mrgnn {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
