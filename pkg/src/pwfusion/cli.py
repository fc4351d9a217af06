"""Command-line entry point.

Subcommands: gen-data, train, eval, sweep, ablate, verify-theorem,
inspect-weights.  Options resolve as flags > config file > defaults, every run
writes a run.json echoing the resolved configuration, and re-running a command
with its own run.json as --config reproduces the reports and checkpoints
bit-exactly.  Exit codes: 0 success, 2 validation error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import bounds, data, evaluate, train
from .train import TrainConfig


class CliError(Exception):
    """Validation problem: bad flag value, bad config, missing path."""


def _load_config_file(path: str | None, command: str) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise CliError(f"config file not found: {p}")
    try:
        payload = json.loads(p.read_text())
    except json.JSONDecodeError as err:
        raise CliError(f"config file {p} is not valid JSON: {err}")
    if not isinstance(payload, dict):
        raise CliError(f"config file {p} must hold a JSON object")
    stored = payload.pop("command", None)
    if stored is not None and stored != command:
        raise CliError(f"config file {p} was written for command {stored!r}, "
                       f"not {command!r}")
    return payload


def _resolve(args: argparse.Namespace, file_cfg: dict, keys: list[str]) -> dict:
    unknown = sorted(set(file_cfg) - set(keys))
    if unknown:
        raise CliError(f"unknown config key(s): {unknown}")
    resolved = {}
    for key in keys:
        flag_value = getattr(args, key.replace("-", "_"), None)
        if flag_value is not None:
            resolved[key] = flag_value
        elif key in file_cfg:
            resolved[key] = file_cfg[key]
    return resolved


def _write_run_json(out_dir: Path, command: str, resolved: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"command": command}
    payload.update(resolved)
    (out_dir / "run.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _train_config(resolved: dict) -> TrainConfig:
    fields = {f.name for f in dataclasses.fields(TrainConfig)}
    kwargs = {k: v for k, v in resolved.items() if k in fields}
    try:
        return TrainConfig(**kwargs)
    except ValueError as err:
        raise CliError(str(err))


_TRAIN_KEYS = [f.name for f in dataclasses.fields(TrainConfig)]


def _add_train_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--learning-rate", dest="learning_rate", type=float)
    parser.add_argument("--weight-decay", dest="weight_decay", type=float)
    parser.add_argument("--lambda1", type=float)
    parser.add_argument("--lambda2", type=float)
    parser.add_argument("--embed-dim", dest="embed_dim", type=int)
    parser.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--literal-losses", dest="literal_losses",
                        action="store_const", const=True)
    parser.add_argument("--materialize-patterns", dest="materialize_patterns",
                        action="store_const", const=True)
    parser.add_argument("--weighting", choices=["adaptive", "identical", "fixed", "concat"])


def _write_history_csv(history: list[dict], path: Path):
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "l_m", "l_u", "l_d", "total", "val_avg_metric",
                         "seconds"])
        for row in history:
            writer.writerow([row["epoch"], repr(row["l_m"]), repr(row["l_u"]),
                             repr(row["l_d"]), repr(row["total"]),
                             repr(row["val_avg_metric"]), repr(row["seconds"])])


def _load_dataset(path: str | None, flag: str) -> data.Dataset:
    if path is None:
        raise CliError(f"missing required flag {flag}")
    p = Path(path)
    if not p.exists():
        raise CliError(f"dataset directory not found: {p}")
    try:
        return data.load_dataset(p)
    except (ValueError, FileNotFoundError, KeyError) as err:
        raise CliError(f"cannot load dataset {p}: {err}")


def _cmd_gen_data(args) -> int:
    file_cfg = _load_config_file(args.config, "gen-data")
    keys = ["spec", "out", "seed"]
    resolved = _resolve(args, file_cfg, keys)
    if "spec" not in resolved:
        raise CliError("missing required flag --spec")
    if "out" not in resolved:
        raise CliError("missing required flag --out")
    spec_path = Path(resolved["spec"])
    if not spec_path.exists():
        raise CliError(f"spec file not found: {spec_path}")
    try:
        raw = json.loads(spec_path.read_text())
        if "seed" in resolved:
            raw["seed"] = resolved["seed"]
        spec = data.SyntheticSpec(**raw)
    except (json.JSONDecodeError, TypeError, ValueError) as err:
        raise CliError(f"invalid synthetic spec: {err}")
    out_dir = Path(resolved["out"])
    train_ds, test_ds = data.generate_synthetic(spec)
    data.save_dataset(train_ds, out_dir / "train")
    data.save_dataset(test_ds, out_dir / "test")
    resolved["seed"] = spec.seed
    _write_run_json(out_dir, "gen-data", resolved)
    print(f"wrote {train_ds.n} train / {test_ds.n} test samples to {out_dir}")
    return 0


def _cmd_train(args) -> int:
    file_cfg = _load_config_file(args.config, "train")
    keys = ["data", "val-data", "out"] + _TRAIN_KEYS
    resolved = _resolve(args, file_cfg, keys)
    if "data" not in resolved:
        raise CliError("missing required flag --data")
    if "out" not in resolved:
        raise CliError("missing required flag --out")
    train_ds = _load_dataset(resolved["data"], "--data")
    val_ds = None
    if resolved.get("val-data"):
        val_ds = _load_dataset(resolved["val-data"], "--val-data")
    weighting = resolved.get("weighting", "adaptive")
    config = _train_config({**resolved, "weighting":
                            "adaptive" if weighting == "concat" else weighting})
    out_dir = Path(resolved["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    if weighting == "concat":
        model, history = train.fit_concat(config, train_ds, val_ds)
    else:
        model, history = train.fit(config, train_ds, val_ds)
    train.save_checkpoint(model, out_dir / "checkpoint.json", train_config=config)
    _write_history_csv(history, out_dir / "train_log.csv")
    full_resolved = {**dataclasses.asdict(config), "weighting": weighting,
                     "data": resolved["data"], "out": resolved["out"]}
    if resolved.get("val-data"):
        full_resolved["val-data"] = resolved["val-data"]
    _write_run_json(out_dir, "train", full_resolved)
    final = history[-1]["total"] if history else float("nan")
    print(f"trained {config.epochs} epochs, final loss {final:.6f}, "
          f"checkpoint at {out_dir / 'checkpoint.json'}")
    return 0


def _load_model(resolved: dict):
    if "checkpoint" not in resolved:
        raise CliError("missing required flag --checkpoint")
    path = Path(resolved["checkpoint"])
    if not path.exists():
        raise CliError(f"checkpoint not found: {path}")
    try:
        return train.load_checkpoint(path)
    except ValueError as err:
        raise CliError(str(err))


def _cmd_eval(args) -> int:
    file_cfg = _load_config_file(args.config, "eval")
    keys = ["checkpoint", "data", "out", "metric", "strategy"]
    resolved = _resolve(args, file_cfg, keys)
    model = _load_model(resolved)
    dataset = _load_dataset(resolved.get("data"), "--data")
    if "out" not in resolved:
        raise CliError("missing required flag --out")
    out_dir = Path(resolved["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    metric = resolved.get("metric", "wa")
    try:
        report = evaluate.evaluate_grid(model, dataset, metric,
                                        resolved.get("strategy"))
    except ValueError as err:
        raise CliError(str(err))
    report.write_csv(out_dir / "report.csv")
    report.write_json(out_dir / "report.json")
    _write_run_json(out_dir, "eval", {**resolved, "metric": metric})
    for row in report.rows:
        print(f"{row.condition}: {row.metric}={row.value:.4f} (n={row.n})")
    return 0


def _cmd_sweep(args) -> int:
    file_cfg = _load_config_file(args.config, "sweep")
    keys = ["checkpoint", "data", "out", "metric", "modality", "kind", "levels",
            "seed", "fixed-modality", "fixed-kind", "fixed-level"]
    resolved = _resolve(args, file_cfg, keys)
    model = _load_model(resolved)
    dataset = _load_dataset(resolved.get("data"), "--data")
    if "out" not in resolved:
        raise CliError("missing required flag --out")
    kind = resolved.get("kind", "gaussian")
    if kind not in ("gaussian", "mask"):
        raise CliError(f"unknown corruption kind: {kind!r}")
    modality = int(resolved.get("modality", 0))
    if not 0 <= modality < dataset.num_modalities:
        raise CliError(f"modality {modality} out of range")
    levels = resolved.get("levels")
    if isinstance(levels, str):
        levels = [float(v) for v in levels.split(",")]
    seed = int(resolved.get("seed", 0))
    fixed = None
    if resolved.get("fixed-kind") is not None:
        if resolved.get("fixed-level") is None:
            raise CliError("--fixed-kind requires --fixed-level")
        fixed = (int(resolved.get("fixed-modality", 1 % dataset.num_modalities)),
                 resolved["fixed-kind"], float(resolved["fixed-level"]))
    out_dir = Path(resolved["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    metric = resolved.get("metric", "wa")
    try:
        report = evaluate.evaluate_corruption_sweep(
            model, dataset, modality, kind, levels, metric, seed, fixed)
    except ValueError as err:
        raise CliError(str(err))
    report.write_csv(out_dir / "report.csv")
    report.write_json(out_dir / "report.json")
    echo = {**resolved, "kind": kind, "modality": modality, "seed": seed,
            "metric": metric,
            "levels": list(levels) if levels is not None else
            list(evaluate.GAUSSIAN_LEVELS if kind == "gaussian" else evaluate.MASK_LEVELS)}
    _write_run_json(out_dir, "sweep", echo)
    for row in report.rows:
        print(f"{row.condition}: {row.metric}={row.value:.4f} (n={row.n})")
    return 0


def ablate(config: TrainConfig, train_ds: data.Dataset, test_ds: data.Dataset,
           metric: str = "wa") -> list[dict]:
    """Train the four loss variants and the three weighting strategies on the
    same data and seed; return per-pattern rows for each variant."""
    loss_variants = [
        ("loss:multimodal", dataclasses.replace(config, lambda1=0.0, lambda2=0.0)),
        ("loss:multimodal+sparsity", dataclasses.replace(config, lambda1=0.0)),
        ("loss:multimodal+unimodal", dataclasses.replace(config, lambda2=0.0)),
        ("loss:full", config),
    ]
    strategy_variants = [
        ("weighting:identical", dataclasses.replace(config, weighting="identical")),
        ("weighting:fixed", dataclasses.replace(config, weighting="fixed")),
        ("weighting:adaptive", config),
    ]
    rows = []
    for variant, cfg in loss_variants + strategy_variants:
        model, _ = train.fit(cfg, train_ds)
        report = evaluate.evaluate_grid(model, test_ds, metric)
        for row in report.rows:
            rows.append({"variant": variant, "condition": row.condition,
                         "metric": row.metric, "value": row.value, "n": row.n})
    return rows


def _cmd_ablate(args) -> int:
    file_cfg = _load_config_file(args.config, "ablate")
    keys = ["data", "test-data", "out", "metric"] + _TRAIN_KEYS
    resolved = _resolve(args, file_cfg, keys)
    train_ds = _load_dataset(resolved.get("data"), "--data")
    test_ds = _load_dataset(resolved.get("test-data"), "--test-data")
    if "out" not in resolved:
        raise CliError("missing required flag --out")
    config = _train_config(resolved)
    metric = resolved.get("metric", "wa")
    out_dir = Path(resolved["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = ablate(config, train_ds, test_ds, metric)
    with (out_dir / "report.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "condition", "metric", "value", "n"])
        for row in rows:
            writer.writerow([row["variant"], row["condition"], row["metric"],
                             repr(row["value"]), row["n"]])
    (out_dir / "report.json").write_text(json.dumps(rows, indent=2) + "\n")
    _write_run_json(out_dir, "ablate", {**dataclasses.asdict(config),
                                        "data": resolved["data"],
                                        "test-data": resolved["test-data"],
                                        "out": resolved["out"], "metric": metric})
    for row in rows:
        if row["condition"] == "Average":
            print(f"{row['variant']}: average {row['metric']}={row['value']:.4f}")
    return 0


def _cmd_verify_theorem(args) -> int:
    file_cfg = _load_config_file(args.config, "verify-theorem")
    keys = ["trials", "dmax", "seed", "out"]
    resolved = _resolve(args, file_cfg, keys)
    trials = int(resolved.get("trials", 100000))
    dmax = int(resolved.get("dmax", 8))
    seed = int(resolved.get("seed", 0))
    if trials < 1 or dmax < 1:
        raise CliError("--trials and --dmax must be >= 1")
    report = bounds.verify_ordering(trials, (1, dmax), seed)
    print(f"trials={report.trials} violations={report.violations} "
          f"worst_gap={report.worst_gap:.3e}")
    if resolved.get("out"):
        out_dir = Path(resolved["out"])
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(json.dumps({
            "trials": report.trials, "violations": report.violations,
            "worst_gap": report.worst_gap}, indent=2) + "\n")
        _write_run_json(out_dir, "verify-theorem",
                        {"trials": trials, "dmax": dmax, "seed": seed,
                         "out": resolved["out"]})
    return 0 if report.violations == 0 else 1


def _cmd_inspect_weights(args) -> int:
    file_cfg = _load_config_file(args.config, "inspect-weights")
    keys = ["checkpoint", "data", "out", "modality", "mask-modality", "samples",
            "seed"]
    resolved = _resolve(args, file_cfg, keys)
    model = _load_model(resolved)
    dataset = _load_dataset(resolved.get("data"), "--data")
    if "out" not in resolved:
        raise CliError("missing required flag --out")
    out_dir = Path(resolved["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    gaussian_mod = int(resolved.get("modality", 0))
    mask_mod = int(resolved.get("mask-modality",
                                1 if dataset.num_modalities > 1 else 0))
    samples = int(resolved.get("samples", 64))
    seed = int(resolved.get("seed", 0))
    conditions = evaluate.default_heatmap_conditions(gaussian_mod, mask_mod)
    heatmaps = evaluate.export_weight_heatmap(model, dataset, conditions, seed,
                                              max_samples=samples)
    for name, omega in heatmaps.items():
        evaluate.write_heatmap_csv(omega, dataset.modality_names,
                                   out_dir / f"weights_{name}.csv")
        means = omega.mean(axis=(0, 2))
        summary = ", ".join(f"{n}={v:.4f}"
                            for n, v in zip(dataset.modality_names, means))
        print(f"{name}: mean weights {summary}")
    _write_run_json(out_dir, "inspect-weights",
                    {**resolved, "modality": gaussian_mod, "mask-modality": mask_mod,
                     "samples": samples, "seed": seed})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pwfusion",
        description="Precision-weighted multimodal fusion: data generation, "
                    "training, and robustness evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic multimodal dataset")
    p.add_argument("--spec", help="JSON file describing the synthetic dataset")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.set_defaults(fn=_cmd_gen_data)

    p = sub.add_parser("train", help="train a fusion model")
    p.add_argument("--data", help="training dataset directory")
    p.add_argument("--val-data", dest="val_data")
    p.add_argument("--out")
    p.add_argument("--config")
    _add_train_flags(p)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="accuracy per availability pattern")
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--metric", choices=["wa", "ua"])
    p.add_argument("--strategy", choices=["adaptive", "identical", "fixed"])
    p.add_argument("--config")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("sweep", help="accuracy across corruption levels")
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--metric", choices=["wa", "ua"])
    p.add_argument("--modality", type=int)
    p.add_argument("--kind", choices=["gaussian", "mask"])
    p.add_argument("--levels", help="comma-separated corruption levels")
    p.add_argument("--seed", type=int)
    p.add_argument("--fixed-modality", dest="fixed_modality", type=int)
    p.add_argument("--fixed-kind", dest="fixed_kind", choices=["gaussian", "mask"])
    p.add_argument("--fixed-level", dest="fixed_level", type=float)
    p.add_argument("--config")
    p.set_defaults(fn=_cmd_sweep)

    p = sub.add_parser("ablate", help="loss and weighting ablations")
    p.add_argument("--data")
    p.add_argument("--test-data", dest="test_data")
    p.add_argument("--out")
    p.add_argument("--metric", choices=["wa", "ua"])
    p.add_argument("--config")
    _add_train_flags(p)
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("verify-theorem",
                       help="check the weighting power ordering numerically")
    p.add_argument("--trials", type=int)
    p.add_argument("--dmax", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--config")
    p.set_defaults(fn=_cmd_verify_theorem)

    p = sub.add_parser("inspect-weights",
                       help="export element-wise fusion weights under corruption")
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--modality", type=int, help="modality receiving Gaussian noise")
    p.add_argument("--mask-modality", dest="mask_modality", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.set_defaults(fn=_cmd_inspect_weights)
    return parser


def run(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.fn(args)
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # runtime failure
        print(f"error: {err}", file=sys.stderr)
        return 1


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
