"""Command-line entry point: ``rose train|eval|landscape|probe``.

Results go to stdout (JSON) or to files (CSV/JSON/checkpoints); failures are
reported on stderr as a single JSON object.  Exit codes: 0 success, 2 bad
configuration or arguments, 3 bad data (unreadable CSV, corrupt checkpoint,
mismatched parameter structure).

Logging verbosity comes from ``ROSE_LOG_LEVEL`` (``error``, ``info`` or
``debug``; default ``error``).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, ModelSection, RunConfig, load_config
from .estimator import RoseClassifier
from .landscape import flatness_summary, interp_1d, surface_2d, write_csv_1d, write_csv_2d
from .model import ModelSpec, ParamSet
from .probe import (
    STRATEGIES,
    LabeledSet,
    ProbeProtocol,
    ProbeTaskSpec,
    generate_probe_task,
    parse_perturbation,
    perturbation_eval,
    run_probe,
    surface_baseline,
)

logger = logging.getLogger("rose")

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}

STEP_COLUMNS = ("step", "epoch", "loss_sce", "loss_kl", "mask_ones_fraction", "mean_first_risk",
                "mean_second_risk", "grad_norm", "update_norm", "inconsistency")
PROBE_COLUMNS = ("seed", "strategy", "mcc", "clean_acc", "gaussian_acc", "surface_flip_acc")


class DataError(ValueError):
    pass


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True)


# ---------------------------------------------------------------- data


def read_csv_dataset(path) -> tuple[np.ndarray, np.ndarray]:
    """Numeric CSV with a header; the ``label`` column is the target, the rest are features."""
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows or "label" not in rows[0]:
        raise DataError(f"{path}: header must contain a 'label' column")
    header = rows[0]
    li = header.index("label")
    if len(header) < 2:
        raise DataError(f"{path}: no feature columns")
    X, y = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            values = [float(v) for v in row]
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
        if not np.all(np.isfinite(values)) or values[li] != int(values[li]):
            raise DataError(f"{path}:{lineno}: non-finite feature or non-integer label")
        y.append(int(values[li]))
        X.append(values[:li] + values[li + 1:])
    if not y:
        raise DataError(f"{path}: no data rows")
    return np.asarray(X, dtype=np.float64), np.asarray(y, dtype=np.int64)


def _resolve_paths(config: RunConfig, base: Path) -> RunConfig:
    if config.data.kind != "csv":
        return config
    data = config.to_dict()
    for key in ("train", "eval"):
        value = data["data"].get(key)
        if value is not None and not Path(value).is_absolute():
            data["data"][key] = str((base / value).resolve())
    return RunConfig.from_dict(data)


def load_splits(config: RunConfig) -> tuple[LabeledSet, Optional[LabeledSet]]:
    """Training split and (optional) evaluation split for a run."""
    if config.data.kind == "synthetic":
        return generate_probe_task(config.data.task)
    sets = []
    for path in (config.data.train, config.data.eval):
        if path is None:
            sets.append(None)
            continue
        X, y = read_csv_dataset(path)
        sets.append(LabeledSet(X=X, y=y, surface=(X[:, -1] > 0).astype(np.int64), kind="indicator"))
    return sets[0], sets[1]


def _encode(data: LabeledSet, classes: np.ndarray) -> LabeledSet:
    idx = np.searchsorted(classes, data.y)
    idx = np.minimum(idx, len(classes) - 1)
    if np.any(classes[idx] != data.y):
        raise DataError("dataset contains labels the model was not trained on")
    return LabeledSet(X=data.X, y=idx, surface=data.surface, kind=data.kind)


# ---------------------------------------------------------------- checkpoints


def _model_spec(params: ParamSet, manifest: dict) -> ModelSpec:
    try:
        run = manifest["config"]
        section = ModelSection(**run["model"])
        input_dim = params["layer0.weight"].shape[0]
        classes = params["out.weight"].shape[1]
        spec = ModelSpec(input_dim=input_dim, hidden_dims=section.hidden_dims, classes=classes,
                         activation=section.activation, dropout_rate=section.dropout_rate)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"checkpoint does not describe a model: {exc}") from exc
    expected = dict(spec.layer_shapes())
    actual = {k: tuple(v.shape) for k, v in params.items()}
    if expected != actual:
        raise CheckpointError(f"parameter shapes {actual} do not match the model {expected}")
    return spec


def open_checkpoint(path) -> tuple[ParamSet, ModelSpec, dict]:
    params, manifest = load_checkpoint(path)
    return params, _model_spec(params, manifest), manifest


def _evaluation_set(manifest: dict, data_path: Optional[str]) -> LabeledSet:
    if data_path is not None:
        X, y = read_csv_dataset(data_path)
        return LabeledSet(X=X, y=y, surface=(X[:, -1] > 0).astype(np.int64), kind="indicator")
    try:
        config = RunConfig.from_dict(manifest["config"])
    except (KeyError, ConfigError) as exc:
        raise CheckpointError(f"checkpoint carries no usable run config: {exc}") from exc
    train, evaluation = load_splits(config)
    return evaluation if evaluation is not None else train


# ---------------------------------------------------------------- commands


def cmd_train(args) -> int:
    config_path = Path(args.config)
    config = _resolve_paths(load_config(config_path), config_path.parent)
    out = Path(args.out or config.output_dir or ".")
    train, evaluation = load_splits(config)

    est = RoseClassifier(**config.estimator_params()).fit(train.X, train.y)
    logger.info("trained %d steps", len(est.history_))

    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.json", est.params_, step=est.state_.t,
                    config=config.to_dict(), classes=est.classes_)
    with open(out / "steps.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STEP_COLUMNS)
        for r in est.history_:
            w.writerow([_fmt(getattr(r, c)) for c in STEP_COLUMNS])

    fractions = [r.mask_ones_fraction for r in est.history_]
    summary = {
        "steps": est.state_.t,
        "final_train_acc": float(est.score(train.X, train.y)),
        "final_eval_acc": None if evaluation is None else float(est.score(evaluation.X, evaluation.y)),
        "mask_fraction_mean": float(np.mean(fractions)) if fractions else 1.0,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(_dump(summary))
    return EXIT_OK


def cmd_eval(args) -> int:
    params, spec, manifest = open_checkpoint(args.checkpoint)
    classes = np.asarray(manifest.get("classes") or range(spec.classes))
    data = _encode(_evaluation_set(manifest, args.data), classes)
    est = RoseClassifier.from_params(params, spec)
    result = {
        "accuracy": float(est.score(data.X, data.y)),
        "loss": float(est.loss(data.X, data.y)),
        "n": len(data),
    }
    if args.perturb is not None:
        try:
            kind, sigma = parse_perturbation(args.perturb)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        result["perturbation"] = args.perturb
        result["perturbed_accuracy"] = perturbation_eval(params, spec, data, kind, sigma, args.seed)
    print(_dump(result))
    return EXIT_OK


def cmd_landscape(args) -> int:
    if args.mode == "1d" and args.ckpt_b is None:
        raise ConfigError("--mode 1d needs --ckpt-b")
    if args.mode == "2d" and args.ckpt_b is not None:
        raise ConfigError("--mode 2d takes a single checkpoint")
    params_a, spec, manifest = open_checkpoint(args.ckpt)
    classes = np.asarray(manifest.get("classes") or range(spec.classes))
    data = _encode(_evaluation_set(manifest, args.data), classes)
    out = Path(args.out or f"landscape_{args.mode}.csv")

    if args.mode == "1d":
        params_b, spec_b, _ = open_checkpoint(args.ckpt_b)
        if spec_b != spec or not params_a.same_structure(params_b):
            raise DataError("checkpoints A and B have different parameter structure")
        grid = interp_1d(params_a, params_b, spec, data.X, data.y)
        text = write_csv_1d(grid)
        inside = grid.losses[(grid.alphas >= 0) & (grid.alphas <= 1)]
        summary = {
            "loss_a": grid.loss_a,
            "loss_b": grid.loss_b,
            "max_loss_between": float(inside.max()) if inside.size else None,
            "points": len(grid.alphas),
        }
    else:
        grid, _ = surface_2d(params_a, spec, data.X, data.y, seed=args.seed)
        text = write_csv_2d(grid)
        summary = flatness_summary(grid)
        summary["points"] = int(grid.losses.size)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    summary["csv"] = str(out)
    print(_dump(summary))
    return EXIT_OK


def _parse_seeds(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"--seeds must be comma-separated integers, got {text!r}") from exc
    if not seeds or min(seeds) < 0:
        raise ConfigError("--seeds needs at least one non-negative integer")
    return seeds


def cmd_probe(args) -> int:
    if args.strategy not in STRATEGIES:
        raise ConfigError(f"strategy must be one of {STRATEGIES}, got {args.strategy!r}")
    seeds = _parse_seeds(args.seeds)
    try:
        protocol = ProbeProtocol(granularity=args.granularity)
        tasks = [ProbeTaskSpec(surface_kind=args.task, noise_std=args.noise, seed=s) for s in seeds]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    rows = []
    for task in tasks:
        row = run_probe(args.strategy, task, protocol)
        logger.info("seed %d: mcc %.4f", task.seed, row["mcc"])
        rows.append(row)
    if args.with_baseline:
        rows += [surface_baseline(task, protocol) for task in tasks]

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PROBE_COLUMNS)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in PROBE_COLUMNS])
    main_rows = [r for r in rows if r["strategy"] == args.strategy]
    summary = {
        "strategy": args.strategy,
        "task": args.task,
        "seeds": seeds,
        "mean_mcc": float(np.mean([r["mcc"] for r in main_rows])),
        "mean_surface_flip_acc": float(np.mean([r["surface_flip_acc"] for r in main_rows])),
    }
    if args.out is None:
        sys.stdout.write(buf.getvalue())
    else:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(buf.getvalue())
        summary["csv"] = str(out)
        print(_dump(summary))
    return EXIT_OK


# ---------------------------------------------------------------- wiring


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="rose", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)

    p = sub.add_parser("train", help="train a model from a JSON run config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (default: config output_dir or .)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="CSV with a 'label' column (default: the run's eval split)")
    p.add_argument("--perturb", help="gaussian:<sigma> or surface_flip")
    p.add_argument("--seed", type=int, default=0, help="seed for gaussian noise")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("landscape", help="1D interpolation or 2D loss surface")
    p.add_argument("--mode", choices=("1d", "2d"), required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--ckpt-b")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data")
    p.add_argument("--out")
    p.set_defaults(func=cmd_landscape)

    p = sub.add_parser("probe", help="feature-preference probe over several seeds")
    p.add_argument("--strategy", required=True)
    p.add_argument("--task", choices=("indicator", "magnitude"), default="indicator")
    p.add_argument("--seeds", default="1,2,3,4,5")
    p.add_argument("--noise", type=float, default=0.0, help="surface-cue noise level")
    p.add_argument("--granularity", choices=("group", "scalar"), default="group")
    p.add_argument("--with-baseline", action="store_true",
                   help="append surface-only logistic baseline rows")
    p.add_argument("--out")
    p.set_defaults(func=cmd_probe)
    return parser


def _error(kind: str, exc: Exception, code: int) -> int:
    payload = {"error": kind, "message": str(exc)}
    offset = getattr(exc, "offset", None)
    if offset is not None:
        payload["offset"] = offset
    sys.stderr.write(_dump(payload) + "\n")
    return code


def _setup_logging() -> None:
    name = os.environ.get("ROSE_LOG_LEVEL", "error").lower()
    if name not in LOG_LEVELS:
        raise ConfigError(f"ROSE_LOG_LEVEL must be one of {sorted(LOG_LEVELS)}, got {name!r}")
    logging.basicConfig(level=LOG_LEVELS[name], stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger().setLevel(LOG_LEVELS[name])


def main(argv=None) -> int:
    try:
        _setup_logging()
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        return _error("config", exc, EXIT_CONFIG)
    except (DataError, CheckpointError) as exc:
        return _error("data", exc, EXIT_DATA)
    except ValueError as exc:  # raised by the estimator or model on unusable data
        return _error("data", exc, EXIT_DATA)


if __name__ == "__main__":
    sys.exit(main())
