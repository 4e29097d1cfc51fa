"""Command-line pipeline driver.

Subcommands cover the whole workflow: sweep the load grid into a
dataset of optimised designs, train a surrogate on it, predict designs
for new loads, run either optimiser, score models, and export stored
designs as images.  Exit codes: 0 success, 1 usage error, 2 runtime
failure.  LAMOPT_SEED sets the default seed; a key=value config file
can supply any flag, with explicit flags taking precedence.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import evaluate, export, nn, training
from .homog import lame_from_engineering
from .mesh import build_mesh
from .optimize import (
    OptimiserConfig,
    optimise_high_fidelity,
    optimise_surrogate_seeded,
    write_trace_csv,
)
from .problem import (
    ANGLE_COUNT,
    grid_positions,
    lift_to_triangles,
    load_for_point,
    parameter_point,
    project_to_quads,
)


class UsageError(Exception):
    """Bad flags or flag combinations; exits with code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_config(path) -> dict[str, str]:
    """key = value lines; '#' starts a comment; keys use flag spelling."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, _, value = line.partition("=")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _resolve(args, key, default, cast=str):
    """CLI flag if given, else config file, else the built-in default."""
    given = getattr(args, key, None)
    if given is not None:
        return given
    config = getattr(args, "_config", {})
    if key in config:
        try:
            return cast(config[key])
        except ValueError as exc:
            raise UsageError(f"config value for {key}: {exc}") from exc
    return default


def _resolve_seed(args) -> int:
    seed = _resolve(args, "seed", None, int)
    if seed is not None:
        return seed
    env = os.environ.get("LAMOPT_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise UsageError(f"LAMOPT_SEED: {exc}") from exc
    return 0


def _material():
    return lame_from_engineering(1.0, 0.3)


def _point_or_usage(eta1: float, eta2: float):
    """Bad load parameters are flag mistakes, not runtime failures."""
    try:
        return parameter_point(eta1, eta2)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _flag_snapshot(args) -> dict:
    return {
        key: value
        for key, value in sorted(vars(args).items())
        if not key.startswith("_") and key != "func" and value is not None
    }


# --- generate-dataset -------------------------------------------------

def _grid_tasks(position_stride: int, angle_stride: int):
    """(canonical id, eta1, eta2) triples of the strided sweep.

    Ids index the full 45 x 60 grid so they are stable across stride
    choices, which keeps resumed and re-strided runs consistent.
    """
    positions = grid_positions()
    tasks = []
    for pi in range(0, len(positions), position_stride):
        for ai in range(0, ANGLE_COUNT, angle_stride):
            tasks.append((pi * ANGLE_COUNT + ai, float(positions[pi]), float(ai)))
    return tasks


def _generate_entry(task):
    """Worker: one full high-fidelity run; returns a result tuple."""
    nx, ny, entry_id, eta1, eta2, max_iterations = task
    try:
        mesh = build_mesh(nx, ny)
        point = parameter_point(eta1, eta2)
        config = OptimiserConfig(max_iterations_per_phase=max_iterations)
        trace = optimise_high_fidelity(
            mesh, _material(), [load_for_point(mesh, point)], config
        )
        entry = ds.DatasetEntry(
            entry_id=entry_id,
            eta1=eta1,
            eta2=eta2,
            boundary=point.side,
            compliance=trace.final_compliance,
            volume=trace.final_volume,
            n_iterations=trace.n_iterations,
            theta=project_to_quads(mesh, trace.theta),
        )
        return ("ok", entry)
    except Exception as exc:  # noqa: BLE001 - recorded, batch continues
        return ("error", entry_id, eta1, eta2, f"{type(exc).__name__}: {exc}")


def cmd_generate_dataset(args) -> int:
    out = Path(args.out)
    nx = _resolve(args, "nx", 48, int)
    ny = _resolve(args, "ny", 24, int)
    position_stride = _resolve(args, "positions_stride", 1, int)
    angle_stride = _resolve(args, "angles_stride", 1, int)
    jobs = _resolve(args, "jobs", 1, int)
    max_iterations = _resolve(args, "max_iterations", 500, int)
    seed = _resolve_seed(args)

    tasks = _grid_tasks(position_stride, angle_stride)
    done: set[int] = set()
    if out.exists():
        if not args.resume:
            raise UsageError(f"{out} exists; pass --resume to continue it")
        existing = ds.read_dataset(out)
        if (existing.nx, existing.ny) != (nx, ny):
            raise UsageError(
                f"{out} holds a {existing.nx}x{existing.ny} grid, flags say {nx}x{ny}"
            )
        done = set(existing.ids())
    else:
        ds.write_dataset(out, ds.Dataset(nx=nx, ny=ny, entries=[]))

    pending = [
        (nx, ny, entry_id, eta1, eta2, max_iterations)
        for entry_id, eta1, eta2 in tasks
        if entry_id not in done
    ]
    print(
        f"{len(tasks)} grid points, {len(done)} already stored, "
        f"{len(pending)} to run",
        flush=True,
    )

    failures = []
    started = time.perf_counter()

    def handle(result):
        if result[0] == "ok":
            ds.append_entry(out, result[1])
        else:
            failures.append(result[1:])

    if jobs > 1 and pending:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for result in pool.map(_generate_entry, pending):
                handle(result)
    else:
        for task in pending:
            handle(_generate_entry(task))

    final = ds.read_dataset(out)
    csv_path = out.with_suffix(".csv")
    ds.write_manifest_csv(csv_path, final)

    artifacts = {"dataset": out, "manifest_csv": csv_path}
    failures_path = out.with_suffix(".failures.csv")
    if failures:
        with open(failures_path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["entry_id", "eta1", "eta2", "error"])
            writer.writerows(failures)
        artifacts["failures"] = failures_path
    export.write_manifest(
        out.with_suffix(".manifest.json"),
        command="generate-dataset",
        seed=seed,
        config={
            **_flag_snapshot(args),
            "n_entries": len(final.entries),
            "n_failures": len(failures),
            "failed_ids": [f[0] for f in failures],
            "elapsed_seconds": time.perf_counter() - started,
        },
        artifacts=artifacts,
    )
    print(
        f"dataset {out}: {len(final.entries)} entries, {len(failures)} failures",
        flush=True,
    )
    return 0


# --- train ------------------------------------------------------------

def _split_from_flags(args, data: ds.Dataset, seed: int) -> evaluate.SplitSpec:
    kind = _resolve(args, "split_kind", "crossval")
    if kind == "crossval":
        return evaluate.make_crossval_splits(len(data.entries), 1, seed)[0]
    if kind == "region":
        side = _resolve(args, "side", None)
        if side is None:
            raise UsageError("region splits need --side")
        spec = evaluate.ExtrapolationSpec(kind=kind, side=side)
    else:
        lower = _resolve(args, "lower", None, float)
        upper = _resolve(args, "upper", None, float)
        if lower is None or upper is None:
            raise UsageError(f"{kind} splits need --lower and --upper")
        spec = evaluate.ExtrapolationSpec(kind=kind, lower=lower, upper=upper)
    sides = np.array([entry.boundary for entry in data.entries])
    return evaluate.make_extrapolation_split(ds.stack_etas(data), sides, spec, seed)


def cmd_train(args) -> int:
    data = ds.read_dataset(args.dataset)
    if not data.entries:
        raise UsageError(f"{args.dataset} holds no entries")
    seed = _resolve_seed(args)
    architecture = _resolve(args, "architecture", None)
    if architecture is None:
        raise UsageError("--architecture is required")
    if architecture not in nn.ARCHITECTURES:
        raise UsageError(
            f"unknown architecture {architecture!r}; "
            f"choose from {', '.join(nn.ARCHITECTURES)}"
        )

    config = training.TrainConfig(
        epochs=_resolve(args, "epochs", 5000, int),
        batch_size=_resolve(args, "batch_size", 600, int),
        learning_rate=_resolve(args, "learning_rate", 1e-3, float),
        early_stop_tol=_resolve(args, "early_stop_tol", 1e-3, float),
        early_stop_patience=_resolve(args, "early_stop_patience", 1000, int),
        seed=seed,
        settings=nn.LossSettings(
            omega_alpha=_resolve(args, "omega_alpha", 1e-3, float),
            omega_r=_resolve(args, "omega_r", 1e-4, float),
            omega_r_stage1=_resolve(args, "omega_r_stage1", 1e-4, float),
            omega_r_stage2=_resolve(args, "omega_r_stage2", None, float),
        ),
    )
    split = _split_from_flags(args, data, seed)
    etas = ds.stack_etas(data)
    thetas = ds.stack_thetas(data)
    # fit on the train rows, monitor the validation rows, never touch test
    keep = np.concatenate([split.train, split.val])
    local_val = np.arange(split.train.size, keep.size)

    model = nn.build_model(architecture, data.n_cells, seed=seed)
    started = time.perf_counter()
    records = training.train_model(model, etas[keep], thetas[keep], local_val, config)
    elapsed = time.perf_counter() - started

    out = Path(args.out)
    nn.write_model(out, model)
    history_path = out.with_suffix(".history.csv")
    export.write_history_csv(history_path, records)
    export.write_manifest(
        out.with_suffix(".manifest.json"),
        command="train",
        seed=seed,
        config={
            **_flag_snapshot(args),
            "epochs_run": len(records),
            "final_val_loss": records[-1].val_loss,
            "train_seconds": elapsed,
            "n_train": int(split.train.size),
            "n_val": int(split.val.size),
            "n_test": int(split.test.size),
        },
        artifacts={"model": out, "history": history_path},
    )
    print(
        f"trained {architecture} on {split.train.size} entries in "
        f"{elapsed:.1f}s ({len(records)} epochs), model at {out}",
        flush=True,
    )
    return 0


# --- predict ----------------------------------------------------------

def _grid_dims(args, n_cells: int) -> tuple[int, int]:
    nx = _resolve(args, "nx", None, int)
    ny = _resolve(args, "ny", None, int)
    if nx is None or ny is None:
        raise UsageError("--nx and --ny are required to shape the density grid")
    if nx * ny != n_cells:
        raise UsageError(f"{nx}x{ny} grid does not match the model's {n_cells} cells")
    return nx, ny


def cmd_predict(args) -> int:
    model = nn.read_model(args.model)
    if model.architecture not in nn.PREDICTIVE_ARCHITECTURES:
        raise UsageError(
            f"architecture {model.architecture!r} cannot predict from parameters"
        )
    nx, ny = _grid_dims(args, model.n_cells)
    eta1, eta2 = args.eta1, args.eta2
    _point_or_usage(eta1, eta2)
    theta = nn.predict_theta(model, [eta1, eta2])
    threshold = _resolve(args, "export_threshold", export.VOID_THRESHOLD, float)
    seed = _resolve_seed(args)

    out = Path(args.out)
    export.write_pgm(out, theta, nx, ny, threshold)
    artifacts = {"image": out}
    if args.csv is not None:
        export.write_density_csv(args.csv, theta, nx, ny)
        artifacts["csv"] = Path(args.csv)
    export.write_manifest(
        out.with_suffix(".manifest.json"),
        command="predict",
        seed=seed,
        config=_flag_snapshot(args),
        artifacts=artifacts,
    )
    print(f"predicted design for ({eta1}, {eta2}) written to {out}", flush=True)
    return 0


# --- optimize ---------------------------------------------------------

def cmd_optimize(args) -> int:
    nx = _resolve(args, "nx", 48, int)
    ny = _resolve(args, "ny", 24, int)
    algo = _resolve(args, "algo", "hifi")
    if algo not in ("hifi", "surrogate"):
        raise UsageError(f"--algo must be hifi or surrogate, got {algo!r}")
    seed = _resolve_seed(args)
    threshold = _resolve(args, "export_threshold", export.VOID_THRESHOLD, float)
    config = OptimiserConfig(
        max_iterations_per_phase=_resolve(args, "max_iterations", 500, int)
    )

    mesh = build_mesh(nx, ny)
    point = _point_or_usage(args.eta1, args.eta2)
    loads = [load_for_point(mesh, point)]

    if algo == "surrogate":
        if args.seed_model is None:
            raise UsageError("--algo surrogate needs --seed-model")
        model = nn.read_model(args.seed_model)
        if model.architecture not in nn.PREDICTIVE_ARCHITECTURES:
            raise UsageError(
                f"seed model architecture {model.architecture!r} cannot predict"
            )
        if model.n_cells != nx * ny:
            raise UsageError(
                f"seed model was built for {model.n_cells} cells, grid has {nx * ny}"
            )
        theta_quads = nn.predict_theta(model, [args.eta1, args.eta2])
        theta_init = lift_to_triangles(mesh, theta_quads)
        trace = optimise_surrogate_seeded(mesh, _material(), loads, config, theta_init)
    else:
        trace = optimise_high_fidelity(mesh, _material(), loads, config)

    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    theta_quads = project_to_quads(mesh, trace.theta)
    image_path = Path(f"{prefix}.pgm")
    trace_path = Path(f"{prefix}.trace.csv")
    density_path = Path(f"{prefix}.lds")
    export.write_pgm(image_path, theta_quads, nx, ny, threshold)
    write_trace_csv(trace_path, trace)
    ds.write_dataset(
        density_path,
        ds.Dataset(
            nx=nx,
            ny=ny,
            entries=[
                ds.DatasetEntry(
                    entry_id=0,
                    eta1=args.eta1,
                    eta2=args.eta2,
                    boundary=point.side,
                    compliance=trace.final_compliance,
                    volume=trace.final_volume,
                    n_iterations=trace.n_iterations,
                    theta=theta_quads,
                )
            ],
        ),
    )
    export.write_manifest(
        Path(f"{prefix}.manifest.json"),
        command="optimize",
        seed=seed,
        config={
            **_flag_snapshot(args),
            "final_compliance": trace.final_compliance,
            "final_volume": trace.final_volume,
            "n_iterations": trace.n_iterations,
        },
        artifacts={"image": image_path, "trace": trace_path, "density": density_path},
    )
    print(
        f"{algo} run ({args.eta1}, {args.eta2}): J={trace.final_compliance:.6f} "
        f"V={trace.final_volume:.4f} iterations={trace.n_iterations}",
        flush=True,
    )
    return 0


# --- evaluate ---------------------------------------------------------

def cmd_evaluate(args) -> int:
    data = ds.read_dataset(args.dataset)
    if not data.entries:
        raise UsageError(f"{args.dataset} holds no entries")
    seed = _resolve_seed(args)
    n_splits = _resolve(args, "splits", 5, int)
    kind = _resolve(args, "split_kind", "crossval")
    etas = ds.stack_etas(data)
    thetas = ds.stack_thetas(data)

    if kind == "crossval":
        splits = evaluate.make_crossval_splits(len(data.entries), n_splits, seed)
    else:
        splits = [_split_from_flags(args, data, seed)]

    table: dict[str, dict[str, float]] = {}
    models = {}
    for path in args.models:
        model = nn.read_model(path)
        models[path] = model
        reports = [
            evaluate.model_metrics(model, etas, thetas, split.test)
            for split in splits
        ]
        label = f"{Path(path).stem}[{model.architecture}]"
        table[label] = {
            "rmse": float(np.mean([r.rmse for r in reports])),
            "rmae": float(np.mean([r.rmae for r in reports])),
            "active_latent": float(np.mean([r.active_latent for r in reports])),
        }
    print(evaluate.metrics_table(table), flush=True)

    artifacts = {}
    if args.metrics_out is not None:
        with open(args.metrics_out, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["model", "rmse", "rmae", "active_latent"])
            for label, metrics in table.items():
                writer.writerow(
                    [label]
                    + [repr(metrics[c]) for c in ("rmse", "rmae", "active_latent")]
                )
        artifacts["metrics"] = Path(args.metrics_out)

    compare_n = _resolve(args, "compare", 0, int)
    if compare_n > 0:
        test = splits[0].test[:compare_n]
        for path, model in models.items():
            if model.architecture not in nn.PREDICTIVE_ARCHITECTURES:
                continue
            rows = evaluate.compare_optimisers(data, model, test)
            summary = evaluate.summarise_comparison(rows)
            print(f"\nseeded optimiser with {Path(path).stem}:", flush=True)
            for key, value in summary.items():
                print(f"  {key} = {value:.4f}", flush=True)
            if args.compare_out is not None:
                evaluate.write_comparison_csv(args.compare_out, rows)
                artifacts["comparison"] = Path(args.compare_out)

    if args.manifest is not None:
        export.write_manifest(
            args.manifest,
            command="evaluate",
            seed=seed,
            config={**_flag_snapshot(args), "metrics": table},
            artifacts=artifacts,
        )
    return 0


# --- export -----------------------------------------------------------

def cmd_export(args) -> int:
    data = ds.read_dataset(args.dataset)
    wanted = [e for e in data.entries if e.entry_id == args.entry_id]
    if not wanted:
        raise UsageError(f"entry {args.entry_id} not present in {args.dataset}")
    entry = wanted[0]
    threshold = _resolve(args, "export_threshold", export.VOID_THRESHOLD, float)
    out = Path(args.out)
    export.write_pgm(out, entry.theta, data.nx, data.ny, threshold)
    artifacts = {"image": out}
    if args.csv is not None:
        export.write_density_csv(args.csv, entry.theta, data.nx, data.ny)
        artifacts["csv"] = Path(args.csv)
    export.write_manifest(
        out.with_suffix(".manifest.json"),
        command="export",
        seed=_resolve_seed(args),
        config=_flag_snapshot(args),
        artifacts=artifacts,
    )
    print(
        f"entry {entry.entry_id} (eta1={entry.eta1}, eta2={entry.eta2}) "
        f"written to {out}",
        flush=True,
    )
    return 0


# --- parser -----------------------------------------------------------

def _add_common(parser):
    parser.add_argument("--config", help="key = value file supplying defaults")
    parser.add_argument("--seed", type=int, help="run seed (default LAMOPT_SEED or 0)")


def build_parser() -> _Parser:
    parser = _Parser(prog="lamopt", description=__doc__.splitlines()[0])
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser(
        "generate-dataset", help="sweep the load grid with the two-phase optimiser"
    )
    gen.add_argument("--out", required=True, help="dataset file to create or extend")
    gen.add_argument("--nx", type=int, help="cells along x (default 48)")
    gen.add_argument("--ny", type=int, help="cells along y (default 24)")
    gen.add_argument("--positions-stride", type=int, dest="positions_stride")
    gen.add_argument("--angles-stride", type=int, dest="angles_stride")
    gen.add_argument("--jobs", type=int, help="worker processes (default 1)")
    gen.add_argument("--max-iterations", type=int, dest="max_iterations")
    gen.add_argument("--resume", action="store_true", help="skip stored entries")
    _add_common(gen)
    gen.set_defaults(func=cmd_generate_dataset)

    train = commands.add_parser("train", help="fit a surrogate on a dataset")
    train.add_argument("--dataset", required=True)
    train.add_argument("--out", required=True, help="model checkpoint path")
    train.add_argument("--architecture", choices=nn.ARCHITECTURES)
    train.add_argument("--epochs", type=int)
    train.add_argument("--batch-size", type=int, dest="batch_size")
    train.add_argument("--learning-rate", type=float, dest="learning_rate")
    train.add_argument("--early-stop-tol", type=float, dest="early_stop_tol")
    train.add_argument(
        "--early-stop-patience", type=int, dest="early_stop_patience"
    )
    train.add_argument("--omega-alpha", type=float, dest="omega_alpha")
    train.add_argument("--omega-r", type=float, dest="omega_r")
    train.add_argument("--omega-r-stage1", type=float, dest="omega_r_stage1")
    train.add_argument("--omega-r-stage2", type=float, dest="omega_r_stage2")
    _add_split_flags(train)
    _add_common(train)
    train.set_defaults(func=cmd_train)

    predict = commands.add_parser("predict", help="densities for a load, no solver")
    predict.add_argument("--model", required=True)
    predict.add_argument("--eta1", type=float, required=True)
    predict.add_argument("--eta2", type=float, required=True)
    predict.add_argument("--nx", type=int)
    predict.add_argument("--ny", type=int)
    predict.add_argument("--out", required=True, help="image path")
    predict.add_argument("--csv", help="optional density table path")
    predict.add_argument(
        "--export-threshold", type=float, dest="export_threshold"
    )
    _add_common(predict)
    predict.set_defaults(func=cmd_predict)

    optimize = commands.add_parser("optimize", help="run either optimiser once")
    optimize.add_argument("--eta1", type=float, required=True)
    optimize.add_argument("--eta2", type=float, required=True)
    optimize.add_argument("--nx", type=int)
    optimize.add_argument("--ny", type=int)
    optimize.add_argument("--algo", choices=("hifi", "surrogate"))
    optimize.add_argument("--seed-model", dest="seed_model")
    optimize.add_argument("--max-iterations", type=int, dest="max_iterations")
    optimize.add_argument(
        "--export-threshold", type=float, dest="export_threshold"
    )
    optimize.add_argument("--out-prefix", required=True, dest="out_prefix")
    _add_common(optimize)
    optimize.set_defaults(func=cmd_optimize)

    ev = commands.add_parser("evaluate", help="score models on dataset splits")
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--models", nargs="+", required=True)
    ev.add_argument("--splits", type=int, help="crossval split count (default 5)")
    ev.add_argument("--compare", type=int, help="seeded-run comparison case count")
    ev.add_argument("--metrics-out", dest="metrics_out")
    ev.add_argument("--compare-out", dest="compare_out")
    ev.add_argument("--manifest")
    _add_split_flags(ev)
    _add_common(ev)
    ev.set_defaults(func=cmd_evaluate)

    exp = commands.add_parser("export", help="render a stored design")
    exp.add_argument("--dataset", required=True)
    exp.add_argument("--entry-id", type=int, required=True, dest="entry_id")
    exp.add_argument("--out", required=True, help="image path")
    exp.add_argument("--csv", help="optional density table path")
    exp.add_argument("--export-threshold", type=float, dest="export_threshold")
    _add_common(exp)
    exp.set_defaults(func=cmd_export)

    return parser


def _add_split_flags(parser):
    parser.add_argument(
        "--split-kind",
        choices=("crossval", "positions", "angles", "region"),
        dest="split_kind",
    )
    parser.add_argument("--lower", type=float, help="held-out interval start")
    parser.add_argument("--upper", type=float, help="held-out interval end")
    parser.add_argument("--side", choices=("bottom", "right", "top"))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.config is not None:
            args._config = _load_config(args.config)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - reported as runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
