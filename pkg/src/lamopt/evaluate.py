"""Prediction metrics, dataset splits, and optimiser comparisons."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .fem import volume_fraction
from .homog import LameCoefficients, lame_from_engineering
from .mesh import build_mesh
from .nn import (
    PREDICTIVE_ARCHITECTURES,
    NetworkModel,
    count_active_latent,
    forward,
    predict_theta,
)
from .optimize import OptimiserConfig, optimise_surrogate_seeded
from .problem import lift_to_triangles, load_for_point, parameter_point

CROSSVAL_FRACTIONS = (0.8, 0.1, 0.1)
EXTRAPOLATION_KINDS = ("positions", "angles", "region")


def relative_mse(predictions, truths) -> float:
    """Mean squared-norm ratio of errors to truths, one term per row."""
    p = np.atleast_2d(np.asarray(predictions, dtype=float))
    t = np.atleast_2d(np.asarray(truths, dtype=float))
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {t.shape}")
    num = np.sum((p - t) ** 2, axis=1)
    den = np.sum(t**2, axis=1)
    if np.any(den == 0.0):
        raise ValueError("a truth row has zero norm")
    return float(np.mean(num / den))


def relative_mae(predictions, truths) -> float:
    """Mean absolute-sum ratio of errors to truths, one term per row."""
    p = np.atleast_2d(np.asarray(predictions, dtype=float))
    t = np.atleast_2d(np.asarray(truths, dtype=float))
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {t.shape}")
    num = np.sum(np.abs(p - t), axis=1)
    den = np.sum(np.abs(t), axis=1)
    if np.any(den == 0.0):
        raise ValueError("a truth row has zero norm")
    return float(np.mean(num / den))


@dataclass(frozen=True)
class MetricReport:
    """Test-set quality of one model under one split."""

    rmse: float
    rmae: float
    per_entry_mse: np.ndarray
    per_entry_mae: np.ndarray
    active_latent: int
    train_seconds: float = float("nan")

    def as_dict(self) -> dict[str, float]:
        return {
            "rmse": self.rmse,
            "rmae": self.rmae,
            "active_latent": float(self.active_latent),
            "train_seconds": self.train_seconds,
        }


def model_predictions(model: NetworkModel, etas, thetas) -> np.ndarray:
    """Densities the model produces for the given cases.

    Parametric architectures predict from the load parameters; the
    reconstruction-only ones run their ground-truth densities through
    the autoencoding path instead.
    """
    if model.architecture in PREDICTIVE_ARCHITECTURES:
        return predict_theta(model, np.atleast_2d(etas))
    return forward(model, theta_in=thetas)["theta_ae"]


def model_metrics(
    model: NetworkModel, etas, thetas, test_indices, train_seconds=float("nan")
) -> MetricReport:
    """Score a model on the test rows of a split."""
    etas = np.atleast_2d(np.asarray(etas, dtype=float))
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    test = np.asarray(test_indices, dtype=int)
    predictions = model_predictions(model, etas[test], thetas[test])
    truths = thetas[test]
    mse = np.sum((predictions - truths) ** 2, axis=1) / np.sum(truths**2, axis=1)
    mae = np.sum(np.abs(predictions - truths), axis=1) / np.sum(
        np.abs(truths), axis=1
    )
    if model.architecture in ("ae",):
        active = count_active_latent(model, theta_in=thetas)
    else:
        active = count_active_latent(model, eta=etas)
    return MetricReport(
        rmse=float(mse.mean()),
        rmae=float(mae.mean()),
        per_entry_mse=mse,
        per_entry_mae=mae,
        active_latent=active,
        train_seconds=train_seconds,
    )


@dataclass(frozen=True)
class SplitSpec:
    """Index triples partitioning a dataset."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        for name in ("train", "val", "test"):
            object.__setattr__(
                self, name, np.asarray(getattr(self, name), dtype=int)
            )
        parts = (self.train, self.val, self.test)
        if any(p.size == 0 for p in parts):
            raise ValueError("every split part must be non-empty")
        merged = np.concatenate(parts)
        if np.unique(merged).size != merged.size:
            raise ValueError("split parts overlap")

    @property
    def n_total(self) -> int:
        return self.train.size + self.val.size + self.test.size


def make_crossval_splits(n_entries: int, n_splits: int, seed: int = 0) -> list[SplitSpec]:
    """Seeded random 80/10/10 partitions; the test part takes rounding."""
    n_train = int(CROSSVAL_FRACTIONS[0] * n_entries)
    n_val = int(CROSSVAL_FRACTIONS[1] * n_entries)
    if n_train < 1 or n_val < 1 or n_entries - n_train - n_val < 1:
        raise ValueError(f"{n_entries} entries are too few for an 80/10/10 split")
    splits = []
    for k in range(n_splits):
        order = np.random.default_rng((seed, k)).permutation(n_entries)
        splits.append(
            SplitSpec(
                train=order[:n_train],
                val=order[n_train : n_train + n_val],
                test=order[n_train + n_val :],
            )
        )
    return splits


@dataclass(frozen=True)
class ExtrapolationSpec:
    """Rule selecting the held-out block.

    ``positions`` and ``angles`` hold out a closed interval of the
    first or second load parameter; ``region`` holds out one loaded
    boundary.
    """

    kind: str
    lower: float | None = None
    upper: float | None = None
    side: str | None = None

    def __post_init__(self):
        if self.kind not in EXTRAPOLATION_KINDS:
            raise ValueError(f"unknown extrapolation kind {self.kind!r}")
        if self.kind == "region":
            if self.side is None:
                raise ValueError("region extrapolation needs a boundary side")
        elif self.lower is None or self.upper is None or self.lower > self.upper:
            raise ValueError("interval extrapolation needs lower <= upper")

    def test_mask(self, etas, sides) -> np.ndarray:
        etas = np.asarray(etas, dtype=float)
        if self.kind == "region":
            return np.asarray(sides) == self.side
        column = etas[:, 0] if self.kind == "positions" else etas[:, 1]
        tol = 1e-9
        return (column >= self.lower - tol) & (column <= self.upper + tol)


def make_extrapolation_split(etas, sides, spec: ExtrapolationSpec, seed: int = 0) -> SplitSpec:
    """Test on the held-out block, split the remainder eight to one."""
    mask = spec.test_mask(etas, sides)
    test = np.flatnonzero(mask)
    rest = np.flatnonzero(~mask)
    if test.size == 0:
        raise ValueError("extrapolation rule matches no entries")
    if rest.size < 2:
        raise ValueError("extrapolation rule leaves too few entries to train on")
    order = rest[np.random.default_rng(seed).permutation(rest.size)]
    n_val = max(1, rest.size // 9)
    return SplitSpec(train=order[n_val:], val=order[:n_val], test=test)


@dataclass(frozen=True)
class ComparisonRow:
    """One seeded run against its stored high-fidelity reference."""

    entry_id: int
    eta1: float
    eta2: float
    compliance_initial: float
    volume_initial: float
    compliance: float
    volume: float
    n_iterations: int
    compliance_ref: float
    volume_ref: float
    n_iterations_ref: int

    @property
    def compliance_gap(self) -> float:
        return (self.compliance - self.compliance_ref) / self.compliance_ref

    @property
    def fewer_iterations(self) -> bool:
        return self.n_iterations < self.n_iterations_ref

    @property
    def reduction_percent(self) -> float:
        return 100.0 * (1.0 - self.n_iterations / self.n_iterations_ref)


def compare_optimisers(
    dataset,
    model: NetworkModel,
    indices,
    config: OptimiserConfig = OptimiserConfig(),
    material: LameCoefficients | None = None,
) -> list[ComparisonRow]:
    """Seed the optimiser with model predictions on selected entries.

    Each selected dataset entry supplies the load parameters and the
    stored reference compliance, volume, and iteration count; the
    model's predicted density field starts a penalised-only run on the
    same mesh.
    """
    if material is None:
        material = lame_from_engineering(1.0, 0.3)
    mesh = build_mesh(dataset.nx, dataset.ny)
    rows = []
    for index in np.asarray(indices, dtype=int):
        entry = dataset.entries[index]
        point = parameter_point(entry.eta1, entry.eta2)
        loads = [load_for_point(mesh, point)]
        theta_quads = predict_theta(model, [entry.eta1, entry.eta2])
        theta_init = lift_to_triangles(mesh, theta_quads)
        trace = optimise_surrogate_seeded(mesh, material, loads, config, theta_init)
        rows.append(
            ComparisonRow(
                entry_id=entry.entry_id,
                eta1=entry.eta1,
                eta2=entry.eta2,
                compliance_initial=trace.initial_compliance,
                volume_initial=trace.initial_volume,
                compliance=trace.final_compliance,
                volume=float(volume_fraction(mesh, trace.theta)),
                n_iterations=trace.n_iterations,
                compliance_ref=entry.compliance,
                volume_ref=entry.volume,
                n_iterations_ref=entry.n_iterations,
            )
        )
    return rows


def summarise_comparison(rows, compliance_tolerance: float = 0.1) -> dict[str, float]:
    """Aggregate fractions used to judge a seeded-run sweep."""
    if not rows:
        raise ValueError("no comparison rows")
    fewer = np.array([r.fewer_iterations for r in rows])
    within = np.array([r.compliance_gap <= compliance_tolerance for r in rows])
    ratio = np.array([r.n_iterations / r.n_iterations_ref for r in rows])
    return {
        "n_cases": len(rows),
        "fraction_fewer_iterations": float(fewer.mean()),
        "fraction_compliance_within": float(within.mean()),
        "fraction_fewer_and_within": float((fewer & within).mean()),
        "mean_iteration_ratio": float(ratio.mean()),
        "mean_reduction_percent": float(np.mean([r.reduction_percent for r in rows])),
        "worst_compliance_gap": float(max(r.compliance_gap for r in rows)),
    }


_COMPARISON_COLUMNS = (
    "entry_id",
    "eta1",
    "eta2",
    "compliance_initial",
    "volume_initial",
    "compliance",
    "volume",
    "n_iterations",
    "compliance_ref",
    "volume_ref",
    "n_iterations_ref",
)


def write_comparison_csv(path, rows) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(_COMPARISON_COLUMNS)
        for row in rows:
            writer.writerow([repr(getattr(row, c)) if isinstance(getattr(row, c), float)
                             else getattr(row, c) for c in _COMPARISON_COLUMNS])


def read_comparison_csv(path) -> list[ComparisonRow]:
    rows = []
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        for record in reader:
            rows.append(
                ComparisonRow(
                    entry_id=int(record["entry_id"]),
                    eta1=float(record["eta1"]),
                    eta2=float(record["eta2"]),
                    compliance_initial=float(record["compliance_initial"]),
                    volume_initial=float(record["volume_initial"]),
                    compliance=float(record["compliance"]),
                    volume=float(record["volume"]),
                    n_iterations=int(record["n_iterations"]),
                    compliance_ref=float(record["compliance_ref"]),
                    volume_ref=float(record["volume_ref"]),
                    n_iterations_ref=int(record["n_iterations_ref"]),
                )
            )
    return rows


def metrics_table(named_metrics: dict[str, dict[str, float]]) -> str:
    """Fixed-width text table, one row per model or split."""
    if not named_metrics:
        raise ValueError("nothing to tabulate")
    columns = sorted({key for metrics in named_metrics.values() for key in metrics})
    name_width = max(len(name) for name in named_metrics) + 2
    header = "name".ljust(name_width) + "".join(c.rjust(18) for c in columns)
    lines = [header, "-" * len(header)]
    for name, metrics in named_metrics.items():
        cells = "".join(
            (f"{metrics[c]:.6e}" if c in metrics else "-").rjust(18) for c in columns
        )
        lines.append(name.ljust(name_width) + cells)
    return "\n".join(lines)
