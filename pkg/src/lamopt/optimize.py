"""Compliance-minimising density optimisation drivers.

Both drivers alternate an elastic solve with a closed-form update of
the density and its laminate stiffness.  The high-fidelity driver runs
two phases: a free phase that admits intermediate densities, then a
push-to-binary phase that applies the cosine penalisation after every
density update and stops under tighter tolerances.  The seeded driver
skips the free phase entirely: it starts from a supplied density field,
makes it mechanically admissible (one solve under the uniform composite
tensor to get a stress-compatible stiffness), and runs only the
penalised loop.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .fem import (
    BoundaryLoad,
    ElasticitySolver,
    compliance_boundary,
    volume_fraction,
)
from .homog import (
    THETA_MIN,
    LameCoefficients,
    find_gamma_for_volume,
    hashin_shtrikman_tensor,
    homogenised_field,
    laminate_update,
    optimal_theta_field,
    penalise_theta,
)
from .mesh import StructuredMesh


class ConvergenceError(RuntimeError):
    """Raised when a phase exhausts its iteration budget."""


@dataclass(frozen=True)
class OptimiserConfig:
    """Tolerances and targets for the optimisation drivers.

    The free phase stops once the relative compliance and volume
    increments both fall within (tol_compliance, tol_volume); the
    penalised phase uses the tighter pair.  gamma = None re-balances
    the volume multiplier by bisection at every iteration; a fixed
    positive value skips the bisection.
    """

    tol_compliance: float = 0.5e-2
    tol_volume: float = 0.5e-2
    tol_compliance_final: float = 0.5e-4
    tol_volume_final: float = 0.5e-4
    theta_bar: float = 0.4
    target_volume: float = 0.4
    max_iterations_per_phase: int = 500
    gamma: float | None = None

    def __post_init__(self):
        if not 0.0 < self.tol_compliance_final <= self.tol_compliance:
            raise ValueError("final compliance tolerance must be in (0, tol_compliance]")
        if not 0.0 < self.tol_volume_final <= self.tol_volume:
            raise ValueError("final volume tolerance must be in (0, tol_volume]")
        if not 0.0 < self.theta_bar <= 1.0:
            raise ValueError(f"theta_bar must lie in (0, 1], got {self.theta_bar}")
        if not 0.0 < self.target_volume < 1.0:
            raise ValueError(f"target volume must lie in (0, 1), got {self.target_volume}")
        if self.max_iterations_per_phase < 1:
            raise ValueError("iteration budget must be positive")
        if self.gamma is not None and not self.gamma > 0.0:
            raise ValueError(f"fixed gamma must be positive, got {self.gamma}")


@dataclass(frozen=True)
class IterationRecord:
    """One solve: phase tag, objective, volume, and wall time."""

    phase: str
    index: int
    compliance: float
    volume: float
    seconds: float


@dataclass
class OptimisationTrace:
    """Per-iteration history plus the final design state."""

    records: list[IterationRecord] = field(default_factory=list)
    theta: np.ndarray | None = None
    tensors: np.ndarray | None = None
    iterations_free: int = 0
    iterations_penalised: int = 0
    preprocess_solves: int = 0

    @property
    def n_iterations(self) -> int:
        return self.iterations_free + self.iterations_penalised

    @property
    def initial_compliance(self) -> float:
        return next(r.compliance for r in self.records if r.phase != "seed")

    @property
    def initial_volume(self) -> float:
        return next(r.volume for r in self.records if r.phase != "seed")

    @property
    def final_compliance(self) -> float:
        return self.records[-1].compliance

    @property
    def final_volume(self) -> float:
        return self.records[-1].volume


def write_trace_csv(path, trace: OptimisationTrace) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["iteration", "phase", "compliance", "volume", "seconds"])
        for record in trace.records:
            writer.writerow(
                [
                    record.index,
                    record.phase,
                    repr(record.compliance),
                    repr(record.volume),
                    repr(record.seconds),
                ]
            )


def stopping_test(
    compliance: float,
    compliance_prev: float | None,
    volume: float,
    volume_prev: float | None,
    tol_compliance: float,
    tol_volume: float,
) -> bool:
    """True while the iteration should continue.

    Continues when either relative increment strictly exceeds its
    tolerance; a missing predecessor (first iteration) always
    continues.
    """
    if compliance_prev is None or volume_prev is None:
        return True
    return (
        abs(compliance - compliance_prev) > tol_compliance * compliance
        or abs(volume - volume_prev) > tol_volume * volume
    )


def _density_update(stress, material, config, areas, penalise):
    """Closed-form density/stiffness update from the current stress."""
    eig_sum, m1, m2, ac1, ac2 = laminate_update(stress, material)
    if config.gamma is not None:
        gamma = config.gamma
    else:
        gamma = find_gamma_for_volume(
            eig_sum, material, config.target_volume, weights=areas
        )
    theta = optimal_theta_field(eig_sum, gamma, material)
    if penalise:
        theta = penalise_theta(theta)
    tensors = homogenised_field(theta, m1, m2, ac1, ac2, material)
    return theta, tensors


def _run_phase(
    solver: ElasticitySolver,
    loads,
    material: LameCoefficients,
    theta: np.ndarray,
    tensors: np.ndarray,
    tol_compliance: float,
    tol_volume: float,
    config: OptimiserConfig,
    penalise: bool,
    phase: str,
    records: list[IterationRecord],
):
    """Iterate solve/update until the phase stopping test passes.

    Returns (theta, tensors, stress, iterations); ``stress`` is the
    field of the final solve so the caller can hand it to the next
    phase's preprocessing.
    """
    mesh = solver.mesh
    areas = mesh.areas
    compliance_prev = volume_prev = None
    stress = None
    for index in range(config.max_iterations_per_phase):
        started = time.perf_counter()
        u = solver.solve(tensors, loads)
        stress = solver.post_process_stress(tensors, u)
        compliance = compliance_boundary(loads, u)
        volume = volume_fraction(mesh, theta)
        if not (np.isfinite(compliance) and np.isfinite(volume)):
            raise ConvergenceError(f"{phase} phase produced a non-finite objective")
        records.append(
            IterationRecord(
                phase, index, compliance, volume, time.perf_counter() - started
            )
        )
        if not stopping_test(
            compliance, compliance_prev, volume, volume_prev, tol_compliance, tol_volume
        ):
            return theta, tensors, stress, index + 1
        theta, tensors = _density_update(stress, material, config, areas, penalise)
        compliance_prev, volume_prev = compliance, volume
    raise ConvergenceError(
        f"{phase} phase did not converge within "
        f"{config.max_iterations_per_phase} iterations"
    )


def _uniform_state(mesh, material, config):
    theta = np.full(mesh.n_triangles, config.theta_bar)
    hs = hashin_shtrikman_tensor(material, config.theta_bar)
    tensors = np.broadcast_to(hs, (mesh.n_triangles, 3, 3)).copy()
    return theta, tensors


def optimise_high_fidelity(
    mesh: StructuredMesh,
    material: LameCoefficients,
    loads: BoundaryLoad | list[BoundaryLoad],
    config: OptimiserConfig = OptimiserConfig(),
) -> OptimisationTrace:
    """Two-phase optimisation from the uniform composite initial state."""
    solver = ElasticitySolver(mesh)
    trace = OptimisationTrace()
    theta, tensors = _uniform_state(mesh, material, config)

    theta, tensors, stress, n_free = _run_phase(
        solver,
        loads,
        material,
        theta,
        tensors,
        config.tol_compliance,
        config.tol_volume,
        config,
        penalise=False,
        phase="free",
        records=trace.records,
    )
    trace.iterations_free = n_free

    # Handoff: one more density update from the final free-phase
    # stress, this time penalised, and a stiffness rebuilt from it.
    theta, tensors = _density_update(stress, material, config, mesh.areas, penalise=True)

    theta, tensors, _, n_pen = _run_phase(
        solver,
        loads,
        material,
        theta,
        tensors,
        config.tol_compliance_final,
        config.tol_volume_final,
        config,
        penalise=True,
        phase="penalised",
        records=trace.records,
    )
    trace.iterations_penalised = n_pen
    trace.theta = theta
    trace.tensors = tensors
    return trace


def optimise_surrogate_seeded(
    mesh: StructuredMesh,
    material: LameCoefficients,
    loads: BoundaryLoad | list[BoundaryLoad],
    config: OptimiserConfig,
    theta_init: np.ndarray,
) -> OptimisationTrace:
    """Penalised-phase-only optimisation from a supplied density field.

    The initial field (one value per triangle) is made mechanically
    admissible by solving once under the uniform composite tensor and
    building the laminate stiffness for ``theta_init`` from that
    stress.
    """
    theta_init = np.asarray(theta_init, dtype=float)
    if theta_init.shape != (mesh.n_triangles,):
        raise ValueError(
            f"expected {mesh.n_triangles} densities, got {theta_init.shape}"
        )
    if not np.all(np.isfinite(theta_init)) or np.any(
        (theta_init < 0.0) | (theta_init > 1.0)
    ):
        raise ValueError("initial densities must lie in [0, 1]")
    theta = np.clip(theta_init, THETA_MIN, 1.0)

    solver = ElasticitySolver(mesh)
    trace = OptimisationTrace()

    started = time.perf_counter()
    _, tensors_uniform = _uniform_state(mesh, material, config)
    u = solver.solve(tensors_uniform, loads)
    stress = solver.post_process_stress(tensors_uniform, u)
    trace.records.append(
        IterationRecord(
            "seed",
            0,
            compliance_boundary(loads, u),
            volume_fraction(mesh, theta),
            time.perf_counter() - started,
        )
    )
    trace.preprocess_solves = 1

    _, m1, m2, ac1, ac2 = laminate_update(stress, material)
    tensors = homogenised_field(theta, m1, m2, ac1, ac2, material)

    theta, tensors, _, n_pen = _run_phase(
        solver,
        loads,
        material,
        theta,
        tensors,
        config.tol_compliance_final,
        config.tol_volume_final,
        config,
        penalise=True,
        phase="penalised",
        records=trace.records,
    )
    trace.iterations_penalised = n_pen
    trace.theta = theta
    trace.tensors = tensors
    return trace
