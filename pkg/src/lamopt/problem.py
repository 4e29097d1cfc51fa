"""Parametric load family on the clamped plate.

The design domain is the rectangle [-1, 1] x [0, 1], clamped along
x = -1.  A traction of unit magnitude acts on a short segment of the
remaining contour; one scalar walks the segment anticlockwise around
bottom, right and top edges, a second indexes the force angle in 3
degree steps.  This module maps those two scalars to concrete boundary
data, enumerates the sample grid, and converts density fields between
the triangle mesh and the coarser quadrilateral grid the networks see.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem import BoundaryLoad, boundary_load
from .homog import THETA_MIN
from .mesh import StructuredMesh

# Length of the loaded segment and the abscissa window per side.  The
# windows leave gaps at the two free corners so the segment never
# straddles a corner.
LOAD_LENGTH = 0.1
SIDE_INTERVALS = {
    "bottom": (0.0, 0.6),
    "right": (0.7, 1.6),
    "top": (1.7, 2.3),
}
# Segment centres: bottom x = 0.35 + eta1, right y = -0.65 + eta1,
# top x = 2.65 - eta1 (the abscissa runs anticlockwise, x decreasing).
_CENTRES = {
    "bottom": (0.35, 1.0),
    "right": (-0.65, 1.0),
    "top": (2.65, -1.0),
}
# Abscissa grid: segment centres advance by half the segment length.
POSITION_STEP = LOAD_LENGTH / 2.0
ANGLE_COUNT = 60
_TOL = 1e-9


@dataclass(frozen=True)
class ParameterPoint:
    """One admissible load case: segment position plus force angle."""

    eta1: float
    eta2: float
    side: str
    interval: tuple[float, float]
    force: np.ndarray


def neumann_segment(eta1: float) -> tuple[str, tuple[float, float]]:
    """Map the contour abscissa to (side, coordinate interval).

    The interval is expressed in the side's own coordinate: x for the
    bottom and top edges, y for the right edge.  Values in the gaps
    between the three admissible windows are rejected.
    """
    eta1 = float(eta1)
    for side, (lo, hi) in SIDE_INTERVALS.items():
        if lo - _TOL <= eta1 <= hi + _TOL:
            offset, orient = _CENTRES[side]
            centre = offset + orient * eta1
            half = LOAD_LENGTH / 2.0
            return side, (centre - half, centre + half)
    raise ValueError(f"abscissa {eta1} falls outside the loadable windows")


def force_vector(eta2: float) -> np.ndarray:
    """Unit force at 90 - 3*eta2 degrees from the x axis."""
    eta2 = float(eta2)
    if not -_TOL <= eta2 <= ANGLE_COUNT - 1 + _TOL:
        raise ValueError(f"angle index must lie in [0, {ANGLE_COUNT - 1}], got {eta2}")
    angle = 0.5 * np.pi * (1.0 - eta2 / 30.0)
    return np.array([np.cos(angle), np.sin(angle)])


def parameter_point(eta1: float, eta2: float) -> ParameterPoint:
    side, interval = neumann_segment(eta1)
    return ParameterPoint(
        eta1=float(eta1),
        eta2=float(eta2),
        side=side,
        interval=interval,
        force=force_vector(eta2),
    )


def load_for_point(mesh: StructuredMesh, point: ParameterPoint) -> BoundaryLoad:
    """Realise the point's traction on a concrete mesh."""
    return boundary_load(mesh, point.side, point.interval, point.force)


def grid_positions() -> np.ndarray:
    """All segment abscissae: 13 bottom, 19 right, 13 top."""
    values = []
    for lo, hi in SIDE_INTERVALS.values():
        count = int(round((hi - lo) / POSITION_STEP)) + 1
        values.append(lo + POSITION_STEP * np.arange(count))
    return np.concatenate(values)


def enumerate_grid(
    position_stride: int = 1, angle_stride: int = 1
) -> list[ParameterPoint]:
    """Full (or strided) sample grid, position-major then angle.

    The unstrided grid holds 45 positions x 60 angles = 2,700 points.
    """
    if position_stride < 1 or angle_stride < 1:
        raise ValueError("strides must be positive")
    points = []
    for eta1 in grid_positions()[::position_stride]:
        for eta2 in range(0, ANGLE_COUNT, angle_stride):
            points.append(parameter_point(float(eta1), float(eta2)))
    return points


def project_to_quads(mesh: StructuredMesh, theta: np.ndarray) -> np.ndarray:
    """Average the two triangle densities of each grid cell."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (mesh.n_triangles,):
        raise ValueError(
            f"expected {mesh.n_triangles} triangle densities, got {theta.shape}"
        )
    return 0.5 * (theta[0::2] + theta[1::2])


def lift_to_triangles(mesh: StructuredMesh, theta_quads: np.ndarray) -> np.ndarray:
    """Let both triangles of a cell inherit the cell density.

    Values are clamped to [THETA_MIN, 1] so the lifted field is a valid
    laminate density.
    """
    theta_quads = np.asarray(theta_quads, dtype=float)
    if theta_quads.shape != (mesh.n_quads,):
        raise ValueError(
            f"expected {mesh.n_quads} cell densities, got {theta_quads.shape}"
        )
    return np.clip(np.repeat(theta_quads, 2), THETA_MIN, 1.0)
