"""Plane-strain elasticity on the structured quadratic mesh.

Displacements are continuous piecewise quadratic, material tensors
piecewise constant.  Element stiffness uses the three-point midpoint
rule, exact for the quadratic integrand; boundary tractions use the
exact quadratic edge weights (identical to two-point Gauss).  All
Voigt quantities follow the (e11, e22, 2*e12) engineering convention
of :mod:`lamopt.homog`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .homog import _adjugate_inverse_field
from .mesh import LOADABLE_SIDES, StructuredMesh

# Relative residual accepted after one refinement pass of the direct
# solve; beyond this the constrained system is reported as singular.
RESIDUAL_LIMIT = 1e-6
# Above this many unknowns the solver switches to conjugate gradients.
DIRECT_DOF_LIMIT = 300_000


class SingularSystemError(RuntimeError):
    """Constrained stiffness could not be solved to tolerance."""


@dataclass(frozen=True)
class BoundaryLoad:
    """Constant traction on a contiguous run of boundary edges."""

    side: str
    interval: tuple[float, float]
    traction: np.ndarray
    edge_nodes: np.ndarray  # (k, 3) end, end, midpoint node ids
    edge_length: float

    @property
    def covered_length(self) -> float:
        return self.edge_length * self.edge_nodes.shape[0]


def boundary_load(
    mesh: StructuredMesh,
    side: str,
    interval: tuple[float, float],
    traction: np.ndarray,
) -> BoundaryLoad:
    """Select the edges whose midpoint falls inside the closed interval.

    The interval is expressed in the side's own coordinate (x on
    bottom/top, y on right).  The clamped side cannot carry tractions.
    """
    if side not in LOADABLE_SIDES:
        raise ValueError(f"side must be one of {LOADABLE_SIDES}, got {side!r}")
    lo, hi = interval
    if not lo < hi:
        raise ValueError(f"empty interval {interval}")
    table = mesh.sides[side]
    mask = (table.abscissa >= lo) & (table.abscissa <= hi)
    if not mask.any():
        raise ValueError(
            f"no {side} edge midpoint falls in [{lo}, {hi}] "
            f"(mesh spacing {table.edge_length})"
        )
    traction = np.asarray(traction, dtype=float)
    if traction.shape != (2,):
        raise ValueError("traction must be a 2-vector")
    return BoundaryLoad(
        side=side,
        interval=(float(lo), float(hi)),
        traction=traction,
        edge_nodes=table.edge_nodes[mask],
        edge_length=table.edge_length,
    )


def _reference_gradients():
    """Gradients of the six quadratic shape functions at the three
    midpoint quadrature points of the reference triangle."""
    qpoints = np.array([[0.5, 0.0], [0.5, 0.5], [0.0, 0.5]])
    grads = np.empty((3, 6, 2))
    for q, (xi, eta) in enumerate(qpoints):
        l0 = 1.0 - xi - eta
        grads[q] = [
            [-(4.0 * l0 - 1.0), -(4.0 * l0 - 1.0)],
            [4.0 * xi - 1.0, 0.0],
            [0.0, 4.0 * eta - 1.0],
            [4.0 * (l0 - xi), -4.0 * xi],
            [4.0 * eta, 4.0 * xi],
            [-4.0 * eta, 4.0 * (l0 - eta)],
        ]
    return grads


class ElasticitySolver:
    """Assembly and solve cache for one mesh.

    Precomputes strain-displacement matrices for the two congruent
    triangle shapes and the sparse scatter pattern, so repeated solves
    with updated tensor fields only pay for numeric assembly and the
    factorisation.
    """

    def __init__(self, mesh: StructuredMesh, method: str = "auto"):
        if method not in ("auto", "direct", "cg"):
            raise ValueError(f"unknown solve method {method!r}")
        self.mesh = mesh
        self.method = method
        self.n_dof = 2 * mesh.n_nodes

        grads = _reference_gradients()
        jac = {
            0: np.array([[mesh.hx, mesh.hx], [0.0, mesh.hy]]),  # lower
            1: np.array([[mesh.hx, 0.0], [mesh.hy, mesh.hy]]),  # upper
        }
        # bmats[parity] has shape (3 qpoints, 3 strain, 12 dofs).
        self.bmats = {}
        for parity, j in jac.items():
            phys = np.einsum("ba,qnb->qna", np.linalg.inv(j), grads)
            b = np.zeros((3, 3, 12))
            b[:, 0, 0::2] = phys[..., 0]
            b[:, 1, 1::2] = phys[..., 1]
            b[:, 2, 0::2] = phys[..., 1]
            b[:, 2, 1::2] = phys[..., 0]
            self.bmats[parity] = b
        self.quad_weight = mesh.hx * mesh.hy / 6.0

        tri = mesh.triangles
        edof = np.empty((mesh.n_triangles, 12), dtype=np.int64)
        edof[:, 0::2] = 2 * tri
        edof[:, 1::2] = 2 * tri + 1
        self.edof = edof
        self.rows = np.repeat(edof, 12, axis=1).ravel()
        self.cols = np.tile(edof, (1, 12)).ravel()

        fixed = np.zeros(self.n_dof, dtype=bool)
        fixed[2 * mesh.dirichlet_nodes] = True
        fixed[2 * mesh.dirichlet_nodes + 1] = True
        self.fixed = fixed
        self.free = ~fixed

    def assemble(self, tensors: np.ndarray) -> sp.csr_matrix:
        """Global stiffness for a (n_triangles, 3, 3) tensor field."""
        tensors = np.asarray(tensors, dtype=float)
        if tensors.shape != (self.mesh.n_triangles, 3, 3):
            raise ValueError(
                f"tensor field must have shape ({self.mesh.n_triangles}, 3, 3)"
            )
        ke = np.empty((self.mesh.n_triangles, 12, 12))
        for parity in (0, 1):
            b = self.bmats[parity]
            ke[parity::2] = self.quad_weight * np.einsum(
                "qak,eab,qbl->ekl", b, tensors[parity::2], b, optimize=True
            )
        k = sp.coo_matrix(
            (ke.ravel(), (self.rows, self.cols)), shape=(self.n_dof, self.n_dof)
        )
        return k.tocsr()

    def neumann_rhs(self, loads: Sequence[BoundaryLoad]) -> np.ndarray:
        """Consistent nodal forces, exact for the quadratic traces."""
        rhs = np.zeros(self.n_dof)
        for load in loads:
            le = load.edge_length
            for weight, nodes in (
                (le / 6.0, load.edge_nodes[:, 0]),
                (le / 6.0, load.edge_nodes[:, 1]),
                (2.0 * le / 3.0, load.edge_nodes[:, 2]),
            ):
                np.add.at(rhs, 2 * nodes, weight * load.traction[0])
                np.add.at(rhs, 2 * nodes + 1, weight * load.traction[1])
        return rhs

    def solve(
        self,
        tensors: np.ndarray,
        loads: BoundaryLoad | Sequence[BoundaryLoad],
        dirichlet_values: np.ndarray | None = None,
    ) -> np.ndarray:
        """Displacement field (n_nodes, 2) under the given loads.

        ``dirichlet_values`` optionally prescribes nonzero displacement
        on the clamped nodes, shape (len(dirichlet_nodes), 2).
        """
        if isinstance(loads, BoundaryLoad):
            loads = [loads]
        k = self.assemble(tensors)
        rhs = self.neumann_rhs(loads)

        u = np.zeros(self.n_dof)
        if dirichlet_values is not None:
            vals = np.asarray(dirichlet_values, dtype=float)
            if vals.shape != (len(self.mesh.dirichlet_nodes), 2):
                raise ValueError("dirichlet_values shape mismatch")
            u[2 * self.mesh.dirichlet_nodes] = vals[:, 0]
            u[2 * self.mesh.dirichlet_nodes + 1] = vals[:, 1]
            rhs = rhs - k @ u

        kff = k[self.free][:, self.free].tocsc()
        ff = rhs[self.free]
        u[self.free] = self._solve_free(kff, ff)
        return u.reshape(-1, 2)

    def _solve_free(self, kff: sp.csc_matrix, ff: np.ndarray) -> np.ndarray:
        scale = np.linalg.norm(ff)
        if scale == 0.0:
            return np.zeros_like(ff)
        use_direct = self.method == "direct" or (
            self.method == "auto" and kff.shape[0] <= DIRECT_DOF_LIMIT
        )
        if use_direct:
            try:
                factor = spla.splu(kff)
                uf = factor.solve(ff)
                # One refinement pass counters the ~1e13 conditioning of
                # nearly void laminate fields.
                uf += factor.solve(ff - kff @ uf)
            except RuntimeError as exc:
                raise SingularSystemError(f"direct factorisation failed: {exc}")
        else:
            precond = sp.diags(1.0 / kff.diagonal())
            uf, info = spla.cg(kff, ff, rtol=1e-10, maxiter=20_000, M=precond)
            if info != 0:
                raise SingularSystemError(f"conjugate gradients stalled (info={info})")
        residual = np.linalg.norm(ff - kff @ uf) / scale
        if not np.isfinite(residual) or residual > RESIDUAL_LIMIT:
            raise SingularSystemError(
                f"relative residual {residual:.3e} exceeds {RESIDUAL_LIMIT:.0e}; "
                "tensor field is likely not positive definite"
            )
        # A definite stiffness gives f.u = u.Ku > 0; direct solves can still
        # succeed on sign-flipped fields, so catch those through the energy.
        energy = float(ff @ uf)
        if not np.isfinite(energy) or energy <= 0.0:
            raise SingularSystemError(
                f"non-positive strain energy {energy:.3e}; "
                "tensor field is not positive definite"
            )
        return uf

    def post_process_stress(self, tensors: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Element stresses (n_triangles, 3) from area-averaged strains.

        The average of the linear strain over a triangle equals its
        centroid value, so averaging the three quadrature samples is
        exact, not an approximation.
        """
        ue = u.reshape(-1)[self.edof]
        stress = np.empty((self.mesh.n_triangles, 3))
        for parity in (0, 1):
            bbar = self.bmats[parity].mean(axis=0)
            strain = ue[parity::2] @ bbar.T
            stress[parity::2] = np.einsum(
                "eab,eb->ea", tensors[parity::2], strain
            )
        return stress


def solve_elasticity(
    mesh: StructuredMesh,
    tensors: np.ndarray,
    loads: BoundaryLoad | Sequence[BoundaryLoad],
    dirichlet_values: np.ndarray | None = None,
    method: str = "auto",
) -> np.ndarray:
    return ElasticitySolver(mesh, method=method).solve(tensors, loads, dirichlet_values)


def post_process_stress(
    mesh: StructuredMesh, tensors: np.ndarray, u: np.ndarray
) -> np.ndarray:
    return ElasticitySolver(mesh).post_process_stress(tensors, u)


def compliance_boundary(
    loads: BoundaryLoad | Sequence[BoundaryLoad], u: np.ndarray
) -> float:
    """Work of the boundary tractions, integrated like the load vector."""
    if isinstance(loads, BoundaryLoad):
        loads = [loads]
    total = 0.0
    for load in loads:
        le = load.edge_length
        ends = u[load.edge_nodes[:, 0]] + u[load.edge_nodes[:, 1]]
        mids = u[load.edge_nodes[:, 2]]
        total += (le / 6.0 * ends.sum(axis=0) + 2.0 * le / 3.0 * mids.sum(axis=0)) @ load.traction
    return float(total)


def compliance_energy(
    mesh: StructuredMesh, tensors: np.ndarray, stress: np.ndarray
) -> float:
    """Complementary energy of element-constant stresses.

    Agrees with the boundary work up to the strain variance the
    element averaging discards, so the gap shrinks with refinement.
    """
    inv = _adjugate_inverse_field(np.asarray(tensors, dtype=float))
    dens = np.einsum("ea,eab,eb->e", stress, inv, stress)
    return float(mesh.triangle_area * dens.sum())


def volume_fraction(mesh: StructuredMesh, theta: np.ndarray) -> float:
    """Area-weighted mean density over the domain."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (mesh.n_triangles,):
        raise ValueError(f"density field must have shape ({mesh.n_triangles},)")
    return float(mesh.areas @ theta / (mesh.areas.sum()))
