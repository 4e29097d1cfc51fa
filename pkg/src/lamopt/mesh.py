"""Structured quadratic triangle mesh on the cantilever domain.

The domain [-1, 1] x [0, 1] is split into nx * ny axis-aligned quads,
each cut into two triangles along the bottom-left to top-right
diagonal.  Displacements are quadratic per triangle (six nodes: three
vertices, three edge midpoints), densities and tensors are constant per
triangle.  The mesh is fully determined by (nx, ny) and is therefore
never serialised.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Sides carrying boundary conditions, in curvilinear abscissa order.
LOADABLE_SIDES = ("bottom", "right", "top")


@dataclass
class BoundarySide:
    """Edge table for one side of the rectangle.

    ``edge_nodes`` rows hold (end, end, midpoint) node ids of one
    boundary edge; ``abscissa`` is the edge midpoint coordinate along
    the side (x for bottom/top, y for right/left).  Edges are uniform,
    ``edge_length`` long, and listed in increasing abscissa order.
    """

    name: str
    edge_nodes: np.ndarray
    triangle: np.ndarray
    abscissa: np.ndarray
    edge_length: float


@dataclass
class StructuredMesh:
    nx: int
    ny: int
    nodes: np.ndarray  # (n_nodes, 2) coordinates
    triangles: np.ndarray  # (n_triangles, 6) node ids, see build_mesh
    dirichlet_nodes: np.ndarray  # clamped node ids (x = -1 by default)
    sides: dict[str, BoundarySide] = field(repr=False)
    hx: float = 0.0
    hy: float = 0.0

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def n_quads(self) -> int:
        return self.nx * self.ny

    @property
    def triangle_area(self) -> float:
        return 0.5 * self.hx * self.hy

    @property
    def areas(self) -> np.ndarray:
        return np.full(self.n_triangles, self.triangle_area)

    def quad_of_triangle(self, t) -> np.ndarray:
        return np.asarray(t) // 2


def build_mesh(nx: int, ny: int) -> StructuredMesh:
    """Build the structured mesh with nx * ny quads.

    Quads are numbered row major with x fastest starting at (-1, 0);
    quad q yields triangles 2q (lower right: bottom-left, bottom-right,
    top-right vertices) and 2q+1 (upper left: bottom-left, top-right,
    top-left).  Triangle node order is (v0, v1, v2, m01, m12, m20) with
    mij the midpoint of edge vi-vj.  Nodes live on the refined
    (2nx+1) x (2ny+1) grid, id = j * (2nx+1) + i.
    """
    if nx < 2 or ny < 2:
        raise ValueError(f"mesh needs at least 2x2 quads, got {nx}x{ny}")
    hx, hy = 2.0 / nx, 1.0 / ny
    ncol = 2 * nx + 1
    ii, jj = np.meshgrid(np.arange(ncol), np.arange(2 * ny + 1))
    nodes = np.column_stack(
        [-1.0 + ii.ravel() * hx / 2.0, jj.ravel() * hy / 2.0]
    )

    qx, qy = np.meshgrid(np.arange(nx), np.arange(ny))
    qx, qy = qx.ravel(), qy.ravel()  # row major, x fastest

    def node(di, dj):
        return (2 * qy + dj) * ncol + (2 * qx + di)

    bl, br = node(0, 0), node(2, 0)
    tr, tl = node(2, 2), node(0, 2)
    lower = np.column_stack(
        [bl, br, tr, node(1, 0), node(2, 1), node(1, 1)]
    )
    upper = np.column_stack(
        [bl, tr, tl, node(1, 1), node(1, 2), node(0, 1)]
    )
    triangles = np.empty((2 * nx * ny, 6), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    dirichlet = np.arange(2 * ny + 1) * ncol  # whole x = -1 column

    def side_table(name, quads, tri_parity, edge_slot, abscissa):
        tri = 2 * quads + tri_parity
        slots = {"01": [0, 1, 3], "12": [1, 2, 4], "20": [2, 0, 5]}[edge_slot]
        return BoundarySide(
            name=name,
            edge_nodes=triangles[tri][:, slots],
            triangle=tri,
            abscissa=abscissa,
            edge_length=hx if name in ("bottom", "top") else hy,
        )

    xs_mid = -1.0 + (np.arange(nx) + 0.5) * hx
    ys_mid = (np.arange(ny) + 0.5) * hy
    sides = {
        "bottom": side_table("bottom", np.arange(nx), 0, "01", xs_mid),
        "right": side_table("right", nx - 1 + np.arange(ny) * nx, 0, "12", ys_mid),
        "top": side_table("top", (ny - 1) * nx + np.arange(nx), 1, "12", xs_mid),
        "left": side_table("left", np.arange(ny) * nx, 1, "20", ys_mid),
    }
    return StructuredMesh(
        nx=nx,
        ny=ny,
        nodes=nodes,
        triangles=triangles,
        dirichlet_nodes=dirichlet,
        sides=sides,
        hx=hx,
        hy=hy,
    )
