"""Reproducing-kernel shape functions and stabilized nodal integration.

Shape functions use a cubic B-spline kernel on circular supports and a
linear basis. Smoothed gradients are boundary integrals over conforming
nodal cells, evaluated with the two-point trapezoidal rule per edge. Only
full regular lattices over a rectangle are supported; their Voronoi cells
are axis-aligned rectangles.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, CoverageError, UnsupportedDomainError

DEFAULT_SUPPORT_FACTOR = 1.75
MAX_MOMENT_COND = 1e12


def cubic_bspline(z):
    """Cubic B-spline kernel of normalised distance ``z >= 0``; zero for ``z >= 1``."""
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise ContractError("kernel argument must be non-negative")
    inner = 2.0 / 3.0 - 4.0 * z**2 + 4.0 * z**3
    outer = 4.0 / 3.0 - 4.0 * z + 4.0 * z**2 - 4.0 / 3.0 * z**3
    out = np.where(z < 0.5, inner, np.where(z < 1.0, outer, 0.0))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class NodeSet:
    """RK nodes in ``dim`` dimensions with per-node support radius."""

    coords: np.ndarray
    support_a: np.ndarray
    basis_order: int = 1

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float)
        if coords.ndim == 1:
            coords = coords[:, None]
        a = np.broadcast_to(np.asarray(self.support_a, dtype=float), (coords.shape[0],)).copy()
        if np.any(a <= 0):
            raise ContractError("support radii must be positive")
        if self.basis_order != 1:
            raise ContractError("only a linear basis is supported")
        if coords.shape[0] < coords.shape[1] + 1:
            raise ContractError(f"need at least {coords.shape[1] + 1} nodes")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "support_a", a)

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def dim(self) -> int:
        return self.coords.shape[1]


@dataclass(frozen=True)
class ShapeEval:
    point: np.ndarray
    node_ids: np.ndarray
    values: np.ndarray


def shape_matrix(points, nodes: NodeSet) -> np.ndarray:
    """Dense ``(n_points, N)`` matrix of RK shape function values.

    The monomials are built from ``(x - x_I) / a_I``; this leaves the shape
    functions unchanged (the reproducing conditions are invariant under a
    rescaling of the basis) but keeps the moment matrix well conditioned
    regardless of length units.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None] if nodes.dim == 1 else pts[None, :]
    if pts.shape[1] != nodes.dim:
        raise ContractError(f"points of dimension {pts.shape[1]} vs nodes of dimension {nodes.dim}")
    diff = (pts[:, None, :] - nodes.coords[None, :, :]) / nodes.support_a[None, :, None]
    phi = np.zeros(diff.shape[:2])
    z = np.sqrt(np.einsum("pnd,pnd->pn", diff, diff))
    inside = z < 1.0
    phi[inside] = cubic_bspline(z[inside])
    H = np.concatenate([np.ones(diff.shape[:2] + (1,)), diff], axis=2)  # (P, N, dim+1)
    moment = np.einsum("pn,pni,pnj->pij", phi, H, H)
    cond = np.linalg.cond(moment)
    bad = ~(cond < MAX_MOMENT_COND)
    if np.any(bad):
        where = pts[np.argmax(bad)]
        raise CoverageError(f"moment matrix singular at x={where.tolist()} "
                            f"(condition {cond[np.argmax(bad)]:.3e}); not enough covering nodes")
    h0 = np.zeros(nodes.dim + 1)
    h0[0] = 1.0
    b = np.linalg.solve(moment, np.broadcast_to(h0, (pts.shape[0], nodes.dim + 1))[..., None])[..., 0]
    return np.einsum("pni,pi->pn", H, b) * phi


def rk_shape(x, nodes: NodeSet) -> ShapeEval:
    """Shape function values of all nodes covering ``x``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    row = shape_matrix(x[None, :], nodes)[0]
    d = np.linalg.norm(nodes.coords - x[None, :], axis=1) / nodes.support_a
    ids = np.flatnonzero(d < 1.0)
    return ShapeEval(x, ids, row[ids])


# --------------------------------------------------------------------------
# conforming cells

@dataclass(frozen=True)
class ConformingCell:
    """Rectangular nodal cell; ``polygon`` is counter-clockwise."""

    node_id: int
    polygon: np.ndarray
    volume: float

    @property
    def boundary_segments(self):
        """``(start, end, outward_normal, length)`` for each edge."""
        segs = []
        for a, b in zip(self.polygon, np.roll(self.polygon, -1, axis=0)):
            t = b - a
            length = float(np.hypot(*t))
            segs.append((a, b, np.array([t[1], -t[0]]) / length, length))
        return segs


@dataclass(frozen=True)
class Lattice:
    """Regular ``nx x ny`` node lattice; node ``j * nx + i`` sits at ``(x_i, y_j)``."""

    origin: tuple
    nx: int
    ny: int
    h: float

    @property
    def coords(self) -> np.ndarray:
        x = self.origin[0] + self.h * np.arange(self.nx)
        y = self.origin[1] + self.h * np.arange(self.ny)
        X, Y = np.meshgrid(x, y, indexing="xy")
        return np.column_stack([X.ravel(), Y.ravel()])

    @property
    def bounds(self):
        x0, y0 = self.origin
        return x0, y0, x0 + self.h * (self.nx - 1), y0 + self.h * (self.ny - 1)


def lattice_from_coords(coords, h: float, rtol: float = 1e-9) -> Lattice:
    """Recognise ``coords`` as a full regular lattice with spacing ``h``."""
    coords = np.asarray(coords, dtype=float)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise UnsupportedDomainError("nodes must be 2D points")
    if not h > 0:
        raise ContractError("spacing must be positive")
    x0, y0 = coords.min(axis=0)
    ij = (coords - [x0, y0]) / h
    rounded = np.rint(ij)
    if np.max(np.abs(ij - rounded)) > rtol * max(1.0, np.abs(ij).max()):
        raise UnsupportedDomainError("nodes are not on a lattice of the given spacing")
    nx, ny = (rounded.max(axis=0) + 1).astype(int)
    if nx < 2 or ny < 2 or coords.shape[0] != nx * ny:
        raise UnsupportedDomainError("nodes do not fill a rectangular lattice")
    order = rounded[:, 1] * nx + rounded[:, 0]
    if not np.array_equal(np.sort(order), np.arange(nx * ny)):
        raise UnsupportedDomainError("nodes do not fill a rectangular lattice")
    if not np.array_equal(order, np.arange(nx * ny)):
        raise UnsupportedDomainError("nodes must be numbered row by row (x fastest)")
    return Lattice((float(x0), float(y0)), int(nx), int(ny), float(h))


def build_cells(lattice: Lattice) -> list[ConformingCell]:
    """Voronoi cells of a regular lattice, clipped to the rectangle."""
    x0, y0, x1, y1 = lattice.bounds
    half = lattice.h / 2.0
    cells = []
    for n, (x, y) in enumerate(lattice.coords):
        xl, xr = max(x - half, x0), min(x + half, x1)
        yb, yt = max(y - half, y0), min(y + half, y1)
        poly = np.array([[xl, yb], [xr, yb], [xr, yt], [xl, yt]])
        cells.append(ConformingCell(n, poly, float((xr - xl) * (yt - yb))))
    return cells


@dataclass(frozen=True)
class SmoothedB:
    """Smoothed gradient components of the nodes touching one cell."""

    node_ids: np.ndarray
    b: np.ndarray  # (n_cover, 2): columns are b_I1, b_I2

    def matrix(self) -> np.ndarray:
        """``3 x 2 n_cover`` strain-displacement block, dofs ordered (u_x, u_y) per node."""
        n = self.node_ids.size
        out = np.zeros((3, 2 * n))
        out[0, 0::2] = self.b[:, 0]
        out[1, 1::2] = self.b[:, 1]
        out[2, 0::2] = self.b[:, 1]
        out[2, 1::2] = self.b[:, 0]
        return out


def smoothed_gradient_table(cells, nodes: NodeSet) -> np.ndarray:
    """``(n_cells, N, 2)`` smoothed gradients of every shape function in every cell.

    Cell corners are shared between neighbouring cells, so shape functions
    are evaluated once per distinct corner.
    """
    corners = np.vstack([c.polygon for c in cells])
    uniq, inv = np.unique(np.round(corners, 12), axis=0, return_inverse=True)
    psi = shape_matrix(uniq, nodes)
    inv = inv.reshape(-1)
    out = np.zeros((len(cells), nodes.n, 2))
    pos = 0
    for c_idx, cell in enumerate(cells):
        nv = len(cell.polygon)
        ids = inv[pos:pos + nv]
        pos += nv
        acc = np.zeros((nodes.n, 2))
        for e, (_, _, normal, length) in enumerate(cell.boundary_segments):
            avg = 0.5 * (psi[ids[e]] + psi[ids[(e + 1) % nv]])
            acc += np.outer(avg * length, normal)
        out[c_idx] = acc / cell.volume
    return out


def smoothed_gradient(cell: ConformingCell, nodes: NodeSet) -> SmoothedB:
    """Smoothed gradient rows for a single cell."""
    table = smoothed_gradient_table([cell], nodes)[0]
    ids = np.flatnonzero(np.any(table != 0.0, axis=1))
    return SmoothedB(ids, table[ids])
