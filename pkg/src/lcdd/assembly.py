"""Global step: admissible state closest to assigned data.

For assigned data ``(eps_hat, sig_hat)`` per integration point the global
step solves two systems with the same matrix ``K = sum V B^T M_eps B``::

    K d   = sum V B^T M_eps eps_hat            (kinematics)
    K lam = f - sum V B^T sig_hat              (multiplier, lam = 0 on Gamma_u)

and updates ``eps = B d``, ``sig = sig_hat + M_eps B lam`` (using
``M_sig^-1 = M_eps``). The stress then satisfies discrete equilibrium on
the free dofs whatever the data.

Essential conditions are linear constraints ``G d = u_bar`` attached to a
set of dependent dofs. With RK shape functions a row of ``G`` holds the
shape function values at a boundary node (transformation method); for a
truss every row is a unit vector and the reduction is plain elimination.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg

from .errors import ContractError, GeometryError, SingularSystemError
from .meshfree import (DEFAULT_SUPPORT_FACTOR, Lattice, NodeSet, build_cells, shape_matrix,
                       smoothed_gradient_table)
from .phase_space import Metric, plane_stress_metric


@dataclass(frozen=True)
class EssentialBCs:
    """Constraints ``G d = values``; ``dofs[i]`` is the dof eliminated by row ``i``."""

    dofs: np.ndarray
    G: np.ndarray
    values: np.ndarray

    @classmethod
    def pointwise(cls, ndof, dofs, values) -> "EssentialBCs":
        dofs = np.asarray(dofs, dtype=np.int64)
        G = np.zeros((dofs.size, ndof))
        G[np.arange(dofs.size), dofs] = 1.0
        return cls(dofs, G, np.asarray(values, dtype=float))


@dataclass
class Discretization:
    """Integration points, strain operators and loading of one problem.

    ``B`` has shape ``(m, q, ndof)``. ``weights`` are the quadrature weights
    ``V``. All points share ``metric`` (homogeneous material).
    """

    kind: str
    B: np.ndarray
    weights: np.ndarray
    metric: Metric
    bcs: EssentialBCs
    f: np.ndarray
    node_coords: np.ndarray
    point_coords: np.ndarray
    lengths: np.ndarray | None = None
    members: np.ndarray | None = None
    nodal_shape: np.ndarray | None = None  # (N, N): u^h(x_J) = nodal_shape @ d
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.B = np.asarray(self.B, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        self.f = np.asarray(self.f, dtype=float)
        if self.kind not in ("truss", "continuum2d"):
            raise ContractError(f"unknown discretization kind {self.kind!r}")
        if self.B.ndim != 3 or self.B.shape[1] != self.metric.q:
            raise ContractError(f"B shape {self.B.shape} does not match q={self.metric.q}")
        if self.weights.shape != (self.B.shape[0],) or np.any(self.weights <= 0):
            raise ContractError("quadrature weights must be positive, one per point")
        if self.f.shape != (self.B.shape[2],):
            raise ContractError("load vector length must equal the dof count")

    @property
    def m(self) -> int:
        return self.B.shape[0]

    @property
    def q(self) -> int:
        return self.B.shape[1]

    @property
    def dof_count(self) -> int:
        return self.B.shape[2]

    def strains(self, d) -> np.ndarray:
        return np.einsum("aqn,n->aq", self.B, d)

    def internal_force(self, stresses) -> np.ndarray:
        return np.einsum("a,aqn,aq->n", self.weights, self.B, stresses)

    def nodal_displacements(self, d) -> np.ndarray:
        """Physical nodal displacements ``(N, 2)`` (RK coefficients are not nodal values)."""
        u = np.asarray(d).reshape(-1, 2)
        return u if self.nodal_shape is None else self.nodal_shape @ u

    @cached_property
    def solver(self) -> "GlobalSolver":
        return GlobalSolver(self)


def assemble_K(disc: Discretization) -> np.ndarray:
    """``sum_a V_a B_a^T M_eps B_a`` (full, before boundary conditions)."""
    MB = np.einsum("ij,ajn->ain", disc.metric.m_eps, disc.B)
    K = np.einsum("a,ain,aim->nm", disc.weights, disc.B, MB)
    return 0.5 * (K + K.T)


def apply_essential_bcs(K, rhs, bcs: EssentialBCs):
    """Condense ``K x = rhs`` under ``G x = values``.

    Returns ``(K_r, rhs_r, T, t0)`` with ``x = T x_f + t0`` for the free
    unknowns ``x_f``. ``t0`` satisfies the constraints with ``x_f = 0``.
    """
    T, E = transformation(K.shape[0], bcs)
    t0 = E @ bcs.values
    return T.T @ K @ T, T.T @ (rhs - K @ t0), T, t0


def transformation(ndof, bcs: EssentialBCs):
    """``(T, E)`` such that ``x = T x_f + E u_bar`` satisfies ``G x = u_bar``."""
    dep = np.asarray(bcs.dofs, dtype=np.int64)
    if dep.size != np.unique(dep).size:
        raise ContractError("conflicting boundary conditions: a dof is constrained twice")
    if dep.size and (dep.min() < 0 or dep.max() >= ndof):
        raise ContractError("boundary condition dof out of range")
    free = np.setdiff1d(np.arange(ndof), dep)
    G = np.asarray(bcs.G, dtype=float).reshape(dep.size, ndof)
    T = np.zeros((ndof, free.size))
    T[free, np.arange(free.size)] = 1.0
    E = np.zeros((ndof, dep.size))
    if dep.size:
        Gc = G[:, dep]
        try:
            lu = scipy.linalg.lu_factor(Gc)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise ContractError(f"boundary constraints are not independent: {exc}") from None
        if np.any(np.abs(np.diag(lu[0])) < 1e-12 * np.abs(Gc).max()):
            raise ContractError("boundary constraints are not independent")
        T[dep] = -scipy.linalg.lu_solve(lu, G[:, free])
        E[dep] = scipy.linalg.lu_solve(lu, np.eye(dep.size))
    return T, E


@dataclass
class GlobalState:
    d: np.ndarray
    lam: np.ndarray
    states: np.ndarray  # (m, 2q)
    equilibrium_residual: float
    compatibility_residual: float


class GlobalSolver:
    """Factor the reduced ``K`` once and reuse it for every global step."""

    def __init__(self, disc: Discretization):
        self.disc = disc
        self.K = assemble_K(disc)
        self.T, self.E = transformation(disc.dof_count, disc.bcs)
        Kr = self.T.T @ self.K @ self.T
        Kr = 0.5 * (Kr + Kr.T)
        try:
            self.factor = scipy.linalg.cho_factor(Kr)
        except np.linalg.LinAlgError:
            w, v = np.linalg.eigh(Kr)
            raise SingularSystemError(
                f"stiffness singular after boundary conditions (smallest eigenvalue "
                f"{w[0]:.3e}, largest {w[-1]:.3e}); near-null mode in full dofs: "
                f"{np.round(self.T @ v[:, 0], 6).tolist()}",
                null_vector=self.T @ v[:, 0], min_eigenvalue=w[0]) from None
        scale = np.abs(np.diag(Kr)).max() if Kr.size else 1.0
        w_min = np.linalg.eigvalsh(Kr)[0] if Kr.size else 1.0
        if w_min <= 1e-13 * scale:
            raise SingularSystemError(
                f"stiffness nearly singular after boundary conditions (eigenvalue {w_min:.3e})",
                min_eigenvalue=w_min)
        self._MB = np.einsum("ij,ajn->ain", disc.metric.m_eps, disc.B)

    def _solve(self, rhs, t0):
        return self.T @ scipy.linalg.cho_solve(self.factor, self.T.T @ (rhs - self.K @ t0)) + t0

    def constrained_displacement(self, load_factor=1.0):
        return self.E @ (load_factor * self.disc.bcs.values)

    def step(self, assigned, load_factor: float = 1.0) -> GlobalState:
        disc = self.disc
        assigned = np.asarray(assigned, dtype=float)
        q = disc.q
        if assigned.shape != (disc.m, 2 * q):
            raise ContractError(f"assigned states shape {assigned.shape}, expected {(disc.m, 2 * q)}")
        eps_hat, sig_hat = assigned[:, :q], assigned[:, q:]
        f = load_factor * disc.f
        rhs_d = np.einsum("a,ain,ai->n", disc.weights, self._MB, eps_hat)
        d = self._solve(rhs_d, self.constrained_displacement(load_factor))
        lam = self._solve(f - disc.internal_force(sig_hat), np.zeros(disc.dof_count))
        eps = disc.strains(d)
        sig = sig_hat + np.einsum("ij,aj->ai", disc.metric.m_eps, disc.strains(lam))
        states = np.hstack([eps, sig])
        return GlobalState(d, lam, states, self.equilibrium_residual(sig, load_factor),
                           self.compatibility_residual(d, eps, load_factor))

    def equilibrium_residual(self, stresses, load_factor=1.0) -> float:
        """``||T^T (sum V B^T sig - f)||`` relative to ``||f||`` (or internal force if unloaded)."""
        f = load_factor * self.disc.f
        internal = self.disc.internal_force(stresses)
        scale = np.linalg.norm(f) or np.linalg.norm(internal) or 1.0
        return float(np.linalg.norm(self.T.T @ (internal - f)) / scale)

    def compatibility_residual(self, d, strains, load_factor=1.0) -> float:
        disc = self.disc
        eps_err = np.abs(strains - disc.strains(d)).max(initial=0.0)
        eps_scale = np.abs(strains).max(initial=0.0) or 1.0
        ubar = load_factor * disc.bcs.values
        bc_err = np.abs(disc.bcs.G @ d - ubar).max(initial=0.0)
        bc_scale = max(np.abs(ubar).max(initial=0.0), np.abs(d).max(initial=0.0)) or 1.0
        return float(max(eps_err / eps_scale, bc_err / bc_scale))

    def reference(self, load_factor: float = 1.0) -> GlobalState:
        """Model-based solution with ``sig = M_eps eps`` (linear elastic oracle)."""
        disc = self.disc
        d = self._solve(load_factor * disc.f, self.constrained_displacement(load_factor))
        eps = disc.strains(d)
        sig = eps @ disc.metric.m_eps.T
        return GlobalState(d, np.zeros_like(d), np.hstack([eps, sig]),
                           self.equilibrium_residual(sig, load_factor),
                           self.compatibility_residual(d, eps, load_factor))


def global_step(disc: Discretization, assigned, load_factor: float = 1.0) -> GlobalState:
    """One global step for per-point assigned data (``(m, 2q)`` array or LocalStates)."""
    if not isinstance(assigned, np.ndarray):
        assigned = np.array([s.as_vector() for s in assigned])
    return disc.solver.step(assigned, load_factor)


def reference_solution(disc: Discretization, load_factor: float = 1.0) -> GlobalState:
    return disc.solver.reference(load_factor)


# --------------------------------------------------------------------------
# truss

_COMPONENT = {"x": 0, "y": 1, 0: 0, 1: 1}


def build_truss(nodes, members, areas, supports, loads, M: float) -> Discretization:
    """Planar pin-jointed truss with one integration point per member.

    ``supports`` and ``loads`` are iterables of ``(node, component, value)``
    with component ``'x'``/``'y'``. Member strain rows are
    ``(1/l)[-c, -s, c, s]``; weights are member volumes ``A l``.
    """
    nodes = np.asarray(nodes, dtype=float)
    members = np.asarray(members, dtype=np.int64).reshape(-1, 2)
    nn = nodes.shape[0]
    ndof = 2 * nn
    areas = np.broadcast_to(np.asarray(areas, dtype=float), (members.shape[0],))
    if np.any(areas <= 0):
        raise GeometryError("member areas must be positive")
    if members.min() < 0 or members.max() >= nn:
        raise GeometryError("member references a missing node")
    B = np.zeros((members.shape[0], 1, ndof))
    lengths = np.zeros(members.shape[0])
    for a, (i, j) in enumerate(members):
        dx = nodes[j] - nodes[i]
        l = float(np.hypot(*dx))
        if l == 0.0:
            raise GeometryError(f"member {a} ({i}-{j}) has zero length")
        c, s = dx / l
        lengths[a] = l
        B[a, 0, [2 * i, 2 * i + 1, 2 * j, 2 * j + 1]] = np.array([-c, -s, c, s]) / l
    used = np.zeros(nn, dtype=bool)
    used[members.ravel()] = True
    bc_dofs, bc_vals = [], []
    for node, comp, value in supports:
        bc_dofs.append(2 * int(node) + _COMPONENT[comp])
        bc_vals.append(float(value))
    for n in np.flatnonzero(~used):
        if not {2 * n, 2 * n + 1} <= set(bc_dofs):
            raise GeometryError(f"node {n} is not connected to any member")
    if not bc_dofs:
        raise GeometryError("structure has no supported dof")
    f = np.zeros(ndof)
    for node, comp, value in loads:
        f[2 * int(node) + _COMPONENT[comp]] += float(value)
    mids = 0.5 * (nodes[members[:, 0]] + nodes[members[:, 1]])
    return Discretization(
        kind="truss", B=B, weights=areas * lengths, metric=Metric.scalar(M),
        bcs=EssentialBCs.pointwise(ndof, bc_dofs, bc_vals), f=f, node_coords=nodes,
        point_coords=mids, lengths=lengths, members=members,
        info={"areas": areas.tolist()})


def one_bar(A: float = 0.02, length: float = 1.0, F: float = 10e3, M: float = 100e6) -> Discretization:
    """Single horizontal bar, left end pinned, axial load at the right end."""
    return build_truss([[0.0, 0.0], [length, 0.0]], [[0, 1]], A,
                       supports=[(0, "x", 0.0), (0, "y", 0.0), (1, "y", 0.0)],
                       loads=[(1, "x", F)], M=M)


FIFTEEN_BAR_MEMBERS = [
    [0, 1], [1, 2], [2, 3],          # bottom chord
    [4, 5], [5, 6], [6, 7],          # top chord
    [0, 4], [1, 5], [2, 6], [3, 7],  # verticals
    [0, 5], [1, 4],                  # bay 1, crossed
    [1, 6],                          # bay 2
    [2, 7], [3, 6],                  # bay 3, crossed
]


def fifteen_bar(a: float = 4.0, h: float = 2.0, u_x: float = 0.01, F: float = 100e3,
                A: float = 1.0, M: float = 100e6) -> Discretization:
    """Three-bay two-chord truss with 15 members.

    Bottom nodes 0-3 at ``y = 0``, top nodes 4-7 at ``y = h``. Node 0 is
    pinned; node 3 rests on a roller (``u_y = 0``) and is pulled to
    ``u_x``; ``F`` acts downward at top node 6.
    """
    bottom = [[i * a, 0.0] for i in range(4)]
    top = [[i * a, h] for i in range(4)]
    return build_truss(bottom + top, FIFTEEN_BAR_MEMBERS, A,
                       supports=[(0, "x", 0.0), (0, "y", 0.0), (3, "y", 0.0), (3, "x", u_x)],
                       loads=[(6, "y", -F)], M=M)


# --------------------------------------------------------------------------
# plane-stress beam

def boundary_load(cells, nodes, traction, on_edge) -> np.ndarray:
    """Consistent nodal forces of a boundary traction.

    Integrates ``traction(x, n)`` (``n`` the outward normal) against the
    shape functions over the cell
    edges accepted by ``on_edge(start, end)``, with the same two-point
    trapezoidal rule used for the smoothed gradients. Keeping the rules
    identical is what lets traction problems pass the patch test.
    """
    f = np.zeros(2 * nodes.n)
    for cell in cells:
        for a, b, normal, length in cell.boundary_segments:
            if not on_edge(a, b):
                continue
            psi = shape_matrix(np.vstack([a, b]), nodes)
            for x, row in zip((a, b), psi):
                t = np.asarray(traction(x, normal), dtype=float)
                f[0::2] += 0.5 * length * t[0] * row
                f[1::2] += 0.5 * length * t[1] * row
    return f


def build_beam(L: float = 48.0, H: float = 12.0, h: float = 2.0, E: float = 30e6,
               nu: float = 0.3, F: float = 1000.0,
               support_factor: float = DEFAULT_SUPPORT_FACTOR) -> Discretization:
    """Cantilever on a regular RK lattice with nodal (SCNI) integration.

    Left edge clamped through the transformation method; the right edge
    carries a uniform downward shear traction of resultant ``F``, turned
    into consistent nodal forces with the trapezoidal rule per edge
    segment. Thickness is one.
    """
    nx, ny = L / h, H / h
    if not (abs(nx - round(nx)) < 1e-9 and abs(ny - round(ny)) < 1e-9):
        raise ContractError("L and H must be integer multiples of h")
    lattice = Lattice((0.0, 0.0), int(round(nx)) + 1, int(round(ny)) + 1, float(h))
    coords = lattice.coords
    nodes = NodeSet(coords, support_factor * h)
    cells = build_cells(lattice)
    grads = smoothed_gradient_table(cells, nodes)  # (N, N, 2)
    N = nodes.n
    B = np.zeros((N, 3, 2 * N))
    B[:, 0, 0::2] = grads[:, :, 0]
    B[:, 1, 1::2] = grads[:, :, 1]
    B[:, 2, 0::2] = grads[:, :, 1]
    B[:, 2, 1::2] = grads[:, :, 0]
    volumes = np.array([c.volume for c in cells])

    nodal_shape = shape_matrix(coords, nodes)
    left = np.flatnonzero(np.isclose(coords[:, 0], 0.0))
    dofs, rows = [], []
    for J in left:
        for comp in (0, 1):
            row = np.zeros(2 * N)
            row[comp::2] = nodal_shape[J]
            rows.append(row)
            dofs.append(2 * J + comp)
    bcs = EssentialBCs(np.array(dofs), np.array(rows), np.zeros(len(dofs)))

    f = boundary_load(cells, nodes, lambda x, n: np.array([0.0, -F / H]),
                      on_edge=lambda a, b: np.isclose(a[0], L) and np.isclose(b[0], L))

    return Discretization(
        kind="continuum2d", B=B, weights=volumes, metric=plane_stress_metric(E, nu), bcs=bcs,
        f=f, node_coords=coords, point_coords=coords, nodal_shape=nodal_shape,
        info={"L": L, "H": H, "h": h, "E": E, "nu": nu, "F": F,
              "support": support_factor * h, "nx": lattice.nx, "ny": lattice.ny})
