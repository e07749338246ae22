"""Local-step machinery: active-set NNLS, exact k-NN, convex-hull projection.

The projection turns the simplex-constrained least-squares problem into a
plain NNLS one: the partition-of-unity constraint becomes a penalty row
``sqrt(xi) * 1^T`` and optional ridge rows ``sqrt(mu) * I`` are appended.
Both coefficients are scaled by the mean squared column norm of the
rescaled neighbour matrix so the parameters ``xi_bar`` / ``mu_bar`` are
dimensionless.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .datagen import MaterialDataset
from .errors import ContractError, DatasetError, NNLSConvergenceError
from .phase_space import DatasetPoint, LocalState, Metric, m_norm

# rows per chunk in batched distance evaluation (keeps temporaries ~50 MB)
_CHUNK_ELEMS = 6_000_000


@dataclass(frozen=True)
class SolverParams:
    k: int = 6
    xi_bar: float = 1e5
    mu_bar: float = 1e-4
    nnls_tol: float = 1e-10

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ContractError(f"k must be a positive integer, got {self.k}")
        if not self.xi_bar > 0:
            raise ContractError(f"xi_bar must be positive, got {self.xi_bar}")
        if not self.mu_bar >= 0:
            raise ContractError(f"mu_bar must be non-negative, got {self.mu_bar}")


@dataclass(frozen=True)
class Neighborhood:
    indices: np.ndarray
    matrix: np.ndarray  # (2q, k), column j is dataset point indices[j]

    @property
    def k(self) -> int:
        return self.indices.size


@dataclass(frozen=True)
class ProjectionResult:
    weights: np.ndarray
    state: LocalState
    pu_residual: float
    objective: float


# --------------------------------------------------------------------------
# NNLS

def _ls(A, z, passive):
    # pivoted QR (gelsy) copes with rank-deficient passive sets
    s = np.zeros(A.shape[1])
    s[passive] = scipy.linalg.lstsq(A[:, passive], z, lapack_driver="gelsy",
                                    check_finite=False)[0]
    return s


def nnls(A, z, tol: float = 1e-10, start=None) -> np.ndarray:
    """Lawson-Hanson active-set solution of ``min ||A y - z||, y >= 0``.

    Stops when ``||r|| <= tol ||z||``, when every zero-set column makes an
    angle with the residual whose cosine is ``<= tol`` (plus a rounding
    floor), or when every index is passive. The entering index is the lowest-numbered maximiser.

    ``start`` is an optional boolean guess of the positive set. It is used
    only if the least-squares solution on it is strictly positive; the
    main loop then continues from there, so the result still satisfies the
    same stopping test.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    z = np.asarray(z, dtype=float).ravel()
    n, p = A.shape
    if z.size != n:
        raise ContractError(f"A has {n} rows but z has {z.size} entries")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(z))):
        raise ContractError("nnls input must be finite")

    y = np.zeros(p)
    znorm = np.linalg.norm(z)
    if znorm == 0.0 or not np.any(A.T @ z):
        return y
    colnorm = np.linalg.norm(A, axis=0)
    floor = 64 * np.finfo(float).eps * colnorm * znorm
    passive = np.zeros(p, dtype=bool)
    r = z.copy()
    if start is not None:
        guess = np.asarray(start, dtype=bool)
        if guess.shape == (p,) and guess.any():
            s = _ls(A, z, guess)
            if np.all(s[guess] > 0.0):
                passive, y = guess.copy(), s
                r = z - A @ y
    cap = 3 * p
    outer = 0
    while np.linalg.norm(r) > tol * znorm and not passive.all():
        grad = A.T @ r
        grad[passive] = -np.inf
        j = int(np.argmax(grad))
        if grad[j] <= tol * colnorm[j] * np.linalg.norm(r) + floor[j]:
            break
        outer += 1
        if outer > cap:
            raise NNLSConvergenceError(
                f"no convergence after {cap} active-set changes (p={p}, residual "
                f"{np.linalg.norm(r):.3e})")
        passive[j] = True
        s = _ls(A, z, passive)
        if s[j] <= 0.0:
            # entering coefficient non-positive: only possible through rounding,
            # the current point is already optimal to working precision
            passive[j] = False
            break
        while passive.any() and s[passive].min() <= 0.0:
            bad = np.flatnonzero(passive & (s <= 0.0))
            ratios = y[bad] / (y[bad] - s[bad])
            alpha = ratios.min()
            y = y + alpha * (s - y)
            # the blocking index leaves even if rounding kept it slightly positive
            passive[bad[np.argmin(ratios)]] = False
            passive &= y > 0.0
            y[~passive] = 0.0
            s = _ls(A, z, passive)
        y = s
        r = z - A @ y
    return y


def kkt_residual(A, z, y) -> float:
    """Largest KKT violation of ``y`` for NNLS, relative to ``||A^T z||``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    g = A.T @ (A @ y - np.asarray(z, dtype=float))
    scale = np.linalg.norm(A.T @ z)
    if scale == 0.0:
        scale = 1.0
    active = y > 0
    viol = np.concatenate([np.abs(g[active]), np.maximum(-g[~active], 0.0), [0.0],
                           np.maximum(-y, 0.0)])
    return float(viol.max() / scale)


# --------------------------------------------------------------------------
# nearest neighbours

def _k_smallest(d2, k):
    p = d2.size
    if k < p:
        part = np.argpartition(d2, k - 1)[:k]
        cand = np.flatnonzero(d2 <= d2[part].max())
    else:
        cand = np.arange(p)
    order = np.lexsort((cand, d2[cand]))
    return cand[order[:k]]


def knn_scaled(Z, zq, k: int) -> np.ndarray:
    """Indices of the ``k`` rows of ``Z`` closest to every row of ``zq``.

    Exact linear scan in the rescaled space; equal distances resolve to
    the lower row index. Returns an ``(n_query, k)`` integer array.
    """
    Z = np.asarray(Z, dtype=float)
    zq = np.atleast_2d(np.asarray(zq, dtype=float))
    p = Z.shape[0]
    if not 1 <= k <= p:
        raise ContractError(f"k must lie in [1, {p}], got {k}")
    out = np.empty((zq.shape[0], k), dtype=np.int64)
    step = max(1, _CHUNK_ELEMS // max(1, Z.size))
    for start in range(0, zq.shape[0], step):
        block = zq[start:start + step]
        diff = block[:, None, :] - Z[None, :, :]
        d2 = np.einsum("qpi,qpi->qp", diff, diff)
        if k == 1:
            # argmin already returns the first (lowest-index) minimiser
            out[start:start + step, 0] = np.argmin(d2, axis=1)
        else:
            for i, row in enumerate(d2):
                out[start + i] = _k_smallest(row, k)
    return out


def _state_vector(s, q):
    v = s.as_vector() if isinstance(s, LocalState) else np.asarray(s, dtype=float).ravel()
    if v.size != 2 * q:
        raise ContractError(f"state of length {v.size} does not match q={q}")
    if not np.all(np.isfinite(v)):
        raise ContractError("state must be finite")
    return v


def knn(dataset: MaterialDataset, s, m: Metric, k: int) -> Neighborhood:
    """The ``k`` dataset points nearest to ``s`` in the metric norm."""
    if dataset.q != m.q:
        raise ContractError(f"dataset q={dataset.q} does not match metric q={m.q}")
    if k > dataset.p:
        raise DatasetError(f"k={k} exceeds dataset size p={dataset.p}")
    v = _state_vector(s, m.q)
    idx = knn_scaled(m.rescale_many(dataset.states), m.sqrt_factor @ v, k)[0]
    return Neighborhood(idx, dataset.states[idx].T.copy())


def nearest_point(dataset: MaterialDataset, s, m: Metric) -> tuple[DatasetPoint, float]:
    """Closest dataset point to ``s`` and its metric distance."""
    if dataset.p < 1:
        raise DatasetError("empty dataset")
    nb = knn(dataset, s, m, 1)
    i = int(nb.indices[0])
    v = _state_vector(s, m.q)
    point = DatasetPoint(LocalState.from_vector(dataset.states[i]), i)
    return point, m_norm(v - dataset.states[i], m)


# --------------------------------------------------------------------------
# convex projection

def project_weights(Zn, z, params: SolverParams, start=None):
    """Penalised convex-combination weights for rescaled neighbours ``Zn``.

    ``Zn`` is ``(2q, k)``, ``z`` the rescaled query. Returns
    ``(weights, objective)`` where ``objective`` is the squared residual of
    the augmented least-squares system at the solution.
    """
    dim, k = Zn.shape
    if k == 1:
        return np.ones(1), 0.0
    tr = float(np.einsum("ij,ij->", Zn, Zn))
    if tr == 0.0:
        w = np.zeros(k)
        w[0] = 1.0
        return w, float(z @ z)
    xi = params.xi_bar * tr / k
    mu = params.mu_bar * tr / k
    rows = dim + 1 + (k if mu > 0 else 0)
    A = np.zeros((rows, k))
    b = np.zeros(rows)
    A[:dim] = Zn
    b[:dim] = z
    A[dim] = np.sqrt(xi)
    b[dim] = np.sqrt(xi)
    if mu > 0:
        A[dim + 1:] = np.sqrt(mu) * np.eye(k)
    w = nnls(A, b, params.nnls_tol, start)
    res = A @ w - b
    return w, float(res @ res)


def convex_project(s, nbhd: Neighborhood, m: Metric,
                   params: SolverParams = SolverParams()) -> ProjectionResult:
    """Project ``s`` onto the convex hull of the neighbourhood columns."""
    v = _state_vector(s, m.q)
    S = np.asarray(nbhd.matrix, dtype=float)
    if S.shape[0] != 2 * m.q or S.shape[1] != nbhd.k:
        raise ContractError(f"neighbourhood matrix shape {S.shape} inconsistent with q={m.q}")
    if not np.all(np.isfinite(S)):
        raise ContractError("neighbourhood contains non-finite entries")
    w, obj = project_weights(m.sqrt_factor @ S, m.sqrt_factor @ v, params)
    state = LocalState.from_vector(S @ w)
    return ProjectionResult(w, state, float(abs(w.sum() - 1.0)), obj)
