"""Strain-stress states and the energy-weighted metric of the phase space.

States are stored as ``[strain, stress]`` with Voigt ordering
``[xx, yy, xy]`` (engineering shear strain) when ``q == 3``.

The distance used everywhere is

    ||s||_M^2 = 1/2 eps^T M_eps eps + 1/2 sig^T M_sig sig

and :attr:`Metric.sqrt_factor` already contains the factor 1/2, so the
Euclidean norm of ``sqrt_factor @ s`` *is* the metric norm.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError

SPD_RATIO = 1e-12
INVERSE_RTOL = 1e-10


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LocalState:
    """One strain-stress pair at an integration point or data sample."""

    strain: np.ndarray
    stress: np.ndarray

    def __post_init__(self):
        strain = _readonly(np.atleast_1d(self.strain).ravel())
        stress = _readonly(np.atleast_1d(self.stress).ravel())
        if strain.size == 0 or strain.shape != stress.shape:
            raise ContractError(
                f"strain and stress must have equal non-zero length, got "
                f"{strain.size} and {stress.size}")
        if not (np.all(np.isfinite(strain)) and np.all(np.isfinite(stress))):
            raise ContractError("state entries must be finite")
        object.__setattr__(self, "strain", strain)
        object.__setattr__(self, "stress", stress)

    @property
    def q(self) -> int:
        return self.strain.size

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.strain, self.stress])

    @classmethod
    def from_vector(cls, v) -> "LocalState":
        v = np.asarray(v, dtype=float).ravel()
        if v.size % 2:
            raise ContractError(f"state vector needs even length, got {v.size}")
        q = v.size // 2
        return cls(v[:q], v[q:])

    def __sub__(self, other: "LocalState") -> "LocalState":
        return LocalState(self.strain - other.strain, self.stress - other.stress)


@dataclass(frozen=True)
class DatasetPoint:
    state: LocalState
    index: int


def _sym_sqrt(a):
    w, v = np.linalg.eigh(a)
    return (v * np.sqrt(w)) @ v.T


def _check_spd(a, name):
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractError(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ContractError(f"{name} has non-finite entries")
    scale = np.max(np.abs(a))
    if not np.allclose(a, a.T, rtol=0.0, atol=1e-12 * scale):
        raise ContractError(f"{name} is not symmetric")
    w = np.linalg.eigvalsh(a)
    if w[0] <= SPD_RATIO * w[-1]:
        raise ContractError(f"{name} is not positive definite (eigenvalues {w})")


@dataclass(frozen=True)
class Metric:
    """Pair of SPD weighting matrices ``(m_eps, m_sig)``.

    ``m_sig`` defaults to the inverse of ``m_eps``. ``sqrt_factor`` is the
    ``2q x 2q`` matrix ``sqrt(1/2 diag(m_eps, m_sig))`` (symmetric root).
    """

    m_eps: np.ndarray
    m_sig: np.ndarray = None
    sqrt_factor: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        m_eps = np.atleast_2d(np.asarray(self.m_eps, dtype=float))
        _check_spd(m_eps, "m_eps")
        if self.m_sig is None:
            m_sig = np.linalg.inv(m_eps)
            m_sig = 0.5 * (m_sig + m_sig.T)
        else:
            m_sig = np.atleast_2d(np.asarray(self.m_sig, dtype=float))
        _check_spd(m_sig, "m_sig")
        if m_sig.shape != m_eps.shape:
            raise ContractError("m_eps and m_sig must have the same shape")
        q = m_eps.shape[0]
        err = np.linalg.norm(m_eps @ m_sig - np.eye(q))
        if err > INVERSE_RTOL * np.sqrt(q):
            raise ContractError(f"m_sig is not the inverse of m_eps (error {err:.3e})")
        root = np.zeros((2 * q, 2 * q))
        root[:q, :q] = _sym_sqrt(m_eps)
        root[q:, q:] = _sym_sqrt(m_sig)
        object.__setattr__(self, "m_eps", _readonly(m_eps))
        object.__setattr__(self, "m_sig", _readonly(m_sig))
        object.__setattr__(self, "sqrt_factor", _readonly(np.sqrt(0.5) * root))

    @property
    def q(self) -> int:
        return self.m_eps.shape[0]

    @classmethod
    def scalar(cls, modulus: float) -> "Metric":
        """Uniaxial metric ``M_eps = M``, ``M_sig = 1/M``."""
        if not modulus > 0:
            raise ContractError(f"modulus must be positive, got {modulus}")
        return cls(np.array([[float(modulus)]]), np.array([[1.0 / modulus]]))

    def rescale_many(self, states) -> np.ndarray:
        """Rescale an ``(n, 2q)`` array of states row by row."""
        states = np.asarray(states, dtype=float)
        return states @ self.sqrt_factor.T

    def norm_many(self, states) -> np.ndarray:
        """Metric norm of every row of an ``(n, 2q)`` state array."""
        states = np.atleast_2d(np.asarray(states, dtype=float))
        q = self.q
        e, s = states[:, :q], states[:, q:]
        sq = 0.5 * np.einsum("ni,ij,nj->n", e, self.m_eps, e)
        sq += 0.5 * np.einsum("ni,ij,nj->n", s, self.m_sig, s)
        return np.sqrt(np.maximum(sq, 0.0))


def _as_vector(s, m: Metric) -> np.ndarray:
    v = s.as_vector() if isinstance(s, LocalState) else np.asarray(s, dtype=float).ravel()
    if v.size != 2 * m.q:
        raise ContractError(f"state of length {v.size} does not match metric with q={m.q}")
    return v


def m_norm(s, m: Metric) -> float:
    """Energy norm ``(1/2 eps.M_eps.eps + 1/2 sig.M_sig.sig)^(1/2)``.

    ``s`` may be a :class:`LocalState` or a flat ``[strain, stress]`` vector.
    """
    v = _as_vector(s, m)
    q = m.q
    e, sig = v[:q], v[q:]
    sq = 0.5 * e @ m.m_eps @ e + 0.5 * sig @ m.m_sig @ sig
    return float(np.sqrt(max(sq, 0.0)))


def rescale(s, m: Metric) -> np.ndarray:
    """Map a state into the space where the metric distance is Euclidean."""
    return m.sqrt_factor @ _as_vector(s, m)


def plane_stress_metric(E: float, nu: float) -> Metric:
    """Plane-stress elasticity matrix as ``m_eps`` and its inverse as ``m_sig``."""
    if not E > 0:
        raise ContractError(f"E must be positive, got {E}")
    if not 0.0 <= nu < 0.5:
        raise ContractError(f"nu must lie in [0, 0.5), got {nu}")
    c = E / (1.0 - nu * nu) * np.array([
        [1.0, nu, 0.0],
        [nu, 1.0, 0.0],
        [0.0, 0.0, (1.0 - nu) / 2.0],
    ])
    return Metric(c)
