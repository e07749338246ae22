"""Synthetic stress-strain databases and their CSV representation.

Randomness comes from ``numpy.random.Generator(numpy.random.Philox(seed))``:
Philox-4x64 is counter based and numpy's ``standard_normal`` /
``uniform`` transforms for it are fixed, so a seed pins a dataset on any
platform running numpy >= 1.17. Draw order inside each generator is part
of its contract (see the individual functions).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, DatasetError, DatasetParseError
from .phase_space import DatasetPoint, LocalState, plane_stress_metric

SIGMOID_PLATEAU = 0.51e6
SIGMOID_MODULUS = 100e6
SIGMOID_EPS_MAX = 0.03
DEFAULT_OUTLIER = (0.004, 0.55e6)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass(frozen=True)
class NoiseSpec:
    chi: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.chi >= 0:
            raise ContractError(f"noise level chi must be >= 0, got {self.chi}")


@dataclass
class MaterialDataset:
    """``p`` samples stored row-wise as ``[eps_1..eps_q, sig_1..sig_q]``."""

    states: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        if states.shape[0] < 1 or states.size == 0:
            raise DatasetError("dataset must contain at least one point")
        if states.shape[1] % 2:
            raise ContractError(f"state rows need even width, got {states.shape[1]}")
        if not np.all(np.isfinite(states)):
            raise ContractError("dataset contains NaN or Inf")
        states.setflags(write=False)
        self.states = states

    @property
    def p(self) -> int:
        return self.states.shape[0]

    @property
    def q(self) -> int:
        return self.states.shape[1] // 2

    @property
    def strains(self) -> np.ndarray:
        return self.states[:, : self.q]

    @property
    def stresses(self) -> np.ndarray:
        return self.states[:, self.q:]

    @property
    def points(self) -> list[DatasetPoint]:
        return [DatasetPoint(LocalState.from_vector(row), i) for i, row in enumerate(self.states)]

    def __len__(self):
        return self.p


def _check_count(p, minimum=1):
    if int(p) != p or p < minimum:
        if p == 0:
            raise DatasetError("cannot generate an empty dataset (p = 0)")
        raise ContractError(f"point count must be an integer >= {minimum}, got {p}")
    return int(p)


def gen_linear_truss(p: int, M: float = 100e6, eps_max: float = 0.01,
                     noise: NoiseSpec = NoiseSpec()) -> MaterialDataset:
    """Uniaxial linear data ``sig = M eps`` with additive Gaussian noise.

    Draw order: ``p`` uniform strains on ``[-eps_max, eps_max]``, then
    ``p`` strain perturbations with std ``chi*eps_max``, then ``p`` stress
    perturbations with std ``chi*M*eps_max``.
    """
    p = _check_count(p)
    if not (M > 0 and eps_max > 0):
        raise ContractError("M and eps_max must be positive")
    rng = make_rng(noise.seed)
    eps = rng.uniform(-eps_max, eps_max, size=p)
    sig = M * eps
    eps_noise = rng.normal(0.0, noise.chi * eps_max, size=p)
    sig_noise = rng.normal(0.0, noise.chi * M * eps_max, size=p)
    states = np.column_stack([eps + eps_noise, sig + sig_noise])
    meta = {"generator": "linear-truss", "seed": int(noise.seed), "chi": float(noise.chi),
            "M": float(M), "eps_max": float(eps_max)}
    return MaterialDataset(states, meta)


def sigmoid_stress(eps, M: float = SIGMOID_MODULUS, plateau: float = SIGMOID_PLATEAU):
    """``plateau * tanh(M eps / plateau)``: slope ``M`` at the origin."""
    return plateau * np.tanh(M * np.asarray(eps, dtype=float) / plateau)


def sigmoid_intersection(sigma: float = 0.5e6, M: float = SIGMOID_MODULUS,
                         plateau: float = SIGMOID_PLATEAU) -> float:
    """Strain at which the sigmoid graph reaches ``sigma``."""
    if abs(sigma) >= plateau:
        raise ContractError("target stress must lie below the plateau")
    return plateau / M * math.atanh(sigma / plateau)


def gen_sigmoid_truss(p: int, seed: int = 0, M: float = SIGMOID_MODULUS,
                      plateau: float = SIGMOID_PLATEAU,
                      eps_max: float = SIGMOID_EPS_MAX) -> MaterialDataset:
    """Noiseless saturating data on ``sigmoid_stress``; strains uniform in range."""
    p = _check_count(p)
    eps = make_rng(seed).uniform(-eps_max, eps_max, size=p)
    states = np.column_stack([eps, sigmoid_stress(eps, M, plateau)])
    meta = {"generator": "sigmoid-truss", "seed": int(seed), "chi": 0.0,
            "M": float(M), "plateau": float(plateau), "eps_max": float(eps_max)}
    return MaterialDataset(states, meta)


def gen_outlier_truss(p: int, M: float = 100e6, eps_max: float = 0.01,
                      outlier: LocalState | None = None, seed: int = 0) -> MaterialDataset:
    """``p - 1`` noiseless linear points followed by a single outlier."""
    p = _check_count(p, minimum=2)
    if outlier is None:
        outlier = LocalState(DEFAULT_OUTLIER[0], DEFAULT_OUTLIER[1])
    if outlier.q != 1:
        raise ContractError("outlier must be a uniaxial state")
    eps = make_rng(seed).uniform(-eps_max, eps_max, size=p - 1)
    states = np.vstack([np.column_stack([eps, M * eps]), outlier.as_vector()[None, :]])
    meta = {"generator": "outlier-truss", "seed": int(seed), "chi": 0.0, "M": float(M),
            "eps_max": float(eps_max),
            "outlier": [float(outlier.strain[0]), float(outlier.stress[0])]}
    return MaterialDataset(states, meta)


def paper_plane_stress_chi(p: int) -> float:
    """Relative noise level ``0.4 / cbrt(p)`` for the plane-stress databases."""
    return 0.4 / np.cbrt(p)


def gen_plane_stress(p_axis: int, E: float = 30e6, nu: float = 0.3,
                     strain_range=(-5e-4, 5e-4), noise_rule: str = "none",
                     seed: int = 0) -> MaterialDataset:
    """Tensor-product strain grid with linear plane-stress stresses.

    Grid points are ordered with ``eps_xx`` varying slowest. With
    ``noise_rule='paper'`` each of the six components ``j`` gets Gaussian
    noise of std ``0.4/cbrt(p) * l_j`` where ``l_j`` is the largest absolute
    noiseless value of that component; the ``(p, 6)`` noise block is drawn
    in one call, row-major.
    """
    p_axis = _check_count(p_axis, minimum=2)
    if noise_rule not in ("none", "paper"):
        raise ContractError(f"unknown noise rule {noise_rule!r}")
    lo, hi = map(float, strain_range)
    if not hi > lo:
        raise ContractError("strain range must be increasing")
    axis = np.linspace(lo, hi, p_axis)
    grid = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
    c = plane_stress_metric(E, nu).m_eps
    states = np.hstack([grid, grid @ c.T])
    p = states.shape[0]
    chi = 0.0
    if noise_rule == "paper":
        chi = float(paper_plane_stress_chi(p))
        scale = np.max(np.abs(states), axis=0)
        states = states + make_rng(seed).normal(size=states.shape) * (chi * scale)
    meta = {"generator": "plane-stress", "seed": int(seed), "chi": chi, "E": float(E),
            "nu": float(nu), "p_axis": p_axis, "noise_rule": noise_rule,
            "strain_range": [lo, hi]}
    return MaterialDataset(states, meta)


GENERATORS = {
    "linear-truss": gen_linear_truss,
    "sigmoid-truss": gen_sigmoid_truss,
    "outlier-truss": gen_outlier_truss,
    "plane-stress": gen_plane_stress,
}


# --------------------------------------------------------------------------
# CSV

def _header(q):
    return [f"eps_{i}" for i in range(1, q + 1)] + [f"sig_{i}" for i in range(1, q + 1)]


def write_csv(dataset: MaterialDataset, path) -> None:
    """Write ``dataset``; meta entries become ``# key=<json>`` comment lines."""
    lines = [f"# {key}={json.dumps(value, sort_keys=True)}" for key, value in dataset.meta.items()]
    lines.append(",".join(_header(dataset.q)))
    for row in dataset.states:
        lines.append(",".join(format(x, ".17g") for x in row))
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_meta(text):
    key, sep, value = text.partition("=")
    if not sep:
        return None
    try:
        return key.strip(), json.loads(value)
    except json.JSONDecodeError:
        return key.strip(), value.strip()


def read_csv(path) -> MaterialDataset:
    meta = {}
    header = None
    rows = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if header is None and line.startswith("#"):
                parsed = _parse_meta(line[1:].strip())
                if parsed:
                    meta[parsed[0]] = parsed[1]
                continue
            cells = [c.strip() for c in line.split(",")]
            if header is None:
                if len(cells) < 2 or len(cells) % 2 or cells != _header(len(cells) // 2):
                    raise DatasetParseError(
                        f"expected header 'eps_1,...,eps_q,sig_1,...,sig_q', got {line!r}", lineno)
                header = cells
                continue
            if len(cells) != len(header):
                raise DatasetParseError(
                    f"expected {len(header)} cells, got {len(cells)}", lineno)
            try:
                values = [float(c) for c in cells]
            except ValueError as exc:
                raise DatasetParseError(f"non-numeric cell ({exc})", lineno) from None
            if not all(math.isfinite(v) for v in values):
                raise DatasetParseError("non-finite value", lineno)
            rows.append(values)
    if header is None:
        raise DatasetParseError("missing header")
    if not rows:
        raise DatasetError(f"{path}: dataset has no rows")
    return MaterialDataset(np.array(rows), meta)
