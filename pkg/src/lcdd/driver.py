"""Fixed-point data-driven iteration and convergence studies.

Each iteration runs a global step (admissible states closest to the
current data assignment) followed by a local step (new data assignment
closest to those states). The local step is either a nearest-point search
in the raw dataset (``dmdd``) or a projection onto the convex hull of the
``k`` nearest data points (``lcdd``). Iteration stops when the largest
per-point change of the assignment, measured in the metric norm, falls to
``tol * max ||assignment after first local step||``.
"""
from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .assembly import Discretization, reference_solution
from .datagen import MaterialDataset, make_rng
from .errors import ContractError
from .nnls_projection import SolverParams, knn_scaled, project_weights
from .phase_space import LocalState

log = logging.getLogger(__name__)

MODES = ("dmdd", "lcdd")
INITS = ("random_data_point", "zeros")


@dataclass(frozen=True)
class SolverConfig:
    mode: str = "lcdd"
    params: SolverParams = field(default_factory=SolverParams)
    tol: float = 1e-8
    max_iter: int = 10000
    init: str = "random_data_point"
    seed: int = 0
    load_steps: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ContractError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.init not in INITS:
            raise ContractError(f"init must be one of {INITS}, got {self.init!r}")
        if not self.tol > 0:
            raise ContractError("tol must be positive")
        if self.max_iter < 1 or self.load_steps < 1:
            raise ContractError("max_iter and load_steps must be >= 1")

    @property
    def point_assignment(self) -> bool:
        """True when every assignment is a raw dataset point."""
        return self.mode == "dmdd" or self.params.k == 1

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SolveReport:
    """Outcome of one load step (or the last step of a run).

    ``stop_reason`` is ``'tol'``, ``'cycle'`` (a point-assignment iteration
    revisited an earlier assignment) or ``'max_iter'``; only the last one
    leaves ``converged`` false.
    """

    states: np.ndarray
    assigned: np.ndarray
    displacements: np.ndarray
    multipliers: np.ndarray
    iterations: list
    converged: bool
    stop_reason: str
    trace: list
    equilibrium_residuals: list
    compatibility_residuals: list
    load_factor: float = 1.0
    tol_abs: float = 0.0
    assigned_indices: list | None = None
    metrics: dict = field(default_factory=dict)

    def local_states(self) -> list[LocalState]:
        return [LocalState.from_vector(s) for s in self.states]

    def to_dict(self) -> dict:
        out = {
            "iterations": list(map(int, self.iterations)),
            "converged": bool(self.converged),
            "stop_reason": self.stop_reason,
            "load_factor": float(self.load_factor),
            "tol_abs": float(self.tol_abs),
            "trace": [float(x) for x in self.trace],
            "equilibrium_residuals": [float(x) for x in self.equilibrium_residuals],
            "compatibility_residuals": [float(x) for x in self.compatibility_residuals],
            "metrics": {k: float(v) for k, v in self.metrics.items()},
        }
        return out


class LocalStep:
    """Local step bound to one dataset and metric (rescaled data cached)."""

    def __init__(self, dataset: MaterialDataset, disc: Discretization, cfg: SolverConfig):
        if dataset.q != disc.q:
            raise ContractError(f"dataset has q={dataset.q} but the problem needs q={disc.q}")
        if cfg.mode == "lcdd" and cfg.params.k > dataset.p:
            raise ContractError(f"k={cfg.params.k} exceeds dataset size p={dataset.p}")
        self.data = dataset.states
        self.metric = disc.metric
        self.Z = self.metric.rescale_many(self.data)
        self.k = 1 if cfg.point_assignment else cfg.params.k
        self.params = cfg.params
        # previous neighbourhoods and supports, used to warm-start nnls
        self._last_idx = None
        self._last_support = None

    def __call__(self, states):
        zq = self.metric.rescale_many(states)
        idx = knn_scaled(self.Z, zq, self.k)
        if self.k == 1:
            return self.data[idx[:, 0]], idx[:, 0].copy()
        out = np.empty_like(states)
        support = np.zeros(idx.shape, dtype=bool)
        same = None
        if self._last_idx is not None and self._last_idx.shape == idx.shape:
            same = np.all(self._last_idx == idx, axis=1)
        for a in range(states.shape[0]):
            start = self._last_support[a] if same is not None and same[a] else None
            w, _ = project_weights(self.Z[idx[a]].T, zq[a], self.params, start)
            support[a] = w > 0
            out[a] = self.data[idx[a]].T @ w
        self._last_idx, self._last_support = idx, support
        return out, None


def _initial_assignment(dataset, m, cfg):
    if cfg.init == "zeros":
        return np.zeros((m, dataset.states.shape[1]))
    idx = make_rng(cfg.seed).integers(0, dataset.p, size=m)
    return dataset.states[idx].copy()


def _solve_step(disc, local, assigned, cfg, load_factor):
    solver = disc.solver
    metric = disc.metric
    trace, eq_res, compat = [], [], []
    seen = set()
    indices = [] if local.k == 1 else None
    tol_abs = None
    stop = "max_iter"
    gs = None
    for it in range(1, cfg.max_iter + 1):
        gs = solver.step(assigned, load_factor)
        eq_res.append(gs.equilibrium_residual)
        compat.append(gs.compatibility_residual)
        new, idx = local(gs.states)
        if tol_abs is None:
            scale = metric.norm_many(new).max()
            tol_abs = cfg.tol * scale if scale > 0 else cfg.tol
        change = float(metric.norm_many(new - assigned).max())
        trace.append(change)
        assigned = new
        if indices is not None:
            indices.append(idx)
        if change <= tol_abs:
            stop = "tol"
            break
        if idx is not None:
            key = idx.tobytes()
            if key in seen:
                stop = "cycle"
                break
            seen.add(key)
    return gs, assigned, it, stop, trace, eq_res, compat, tol_abs, indices


def incremental_load(disc: Discretization, dataset: MaterialDataset, cfg: SolverConfig,
                     steps: int | None = None) -> list[SolveReport]:
    """Solve under loads scaled by ``j/steps``, warm-starting every step.

    The load vector and any prescribed displacements are scaled together.
    """
    steps = cfg.load_steps if steps is None else steps
    if steps < 1:
        raise ContractError("steps must be >= 1")
    local = LocalStep(dataset, disc, cfg)
    assigned = _initial_assignment(dataset, disc.m, cfg)
    reports = []
    for j in range(1, steps + 1):
        lf = j / steps
        gs, assigned, its, stop, trace, eq, cp, tol_abs, idx = _solve_step(
            disc, local, assigned, cfg, lf)
        reports.append(SolveReport(
            states=gs.states, assigned=assigned.copy(), displacements=gs.d,
            multipliers=gs.lam, iterations=[its], converged=stop != "max_iter",
            stop_reason=stop, trace=trace, equilibrium_residuals=eq,
            compatibility_residuals=cp, load_factor=lf, tol_abs=tol_abs,
            assigned_indices=idx))
        if stop == "max_iter":
            log.warning("load step %d/%d hit max_iter=%d (last change %.3e > %.3e)",
                        j, steps, cfg.max_iter, trace[-1], tol_abs)
    return reports


def run(disc: Discretization, dataset: MaterialDataset, cfg: SolverConfig) -> SolveReport:
    """Full solve; the returned report is the final load step with the
    iteration counts of every step in ``iterations``."""
    reports = incremental_load(disc, dataset, cfg)
    last = reports[-1]
    return replace(last, iterations=[r.iterations[0] for r in reports],
                   converged=all(r.converged for r in reports))


# --------------------------------------------------------------------------
# error measures

def rms_truss(states, ref_states, lengths) -> tuple[float, float]:
    """Length-weighted RMS strain and stress errors normalised by the
    largest reference magnitudes (the weights are raw lengths)."""
    states = np.asarray(states, dtype=float).reshape(-1, 2)
    ref = np.asarray(ref_states, dtype=float).reshape(-1, 2)
    lengths = np.asarray(lengths, dtype=float).ravel()
    if not (states.shape == ref.shape and lengths.size == ref.shape[0]):
        raise ContractError("member counts differ")
    emax, smax = np.abs(ref).max(axis=0)
    if emax == 0 or smax == 0:
        raise ContractError("reference has zero maximum strain or stress")
    m = lengths.size
    e = np.sqrt(np.sum(lengths * (states[:, 0] - ref[:, 0]) ** 2) / m) / emax
    s = np.sqrt(np.sum(lengths * (states[:, 1] - ref[:, 1]) ** 2) / m) / smax
    return float(e), float(s)


def rms_state(states, ref_states, disc: Discretization) -> float:
    """Volume-weighted relative state error in the metric norm."""
    states = np.asarray(states, dtype=float)
    ref = np.asarray(ref_states, dtype=float)
    if states.shape != ref.shape or ref.shape[0] != disc.m:
        raise ContractError("point counts differ")
    w = disc.weights
    den = np.sum(w * disc.metric.norm_many(ref) ** 2)
    if den == 0:
        raise ContractError("reference state has zero norm")
    return float(np.sqrt(np.sum(w * disc.metric.norm_many(states - ref) ** 2) / den))


# --------------------------------------------------------------------------
# convergence studies

STUDY_COLUMNS = ("problem", "mode", "k", "p", "chi", "seed", "error_metric", "iterations",
                 "converged", "wall_ms")


def _problem(problem):
    from .problems import build_problem
    return build_problem(problem)


def _dataset(generator, p, seed, noise):
    from . import datagen
    if generator == "linear-truss":
        chi = {"inverse-p": 2.0 / p, "none": 0.0}.get(noise, None)
        if chi is None:
            chi = float(noise)
        return datagen.gen_linear_truss(p, noise=datagen.NoiseSpec(chi, seed))
    if generator == "plane-stress":
        p_axis = int(round(np.cbrt(p)))
        if p_axis ** 3 != p:
            raise ContractError(f"plane-stress sizes must be perfect cubes, got {p}")
        return datagen.gen_plane_stress(p_axis, noise_rule=noise, seed=seed)
    if generator == "sigmoid-truss":
        return datagen.gen_sigmoid_truss(p, seed=seed)
    if generator == "outlier-truss":
        return datagen.gen_outlier_truss(p, seed=seed)
    raise ContractError(f"unknown generator {generator!r}")


def run_case(problem, generator, p, seed, noise, variant, base: SolverConfig) -> dict:
    """One study cell: fresh dataset, solve, compare with the model-based oracle."""
    disc = _problem(problem)
    data = _dataset(generator, p, seed, noise)
    k = int(variant.get("k", 1)) if variant["mode"] == "lcdd" else 1
    cfg = replace(base, mode=variant["mode"], seed=seed,
                  params=replace(base.params, k=k))
    t0 = time.perf_counter()
    report = run(disc, data, cfg)
    wall = (time.perf_counter() - t0) * 1e3
    ref = reference_solution(disc)
    if disc.kind == "truss":
        err = rms_truss(report.states, ref.states, disc.lengths)[0]
    else:
        err = rms_state(report.states, ref.states, disc)
    name = problem if isinstance(problem, str) else problem.get("preset", problem.get("kind"))
    return {"problem": name, "mode": variant["mode"], "k": k, "p": int(p),
            "chi": float(data.meta.get("chi", 0.0)), "seed": int(seed),
            "error_metric": float(err), "iterations": int(sum(report.iterations)),
            "converged": bool(report.converged), "wall_ms": float(wall),
            "stop_reason": report.stop_reason,
            "max_equilibrium_residual": float(max(report.equilibrium_residuals)),
            "max_compatibility_residual": float(max(report.compatibility_residuals))}


def _run_case_args(args):
    return run_case(*args)


def worker_count(env=None) -> int:
    env = os.environ if env is None else env
    n = int(env.get("LCDD_THREADS", "0") or 0)
    return max(1, os.cpu_count() or 1) if n <= 0 else n


def fit_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    keep = y > 0
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)[0])


@dataclass
class StudyResult:
    rows: list
    summary: dict


def convergence_study(problem, generator: str, sizes, variants, seeds=(0,), noise="inverse-p",
                      base: SolverConfig = SolverConfig(), abscissa: str = "p",
                      workers: int | None = None) -> StudyResult:
    """Run every (variant, size, seed) cell and fit error-vs-size slopes.

    ``abscissa='cbrt'`` fits against ``p^(1/3)`` (continuum databases).
    Rows come back sorted by (mode, k, p, seed) whatever the completion
    order. The summary holds, per variant, median error and iterations at
    each size and the fitted log-log slope of the median error.
    """
    sizes = [int(p) for p in sizes]
    if len(sizes) < 2:
        raise ContractError("a convergence study needs at least two sizes")
    if abscissa not in ("p", "cbrt"):
        raise ContractError("abscissa must be 'p' or 'cbrt'")
    jobs = [(problem, generator, p, int(s), noise, dict(v), base)
            for v in variants for p in sizes for s in seeds]
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_case_args, jobs))
    else:
        rows = [run_case(*j) for j in jobs]
    rows.sort(key=lambda r: (r["mode"], r["k"], r["p"], r["seed"]))

    summary = {"abscissa": abscissa, "variants": []}
    groups = {}
    for r in rows:
        groups.setdefault((r["mode"], r["k"]), []).append(r)
    for (mode, k), grp in sorted(groups.items()):
        med_err, med_it, flags = [], [], []
        for p in sizes:
            cell = [r for r in grp if r["p"] == p]
            med_err.append(float(np.median([r["error_metric"] for r in cell])))
            med_it.append(float(np.median([r["iterations"] for r in cell])))
            flags.append(all(r["converged"] for r in cell))
        x = np.array(sizes, dtype=float)
        if abscissa == "cbrt":
            x = np.cbrt(x)
        summary["variants"].append({
            "mode": mode, "k": k, "sizes": sizes, "median_error": med_err,
            "median_iterations": med_it, "all_converged": flags,
            "slope": fit_slope(x, med_err)})
    return StudyResult(rows, summary)
