"""Command line: ``lcdd gen``, ``lcdd solve``, ``lcdd study``.

Every command resolves its parameters as defaults < ``--config`` JSON <
explicit flags, and writes the resolved record into each output file.
Exit codes: 0 success, 2 usage or configuration error, 3 non-convergence.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import datagen, driver, problems
from .errors import ContractError
from .nnls_projection import SolverParams

EXIT_OK, EXIT_USAGE, EXIT_NOT_CONVERGED = 0, 2, 3

GEN_DEFAULTS = {"seed": 0, "out": "dataset.csv", "p": None, "p_axis": None, "chi": 0.0,
                "M": 100e6, "eps_max": None, "E": 30e6, "nu": 0.3, "noise": "none"}
SOLVE_DEFAULTS = {"seed": 0, "out": "solve-out", "problem": "one-bar", "data": None,
                  "mode": "lcdd", "k": 6, "xi_bar": 1e5, "mu_bar": 1e-4, "nnls_tol": 1e-10,
                  "tol": 1e-8, "max_iter": 10000, "init": "random_data_point",
                  "load_steps": 1}
STUDY_DEFAULTS = {"seed": 0, "out": "study-out", "problem": "fifteen-bar",
                  "generator": "linear-truss", "sizes": [100, 1000, 10000],
                  "modes": ["dmdd", "lcdd"], "k": [12], "seeds": None,
                  "noise": "inverse-p", "abscissa": "p", "tol": 1e-8, "max_iter": 10000,
                  "init": "random_data_point", "load_steps": 1, "xi_bar": 1e5,
                  "mu_bar": 1e-4, "nnls_tol": 1e-10}


class UsageError(Exception):
    pass


def _int_list(text):
    try:
        return [int(float(x)) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _str_list(text):
    return [x.strip() for x in text.split(",") if x.strip()]


def _common(p):
    s = argparse.SUPPRESS
    p.add_argument("--seed", type=int, default=s, help="RNG seed")
    p.add_argument("-o", "--out", default=s, help="output file (gen) or directory")
    p.add_argument("--config", default=s, help="JSON file with parameter values")


def build_parser() -> argparse.ArgumentParser:
    s = argparse.SUPPRESS
    ap = argparse.ArgumentParser(prog="lcdd", description="Data-driven truss and plane-stress solvers.")
    _common(ap)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic material dataset")
    _common(g)
    g.add_argument("generator", choices=sorted(datagen.GENERATORS))
    g.add_argument("--p", type=int, default=s, help="number of points (truss generators)")
    g.add_argument("--p-axis", dest="p_axis", type=int, default=s,
                   help="grid points per strain axis (plane-stress)")
    g.add_argument("--chi", type=float, default=s, help="noise level (linear-truss)")
    g.add_argument("--M", type=float, default=s, help="modulus for truss generators")
    g.add_argument("--eps-max", dest="eps_max", type=float, default=s)
    g.add_argument("--E", type=float, default=s)
    g.add_argument("--nu", type=float, default=s)
    g.add_argument("--noise", choices=["none", "paper"], default=s, help="plane-stress noise rule")

    v = sub.add_parser("solve", help="run the data-driven solver on one problem")
    _common(v)
    v.add_argument("--problem", default=s, help="preset name or JSON problem file")
    v.add_argument("--data", default=s, help="dataset CSV")
    _solver_flags(v)
    v.add_argument("--k", type=int, default=s)

    t = sub.add_parser("study", help="convergence study over dataset sizes")
    _common(t)
    t.add_argument("--problem", default=s)
    t.add_argument("--generator", choices=sorted(datagen.GENERATORS), default=s)
    t.add_argument("--sizes", type=_int_list, default=s, help="comma-separated dataset sizes")
    t.add_argument("--modes", type=_str_list, default=s)
    t.add_argument("--k", type=_int_list, default=s, help="comma-separated k values for lcdd")
    t.add_argument("--seeds", type=_int_list, default=s)
    t.add_argument("--noise", default=s, help="'inverse-p', 'none', 'paper' or a number")
    t.add_argument("--abscissa", choices=["p", "cbrt"], default=s)
    _solver_flags(t)
    return ap


def _solver_flags(p):
    s = argparse.SUPPRESS
    p.add_argument("--mode", choices=list(driver.MODES), default=s)
    p.add_argument("--xi-bar", dest="xi_bar", type=float, default=s)
    p.add_argument("--mu-bar", dest="mu_bar", type=float, default=s)
    p.add_argument("--nnls-tol", dest="nnls_tol", type=float, default=s)
    p.add_argument("--tol", type=float, default=s)
    p.add_argument("--max-iter", dest="max_iter", type=int, default=s)
    p.add_argument("--init", choices=list(driver.INITS), default=s)
    p.add_argument("--load-steps", dest="load_steps", type=int, default=s)


def resolve(ns: argparse.Namespace, defaults: dict) -> dict:
    """defaults < config file < flags."""
    flags = {k: v for k, v in vars(ns).items() if k not in ("command", "verbose", "config")}
    cfg = dict(defaults)
    path = getattr(ns, "config", None)
    if path:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(data) - set(defaults) - {"command", "generator"}
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(data)
    cfg.update(flags)
    return cfg


# -------------------------------------------------------------------- gen

def cmd_gen(cfg: dict) -> int:
    name = cfg["generator"]
    seed = int(cfg["seed"])
    if name == "plane-stress":
        if cfg["p_axis"] is None:
            raise UsageError("plane-stress needs --p-axis")
        ds = datagen.gen_plane_stress(int(cfg["p_axis"]), E=cfg["E"], nu=cfg["nu"],
                                      noise_rule=cfg["noise"], seed=seed)
    else:
        if cfg["p"] is None:
            raise UsageError(f"{name} needs --p")
        p = int(cfg["p"])
        kw = {} if cfg["eps_max"] is None else {"eps_max": float(cfg["eps_max"])}
        if name == "linear-truss":
            ds = datagen.gen_linear_truss(p, M=cfg["M"], noise=datagen.NoiseSpec(cfg["chi"], seed), **kw)
        elif name == "sigmoid-truss":
            ds = datagen.gen_sigmoid_truss(p, seed=seed, M=cfg["M"], **kw)
        else:
            ds = datagen.gen_outlier_truss(p, M=cfg["M"], seed=seed, **kw)
    ds = datagen.MaterialDataset(ds.states, {**ds.meta, "config": cfg})
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    datagen.write_csv(ds, out)
    print(f"p={ds.p} q={ds.q} chi={ds.meta.get('chi', 0.0):.6g} -> {out}")
    return EXIT_OK


# ------------------------------------------------------------------ solve

def _problem_spec(value):
    if isinstance(value, dict):
        return problems.normalize(value)
    if isinstance(value, str) and value in problems.PRESETS:
        return {"preset": value}
    if isinstance(value, str) and Path(value).is_file():
        return problems.load_problem(value)
    raise UsageError(f"--problem must be a preset {sorted(problems.PRESETS)} or a JSON file, got {value!r}")


def _solver_config(cfg, mode=None, k=None):
    params = SolverParams(k=int(k if k is not None else cfg.get("k", 6)), xi_bar=float(cfg["xi_bar"]),
                          mu_bar=float(cfg["mu_bar"]), nnls_tol=float(cfg["nnls_tol"]))
    return driver.SolverConfig(mode=mode or cfg["mode"], params=params, tol=float(cfg["tol"]),
                               max_iter=int(cfg["max_iter"]), init=cfg["init"],
                               seed=int(cfg["seed"]), load_steps=int(cfg["load_steps"]))


def states_csv(reports, config: dict) -> str:
    """One row per (load step, integration point): admissible state then
    assigned data. The config comment is the only non-data line."""
    q = reports[0].states.shape[1] // 2
    buf = io.StringIO()
    buf.write(f"# config={json.dumps(config, sort_keys=True)}\n")
    cols = (["step", "load_factor", "point"] + [f"eps_{i + 1}" for i in range(q)]
            + [f"sig_{i + 1}" for i in range(q)] + [f"data_eps_{i + 1}" for i in range(q)]
            + [f"data_sig_{i + 1}" for i in range(q)])
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for j, r in enumerate(reports, start=1):
        for a in range(r.states.shape[0]):
            w.writerow([j, format(r.load_factor, ".17g"), a]
                       + [format(x, ".17g") for x in r.states[a]]
                       + [format(x, ".17g") for x in r.assigned[a]])
    return buf.getvalue()


def cmd_solve(cfg: dict) -> int:
    if not cfg["data"]:
        raise UsageError("solve needs --data")
    spec = _problem_spec(cfg["problem"])
    cfg = {**cfg, "problem": spec}
    disc = problems.build_problem(spec)
    ds = datagen.read_csv(cfg["data"])
    if ds.q != disc.q:
        raise UsageError(f"dataset has q={ds.q} but the problem needs q={disc.q}")
    scfg = _solver_config(cfg)
    reports = driver.incremental_load(disc, ds, scfg)
    last = reports[-1]
    ref = disc.solver.reference(1.0)
    metrics = {"max_data_gap": float(disc.metric.norm_many(last.states - last.assigned).max())}
    try:
        if disc.kind == "truss":
            metrics["eps_rms"], metrics["sig_rms"] = driver.rms_truss(last.states, ref.states, disc.lengths)
        metrics["omega_rms"] = driver.rms_state(last.states, ref.states, disc)
    except ContractError:
        pass
    converged = all(r.converged for r in reports)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    report = {"config": cfg, "converged": converged, "stop_reason": last.stop_reason,
              "iterations": [r.iterations[0] for r in reports],
              "steps": [r.to_dict() for r in reports], "metrics": metrics,
              "final": {"states": last.states.tolist(), "assigned": last.assigned.tolist(),
                        "displacements": last.displacements.tolist()}}
    (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    (out / "states.csv").write_text(states_csv(reports, cfg))
    s0 = last.states[0]
    print(f"{'converged' if converged else 'NOT converged'} ({last.stop_reason}) "
          f"iterations={report['iterations']} first point state={np.array2string(s0, precision=6)}")
    for k, v in metrics.items():
        print(f"  {k} = {v:.6e}")
    return EXIT_OK if converged else EXIT_NOT_CONVERGED


# ------------------------------------------------------------------ study

def cmd_study(cfg: dict) -> int:
    sizes = list(cfg["sizes"] or [])
    if len(sizes) < 2:
        raise UsageError("a study needs at least two --sizes")
    seeds = cfg["seeds"] if cfg["seeds"] else [int(cfg["seed"])]
    variants = []
    for mode in cfg["modes"]:
        if mode == "dmdd":
            variants.append({"mode": "dmdd"})
        elif mode == "lcdd":
            variants.extend({"mode": "lcdd", "k": int(k)} for k in cfg["k"])
        else:
            raise UsageError(f"unknown mode {mode!r}")
    spec = _problem_spec(cfg["problem"])
    cfg = {**cfg, "problem": spec, "seeds": seeds}
    base = _solver_config(cfg, mode="lcdd", k=1)
    res = driver.convergence_study(spec, cfg["generator"], sizes, variants, seeds,
                                   noise=cfg["noise"], base=base, abscissa=cfg["abscissa"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    buf.write(f"# config={json.dumps(cfg, sort_keys=True)}\n")
    w = csv.DictWriter(buf, fieldnames=list(driver.STUDY_COLUMNS), extrasaction="ignore",
                       lineterminator="\n")
    w.writeheader()
    for row in res.rows:
        w.writerow({k: (format(v, ".17g") if isinstance(v, float) else v) for k, v in row.items()})
    (out / "study.csv").write_text(buf.getvalue())
    (out / "summary.json").write_text(json.dumps({"config": cfg, **res.summary}, indent=1,
                                                 sort_keys=True) + "\n")
    for v in res.summary["variants"]:
        label = v["mode"] if v["mode"] == "dmdd" else f"lcdd k={v['k']}"
        print(f"{label:>12}: slope={v['slope']:+.3f} median errors="
              + ", ".join(f"{e:.3e}" for e in v["median_error"])
              + " median iterations=" + ", ".join(f"{i:g}" for i in v["median_iterations"]))
    return EXIT_OK if all(r["converged"] for r in res.rows) else EXIT_NOT_CONVERGED


COMMANDS = {"gen": (cmd_gen, GEN_DEFAULTS), "solve": (cmd_solve, SOLVE_DEFAULTS),
            "study": (cmd_study, STUDY_DEFAULTS)}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    func, defaults = COMMANDS[ns.command]
    try:
        cfg = resolve(ns, defaults)
        return func(cfg)
    except (UsageError, ValueError, OSError) as exc:
        print(f"lcdd {ns.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
