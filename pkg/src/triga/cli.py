"""Command-line entry point.

Commands::

    triga run           single solve, writes trace.csv and meta.json
    triga check-params  parameter selection and certification report
    triga sweep         method x problem x p grid with performance profiles
    triga diagnose      energy and viscosity audit of a stored run
    triga profile       recompute profiles from an existing cost table

Every command accepts ``--config FILE``: a flat ``key = value`` file (or a
``meta.json`` written by ``run``) whose keys are the long flag names with
underscores.  Flags given on the command line win over file values.

Exit codes: 0 success, 1 configuration error, 2 iteration cap reached,
3 divergence, 4 selection or certification failure, 5 stored iterates too
sparse for the audit window, 6 audit violations found.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import diagnostics, metrics, problems, schedules, solvers

log = logging.getLogger("triga")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_CAP = 2
EXIT_DIVERGED = 3
EXIT_CERT = 4
EXIT_STRIDE = 5
EXIT_AUDIT = 6

WORKERS_ENV = "TRIGA_WORKERS"
DEFAULT_P_VALUES = (0.3, 0.6, 0.9, 1.2, 1.5, 1.95, 1.99)
MINI_SUITE = (
    "synthetic:n=20,m=15,seed=1",
    "synthetic:n=30,m=20,seed=2",
    "synthetic:n=40,m=30,seed=3",
    "quadratic:n=5",
    "quadratic:n=20",
    "bundled:mini_logistic",
)


class ConfigError(ValueError):
    pass


def fmt(v) -> str:
    """17 significant digits, round-trip exact for doubles."""
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    problem: str = ""
    method: str = "triga"
    p: Optional[float] = None
    c: Optional[float] = None
    q: Optional[float] = None
    delta: Optional[float] = None
    step_frac: float = 1.1
    s: Optional[float] = None
    alpha: float = 3.0
    nadtr_a: float = 1.0
    nadtr_c: float = 1.0
    nadtr_q: float = 0.99
    seed: int = 0
    max_iter: int = 100_000
    tol: Optional[float] = 1e-6
    stride: Optional[int] = None
    start: str = "random"
    store_iterates: Optional[str] = None
    k_max: int = 1_000_000
    out: str = "."

    def validate(self):
        if not self.problem:
            raise ConfigError("problem: a problem URI is required")
        if self.method not in ("triga", "nag", "nadtr"):
            raise ConfigError(f"method: unknown method {self.method!r}")
        if self.p is not None and not 0 < self.p <= 2:
            raise ConfigError("p: must lie in (0, 2]")
        if self.c is not None and not self.c > 0:
            raise ConfigError("c: must be positive")
        if self.s is None and not self.step_frac > 1:
            raise ConfigError("step_frac: must exceed 1 (s = 1/(step_frac L))")
        if self.s is not None and not self.s > 0:
            raise ConfigError("s: must be positive")
        if self.max_iter < 1:
            raise ConfigError("max_iter: must be positive")
        if self.tol is not None and not self.tol > 0:
            raise ConfigError("tol: must be positive")
        if self.stride is not None and self.stride < 1:
            raise ConfigError("stride: must be positive")
        if self.method == "nag" and self.alpha < 3:
            raise ConfigError("alpha: must be >= 3")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_mapping(cls, data: dict) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, value in data.items():
            key = key.replace("-", "_")
            if key not in known:
                raise ConfigError(f"{key}: unknown configuration key")
            kwargs[key] = _coerce(key, value, known[key].default)
        return cls(**kwargs)


_INT_KEYS = {"seed", "max_iter", "stride", "k_max", "workers"}
_FLOAT_KEYS = {"p", "c", "q", "delta", "step_frac", "s", "alpha", "nadtr_a", "nadtr_c",
               "nadtr_q", "tol"}


def _coerce(key, value, default):
    if value is None or (isinstance(value, str) and value.strip().lower() in ("", "none", "null")):
        return None
    try:
        if key in _INT_KEYS:
            f = float(value)
            if f != int(f):
                raise ValueError
            return int(f)
        if key in _FLOAT_KEYS:
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot parse {value!r}") from None
    return value


def read_config_file(path) -> dict:
    """``key = value`` lines (``#`` comments) or a JSON object."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config: file not found: {path}")
    text = path.read_text()
    if text.lstrip().startswith("{"):
        data = json.loads(text)
        return data.get("config", data)
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"config: line {lineno}: expected key = value")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _merged(args, keys) -> dict:
    data = read_config_file(args.config) if getattr(args, "config", None) else {}
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    return data


# ---------------------------------------------------------------------------
# Shared construction
# ---------------------------------------------------------------------------


def default_q(ls: float) -> float:
    """Smallest integer ``q`` with ten percent headroom over ``L s < q/(q+1)``."""
    if not ls < 1:
        raise ConfigError("s: L s must be below 1 for any admissible q")
    return float(max(1, math.ceil(1.1 * ls / (1.0 - ls))))


def resolve_step(cfg: RunConfig, lipschitz: float) -> float:
    if cfg.s is not None:
        return cfg.s
    if lipschitz <= 0:
        raise ConfigError("problem: Lipschitz constant is zero; give s explicitly")
    return 1.0 / (cfg.step_frac * lipschitz)


def resolve_schedule(cfg: RunConfig) -> schedules.TikhonovSchedule:
    if cfg.c is not None:
        return schedules.TikhonovSchedule.critical(cfg.c)
    p = 1.95 if cfg.p is None else cfg.p
    return schedules.TikhonovSchedule.power(p)


def start_point(cfg_start: str, problem, seed: int) -> np.ndarray:
    n = problem.dimension
    if cfg_start == "random":
        return np.random.default_rng(seed).standard_normal(n)
    if cfg_start == "zero":
        return np.zeros(n)
    if cfg_start == "optimum":
        x = problem.min_norm_solution
        if x is None:
            raise ConfigError("start: x* unavailable for this problem")
        return x.copy()
    try:
        x = np.array([float(t) for t in cfg_start.split(",")])
    except ValueError:
        raise ConfigError(f"start: cannot parse {cfg_start!r}") from None
    if x.shape != (n,):
        raise ConfigError(f"start: expected {n} coordinates, got {x.size}")
    return x


def load_problem(uri: str, seed: int):
    try:
        return problems.problem_from_uri(uri, seed=seed)
    except FileNotFoundError as exc:
        raise ConfigError(f"problem: {exc}") from None
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"problem: {exc}") from None


def build_method(cfg: RunConfig, problem, meta: dict):
    L = problem.lipschitz
    s = resolve_step(cfg, L)
    meta["s"] = s
    meta["lipschitz"] = L
    if cfg.method == "nag":
        return solvers.NagMethod(s, cfg.alpha)
    if cfg.method == "nadtr":
        p = 1.95 if cfg.p is None else cfg.p
        return solvers.NadtrMethod(s, p, cfg.nadtr_a, cfg.nadtr_c, cfg.nadtr_q)
    schedule = resolve_schedule(cfg)
    q = cfg.q if cfg.q is not None else default_q(L * s)
    delta = cfg.delta if cfg.delta is not None else schedules.default_delta(schedule.exponent, s)
    try:
        sel = schedules.select_parameters(delta, q, L, s=s)
    except schedules.SelectionError as exc:
        raise ConfigError(f"q/delta: {exc}") from None
    params = sel.params
    cert_info = {"status": "uncertified"}
    try:
        cert = schedules.find_k0(params, schedule, L, cfg.k_max)
        params = params.with_k0(cert.k0)
        cert_info = {"status": "certified", **cert.to_dict()}
    except schedules.CertificationError as exc:
        cert_info = {"status": "certification-failed", "reason": str(exc),
                     "condition": exc.condition, "horizon": cfg.k_max}
    meta["selection"] = sel.to_dict()
    meta["certification"] = cert_info
    return solvers.TrigaMethod(schedule, params)


def _parse_window(text: Optional[str]):
    if text is None:
        return False
    if text == "all":
        return True
    lo, sep, hi = text.partition(":")
    try:
        return int(lo), int(hi)
    except ValueError:
        raise ConfigError(f"window: expected LO:HI, got {text!r}") from None


def execute_run(cfg: RunConfig, reference_value=None):
    """Run one configuration; returns ``(trace, meta, exit_code)``."""
    problem = load_problem(cfg.problem, cfg.seed)
    meta = {"config": cfg.to_dict(), "problem_name": problem.name}
    method = build_method(cfg, problem, meta)
    x0 = start_point(cfg.start, problem, cfg.seed)
    stop = solvers.StoppingCriteria(cfg.max_iter, cfg.tol)
    store = _parse_window(cfg.store_iterates)
    try:
        trace = solvers.run(problem, method, x0, stop, stride=cfg.stride,
                            reference_value=reference_value, store_iterates=store)
        code = EXIT_OK if trace.status == "converged" else EXIT_CAP
    except solvers.DivergenceError as exc:
        trace = exc.trace
        meta["divergence"] = {"k": exc.k, "norm": exc.norm}
        code = EXIT_DIVERGED
    trace.metadata.update({k: v for k, v in meta.items() if k not in trace.metadata})
    return trace, code


def write_run(trace, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    trace.to_csv(out_dir / "trace.csv")
    (out_dir / "meta.json").write_text(trace.meta_json() + "\n")
    if trace.iterates:
        trace.save_iterates(out_dir / "iterates.npz")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

RUN_KEYS = [f.name for f in fields(RunConfig)]


def cmd_run(args) -> int:
    cfg = RunConfig.from_mapping(_merged(args, RUN_KEYS)).validate()
    trace, code = execute_run(cfg)
    write_run(trace, Path(cfg.out))
    last = trace.final
    print(f"status={trace.status} k={last.k} f_gap={fmt(last.f_gap)} grad_norm={fmt(last.grad_norm)}")
    return code


def cmd_check_params(args) -> int:
    data = _merged(args, ["delta", "q", "p", "c", "step_frac", "s", "lipschitz", "problem",
                          "k_max", "row", "seed"])
    try:
        lipschitz = data.get("lipschitz")
        if lipschitz is None:
            if not data.get("problem"):
                raise ConfigError("lipschitz: give --lipschitz or --problem")
            lipschitz = load_problem(data["problem"], int(data.get("seed", 0))).lipschitz
        lipschitz = float(lipschitz)
        step_frac = float(data.get("step_frac", 1.1))
        s = float(data["s"]) if data.get("s") is not None else 1.0 / (step_frac * lipschitz)
        if data.get("c") is not None:
            schedule = schedules.TikhonovSchedule.critical(float(data["c"]))
        else:
            schedule = schedules.TikhonovSchedule.power(float(data.get("p", 1.95)))
        q = float(data["q"]) if data.get("q") is not None else default_q(lipschitz * s)
        delta = (float(data["delta"]) if data.get("delta") is not None
                 else schedules.default_delta(schedule.exponent, s))
        k_max = int(float(data.get("k_max", 1_000_000)))
        row = int(data["row"]) if data.get("row") is not None else None
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None

    report = {"lipschitz": lipschitz, "s": s, "schedule": schedule.describe(), "delta": delta, "q": q}
    try:
        sel = schedules.select_parameters(delta, q, lipschitz, s=s, row=row)
    except schedules.SelectionError as exc:
        report["error"] = str(exc)
        if lipschitz * s >= q / (q + 1):
            report["violated"] = "K1(iv)"
        _print_report(report, args)
        return EXIT_CERT
    k1 = schedules.check_K1(sel.params, lipschitz)
    report.update(row=sel.row, params=sel.params.to_dict(), step_bound=sel.step_bound,
                  K1=k1.to_dict())
    code = EXIT_OK
    if schedule.kind == "critical":
        try:
            c_min = schedules.critical_c_bound(sel.params)
            report["critical_c_min"] = c_min
            if not schedule.c > c_min:
                report["error"] = f"c={fmt(schedule.c)} is not above the critical-c bound {fmt(c_min)}"
                report["violated"] = "critical-c bound"
                code = EXIT_CERT
        except schedules.SelectionError as exc:
            report["error"] = str(exc)
            report["violated"] = "critical-c bound"
            code = EXIT_CERT
    if code == EXIT_OK:
        try:
            cert = schedules.find_k0(sel.params, schedule, lipschitz, k_max)
            report["certificate"] = cert.to_dict()
            if cert.downgraded:
                report["error"] = "K0(i) margin not monotone on the certified tail"
                code = EXIT_CERT
        except schedules.CertificationError as exc:
            report["error"] = str(exc)
            report["violated"] = exc.condition
            code = EXIT_CERT
    _print_report(report, args)
    return code


def _print_report(report, args):
    out = getattr(args, "json_out", None)
    text = json.dumps(report, indent=2, default=_jsonable)
    if out:
        Path(out).write_text(text + "\n")
    print(text)


def _jsonable(obj):
    if isinstance(obj, (np.generic,)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(type(obj).__name__)


def _slug(text: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "._=-" else "_" for ch in text)


def _sweep_cell(job):
    cfg, reference, require_cert = job
    name = f"{cfg.method}_p{fmt(cfg.p)}" if cfg.method != "nag" else "nag"
    cell = {"solver": name, "problem": cfg.problem, "out": cfg.out}
    try:
        if require_cert and cfg.method == "triga":
            problem = load_problem(cfg.problem, cfg.seed)
            probe = {}
            build_method(cfg, problem, probe)
            if probe["certification"]["status"] != "certified":
                cell.update(status="certification-skipped", certification=probe["certification"])
                return cell
        trace, code = execute_run(cfg, reference_value=reference)
        write_run(trace, Path(cfg.out))
        cell.update(status=trace.status, iterations=trace.final.k,
                    cpu_time=trace.final.wall_time, exit_code=code)
        if "certification" in trace.metadata:
            cell["certification"] = trace.metadata["certification"]["status"]
    except ConfigError as exc:
        cell.update(status="error", error=str(exc))
    return cell


def cmd_sweep(args) -> int:
    data = _merged(args, ["problems", "methods", "p_values", "seed", "criteria", "out",
                          "max_iter", "tol", "step_frac", "q", "k_max", "suite"])
    plist = _split(data.get("problems"), ";")
    if data.get("suite") == "mini":
        plist = list(MINI_SUITE) + plist
    methods = _split(data.get("methods")) or ["triga", "nadtr"]
    p_values = [float(v) for v in _split(data.get("p_values"))] or list(DEFAULT_P_VALUES)
    criteria = _split(data.get("criteria")) or ["iterations", "cpu_time"]
    if not plist:
        raise ConfigError("problems: the problem list is empty")
    for m in methods:
        if m not in ("triga", "nag", "nadtr"):
            raise ConfigError(f"methods: unknown method {m!r}")
    if any(not 0 < p < 2 for p in p_values):
        raise ConfigError("p_values: every p must lie in (0, 2)")
    for c in criteria:
        if c not in ("iterations", "cpu_time"):
            raise ConfigError(f"criteria: unknown criterion {c!r}")
    seed = int(float(data.get("seed", 0)))
    out = Path(data.get("out", "sweep"))
    workers = int(os.environ.get(WORKERS_ENV, "1") or 1)
    require_cert = bool(getattr(args, "require_certificate", False))

    jobs = []
    references = {}
    for uri in plist:
        problem = load_problem(uri, seed)
        if problem.optimum_value is None:
            references[uri] = solvers.reference_optimum(problem, start_point("random", problem, seed))
    for uri in plist:
        for m in methods:
            for p in (p_values if m != "nag" else [None]):
                label = f"{m}_p{fmt(p)}" if p is not None else m
                cfg = RunConfig(
                    problem=uri, method=m, p=p, seed=seed,
                    max_iter=int(float(data.get("max_iter", 100_000))),
                    tol=float(data.get("tol", 1e-6)),
                    step_frac=float(data.get("step_frac", 1.1)),
                    q=float(data["q"]) if data.get("q") is not None else None,
                    k_max=int(float(data.get("k_max", 1_000_000))),
                    stride=10**9,
                    out=str(out / "cells" / label / _slug(uri)),
                ).validate()
                jobs.append((cfg, references.get(uri), require_cert))

    t0 = time.perf_counter()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(_sweep_cell, jobs))
    else:
        cells = [_sweep_cell(j) for j in jobs]
    # aggregation is keyed, so worker completion order does not matter
    cells.sort(key=lambda c: (c["solver"], c["problem"]))

    out.mkdir(parents=True, exist_ok=True)
    solver_names = sorted({c["solver"] for c in cells})
    table = io.StringIO()
    writer = csv.writer(table, lineterminator="\n")
    writer.writerow(["solver", "problem", "criterion", "cost", "status"])
    for crit in criteria:
        costs = np.full((len(solver_names), len(plist)), np.inf)
        for c in cells:
            i, j = solver_names.index(c["solver"]), plist.index(c["problem"])
            cost = c.get(crit)
            if c["status"] == "converged":
                costs[i, j] = max(float(cost), 1e-12)
            writer.writerow([c["solver"], c["problem"], crit,
                             fmt(float(cost)) if cost is not None else "", c["status"]])
        if np.all(~np.isfinite(costs)):
            log.warning("no converged cells for criterion %s", crit)
            continue
        prof = metrics.performance_profile(costs, solver_names, plist)
        prof.to_csv(out / f"profile_{crit}.csv")
    (out / "costs.csv").write_text(table.getvalue())
    summary = {"seed": seed, "elapsed": time.perf_counter() - t0, "cells": cells}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, default=_jsonable) + "\n")
    done = sum(c["status"] in ("converged", "iteration_cap") for c in cells)
    print(f"cells={len(cells)} completed={done} out={out}")
    return EXIT_OK if done >= 1 else EXIT_CONFIG


def _split(value, sep: str = ",") -> List[str]:
    """Flatten repeated flags and ``sep``-separated strings into a list."""
    if value is None:
        return []
    if isinstance(value, (list, tuple)):
        items = []
        for v in value:
            items.extend(_split(v, sep))
        return items
    return [t.strip() for t in str(value).split(sep) if t.strip()]


def cmd_profile(args) -> int:
    path = Path(args.costs)
    if not path.is_file():
        raise ConfigError(f"costs: file not found: {path}")
    out = Path(args.out or path.parent)
    out.mkdir(parents=True, exist_ok=True)
    criteria = _split(args.criteria) or ["iterations", "cpu_time"]
    written = 0
    for crit in criteria:
        try:
            prof = metrics.read_cost_table(path, crit)
        except ValueError as exc:
            log.warning("%s", exc)
            continue
        prof.to_csv(out / f"profile_{crit}.csv")
        written += 1
    if not written:
        raise ConfigError("costs: no rows for the requested criteria")
    print(f"profiles={written} out={out}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    run_dir = Path(args.trace_dir)
    meta_path = run_dir / "meta.json"
    if not meta_path.is_file():
        raise ConfigError(f"trace_dir: no meta.json in {run_dir}")
    meta = json.loads(meta_path.read_text())
    cfg = RunConfig.from_mapping(meta["config"])
    if cfg.method != "triga":
        raise ConfigError("trace_dir: diagnostics apply to TRIGA runs only")
    problem = load_problem(cfg.problem, cfg.seed)
    if problem.min_norm_solution is None:
        print("x* unavailable for this problem; the audit needs the minimum-norm solution")
        return EXIT_CONFIG
    params = schedules.SolverParameters.from_dict(meta)
    schedule = schedules.TikhonovSchedule.parse(meta["schedule"])
    k0 = params.k0 or 2
    window = _parse_window(args.window) if args.window else (k0, k0 + 500)
    if window is True:
        raise ConfigError("window: give an explicit LO:HI window")
    lo, hi = window
    trace = solvers.Trace.from_csv(run_dir / "trace.csv")
    iter_path = run_dir / "iterates.npz"
    if iter_path.is_file():
        trace.load_iterates(iter_path)
    needed = range(max(lo - 1, 1), hi + 2)
    missing = [k for k in needed if k not in trace.iterates]
    if missing:
        print(f"iterates missing for k={missing[0]}..; rerun with --store-iterates {lo - 1}:{hi + 1} "
              f"so the window is recorded at stride 1")
        return EXIT_STRIDE
    curve = diagnostics.ViscosityCurve(problem, schedule)
    audit = diagnostics.audit_theorem1(trace, lo, hi, problem, schedule, params, curve)
    bounds = diagnostics.check_energy_bounds(trace, lo, hi, problem, schedule, params, curve)
    visc = diagnostics.check_viscosity_lemmas(problem, schedule, range(max(lo, 1), hi + 1), curve)
    report = {
        "window": [lo, hi],
        "energy_audit": audit.to_dict(),
        "energy_bounds": [v.to_dict() for v in bounds],
        "viscosity": [v.to_dict() for v in visc],
    }
    bad = len(audit.violations) + len(bounds) + len(visc)
    report["violations"] = bad
    out = Path(args.out or run_dir) / "audit.json"
    out.write_text(json.dumps(report, indent=2, default=_jsonable) + "\n")
    print(f"window={lo}:{hi} violations={bad} pre_regime={len(audit.pre_regime)} report={out}")
    if audit.violations:
        print("first violating k: " + ", ".join(str(e.k) for e in audit.violations[:10]))
    return EXIT_OK if bad == 0 else EXIT_AUDIT


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_run_flags(p):
    p.add_argument("--problem", help="problem URI, e.g. quadratic:n=10, mm:A.mtx, libsvm:data")
    p.add_argument("--method", choices=["triga", "nag", "nadtr"])
    p.add_argument("--p", type=float, help="schedule exponent (default 1.95)")
    p.add_argument("--c", type=float, help="critical schedule coefficient (eps_k = c/k^2)")
    p.add_argument("--q", type=float)
    p.add_argument("--delta", type=float, help="damping (default 2^(p/2)/sqrt(s))")
    p.add_argument("--step-frac", dest="step_frac", type=float, help="s = 1/(step_frac L)")
    p.add_argument("--s", type=float, help="explicit step size")
    p.add_argument("--alpha", type=float, help="NAG momentum parameter")
    p.add_argument("--nadtr-a", dest="nadtr_a", type=float)
    p.add_argument("--nadtr-c", dest="nadtr_c", type=float)
    p.add_argument("--nadtr-q", dest="nadtr_q", type=float, help="NADTR inertia exponent")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--stride", type=int)
    p.add_argument("--start", help="random | zero | optimum | comma-separated vector")
    p.add_argument("--store-iterates", dest="store_iterates", help="LO:HI or all")
    p.add_argument("--k-max", dest="k_max", type=int, help="certification horizon")
    p.add_argument("--out")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="triga", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="solve one problem")
    p.add_argument("--config")
    _add_run_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("check-params", help="select and certify parameters")
    p.add_argument("--config")
    p.add_argument("--delta", type=float)
    p.add_argument("--q", type=float)
    p.add_argument("--p", type=float)
    p.add_argument("--c", type=float)
    p.add_argument("--step-frac", dest="step_frac", type=float)
    p.add_argument("--s", type=float)
    p.add_argument("--lipschitz", "--L", dest="lipschitz", type=float)
    p.add_argument("--problem")
    p.add_argument("--seed", type=int)
    p.add_argument("--row", type=int, choices=range(1, 7))
    p.add_argument("--k-max", dest="k_max", type=int)
    p.add_argument("--json-out", dest="json_out")
    p.set_defaults(func=cmd_check_params)

    p = sub.add_parser("sweep", help="benchmark grid with performance profiles")
    p.add_argument("--config")
    p.add_argument("--problems", action="append", help="URIs separated by ';' (repeatable)")
    p.add_argument("--suite", choices=["mini"], help="add the built-in six-problem suite")
    p.add_argument("--methods")
    p.add_argument("--p-values", dest="p_values")
    p.add_argument("--criteria")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--step-frac", dest="step_frac", type=float)
    p.add_argument("--q", type=float)
    p.add_argument("--k-max", dest="k_max", type=int)
    p.add_argument("--require-certificate", dest="require_certificate", action="store_true",
                   help="skip TRIGA cells whose parameters do not certify")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("diagnose", help="energy and viscosity audit of a stored run")
    p.add_argument("trace_dir")
    p.add_argument("--window", help="LO:HI (default k0:k0+500)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("profile", help="profiles from an existing cost table")
    p.add_argument("costs")
    p.add_argument("--criteria")
    p.add_argument("--out")
    p.set_defaults(func=cmd_profile)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
