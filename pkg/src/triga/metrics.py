"""Empirical rate fits and Dolan-More performance profiles."""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "RateFit",
    "DegenerateFitError",
    "AlignmentError",
    "PerformanceProfile",
    "fit_rate",
    "default_window",
    "performance_profile",
    "summarize_comparison",
    "read_cost_table",
]


class DegenerateFitError(ValueError):
    """Too few positive samples in the fit window."""


class AlignmentError(ValueError):
    """Solvers were not run on the same problem set."""


@dataclass
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    window: Tuple[int, int]
    samples: int

    def to_dict(self):
        return {"slope": self.slope, "intercept": self.intercept, "r_squared": self.r_squared,
                "window": list(self.window), "samples": self.samples}


def default_window(last_k: int, k0: Optional[int] = None) -> Tuple[int, int]:
    """``[max(100, k0), min(10^4, last_k)]``."""
    return max(100, k0 or 1), min(10_000, int(last_k))


def fit_rate(trace_or_ks, k_lo: int, k_hi: int, values=None, column: str = "f_gap",
             min_samples: int = 10) -> RateFit:
    """Least-squares line through ``(log k, log value)`` on ``[k_lo, k_hi]``.

    Accepts a trace (``column`` selects the series) or an index array with
    ``values``.  Nonpositive values are excluded.
    """
    if values is None:
        ks = np.asarray(trace_or_ks.ks, dtype=float)
        values = trace_or_ks.column(column)
    else:
        ks = np.asarray(trace_or_ks, dtype=float)
        values = np.asarray(values, dtype=float)
    if k_lo < 1 or not k_hi > k_lo:
        raise ValueError("window must satisfy 1 <= k_lo < k_hi")
    mask = (ks >= k_lo) & (ks <= k_hi) & np.isfinite(values) & (values > 0)
    n = int(mask.sum())
    if n < min_samples:
        raise DegenerateFitError(
            f"only {n} positive samples in [{k_lo}, {k_hi}]; shrink the window"
        )
    x = np.log(ks[mask])
    y = np.log(values[mask])
    design = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - (slope * x + intercept)
    ss_res = float(resid @ resid)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    # a flat series is fitted exactly; rounding in the mean must not turn it into R^2 = 0
    if ss_tot <= 1e-24 * y.size * max(1.0, float(y @ y) / y.size):
        r2 = 1.0
    else:
        r2 = min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    return RateFit(float(slope), float(intercept), r2, (int(k_lo), int(k_hi)), n)


@dataclass
class PerformanceProfile:
    """Ratios ``r[s, p] = cost[s, p] / min_s cost[s, p]`` and the curves
    ``rho_s(t) = |{p : log2 r[s, p] <= t}| / n_p``.  Failures have cost
    ``inf`` (or NaN) and ratio ``inf``."""

    solvers: List[str]
    problems: List[str]
    costs: np.ndarray
    ratios: np.ndarray
    dropped: List[str] = field(default_factory=list)

    @property
    def log_ratios(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log2(self.ratios)

    @property
    def breakpoints(self) -> np.ndarray:
        lr = self.log_ratios
        return np.unique(np.concatenate([[0.0], lr[np.isfinite(lr)]]))

    def rho(self, solver, t) -> np.ndarray:
        i = self.solvers.index(solver) if isinstance(solver, str) else int(solver)
        lr = self.log_ratios[i]
        t = np.atleast_1d(np.asarray(t, dtype=float))
        n = len(self.problems)
        if n == 0:
            return np.zeros_like(t)
        return (lr[None, :] <= t[:, None]).sum(axis=1) / n

    def curves(self) -> Dict[str, np.ndarray]:
        t = self.breakpoints
        return {s: self.rho(i, t) for i, s in enumerate(self.solvers)}

    def wins(self) -> np.ndarray:
        """Per solver, the number of problems where it attains ratio 1."""
        return (self.ratios == 1.0).sum(axis=1)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"rho_{s}" for s in self.solvers])
        curves = self.curves()
        for j, t in enumerate(self.breakpoints):
            w.writerow([format(t, ".17g")] + [format(curves[s][j], ".17g") for s in self.solvers])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def performance_profile(costs, solvers: Optional[Sequence[str]] = None,
                        problems: Optional[Sequence[str]] = None) -> PerformanceProfile:
    """Build a profile from a ``solvers x problems`` cost matrix.

    NaN, infinite or nonpositive costs mark failures.  Problems on which
    every solver failed are dropped with a warning.
    """
    costs = np.array(costs, dtype=float, ndmin=2)
    ns, npb = costs.shape
    solvers = list(solvers) if solvers is not None else [f"s{i + 1}" for i in range(ns)]
    problems = list(problems) if problems is not None else [f"p{j + 1}" for j in range(npb)]
    if len(solvers) != ns or len(problems) != npb:
        raise ValueError("name lists do not match the cost matrix shape")
    failed = ~np.isfinite(costs) | (costs <= 0)
    clean = np.where(failed, np.inf, costs)
    keep = ~np.all(failed, axis=0)
    dropped = [p for p, k in zip(problems, keep) if not k]
    if dropped:
        warnings.warn(f"dropping problems where every solver failed: {dropped}", RuntimeWarning,
                      stacklevel=2)
    clean = clean[:, keep]
    problems = [p for p, k in zip(problems, keep) if k]
    best = clean.min(axis=0) if clean.size else np.zeros(0)
    ratios = clean / best[None, :]
    # the best solver on each problem gets exactly 1, free of rounding
    ratios[clean == best[None, :]] = 1.0
    return PerformanceProfile(solvers, problems, clean, ratios, dropped)


def summarize_comparison(traces: Mapping[Tuple[str, str], object], criterion: str = "iterations"):
    """Profile and flat cost table from ``{(solver, problem): trace}``.

    ``criterion`` is ``"iterations"`` (final ``k``) or ``"cpu_time"``
    (wall time of the last record).  Runs that did not converge count as
    failures.  Returns ``(profile, table_csv)``.
    """
    if criterion not in ("iterations", "cpu_time"):
        raise ValueError(f"unknown criterion {criterion!r}")
    solvers = sorted({s for s, _ in traces}, key=lambda s: [k[0] for k in traces].index(s))
    problems = sorted({p for _, p in traces}, key=lambda p: [k[1] for k in traces].index(p))
    missing = [(s, p) for s in solvers for p in problems if (s, p) not in traces]
    if missing:
        raise AlignmentError(f"missing solver/problem pairs: {missing}")
    costs = np.full((len(solvers), len(problems)), np.inf)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["solver", "problem", "criterion", "cost", "status"])
    for i, s in enumerate(solvers):
        for j, p in enumerate(problems):
            tr = traces[(s, p)]
            last = tr.records[-1]
            cost = float(last.k) if criterion == "iterations" else float(last.wall_time)
            ok = tr.status == "converged"
            if ok:
                # a zero timer reading would be treated as a failure
                costs[i, j] = max(cost, 1e-12)
            w.writerow([s, p, criterion, format(cost, ".17g"), tr.status])
    return performance_profile(costs, solvers, problems), buf.getvalue()


def read_cost_table(path, criterion: Optional[str] = None) -> PerformanceProfile:
    """Rebuild a profile from a table written by :func:`summarize_comparison`."""
    rows = []
    with open(path) as fh:
        for row in csv.DictReader(fh):
            if criterion is None or row["criterion"] == criterion:
                rows.append(row)
    if not rows:
        raise ValueError(f"no cost rows in {path}")
    solvers, problems = [], []
    for r in rows:
        if r["solver"] not in solvers:
            solvers.append(r["solver"])
        if r["problem"] not in problems:
            problems.append(r["problem"])
    costs = np.full((len(solvers), len(problems)), np.inf)
    seen = set()
    for r in rows:
        i, j = solvers.index(r["solver"]), problems.index(r["problem"])
        seen.add((i, j))
        if r["status"] == "converged":
            costs[i, j] = max(float(r["cost"]), 1e-12)
    missing = [(solvers[i], problems[j]) for i in range(len(solvers))
               for j in range(len(problems)) if (i, j) not in seen]
    if missing:
        raise AlignmentError(f"missing solver/problem pairs: {missing}")
    return performance_profile(costs, solvers, problems)

