"""Inertial gradient steppers and the shared run driver.

Three two-step recurrences are provided, each mapping ``(x_{k-1}, x_k)`` to
``(x_k, x_{k+1})``:

* :func:`triga_step` -- Tikhonov-regularized inertial gradient step with
  damping ``1 - delta sqrt(s eps_k)``;
* :func:`nag_step` -- Nesterov's accelerated gradient with momentum
  ``1 - alpha / k``;
* :func:`nadtr_step` -- Nesterov-type step with a vanishing Tikhonov term and
  rational momentum coefficients.

:func:`run` drives any of them from a start point until the gradient norm
drops below a tolerance or the iteration cap is hit, recording a
:class:`Trace`.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from .problems import ObjectiveProblem
from .schedules import SolverParameters, TikhonovSchedule, epsilon_at

__all__ = [
    "SolverState",
    "StoppingCriteria",
    "TraceRecord",
    "Trace",
    "DivergenceError",
    "TrigaMethod",
    "NagMethod",
    "NadtrMethod",
    "triga_step",
    "nag_step",
    "nadtr_step",
    "nadtr_coefficients",
    "nadtr_skip_indices",
    "default_stride",
    "run",
    "reference_optimum",
    "TRACE_COLUMNS",
]

TRACE_COLUMNS = ("k", "f_gap", "grad_norm", "velocity", "dist_to_xstar", "epsilon", "wall_time")


class DivergenceError(FloatingPointError):
    """A step produced a non-finite vector."""

    def __init__(self, k, norm, trace=None):
        super().__init__(f"iteration diverged at k={k} (norm {norm})")
        self.k = k
        self.norm = norm
        self.trace = trace


@dataclass(frozen=True)
class SolverState:
    k: int
    x_prev: np.ndarray
    x_cur: np.ndarray
    degenerate: bool = False

    @classmethod
    def start(cls, x0, x1=None, k: int = 1) -> "SolverState":
        x0 = np.array(x0, dtype=float)
        x1 = x0.copy() if x1 is None else np.array(x1, dtype=float)
        if x0.shape != x1.shape:
            raise ValueError("x0 and x1 must have the same shape")
        return cls(k, x0, x1)

    @property
    def velocity(self) -> float:
        return float(np.linalg.norm(self.x_cur - self.x_prev))


@dataclass(frozen=True)
class StoppingCriteria:
    """Iteration cap and gradient-norm tolerance.  ``gradient_tolerance=None``
    disables the gradient test so the run always reaches the cap."""

    max_iterations: int = 100_000
    gradient_tolerance: Optional[float] = 1e-6

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if self.gradient_tolerance is not None and not self.gradient_tolerance > 0:
            raise ValueError("gradient_tolerance must be positive")


def _advance(state, x_next, y, degenerate=False):
    # one reduction covers both vectors: inf or nan anywhere makes the sum non-finite
    if not math.isfinite(float(np.sum(np.abs(x_next))) + float(np.sum(np.abs(y)))):
        bad = x_next if np.all(np.isfinite(y)) else y
        raise DivergenceError(state.k, float(np.linalg.norm(bad)))
    return SolverState(state.k + 1, state.x_cur, x_next, degenerate)


def triga_step(state: SolverState, problem: ObjectiveProblem,
               schedule: TikhonovSchedule, params: SolverParameters) -> SolverState:
    """One TRIGA update.

    ``y = x_k + (1 - delta sqrt(s eps_k)) (x_k - x_{k-1})``, then
    ``x_{k+1} = y - s (grad f(y) + eps_k y)``.
    """
    if state.k < 1:
        raise ValueError("k must be >= 1")
    s = params.s
    eps = epsilon_at(schedule, state.k)
    beta = 1.0 - params.delta * math.sqrt(s * eps)
    y = state.x_cur + beta * (state.x_cur - state.x_prev)
    x_next = y - s * (problem.gradient(y) + eps * y)
    return _advance(state, x_next, y)


def nag_step(state: SolverState, problem: ObjectiveProblem, s: float, alpha: float = 3.0) -> SolverState:
    """``y = x_k + (1 - alpha/k)(x_k - x_{k-1})``; ``x_{k+1} = y - s grad f(y)``."""
    if state.k < 1:
        raise ValueError("k must be >= 1")
    y = state.x_cur + (1.0 - alpha / state.k) * (state.x_cur - state.x_prev)
    return _advance(state, y - s * problem.gradient(y), y)


def nadtr_skip_indices(s: float, c: float, p: float) -> frozenset:
    """Indices at which the NADTR extrapolation is skipped.

    Always ``1``, plus ``r`` and ``r + 1`` when ``r = (c s)^(1/p)`` is an
    integer to within ``1e-9``.
    """
    skip = {1}
    r = (c * s) ** (1.0 / p)
    if abs(r - round(r)) <= 1e-9 and round(r) >= 1:
        skip.update((int(round(r)), int(round(r)) + 1))
    return frozenset(skip)


def nadtr_coefficients(k: int, s: float, a: float, c: float, p: float, q: float):
    """Momentum coefficient ``B_k`` and shrinkage ``C_k`` of the NADTR step.

    Returns ``None`` when a denominator vanishes.  ``q`` is the inertia
    exponent of the method (default ``0.99``), unrelated to the TRIGA
    energy constant of the same name.
    """
    km = k - 1.0
    kp, kmp = float(k) ** p, km**p
    kq, kmq = float(k) ** q, km**q
    cs = c * s
    d_prev, d_cur = kmp - cs, kp - cs
    if km == 0 or d_prev == 0 or d_cur == 0 or a == 0:
        return None
    b_num = kp * (a * kmq - s) * (a * d_prev**2 * kmq - 2.0 * s * km ** (2 * p))
    b_den = a**2 * km ** (p + q) * kq * d_prev * d_cur
    c_num = 2.0 * s**2 * kp * (kmp * kp - c * kmp - a * c * kmq * kp + a * c * km ** (q + p))
    c_den = a**2 * kmq * kq * d_prev * d_cur**2
    return b_num / b_den, c_num / c_den


def nadtr_step(state: SolverState, problem: ObjectiveProblem, s: float, a: float = 1.0,
               c: float = 1.0, p: float = 1.0, q_exp: float = 0.99) -> SolverState:
    """One NADTR update.

    ``y = x_k + B_k (x_k - x_{k-1}) - C_k x_k`` outside the skip set (and
    ``y = x_k`` inside it), then ``x_{k+1} = y - s grad f(y) - (c s / k^p) y``.
    A vanishing coefficient denominator falls back to ``y = x_k`` and sets
    ``degenerate`` on the returned state.
    """
    if state.k < 1:
        raise ValueError("k must be >= 1")
    k = state.k
    degenerate = False
    if k in nadtr_skip_indices(s, c, p):
        y = state.x_cur
    else:
        coeffs = nadtr_coefficients(k, s, a, c, p, q_exp)
        if coeffs is None:
            y, degenerate = state.x_cur, True
        else:
            bk, ck = coeffs
            y = state.x_cur + bk * (state.x_cur - state.x_prev) - ck * state.x_cur
    x_next = y - s * problem.gradient(y) - (c * s / k**p) * y
    return _advance(state, x_next, y, degenerate)


# ---------------------------------------------------------------------------
# Method specifications
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrigaMethod:
    schedule: TikhonovSchedule
    params: SolverParameters
    name: str = "triga"

    def step(self, state, problem):
        return triga_step(state, problem, self.schedule, self.params)

    def epsilon(self, k):
        return epsilon_at(self.schedule, k)

    def describe(self):
        return {"method": self.name, "schedule": self.schedule.describe(), **self.params.to_dict()}


@dataclass(frozen=True)
class NagMethod:
    s: float
    alpha: float = 3.0
    name: str = "nag"

    def __post_init__(self):
        if self.alpha < 3:
            raise ValueError("alpha must be >= 3")

    def step(self, state, problem):
        return nag_step(state, problem, self.s, self.alpha)

    def epsilon(self, k):
        return 0.0

    def describe(self):
        return {"method": self.name, "s": self.s, "alpha": self.alpha}


@dataclass(frozen=True)
class NadtrMethod:
    s: float
    p: float
    a: float = 1.0
    c: float = 1.0
    q_exp: float = 0.99
    name: str = "nadtr"

    def step(self, state, problem):
        return nadtr_step(state, problem, self.s, self.a, self.c, self.p, self.q_exp)

    def epsilon(self, k):
        return self.c / k**self.p

    def describe(self):
        return {"method": self.name, "s": self.s, "p": self.p, "a": self.a,
                "c": self.c, "q_exp": self.q_exp}


Method = Union[TrigaMethod, NagMethod, NadtrMethod]


# ---------------------------------------------------------------------------
# Traces
# ---------------------------------------------------------------------------


@dataclass
class TraceRecord:
    k: int
    f_gap: float
    grad_norm: float
    velocity: float
    dist_to_xstar: Optional[float]
    epsilon: float
    wall_time: float

    def row(self):
        return [getattr(self, c) for c in TRACE_COLUMNS]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


@dataclass
class Trace:
    """Recorded run.  ``iterates`` maps ``k`` to ``x_k`` for stored indices."""

    records: List[TraceRecord] = field(default_factory=list)
    status: str = "running"
    stride: object = "default"
    iterates: Dict[int, np.ndarray] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    degenerate_steps: List[int] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([np.nan if getattr(r, name) is None else getattr(r, name)
                         for r in self.records], dtype=float)

    @property
    def ks(self) -> np.ndarray:
        return np.array([r.k for r in self.records], dtype=np.int64)

    @property
    def final(self) -> TraceRecord:
        return self.records[-1]

    @property
    def final_x(self) -> Optional[np.ndarray]:
        return self.metadata.get("_final_x")

    def record_at(self, k: int) -> Optional[TraceRecord]:
        for r in self.records:
            if r.k == k:
                return r
        return None

    def window_is_dense(self, k_lo: int, k_hi: int) -> bool:
        """True when every index in ``[k_lo, k_hi]`` was stored."""
        return all(k in self.iterates for k in range(k_lo, k_hi + 1))

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in self.records:
            w.writerow([_fmt(v) for v in r.row()])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "Trace":
        trace = cls()
        with open(path) as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != TRACE_COLUMNS:
                raise ValueError(f"unexpected trace header {reader.fieldnames}")
            for row in reader:
                trace.records.append(TraceRecord(
                    k=int(row["k"]),
                    f_gap=float(row["f_gap"]),
                    grad_norm=float(row["grad_norm"]),
                    velocity=float(row["velocity"]),
                    dist_to_xstar=float(row["dist_to_xstar"]) if row["dist_to_xstar"] else None,
                    epsilon=float(row["epsilon"]),
                    wall_time=float(row["wall_time"]),
                ))
        return trace

    def save_iterates(self, path) -> None:
        ks = np.array(sorted(self.iterates), dtype=np.int64)
        xs = np.array([self.iterates[k] for k in ks])
        np.savez(path, k=ks, x=xs)

    def load_iterates(self, path) -> None:
        data = np.load(path)
        self.iterates = {int(k): x for k, x in zip(data["k"], data["x"])}

    def meta_json(self) -> str:
        meta = {k: v for k, v in self.metadata.items() if not k.startswith("_")}
        meta["status"] = self.status
        meta["stride"] = self.stride
        meta["records"] = len(self.records)
        if self.degenerate_steps:
            meta["degenerate_steps"] = self.degenerate_steps
        return json.dumps(meta, indent=2, default=_json_default)


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def default_stride(k: int) -> int:
    """Record every iterate up to ``k = 1000``, every tenth afterwards."""
    return 1 if k <= 1000 else 10


def _should_record(k, stride):
    if callable(stride):
        return k % stride(k) == 0 or k == 1
    return k % stride == 0 or k == 1


def reference_optimum(problem: ObjectiveProblem, x0=None, gradient_tolerance: float = 1e-10) -> float:
    """Reference value of ``min f`` when no closed form is known.

    The problem is over-solved with L-BFGS to a gradient norm of
    ``gradient_tolerance``; the smallest value seen is returned.
    """
    from scipy.optimize import minimize

    if problem.optimum_value is not None:
        return float(problem.optimum_value)
    x0 = np.zeros(problem.dimension) if x0 is None else np.asarray(x0, dtype=float)
    res = minimize(lambda x: problem.evaluate(x), x0, jac=True, method="L-BFGS-B",
                   options={"gtol": gradient_tolerance, "ftol": 0.0, "maxiter": 100_000,
                            "maxcor": 30})
    return float(min(res.fun, problem.value(x0)))


def run(
    problem: ObjectiveProblem,
    method: Method,
    init,
    stop: Optional[StoppingCriteria] = None,
    stride: Union[int, Callable[[int], int], None] = None,
    reference_value: Optional[float] = None,
    store_iterates: Union[bool, Tuple[int, int]] = False,
    clock: Callable[[], float] = time.perf_counter,
) -> Trace:
    """Iterate ``method`` on ``problem``.

    ``init`` is either a start vector (used as ``x0 = x1``) or a pair
    ``(x0, x1)``.  The run stops once ``||grad f(x_k)|| <= tol`` or at
    ``k = max_iterations``; the last iterate is always recorded.
    ``store_iterates`` keeps ``x_k`` for every ``k`` (``True``) or for ``k``
    in an inclusive window.  A :class:`DivergenceError` carries the partial
    trace on its ``trace`` attribute.
    """
    stop = stop or StoppingCriteria()
    stride = default_stride if stride is None else stride
    if not callable(stride) and (int(stride) != stride or stride < 1):
        raise ValueError("stride must be a positive integer")
    if isinstance(init, tuple) and len(init) == 2:
        state = SolverState.start(*init)
    else:
        state = SolverState.start(init)
    if state.x_cur.shape != (problem.dimension,):
        raise ValueError(f"start point must have length {problem.dimension}")

    fref = problem.optimum_value if reference_value is None else reference_value
    if fref is None:
        fref = reference_optimum(problem, state.x_cur)
    xstar = problem.min_norm_solution
    if store_iterates is True:
        keep = lambda k: True  # noqa: E731
    elif store_iterates:
        lo, hi = store_iterates
        keep = lambda k: lo <= k <= hi  # noqa: E731
    else:
        keep = lambda k: False  # noqa: E731

    trace = Trace(stride=stride if not callable(stride) else "default")
    trace.metadata.update(method.describe())
    trace.metadata["problem"] = problem.name
    trace.metadata["reference_value"] = fref
    tol = stop.gradient_tolerance
    t0 = clock()

    def observe(st, force=False):
        f, g = problem.evaluate(st.x_cur)
        gn = float(np.linalg.norm(g))
        if force or _should_record(st.k, stride):
            dist = None if xstar is None else float(np.linalg.norm(st.x_cur - xstar))
            trace.records.append(TraceRecord(st.k, f - fref, gn, st.velocity, dist,
                                             float(method.epsilon(st.k)), clock() - t0))
        if keep(st.k):
            trace.iterates[st.k] = st.x_cur.copy()
        return gn

    if keep(0):
        trace.iterates[0] = state.x_prev.copy()
    gn = observe(state)
    while True:
        if tol is not None and gn <= tol:
            trace.status = "converged"
            break
        if state.k >= stop.max_iterations:
            trace.status = "iteration_cap"
            break
        try:
            state = method.step(state, problem)
        except DivergenceError as exc:
            trace.status = "diverged"
            exc.trace = trace
            raise
        if state.degenerate:
            trace.degenerate_steps.append(state.k - 1)
        gn = observe(state)
        if not math.isfinite(gn):
            trace.status = "diverged"
            raise DivergenceError(state.k, float(np.linalg.norm(state.x_cur)), trace)
    if trace.records[-1].k != state.k:
        f, g = problem.evaluate(state.x_cur)
        dist = None if xstar is None else float(np.linalg.norm(state.x_cur - xstar))
        trace.records.append(TraceRecord(state.k, f - fref, gn, state.velocity, dist,
                                         float(method.epsilon(state.k)), clock() - t0))
    trace.metadata["_final_x"] = state.x_cur.copy()
    trace.metadata["final_k"] = state.k
    return trace
