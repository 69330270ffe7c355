"""Viscosity curve, Lyapunov energy and descent-lemma checks.

The regularized objective at index ``k`` is
``phi_k(x) = f(x) + (eps_k / 2) ||x||^2`` and its unique minimizer
``x_{eps_k}`` traces the viscosity curve, which tends to the minimum-norm
solution ``x*`` as ``eps_k -> 0``.

Along a TRIGA trajectory the energy

    E_k = alpha_k (phi_k(x_k) - phi_k(x_{eps_k}))
        + 1/2 || tau_k (x_k - x_{eps_{k-1}}) + (x_k - x_{k-1}) ||^2
        + beta_k / 2 || x_k - x_{k-1} ||^2

satisfies ``E_{k+1} - E_k + mu_{k+1} E_{k+1} <= theta_k / 2 ||x*||^2`` once
the per-index admissibility system holds.  :func:`audit_theorem1` checks that
inequality on recorded iterates.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, Iterable, List, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .problems import LeastSquares, LogisticRegression, ObjectiveProblem, UnsupportedProblemError
from .schedules import SolverParameters, TikhonovSchedule, epsilon_at

__all__ = [
    "ViscosityPoint",
    "ViscosityCurve",
    "IncompleteSolveError",
    "Violation",
    "EnergyBreakdown",
    "AuditEntry",
    "AuditReport",
    "viscosity_point",
    "check_viscosity_lemmas",
    "energy_coefficients",
    "energy_at",
    "audit_theorem1",
    "check_energy_bounds",
    "check_descent_lemmas",
]

LOGISTIC_MIN_EPSILON = 1e-4
INNER_BUDGET = 100_000


class IncompleteSolveError(RuntimeError):
    def __init__(self, epsilon, residual, iterations):
        super().__init__(
            f"inner solve for eps={epsilon:g} stopped after {iterations} iterations "
            f"with residual {residual:.3e}"
        )
        self.epsilon = epsilon
        self.residual = residual
        self.iterations = iterations


@dataclass
class ViscosityPoint:
    epsilon: float
    point: np.ndarray
    inner_residual: float


def _phi(problem, eps, x):
    return problem.value(x) + 0.5 * eps * float(x @ x)


def _phi_grad(problem, eps, x):
    return problem.gradient(x) + eps * x


def viscosity_point(problem: ObjectiveProblem, epsilon: float, tolerance: float = 1e-12) -> ViscosityPoint:
    """Minimizer of ``f + (epsilon/2) ||.||^2``.

    Least-squares problems use a direct solve of ``(A^T A + eps I) x = A^T b``.
    Logistic problems run gradient descent with step ``2 / (L + 2 eps)`` until
    the gradient norm is below ``tolerance`` (``eps >= 1e-4`` only).
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if isinstance(problem, LeastSquares):
        a = problem.matrix
        gram = (a.T @ a).toarray() if sp.issparse(a) else a.T @ a
        gram = gram + epsilon * np.eye(problem.dimension)
        x = sla.solve(gram, a.T @ problem.rhs, assume_a="pos")
        res = float(np.linalg.norm(_phi_grad(problem, epsilon, x)))
        return ViscosityPoint(epsilon, x, res)
    if isinstance(problem, LogisticRegression):
        if epsilon < LOGISTIC_MIN_EPSILON:
            raise ValueError(f"logistic viscosity points need eps >= {LOGISTIC_MIN_EPSILON:g}")
        step = 2.0 / (problem.lipschitz + 2.0 * epsilon)
        x = np.zeros(problem.dimension)
        for it in range(1, INNER_BUDGET + 1):
            g = _phi_grad(problem, epsilon, x)
            res = float(np.linalg.norm(g))
            if res <= tolerance:
                return ViscosityPoint(epsilon, x, res)
            x = x - step * g
        raise IncompleteSolveError(epsilon, res, INNER_BUDGET)
    raise UnsupportedProblemError(f"no viscosity solver for {problem.name}")


class ViscosityCurve:
    """Memoized ``k -> x_{eps_k}``; pass ``transform`` to distort the curve."""

    def __init__(self, problem, schedule, tolerance: float = 1e-12,
                 transform: Optional[Callable[[int, np.ndarray], np.ndarray]] = None):
        self.problem = problem
        self.schedule = schedule
        self.tolerance = tolerance
        self.transform = transform
        self._cache: Dict[int, np.ndarray] = {}

    def epsilon(self, k):
        return epsilon_at(self.schedule, k)

    def __call__(self, k: int) -> np.ndarray:
        x = self._cache.get(k)
        if x is None:
            x = viscosity_point(self.problem, self.epsilon(k), self.tolerance).point
            if self.transform is not None:
                x = self.transform(k, x)
            self._cache[k] = x
        return x

    def phi_min(self, k: int) -> float:
        return _phi(self.problem, self.epsilon(k), self(k))


@dataclass
class Violation:
    k: int
    check: str
    margin: float

    def to_dict(self):
        return asdict(self)


def _require_xstar(problem):
    xstar = problem.min_norm_solution
    if xstar is None:
        raise UnsupportedProblemError(f"x* unavailable for {problem.name}")
    return xstar


def check_viscosity_lemmas(problem, schedule, k_range: Iterable[int],
                           curve: Optional[ViscosityCurve] = None) -> List[Violation]:
    """Check the viscosity-curve inequalities for every ``k`` in ``k_range``.

    ``L1-i``: ``||x_{eps_k}|| <= ||x*||``.
    ``L1-ii``: ``||x_{eps_k} - x*||`` is nonincreasing over the range.
    ``L2-i``: ``phi_k(x_{eps_k}) - phi_{k+1}(x_{eps_{k+1}}) <= (eps_k - eps_{k+1})/2 ||x_{eps_{k+1}}||^2``.
    ``L2-ii``: ``||x_{eps_{k+1}} - x_{eps_k}|| <= (eps_k - eps_{k+1})/eps_k ||x_{eps_{k+1}}||``.

    All use slack ``1e-8 (1 + ||x*||^2)``; a positive margin is a violation.
    """
    xstar = _require_xstar(problem)
    curve = curve or ViscosityCurve(problem, schedule)
    nx = float(np.linalg.norm(xstar))
    slack = 1e-8 * (1.0 + nx * nx)
    out = []
    prev_dist = None
    for k in k_range:
        xk, xk1 = curve(k), curve(k + 1)
        ek, ek1 = curve.epsilon(k), curve.epsilon(k + 1)
        m = float(np.linalg.norm(xk)) - nx - slack
        if m > 0:
            out.append(Violation(k, "L1-i", m))
        dist = float(np.linalg.norm(xk - xstar))
        if prev_dist is not None and dist - prev_dist - slack > 0:
            out.append(Violation(k, "L1-ii", dist - prev_dist - slack))
        prev_dist = dist
        lhs = _phi(problem, ek, xk) - _phi(problem, ek1, xk1)
        m = lhs - 0.5 * (ek - ek1) * float(xk1 @ xk1) - slack
        if m > 0:
            out.append(Violation(k, "L2-i", m))
        m = float(np.linalg.norm(xk1 - xk)) - (ek - ek1) / ek * float(np.linalg.norm(xk1)) - slack
        if m > 0:
            out.append(Violation(k, "L2-ii", m))
    return out


# ---------------------------------------------------------------------------
# Energy
# ---------------------------------------------------------------------------


@dataclass
class EnergyBreakdown:
    k: int
    e_pot: float
    e_mix: float
    e_kin: float
    e_total: float
    mu_next: float
    theta: float
    tau: float
    alpha: float
    beta: float
    pre_regime: bool = False

    def to_dict(self):
        return asdict(self)


def energy_coefficients(schedule: TikhonovSchedule, params: SolverParameters, k: int) -> dict:
    """``tau_k, alpha_k, beta_k, mu_{k+1}, theta_k`` at index ``k >= 2``.

    ``regular`` is False when ``1 - delta sqrt(s eps_k)`` or ``1 - s eps_k``
    is not positive.
    """
    s, d, lam, q, a, b = params.s, params.delta, params.lam, params.q, params.a, params.b
    e_prev, e, e_next = (epsilon_at(schedule, j) for j in (k - 1, k, k + 1))
    root = math.sqrt(s * e)
    damp = 1.0 - d * root
    shrink = 1.0 - s * e
    tau = lam * root
    beta = q * damp
    regular = damp > 0 and shrink > 0
    alpha = (1 + q) * s / (damp * shrink) if regular else math.nan
    # sqrt(e_k/e_{k+1}) - 1 without cancellation
    root_ratio_m1 = math.expm1(-0.5 * math.log(float(schedule.ratio(k))))
    mu_next = root_ratio_m1 + (d / damp - lam) * root if damp != 0 else math.nan
    theta = (a + b) * tau * ((e - e_prev) / e_prev) ** 2 - alpha * (e_next - e) * (1 + mu_next)
    return {"tau": tau, "alpha": alpha, "beta": beta, "mu_next": mu_next,
            "theta": theta, "regular": regular}


def _iterate(trace, k):
    try:
        return trace.iterates[k]
    except KeyError:
        raise KeyError(f"iterate x_{k} was not stored; rerun with stride 1 over the window") from None


def energy_at(trace, k: int, problem, schedule, params, curve: Optional[ViscosityCurve] = None) -> EnergyBreakdown:
    """Energy components and Lyapunov coefficients at index ``k``.

    Requires stored iterates ``x_{k-1}`` and ``x_k``.  Indices before
    ``params.k0`` or with nonpositive denominators are flagged ``pre_regime``.
    """
    if k < 2:
        raise ValueError("energy is defined for k >= 2")
    curve = curve or ViscosityCurve(problem, schedule)
    coef = energy_coefficients(schedule, params, k)
    xk, xkm = _iterate(trace, k), _iterate(trace, k - 1)
    eps = curve.epsilon(k)
    vel = xk - xkm
    gap = max(_phi(problem, eps, xk) - curve.phi_min(k), 0.0)
    e_pot = coef["alpha"] * gap
    mix = coef["tau"] * (xk - curve(k - 1)) + vel
    e_mix = 0.5 * float(mix @ mix)
    e_kin = 0.5 * coef["beta"] * float(vel @ vel)
    pre = (not coef["regular"]) or (params.k0 is not None and k < params.k0)
    return EnergyBreakdown(k, e_pot, e_mix, e_kin, e_pot + e_mix + e_kin, coef["mu_next"],
                           coef["theta"], coef["tau"], coef["alpha"], coef["beta"], pre)


@dataclass
class AuditEntry:
    k: int
    lhs: float
    rhs: float
    margin: float
    pre_regime: bool

    @property
    def passed(self):
        return self.margin <= 0

    def to_dict(self):
        d = asdict(self)
        d["passed"] = self.passed
        return d


@dataclass
class AuditReport:
    entries: List[AuditEntry] = field(default_factory=list)

    @property
    def violations(self) -> List[AuditEntry]:
        return [e for e in self.entries if not e.pre_regime and not e.passed]

    @property
    def pre_regime(self) -> List[int]:
        return [e.k for e in self.entries if e.pre_regime]

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self):
        return {"ok": self.ok, "violations": [e.k for e in self.violations],
                "pre_regime": self.pre_regime, "entries": [e.to_dict() for e in self.entries]}


def audit_theorem1(trace, k_lo: int, k_hi: int, problem, schedule, params,
                   curve: Optional[ViscosityCurve] = None) -> AuditReport:
    """Check ``E_{k+1} - E_k + mu_{k+1} E_{k+1} <= theta_k/2 ||x*||^2`` for ``k`` in ``[k_lo, k_hi]``.

    Slack ``1e-9 (1 + E_k + ||x*||^2)`` absorbs rounding.  Needs iterates
    ``x_{k_lo - 1}`` through ``x_{k_hi + 1}``.
    """
    xstar = _require_xstar(problem)
    curve = curve or ViscosityCurve(problem, schedule)
    nx2 = float(xstar @ xstar)
    report = AuditReport()
    nxt = energy_at(trace, max(k_lo, 2), problem, schedule, params, curve)
    for k in range(max(k_lo, 2), k_hi + 1):
        cur = nxt
        nxt = energy_at(trace, k + 1, problem, schedule, params, curve)
        lhs = nxt.e_total - cur.e_total + cur.mu_next * nxt.e_total
        rhs = 0.5 * cur.theta * nx2
        slack = 1e-9 * (1.0 + cur.e_total + nx2)
        report.entries.append(AuditEntry(k, lhs, rhs, lhs - rhs - slack, cur.pre_regime))
    return report


def check_energy_bounds(trace, k_lo: int, k_hi: int, problem, schedule, params,
                        curve: Optional[ViscosityCurve] = None, slack: float = 1e-9) -> List[Violation]:
    """Pointwise energy bounds on ``[k_lo, k_hi]`` (pre-regime indices skipped).

    ``value``: ``f(x_k) - min f <= E_k/alpha_k + eps_k/2 ||x*||^2``;
    ``distance``: ``||x_k - x_{eps_k}||^2 <= 2 E_k / (alpha_k eps_k)``;
    ``velocity``: ``||x_k - x_{k-1}||^2 <= 2 E_k / beta_k``;
    ``strong-convexity``: ``phi_k(x_k) - phi_k(x_{eps_k}) >= eps_k/2 ||x_k - x_{eps_k}||^2``.
    """
    xstar = _require_xstar(problem)
    curve = curve or ViscosityCurve(problem, schedule)
    fstar = problem.optimum_value
    nx2 = float(xstar @ xstar)
    out = []
    for k in range(max(k_lo, 2), k_hi + 1):
        en = energy_at(trace, k, problem, schedule, params, curve)
        if en.pre_regime:
            continue
        xk = _iterate(trace, k)
        eps = curve.epsilon(k)
        tol = slack * (1.0 + en.e_total + nx2)
        dx = xk - curve(k)
        d2 = float(dx @ dx)
        v = xk - _iterate(trace, k - 1)
        gap_phi = _phi(problem, eps, xk) - curve.phi_min(k)
        checks = {
            "value": problem.value(xk) - fstar - en.e_total / en.alpha - 0.5 * eps * nx2,
            "distance": d2 - 2 * en.e_total / (en.alpha * eps),
            "velocity": float(v @ v) - 2 * en.e_total / en.beta,
            "strong-convexity": 0.5 * eps * d2 - gap_phi,
        }
        for name, m in checks.items():
            if m - tol > 0:
                out.append(Violation(k, name, m - tol))
    return out


# ---------------------------------------------------------------------------
# Descent lemmas
# ---------------------------------------------------------------------------


def check_descent_lemmas(problem, sample_count: int = 1000, seed: int = 0,
                         epsilons=(1.0, 0.1, 0.01), lipschitz: Optional[float] = None,
                         slack: float = 1e-10) -> List[Violation]:
    """Sample the descent inequality on ``f`` and the extended descent
    inequality on ``phi_eps`` (strong convexity ``eps``, Lipschitz ``L + eps``).

    Points are Gaussian with a log-uniform scale in ``[1e-2, 10]``; steps are
    uniform on ``(0, 2/L]``.  A violation's ``k`` is the sample index.
    """
    L = problem.lipschitz if lipschitz is None else lipschitz
    rng = np.random.default_rng(seed)
    n = problem.dimension
    out = []
    for i in range(sample_count):
        scale = 10.0 ** rng.uniform(-2, 1)
        x = scale * rng.standard_normal(n)
        y = scale * rng.standard_normal(n)
        s = (2.0 / L) * (1.0 - rng.uniform())
        fx, gx = problem.evaluate(x)
        fy = problem.value(y)
        d = y - x
        quad = 0.5 * L * float(d @ d)
        lin = float(gx @ d)
        m = fy - fx - lin - quad
        if m > slack * (abs(fy) + abs(fx) + abs(lin) + quad + 1e-300):
            out.append(Violation(i, "descent", m))
        eps = epsilons[i % len(epsilons)]
        Le = L + eps
        gy = _phi_grad(problem, eps, y)
        z = y - s * gy
        lhs = _phi(problem, eps, z)
        px = _phi(problem, eps, x)
        lin = float(gy @ (y - x))
        g2 = float(gy @ gy)
        sc = 0.5 * eps * float(d @ d)
        coef = (Le * s * s / 2 - s) * g2
        m = lhs - px - lin - coef + sc
        if m > slack * (abs(lhs) + abs(px) + abs(lin) + abs(coef) + sc + 1e-300):
            out.append(Violation(i, f"extended-descent(eps={eps:g})", m))
    return out
