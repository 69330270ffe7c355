"""Tikhonov schedules, parameter admissibility and the parameter selector.

A schedule is the vanishing sequence ``eps_k`` that weights the Tikhonov
term ``(eps_k / 2) * ||x||^2``.  Two families are supported:

* ``power(p)``: ``eps_k = k**(-p)`` with ``0 < p < 2``;
* ``critical(c)``: ``eps_k = c * k**(-2)``.

The TRIGA iteration is governed by the constants ``(s, delta, lam, q, a, b)``.
:func:`check_K1` evaluates the constant-level necessary constraints on them,
:func:`check_K0_at` the per-index inequality system that drives the energy
decay, and :func:`find_k0` scans for the index from which the per-index
system holds.  Certification is empirical: it is established on a finite
horizon and the horizon is always reported.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

__all__ = [
    "TikhonovSchedule",
    "SolverParameters",
    "K1Report",
    "K0Report",
    "Certificate",
    "ParameterSelection",
    "SelectionError",
    "CertificationError",
    "epsilon_at",
    "default_delta",
    "check_K1",
    "k0_margins",
    "check_K0_at",
    "find_k0",
    "select_parameters",
    "table_row",
    "critical_c_bound",
    "certify_parameters",
    "CertifiedParameters",
    "certify_across_scales",
    "ScaledCertificate",
    "SCALE_GRID",
    "DELTA_FACTORS",
]

K1_NAMES = ("K1(i)", "K1(ii)", "K1(iii)", "K1(iv)")
K0_NAMES = ("K0(i)", "K0(ii)", "K0(iii)", "K0(iv)")


class SelectionError(ValueError):
    """No admissible parameter tuple for the requested table row."""


class CertificationError(RuntimeError):
    """The per-index system could not be certified on the scanned horizon."""

    def __init__(self, message, condition=None, last_failure=None):
        super().__init__(message)
        self.condition = condition
        self.last_failure = last_failure


@dataclass(frozen=True)
class TikhonovSchedule:
    """Vanishing regularization weights ``eps_k = coefficient * k**(-exponent)``.

    Use the :meth:`power` and :meth:`critical` constructors.
    """

    kind: str
    exponent: float
    coefficient: float = 1.0

    def __post_init__(self):
        if self.kind not in ("power", "critical"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.coefficient <= 0:
            raise ValueError("schedule coefficient must be positive")
        if self.kind == "power" and not 0 < self.exponent < 2:
            raise ValueError(f"power exponent must lie in (0, 2), got {self.exponent}")
        if self.kind == "critical" and self.exponent != 2:
            raise ValueError("critical schedules have exponent 2")

    @classmethod
    def power(cls, p: float) -> "TikhonovSchedule":
        """``eps_k = k**(-p)``.  ``p == 2`` yields ``critical(1)``."""
        if p == 2:
            return cls.critical(1.0)
        return cls("power", float(p), 1.0)

    @classmethod
    def critical(cls, c: float) -> "TikhonovSchedule":
        """``eps_k = c / k**2``."""
        return cls("critical", 2.0, float(c))

    @property
    def p(self) -> float:
        return self.exponent

    @property
    def c(self) -> float:
        return self.coefficient

    def __call__(self, k):
        return epsilon_at(self, k)

    def ratio(self, k):
        """``eps_{k+1} / eps_k`` evaluated without cancellation."""
        k = np.asarray(k, dtype=float)
        return np.exp(-self.exponent * np.log1p(1.0 / k))

    def inv_sqrt_increment(self, s: float, k):
        """``1/sqrt(s eps_{k+1}) - 1/sqrt(s eps_k)``, stable for large ``k``."""
        k = np.asarray(k, dtype=float)
        half = 0.5 * self.exponent
        return k**half * np.expm1(half * np.log1p(1.0 / k)) / math.sqrt(s * self.coefficient)

    def describe(self) -> str:
        if self.kind == "power":
            return f"power:p={self.exponent!r}"
        return f"critical:c={self.coefficient!r}"

    @classmethod
    def parse(cls, text: str) -> "TikhonovSchedule":
        """Inverse of :meth:`describe` (``power:p=1.5`` / ``critical:c=9``)."""
        kind, _, arg = text.partition(":")
        key, _, value = arg.partition("=")
        if kind == "power" and key == "p":
            return cls.power(float(value))
        if kind == "critical" and key == "c":
            return cls.critical(float(value))
        raise ValueError(f"cannot parse schedule {text!r}")


def epsilon_at(schedule: TikhonovSchedule, k):
    """Evaluate ``eps_k``; ``k`` may be an integer or an integer array (``k >= 1``)."""
    if isinstance(k, (int, np.integer)):
        if k < 1:
            raise ValueError("schedule index starts at k = 1")
        return schedule.coefficient * float(k) ** (-schedule.exponent)
    karr = np.asarray(k)
    if np.any(karr < 1):
        raise ValueError("schedule index starts at k = 1")
    out = schedule.coefficient * np.asarray(karr, dtype=float) ** (-schedule.exponent)
    return float(out) if np.ndim(out) == 0 else out


def default_delta(p: float, s: float) -> float:
    """Damping constant ``2**(p/2) / sqrt(s)``."""
    if s <= 0:
        raise ValueError("step size must be positive")
    return 2.0 ** (p / 2.0) / math.sqrt(s)


@dataclass(frozen=True)
class SolverParameters:
    """TRIGA constants.  ``lam`` is the energy weight written lambda in the analysis."""

    s: float
    delta: float
    lam: float
    q: float
    a: float
    b: float
    k0: Optional[int] = None

    def __post_init__(self):
        for name in ("s", "delta", "lam", "q", "a", "b"):
            if not getattr(self, name) > 0:
                raise ValueError(f"parameter {name} must be positive")

    def with_k0(self, k0: int) -> "SolverParameters":
        return replace(self, k0=int(k0))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SolverParameters":
        k0 = data.get("k0")
        return cls(
            s=float(data["s"]),
            delta=float(data["delta"]),
            lam=float(data["lam"]),
            q=float(data["q"]),
            a=float(data["a"]),
            b=float(data["b"]),
            k0=None if k0 is None else int(k0),
        )


@dataclass
class K1Report:
    """Signed slacks of the constant-level constraints; negative means satisfied."""

    slacks: np.ndarray
    names: tuple = K1_NAMES

    @property
    def passed(self) -> np.ndarray:
        return self.slacks < 0

    @property
    def ok(self) -> bool:
        return bool(np.all(self.passed))

    def failed(self) -> list:
        return [n for n, p in zip(self.names, self.passed) if not p]

    def to_dict(self) -> dict:
        return {
            n: {"slack": float(v), "passed": bool(v < 0)}
            for n, v in zip(self.names, self.slacks)
        }


def check_K1(params: SolverParameters, lipschitz: float) -> K1Report:
    """Constant-level constraints (i)-(iv) as signed slacks.

    (i)   (1+q) delta / (2+q) < lam < delta
    (ii)  (1 + a(1-q)) lam - a delta < 0
    (iii) ((1-b)/b) lam^2 + delta lam - 1 < 0
    (iv)  L s < q / (q+1)
    """
    s, d, lam, q, a, b = params.s, params.delta, params.lam, params.q, params.a, params.b
    slack_i = max((1 + q) * d / (2 + q) - lam, lam - d)
    slack_ii = (1 + a * (1 - q)) * lam - a * d
    slack_iii = (1 - b) / b * lam**2 + d * lam - 1
    slack_iv = lipschitz * s - q / (q + 1)
    return K1Report(np.array([slack_i, slack_ii, slack_iii, slack_iv]))


def k0_margins(params: SolverParameters, schedule: TikhonovSchedule, lipschitz: float, k):
    """Left-hand sides of the per-index system at indices ``k``.

    Returns ``(margins, regular)`` where ``margins`` has shape ``(4, len(k))``
    and ``regular`` marks indices with ``1 - delta sqrt(s eps_k) > 0`` and
    ``1 - s eps_k > 0``.  Irregular entries are set to ``+inf``.
    """
    k = np.atleast_1d(np.asarray(k, dtype=float))
    s, d, lam, q, a, b = params.s, params.delta, params.lam, params.q, params.a, params.b
    L = lipschitz
    eps = schedule.coefficient * k ** (-schedule.exponent)
    eps_next = eps * schedule.ratio(k)
    root = np.sqrt(s * eps)
    root_next = np.sqrt(s * eps_next)
    damp = 1.0 - d * root
    regular = (damp > 0) & (1.0 - s * eps > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        incr = schedule.inv_sqrt_increment(s, k)
        m1 = (1 + q) * (incr + d / damp - lam) - lam * np.sqrt(schedule.ratio(k))
        m2 = (1 - b) / b * lam**2 + d * lam / damp - 1
        m3 = (1 + a * (1 - q)) * lam / a - d + (1 + q) * incr + q * d**2 * root_next / damp
        m4 = L * s * (1 + lam * root_next) + q * ((L + eps) * s - 1)
    margins = np.vstack([m1, m2, m3, m4])
    margins[:, ~regular] = np.inf
    return margins, regular


@dataclass
class K0Report:
    k: int
    margins: np.ndarray
    pre_regime: bool
    names: tuple = K0_NAMES

    @property
    def passed(self) -> np.ndarray:
        return self.margins <= 0

    @property
    def ok(self) -> bool:
        return (not self.pre_regime) and bool(np.all(self.passed))

    def failed(self) -> list:
        return [n for n, p in zip(self.names, self.passed) if not p]

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "pre_regime": self.pre_regime,
            "conditions": {
                n: {"margin": float(v), "passed": bool(v <= 0)}
                for n, v in zip(self.names, self.margins)
            },
        }


def check_K0_at(params, schedule, lipschitz, k: int) -> K0Report:
    """Evaluate the per-index system verbatim at a single index ``k``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    margins, regular = k0_margins(params, schedule, lipschitz, [k])
    return K0Report(int(k), margins[:, 0], pre_regime=not bool(regular[0]))


@dataclass
class Certificate:
    """Outcome of :func:`find_k0`.

    ``monotone_tail`` records whether the K0(i) left side is nonincreasing on
    ``[k0, verified_up_to]``; when it is not, extrapolating past the horizon
    is not justified and ``downgraded`` is set.
    """

    k0: int
    verified_up_to: int
    exhaustive: bool
    worst_margins: np.ndarray
    monotone_tail: bool
    names: tuple = K0_NAMES

    @property
    def downgraded(self) -> bool:
        return not self.monotone_tail

    def to_dict(self) -> dict:
        return {
            "k0": self.k0,
            "verified_up_to": self.verified_up_to,
            "exhaustive": self.exhaustive,
            "monotone_tail": self.monotone_tail,
            "worst_margins": {n: float(v) for n, v in zip(self.names, self.worst_margins)},
        }


# Exhaustive scans are cheap up to this horizon; beyond it a geometric grid
# plus an exhaustive prefix is used.
_EXHAUSTIVE_LIMIT = 5_000_000
_CHUNK = 1_000_000


def _scan_indices(k_max: int):
    if k_max <= _EXHAUSTIVE_LIMIT:
        for lo in range(1, k_max + 1, _CHUNK):
            yield np.arange(lo, min(lo + _CHUNK, k_max + 1), dtype=np.int64)
        return
    yield np.arange(1, _EXHAUSTIVE_LIMIT + 1, dtype=np.int64)
    grid = []
    k = _EXHAUSTIVE_LIMIT
    while k < k_max:
        k = min(int(math.ceil(1.1 * k)), k_max)
        grid.append(k)
    yield np.asarray(grid, dtype=np.int64)


def find_k0(params, schedule, lipschitz, k_max: int) -> Certificate:
    """Smallest ``k0`` such that the per-index system holds on ``[k0, k_max]``.

    Every index up to ``k_max`` is checked when ``k_max`` is at most five
    million; past that, a ``1.1``-geometric grid continues the scan.
    """
    if k_max < 2:
        raise ValueError("k_max must be >= 2")
    if not params.lam < params.delta:
        raise CertificationError(
            "lam must be strictly below delta; K0(i) fails for every k",
            condition="K0(i)",
        )
    last_bad = 0
    last_bad_cond = None
    ks_all, m1_all, worst = [], [], np.full(4, -np.inf)
    for ks in _scan_indices(k_max):
        margins, _ = k0_margins(params, schedule, lipschitz, ks)
        bad = np.any(margins > 0, axis=0)
        if np.any(bad):
            idx = np.flatnonzero(bad)[-1]
            last_bad = int(ks[idx])
            last_bad_cond = [n for n, v in zip(K0_NAMES, margins[:, idx]) if not v <= 0]
            ks_all, m1_all, worst = [], [], np.full(4, -np.inf)
            tail = slice(idx + 1, None)
        else:
            tail = slice(None)
        if ks[tail].size:
            ks_all.append(ks[tail])
            m1_all.append(margins[0, tail])
            worst = np.maximum(worst, margins[:, tail].max(axis=1))
    if last_bad >= k_max:
        raise CertificationError(
            f"per-index system fails up to k_max={k_max}; last violation at "
            f"k={last_bad} on {', '.join(last_bad_cond)}",
            condition=last_bad_cond[0],
            last_failure=last_bad,
        )
    m1 = np.concatenate(m1_all)
    # roundoff-level wiggle in a flat tail is not a monotonicity violation
    tol = 1e-12 * (1.0 + np.abs(m1[:-1]))
    monotone = bool(np.all(np.diff(m1) <= tol))
    return Certificate(
        k0=last_bad + 1,
        verified_up_to=int(k_max),
        exhaustive=k_max <= _EXHAUSTIVE_LIMIT,
        worst_margins=worst,
        monotone_tail=monotone,
    )


# ---------------------------------------------------------------------------
# Parameter selection over the admissible regions
# ---------------------------------------------------------------------------


@dataclass
class ParameterSelection:
    params: SolverParameters
    row: int
    step_bound: float
    intervals: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "row": self.row,
            "step_bound": self.step_bound,
            "intervals": {k: list(v) for k, v in self.intervals.items()},
        }


def table_row(delta: float, q: float, wide_a: bool = False) -> int:
    """Row number (1-6) for ``(delta, q)``.

    For ``q <= 1`` two rows apply: the bounded ``a`` row (1 or 4) is the
    default and ``wide_a=True`` selects the ``a > 1/q`` row (2 or 5).
    """
    if delta <= 0 or q <= 0:
        raise ValueError("delta and q must be positive")
    if delta < 2:
        return (2 if wide_a else 1) if q <= 1 else 3
    return (5 if wide_a else 4) if q <= 1 else 6


def _unbounded_pick(lower: float) -> float:
    return max(2.0 * lower, lower + 1.0)


def _lambda_plus(delta: float, b: float) -> float:
    return b / (2 * (b - 1)) * (delta + math.sqrt(delta**2 + 4 * (1 - b) / b))


def _a_hat(delta: float, q: float) -> float:
    r = 1 + math.sqrt(1 - 4 / delta**2)
    return max((q + 1) / (q**2 + q + 1), r / (2 - r * (1 - q)))


def _b_hat(delta: float, q: float, a: float) -> float:
    den = delta**2 * a * (a * q - 1) + (1 + a * (1 - q)) ** 2
    if den <= 0:
        raise SelectionError(f"b lower bound undefined (denominator {den:.3g} <= 0)")
    return (a * delta) ** 2 / den


def select_parameters(
    delta: float,
    q: float,
    lipschitz: float,
    s: Optional[float] = None,
    row: Optional[int] = None,
) -> ParameterSelection:
    """Pick ``(a, b, lam)`` from the admissible intervals of the table row.

    Bounded intervals contribute their midpoint; intervals unbounded above
    contribute ``max(2 * lower, lower + 1)``.  The step bound
    ``q / ((q+1) L)`` is returned alongside; if ``s`` is omitted,
    ``0.9`` times the bound is used.
    """
    if row is None:
        row = table_row(delta, q)
    expected = {1: (True, True), 2: (True, True), 3: (True, False),
                4: (False, True), 5: (False, True), 6: (False, False)}[row]
    if (delta < 2) != expected[0] or (q <= 1) != expected[1]:
        raise SelectionError(f"row {row} does not admit delta={delta}, q={q}")

    step_bound = q / ((q + 1) * lipschitz)
    if s is None:
        s = 0.9 * step_bound
    lam_lo_base = (1 + q) * delta / (2 + q)
    intervals = {}

    if row in (1, 4):
        a_lo = (q + 1) / (q**2 + q + 1) if row == 1 else _a_hat(delta, q)
        a_hi = 1 / q
        if not a_lo < a_hi:
            raise SelectionError(f"row {row}: empty a-interval ({a_lo:.6g}, {a_hi:.6g}]")
        a = 0.5 * (a_lo + a_hi)
        intervals["a"] = (a_lo, a_hi)
    elif row in (2, 5):
        a_lo = 1 / q
        a = _unbounded_pick(a_lo)
        intervals["a"] = (a_lo, math.inf)
    else:
        a_lo = 1 / (q - 1)
        a = _unbounded_pick(a_lo)
        intervals["a"] = (a_lo, math.inf)

    if row <= 3:
        b_lo = 4 / (4 - delta**2)
    elif row == 6:
        b_lo = delta**2
    else:
        b_lo = _b_hat(delta, q, a)
    b = _unbounded_pick(b_lo)
    intervals["b"] = (b_lo, math.inf)

    lam_hi = a * delta / (1 + a * (1 - q)) if row in (1, 4) else delta
    lam_lo = lam_lo_base if row <= 3 else max(lam_lo_base, _lambda_plus(delta, b))
    # for delta >= 2 the lower lambda end decreases in b towards
    # (delta + sqrt(delta^2 - 4)) / 2 < delta, so doubling b may open the interval
    doublings = 0
    while row > 3 and not lam_lo < lam_hi and doublings < 60:
        b *= 2.0
        doublings += 1
        lam_lo = max(lam_lo_base, _lambda_plus(delta, b))
    if not lam_lo < lam_hi:
        raise SelectionError(
            f"row {row}: empty lambda-interval ({lam_lo:.6g}, {lam_hi:.6g})"
        )
    lam = 0.5 * (lam_lo + lam_hi)
    intervals["lam"] = (lam_lo, lam_hi)

    params = SolverParameters(s=s, delta=delta, lam=lam, q=q, a=a, b=b)
    report = check_K1(params, lipschitz)
    if not report.ok:
        raise SelectionError(f"row {row}: selected tuple violates {', '.join(report.failed())}")
    return ParameterSelection(params, row, step_bound, intervals)


def critical_c_bound(params: SolverParameters) -> float:
    """Smallest admissible coefficient for the critical schedule ``c / k**2``.

    With ``m`` the minimum of the three gaps below, any ``c > 1 / (s m^2)``
    is admissible::

        (2+q) lam / (1+q) - delta
        (delta - (1 + a(1-q)) lam / a) / (1+q)
        delta - lam
    """
    s, d, lam, q, a = params.s, params.delta, params.lam, params.q, params.a
    gaps = (
        (2 + q) * lam / (1 + q) - d,
        (d - (1 + a * (1 - q)) * lam / a) / (1 + q),
        d - lam,
    )
    m = min(gaps)
    if m <= 0:
        raise SelectionError(
            f"no admissible c: gap minimum {m:.6g} <= 0; choose lam closer to its upper range"
        )
    return 1.0 / (s * m * m)


# Multipliers of the default damping tried by certify_parameters.
DELTA_FACTORS = (1.0, 0.5, 2.0, 0.3, 3.0, 0.2, 5.0, 0.1, 8.0, 0.05)


@dataclass
class CertifiedParameters:
    selection: ParameterSelection
    certificate: Certificate
    delta_factor: Optional[float]

    @property
    def params(self) -> SolverParameters:
        return self.selection.params.with_k0(self.certificate.k0)

    def to_dict(self) -> dict:
        return {
            "selection": self.selection.to_dict(),
            "certificate": self.certificate.to_dict(),
            "delta_factor": self.delta_factor,
        }


def certify_parameters(
    schedule: TikhonovSchedule,
    lipschitz: float,
    s: float,
    q: float,
    delta: Optional[float] = None,
    k_max: int = 1_000_000,
    factors=DELTA_FACTORS,
) -> CertifiedParameters:
    """Select and certify a parameter tuple for ``schedule``.

    With ``delta`` given, only that damping is tried.  Otherwise every
    multiple ``f * default_delta(p, s)`` for ``f`` in ``factors`` is selected
    and scanned, and the tuple with the smallest ``k0`` wins (ties go to the
    earlier factor).  Raises the last selection or certification error when
    nothing certifies.
    """
    base = default_delta(schedule.exponent, s)
    trials = [(None, delta)] if delta is not None else [(f, f * base) for f in factors]
    best, last_error = None, None
    for factor, d in trials:
        try:
            sel = select_parameters(d, q, lipschitz, s=s)
            cert = find_k0(sel.params, schedule, lipschitz, k_max)
        except (SelectionError, CertificationError) as exc:
            last_error = exc
            continue
        if best is None or cert.k0 < best.certificate.k0:
            best = CertifiedParameters(sel, cert, factor)
    if best is None:
        raise last_error
    return best


# Lipschitz scales tried by certify_across_scales, nearest to unit scale first.
SCALE_GRID = (1.0, 10.0, 0.1, 0.01, 1e-3, 1e-4, 1e-5, 1e-6)


@dataclass
class ScaledCertificate:
    lipschitz: float
    selection: ParameterSelection
    certificate: Certificate

    def to_dict(self) -> dict:
        return {"lipschitz": self.lipschitz, "selection": self.selection.to_dict(),
                "certificate": self.certificate.to_dict()}


def certify_across_scales(
    delta: float,
    q: float,
    schedule: TikhonovSchedule,
    row: Optional[int] = None,
    scales=SCALE_GRID,
    k_max: int = 1_000_000,
) -> ScaledCertificate:
    """Certify a fixed ``(delta, q, row)`` at the first workable problem scale.

    The per-index system depends on ``delta sqrt(s)``, so a fixed ``delta``
    certifies or not depending on the Lipschitz scale ``L`` (with
    ``s = 0.9 q / ((q+1) L)``).  Scales are tried in order; the first that
    certifies wins.  Raises the last error when none does.
    """
    last_error = None
    for L in scales:
        try:
            sel = select_parameters(delta, q, L, row=row)
            cert = find_k0(sel.params, schedule, L, k_max)
        except (SelectionError, CertificationError) as exc:
            last_error = exc
            continue
        return ScaledCertificate(L, sel, cert)
    raise last_error
