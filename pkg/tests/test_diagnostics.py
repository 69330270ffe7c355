import dataclasses
import math

import mpmath
import numpy as np
import pytest

from conftest import make_least_squares, make_logistic
from triga.diagnostics import (
    LOGISTIC_MIN_EPSILON,
    ViscosityCurve,
    audit_theorem1,
    check_descent_lemmas,
    check_energy_bounds,
    check_viscosity_lemmas,
    energy_at,
    energy_coefficients,
    viscosity_point,
)
from triga.problems import LeastSquares, QuadraticCoupling, UnsupportedProblemError, rank_deficient_least_squares
from triga.schedules import SolverParameters, TikhonovSchedule, default_delta, find_k0, select_parameters
from triga.solvers import StoppingCriteria, Trace, TrigaMethod, run


@pytest.fixture(scope="module")
def certified_qc():
    """TRIGA on QuadraticCoupling(10), p = 1, with a stride-1 window past k0."""
    prob = QuadraticCoupling(10)
    s = 1 / (1.1 * prob.lipschitz)
    sched = TikhonovSchedule.power(1.0)
    sel = select_parameters(default_delta(1.0, s), 11.0, prob.lipschitz, s=s)
    params = sel.params.with_k0(find_k0(sel.params, sched, prob.lipschitz, 10**6).k0)
    x0 = np.random.default_rng(0).standard_normal(prob.dimension)
    hi = params.k0 + 120
    trace = run(prob, TrigaMethod(sched, params), x0, StoppingCriteria(hi + 1, None), stride=1,
                store_iterates=(1, hi + 1))
    return prob, sched, params, trace, ViscosityCurve(prob, sched)


# --- viscosity points ---------------------------------------------------------------


def test_viscosity_zero_curve():
    prob = LeastSquares([[1.0]], [0.0])
    for eps in (1.0, 1e-3, 1e-9):
        assert viscosity_point(prob, eps).point[0] == 0.0


def test_viscosity_shifted_square():
    assert viscosity_point(LeastSquares([[1.0]], [1.0]), 1.0).point[0] == pytest.approx(0.5, rel=1e-15)


def test_viscosity_quadratic_pair():
    np.testing.assert_allclose(viscosity_point(QuadraticCoupling(1), 2.0).point, [0.25, 0.25], rtol=1e-14)


def test_viscosity_direct_matches_gradient_descent():
    prob = rank_deficient_least_squares(20, 30, 10, seed=3)
    eps = 0.05
    direct = viscosity_point(prob, eps).point
    x = np.zeros(prob.dimension)
    step = 2.0 / (prob.lipschitz + 2 * eps)
    for _ in range(200_000):
        g = prob.gradient(x) + eps * x
        if np.linalg.norm(g) <= 1e-13:
            break
        x -= step * g
    np.testing.assert_allclose(direct, x, atol=1e-8)


def test_viscosity_logistic_stationary():
    prob = make_logistic()
    vp = viscosity_point(prob, 0.01, tolerance=1e-10)
    assert np.linalg.norm(prob.gradient(vp.point) + 0.01 * vp.point) <= 1e-10
    with pytest.raises(ValueError):
        viscosity_point(prob, 0.1 * LOGISTIC_MIN_EPSILON)


def test_viscosity_rejects_nonpositive():
    with pytest.raises(ValueError):
        viscosity_point(QuadraticCoupling(1), 0.0)


# --- viscosity lemmas ------------------------------------------------------------------------


def test_viscosity_lemmas_degenerate_curve():
    prob = LeastSquares([[1.0]], [0.0])
    assert check_viscosity_lemmas(prob, TikhonovSchedule.power(1.0), range(1, 50)) == []


def test_viscosity_lemmas_quadratic_pair():
    prob = QuadraticCoupling(1)
    sched = TikhonovSchedule.power(1.0)
    assert check_viscosity_lemmas(prob, sched, range(1, 101)) == []
    # closed form t_k = 1/(2 + eps_k)
    curve = ViscosityCurve(prob, sched)
    for k in (1, 10, 100):
        np.testing.assert_allclose(curve(k), np.full(2, 1 / (2 + 1 / k)), rtol=1e-13)


@pytest.mark.parametrize("make", [lambda: rank_deficient_least_squares(20, 30, 10, seed=7),
                                  make_least_squares])
def test_viscosity_lemmas_least_squares(make):
    assert check_viscosity_lemmas(make(), TikhonovSchedule.power(1.5), range(1, 200)) == []


def test_viscosity_lemmas_corrupted_curve():
    prob = QuadraticCoupling(1)
    sched = TikhonovSchedule.power(1.0)
    curve = ViscosityCurve(prob, sched, transform=lambda k, x: 1.5 * x)
    found = check_viscosity_lemmas(prob, sched, range(1, 101), curve=curve)
    # eps_1 = 1 puts 1.5 x_eps exactly on the sphere of radius ||x*||: a tie, not a violation
    assert sorted({v.k for v in found if v.check == "L1-i"}) == list(range(2, 101))


def test_viscosity_lemmas_need_xstar():
    with pytest.raises(UnsupportedProblemError):
        check_viscosity_lemmas(make_logistic(), TikhonovSchedule.power(1.0), range(1, 3))


# --- energy ---------------------------------------------------------------------------------


def test_energy_collapses_to_potential():
    prob = LeastSquares(np.eye(2), [1.0, 2.0])
    sched = TikhonovSchedule.power(1.0)
    params = SolverParameters(s=0.2, delta=1.0, lam=0.75, q=1.0, a=5 / 6, b=8 / 3)
    curve = ViscosityCurve(prob, sched)
    x = curve(4)  # x_{k-1} = x_k = x_{eps_{k-1}} at k = 5
    trace = Trace(iterates={4: x.copy(), 5: x.copy()})
    en = energy_at(trace, 5, prob, sched, params, curve)
    assert en.e_mix == 0.0 and en.e_kin == 0.0
    assert en.e_total == en.e_pot > 0


def test_mu_extended_precision():
    sched = TikhonovSchedule.power(1.0)
    params = SolverParameters(s=0.25, delta=2.0, lam=1.0, q=1.0, a=1.0, b=3.0)
    mpmath.mp.dps = 50
    r = 1 / mpmath.sqrt(12)
    expect = (mpmath.sqrt(mpmath.mpf(4) / 3) - 1) + (2 / (1 - 2 * r) - 1) * r
    assert energy_coefficients(sched, params, 3)["mu_next"] == pytest.approx(float(expect), rel=1e-14)


def test_coefficients_formulas():
    sched = TikhonovSchedule.power(1.5)
    params = SolverParameters(s=0.3, delta=1.2, lam=1.0, q=2.0, a=2.0, b=4.0)
    k = 40
    c = energy_coefficients(sched, params, k)
    e = lambda j: j ** -1.5  # noqa: E731
    root = math.sqrt(0.3 * e(k))
    assert c["tau"] == pytest.approx(1.0 * root, rel=1e-14)
    assert c["beta"] == pytest.approx(2.0 * (1 - 1.2 * root), rel=1e-14)
    assert c["alpha"] == pytest.approx(3 * 0.3 / ((1 - 1.2 * root) * (1 - 0.3 * e(k))), rel=1e-14)
    theta = 6.0 * root * ((e(k) - e(k - 1)) / e(k - 1)) ** 2 - c["alpha"] * (e(k + 1) - e(k)) * (1 + c["mu_next"])
    assert c["theta"] == pytest.approx(theta, rel=1e-12)


@pytest.mark.parametrize("p", [0.6, 1.0, 1.5, 1.95])
def test_theta_positive_on_certified_window(p):
    s = 1 / 2.2
    sched = TikhonovSchedule.power(p)
    params = select_parameters(default_delta(p, s), 11.0, 2.0, s=s).params
    for k in np.unique(np.geomspace(2, 10**6, 200).astype(int)):
        c = energy_coefficients(sched, params, int(k))
        if c["regular"]:
            assert c["theta"] > 0


def test_mu_decreases_in_lambda():
    sched = TikhonovSchedule.power(1.0)
    base = SolverParameters(s=0.2, delta=1.0, lam=0.75, q=1.0, a=5 / 6, b=8 / 3)
    mus = [energy_coefficients(sched, dataclasses.replace(base, lam=lam), 50)["mu_next"]
           for lam in (0.5, 0.9, 1.1, 3.0)]
    assert mus == sorted(mus, reverse=True)


def test_energy_needs_stored_iterates(certified_qc):
    prob, sched, params, trace, curve = certified_qc
    with pytest.raises(KeyError):
        energy_at(Trace(), 5, prob, sched, params, curve)


# --- per-step audit ---------------------------------------------------------------------------


def test_audit_certified_window(certified_qc):
    prob, sched, params, trace, curve = certified_qc
    report = audit_theorem1(trace, params.k0, params.k0 + 100, prob, sched, params, curve)
    assert report.ok
    assert len(report.entries) == 101
    assert not report.pre_regime


def test_audit_flags_pre_regime(certified_qc):
    prob, sched, params, trace, curve = certified_qc
    report = audit_theorem1(trace, 10, 40, prob, sched, params, curve)
    assert report.pre_regime == list(range(10, 41))
    assert report.ok
    assert report.to_dict()["violations"] == []


def test_audit_detects_tampered_iterate(certified_qc):
    prob, sched, params, trace, curve = certified_qc
    k = params.k0 + 50
    bad = Trace(iterates=dict(trace.iterates))
    bad.iterates[k] = bad.iterates[k] + 1e-3
    report = audit_theorem1(bad, params.k0, params.k0 + 100, prob, sched, params, curve)
    assert not report.ok
    assert {e.k for e in report.violations} <= {k - 1, k, k + 1}


def test_audit_tampered_lambda_uncertified():
    # x* = 0 removes the drift term, so the audit is a pure contraction test
    prob = LeastSquares(np.diag([1.0, 3e-2, 1e-3]), np.zeros(3))
    sched = TikhonovSchedule.power(1.0)
    s = 0.25 / prob.lipschitz
    params = select_parameters(0.05, 1.0, prob.lipschitz, s=s).params
    trace = run(prob, TrigaMethod(sched, params), np.array([1.0, -2.0, 3.0]),
                StoppingCriteria(400, None), stride=1, store_iterates=True)
    tampered = dataclasses.replace(params, lam=1.5 * params.delta, k0=1)
    report = audit_theorem1(trace, 2, 300, prob, sched, tampered)
    assert report.violations
    assert all(e.margin > 0 for e in report.violations)


# --- pointwise energy bounds -------------------------------------------------------------------


def test_energy_bounds_bounds(certified_qc):
    prob, sched, params, trace, curve = certified_qc
    assert check_energy_bounds(trace, params.k0, params.k0 + 100, prob, sched, params, curve) == []


def test_energy_bounds_tampered_distance(certified_qc):
    prob, sched, params, trace, curve = certified_qc
    # pretending x_eps sits far from the iterates breaks the distance bound
    far = ViscosityCurve(prob, sched, transform=lambda k, x: x + 0.1)
    found = check_energy_bounds(trace, params.k0, params.k0 + 20, prob, sched, params, far)
    assert {v.check for v in found} & {"distance", "value"}


# --- descent inequalities -----------------------------------------------------------------------


def test_descent_x_equals_y():
    prob = QuadraticCoupling(2)
    r = np.random.default_rng(0)
    L = prob.lipschitz
    for _ in range(50):
        y = r.standard_normal(4)
        s = 2 / L * r.uniform(0.01, 1)
        g = prob.gradient(y)
        assert prob.value(y - s * g) <= prob.value(y) + (L * s * s / 2 - s) * float(g @ g) + 1e-14


@pytest.mark.parametrize("make", [lambda: QuadraticCoupling(3), make_least_squares, make_logistic])
def test_descent_lemmas_hold(make):
    assert check_descent_lemmas(make(), sample_count=300) == []


def test_descent_logistic_hundred():
    assert check_descent_lemmas(make_logistic(), sample_count=100) == []


def test_descent_understated_constant():
    prob = make_least_squares()
    found = check_descent_lemmas(prob, sample_count=300, lipschitz=0.4 * prob.lipschitz)
    assert any(v.check == "descent" for v in found)
