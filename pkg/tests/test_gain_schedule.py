import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dyngain.errors import NumericError, RejectedInput, ValidationError
from dyngain.gain_schedule import (
    ExpGain,
    ExponentialKf,
    LinearGain,
    LinearKf,
    LogisticKf,
    TabulatedGain,
    TabulatedKf,
    alpha_eval,
    alpha_rate,
    default_condition_grid,
    kf_validate,
    make_gain,
    make_kf,
    min_admissible_c,
    mu_eval,
    mu_rate,
    verify_gain_condition,
)


# ---------------------------------------------------------------- mu(t)


def test_logistic_at_t0():
    assert mu_eval(LogisticKf(400.0, 2.0), 0.0) == pytest.approx(400.0 / 401.0, abs=1e-15)


def test_exponential_at_t0_is_one():
    assert mu_eval(ExponentialKf(2.0), 0.0) == 1.0


def test_logistic_saturates():
    # high-precision oracle for 400 / (1 + 400 e^-40)
    with mpmath.workdps(50):
        exact = mpmath.mpf(400) / (1 + 400 * mpmath.exp(-40))
    assert abs(mu_eval(LogisticKf(400.0, 2.0), 20.0) - float(exact)) < 1e-10
    assert abs(mu_eval(LogisticKf(400.0, 2.0), 20.0) - 400.0) < 1e-10


def test_shifted_t0():
    f = LogisticKf(400.0, 2.0, t0=3.0)
    assert mu_eval(f, 3.0) == f.b_lo
    assert mu_eval(f, 4.0) == pytest.approx(mu_eval(LogisticKf(400.0, 2.0), 1.0), rel=1e-15)


def test_before_t0_rejected():
    for f in (LinearKf(1.0, 1.0, t0=1.0), ExponentialKf(2.0, t0=1.0), LogisticKf(400.0, 2.0, t0=1.0)):
        with pytest.raises(RejectedInput):
            mu_eval(f, 0.5)
        with pytest.raises(RejectedInput):
            mu_rate(f, 0.5)


def test_linear_rate():
    f = LinearKf(1.0, 1.0)
    assert [mu_rate(f, t) for t in (0.0, 3.0, 40.0)] == [1.0, 1.0, 1.0]


def test_logistic_rate_at_t0():
    # lam * mu0 * (1 - mu0 / k) with mu0 = 400/401, exact rational arithmetic
    mu0 = Fraction(400, 401)
    expected = float(2 * mu0 * (1 - mu0 / 400))
    assert expected == pytest.approx(1.99004, abs=1e-5)
    assert mu_rate(LogisticKf(400.0, 2.0), 0.0) == pytest.approx(expected, rel=1e-14)


def test_exponential_rate():
    assert mu_rate(ExponentialKf(2.0), 1.0) == pytest.approx(2.0 * math.e**2, rel=1e-14)
    assert mu_rate(ExponentialKf(2.0), 1.0) == pytest.approx(14.778, abs=1e-3)


def test_exponential_overflow_is_numeric_error():
    with pytest.raises(NumericError):
        mu_eval(ExponentialKf(10.0), 100.0)


def _fd(fn, x, h):
    return (fn(x + h) - fn(x - h)) / (2.0 * h)


@settings(max_examples=60, deadline=None)
@given(
    kind=st.sampled_from(["linear", "exponential", "logistic"]),
    a=st.floats(0.2, 5.0),
    b=st.floats(0.2, 5.0),
    t=st.floats(0.01, 5.0),
)
def test_mu_rate_matches_finite_difference(kind, a, b, t):
    f = {"linear": LinearKf(a, b), "exponential": ExponentialKf(a), "logistic": LogisticKf(50.0 * a, b)}[kind]
    fd = _fd(lambda x: mu_eval(f, x), t, 1e-6)
    exact = mu_rate(f, t)
    assert abs(fd - exact) <= 1e-6 * max(1.0, abs(exact))


def test_mu_rate_second_order_convergence():
    f = LogisticKf(400.0, 2.0)
    t = 1.3
    e1 = abs(_fd(lambda x: mu_eval(f, x), t, 1e-2) - mu_rate(f, t))
    e2 = abs(_fd(lambda x: mu_eval(f, x), t, 5e-3) - mu_rate(f, t))
    assert 3.5 < e1 / e2 < 4.5


# ---------------------------------------------------------------- kf_validate


def test_validate_linear_constants():
    rep = kf_validate(LinearKf(1.0, 1.0), 50.0, 10_000)
    assert (rep.b_lo, rep.b_hi, rep.b_tilde) == (1.0, math.inf, 1.0)


def test_validate_linear_general_constants():
    rep = kf_validate(LinearKf(3.0, 2.0), 10.0, 1000)
    assert (rep.b_lo, rep.b_hi, rep.b_tilde) == (2.0, math.inf, 3.0 / 4.0)


def test_validate_logistic_constants():
    rep = kf_validate(LogisticKf(400.0, 2.0), 50.0, 10_000)
    assert rep.b_lo == 400.0 / 401.0
    assert rep.b_hi == 400.0
    assert rep.b_tilde == 2.0


def test_validate_exponential_constants():
    rep = kf_validate(ExponentialKf(3.0), 10.0, 10_000)
    assert (rep.b_lo, rep.b_hi, rep.b_tilde) == (1.0, math.inf, 3.0)
    assert rep.max_ratio <= 3.0 + 1e-9


@pytest.mark.parametrize("f", [LinearKf(1.0, 1.0), ExponentialKf(2.0), LogisticKf(400.0, 2.0)])
def test_grid_invariants(f):
    t = np.linspace(0.0, 50.0, 10_000)
    mu = np.array([mu_eval(f, ti) for ti in t])
    rate = np.array([mu_rate(f, ti) for ti in t])
    assert np.all(mu >= f.b_lo)
    assert np.all(mu <= f.b_hi)
    assert np.all(rate <= f.b_tilde * mu**2 + 1e-9)
    if math.isinf(f.b_hi):
        assert np.all(np.diff(mu) > 0.0)
    else:
        gap = np.array([f.headroom(ti) for ti in t])
        assert np.all(gap > 0.0)
        assert np.all(np.diff(gap) < 0.0)


def test_logistic_headroom_matches_high_precision():
    f = LogisticKf(400.0, 2.0)
    with mpmath.workdps(60):
        for t in (0.0, 5.0, 25.0, 50.0):
            e = 400 * mpmath.exp(-2 * mpmath.mpf(t))
            exact = 400 - mpmath.mpf(400) / (1 + e)
            assert f.headroom(t) == pytest.approx(float(exact), rel=1e-12)


def test_logistic_never_exceeds_k():
    f = LogisticKf(400.0, 2.0)
    assert max(mu_eval(f, t) for t in np.linspace(0, 200, 2001)) <= 400.0


def test_validate_rejects_bad_arguments():
    with pytest.raises(RejectedInput):
        kf_validate(LinearKf(1.0, 1.0), 0.0, 100)
    with pytest.raises(RejectedInput):
        kf_validate(LinearKf(1.0, 1.0), 1.0, 1)


def test_validate_reports_rate_violation():
    # declared b_tilde below the true sup of rate / mu^2 on the grid
    f = TabulatedKf(times=(0.0, 1.0, 2.0), values=(1.0, 2.0, 3.0), b_tilde_declared=0.1)
    with pytest.raises(ValidationError) as exc:
        kf_validate(f, 2.0, 200)
    assert "b_tilde" in exc.value.clause
    assert exc.value.witness is not None


def test_validate_reports_non_monotone():
    f = TabulatedKf(times=(0.0, 1.0, 2.0), values=(1.0, 2.0, 1.5), b_tilde_declared=10.0)
    with pytest.raises(ValidationError) as exc:
        kf_validate(f, 2.0, 200)
    assert exc.value.clause == "strictly increasing"
    assert 1.0 <= exc.value.witness <= 2.0


def test_tabulated_rejects_inverted_range():
    with pytest.raises(ValidationError):
        TabulatedKf(times=(0.0, 1.0), values=(1.0, 2.0), b_hi_declared=0.5)


def test_tabulated_is_unverified():
    f = TabulatedKf(times=(0.0, 1.0, 2.0), values=(1.0, 2.0, 3.0))
    assert kf_validate(f, 2.0, 100).verified_constants is False
    assert kf_validate(LogisticKf(400.0, 2.0), 2.0, 100).verified_constants is True


def test_kf_parameter_validation():
    for bad in (lambda: LinearKf(0.0, 1.0), lambda: LinearKf(1.0, 0.0), lambda: ExponentialKf(-1.0),
                lambda: LogisticKf(0.0, 2.0), lambda: LogisticKf(400.0, 0.0)):
        with pytest.raises(RejectedInput):
            bad()


def test_make_kf_factory():
    assert make_kf("logistic", {"k": 400.0, "lam": 2.0}) == LogisticKf(400.0, 2.0)
    with pytest.raises(RejectedInput):
        make_kf("cubic", {})


# ---------------------------------------------------------------- alpha(s)


def test_alpha_values():
    assert alpha_eval(LinearGain(1.0), 0.9975) == 0.9975
    assert alpha_eval(LinearGain(3.0), 0.0) == 0.0
    assert alpha_eval(ExpGain(2.0, 1.0), 0.0) == 0.0
    assert alpha_eval(ExpGain(2.0, 1.0), 1.0) == pytest.approx(2.0 * math.e, rel=1e-15)
    assert alpha_eval(ExpGain(2.0, 1.0), 1.0) == pytest.approx(5.4366, abs=1e-4)


def test_alpha_rates():
    assert alpha_rate(LinearGain(8.0), 0.3) == 8.0
    assert alpha_rate(LinearGain(8.0), 300.0) == 8.0
    assert alpha_rate(ExpGain(2.0, 1.0), 1.0) == pytest.approx(4.0 * math.e, rel=1e-15)
    assert alpha_rate(ExpGain(2.0, 1.0), 1.0) == pytest.approx(10.873, abs=1e-3)


def test_alpha_domain():
    with pytest.raises(RejectedInput):
        alpha_eval(LinearGain(1.0), -0.1)
    with pytest.raises(RejectedInput):
        alpha_rate(LinearGain(1.0), 0.0)


def test_alpha_rate_finite_difference_linear():
    g = LinearGain(1.0)
    fd = _fd(lambda s: alpha_eval(g, s), 0.5, 1e-6)
    assert abs(alpha_rate(g, 0.5) - fd) < 1e-8


@settings(max_examples=60, deadline=None)
@given(k=st.floats(0.1, 10.0), lam=st.floats(0.01, 3.0), s=st.floats(0.05, 5.0))
def test_exp_gain_rate_matches_finite_difference(k, lam, s):
    g = ExpGain(k, lam)
    fd = _fd(lambda x: alpha_eval(g, x), s, 1e-6)
    exact = alpha_rate(g, s)
    assert abs(fd - exact) <= 1e-6 * max(1.0, abs(exact))


def test_gain_parameter_validation():
    with pytest.raises(RejectedInput):
        LinearGain(0.0)
    with pytest.raises(RejectedInput):
        LinearGain(1.0, sigma=1.0)
    with pytest.raises(RejectedInput):
        ExpGain(1.0, 0.0)
    with pytest.raises(RejectedInput):
        make_gain("quadratic", {})


def test_tabulated_gain_anchor():
    g = TabulatedGain((0.0, 1.0, 2.0), (0.0, 1.0, 4.0))
    assert g.value(0.0) == 0.0
    assert g.verified is False
    with pytest.raises(RejectedInput):
        TabulatedGain((0.0, 1.0), (0.5, 1.0))


# ---------------------------------------------------------------- gain condition


def test_min_admissible_c():
    assert min_admissible_c(2.0, 0.5) == 8.0
    assert min_admissible_c(1.0, 0.999) == pytest.approx(2.002, abs=1e-3)
    with pytest.raises(RejectedInput):
        min_admissible_c(1.0, 1.0)
    with pytest.raises(RejectedInput):
        min_admissible_c(0.0, 0.5)


def test_linear_gain_at_threshold_holds_with_zero_margin():
    rep = verify_gain_condition(LinearGain(8.0, sigma=0.5), 2.0, s_grid=np.geomspace(0.01, 1e4, 300))
    assert rep.holds
    assert rep.worst_margin == 0.0
    assert rep.holds_all_s is True


def test_linear_unit_gain_fails_with_closed_form_margin():
    # 0.5 * sigma / b_tilde * c^2 - c = 0.5 * 0.5 / 2 - 1
    rep = verify_gain_condition(LinearGain(1.0, sigma=0.5), 2.0, s_grid=[0.5, 1.0, 7.0])
    assert not rep.holds
    assert rep.worst_margin == pytest.approx(-0.875, abs=1e-15)
    assert rep.holds_all_s is False


def test_exp_gain_holds_on_grid():
    rep = verify_gain_condition(ExpGain(8.0, 1.0, sigma=0.5), 2.0, s_grid=np.linspace(0.1, 10.0, 100))
    assert rep.holds
    assert rep.holds_all_s is True


@settings(max_examples=100, deadline=None)
@given(
    c=st.floats(0.05, 50.0),
    b_tilde=st.floats(0.05, 10.0),
    sigma=st.floats(0.01, 0.99),
    lo=st.floats(1e-3, 10.0),
)
def test_linear_grid_verdict_agrees_with_closed_form(c, b_tilde, sigma, lo):
    rep = verify_gain_condition(LinearGain(c, sigma=sigma), b_tilde, s_grid=np.geomspace(lo, 100.0 * lo, 17))
    threshold = 2.0 * b_tilde / sigma
    if abs(c - threshold) > 1e-9 * threshold:
        assert rep.holds == (c >= threshold)


@settings(max_examples=50, deadline=None)
@given(b_tilde=st.floats(0.05, 10.0), sigma=st.floats(0.01, 0.99), lo=st.floats(1e-3, 100.0))
def test_min_admissible_c_always_passes(b_tilde, sigma, lo):
    c = min_admissible_c(b_tilde, sigma)
    rep = verify_gain_condition(LinearGain(c, sigma=sigma), b_tilde, s_grid=np.geomspace(lo, 1e3 * lo, 33))
    assert rep.holds


def test_default_grid_covers_visited_range():
    grid = default_condition_grid(LogisticKf(400.0, 2.0))
    assert grid[0] == pytest.approx(400.0 / 401.0)
    assert grid[-1] == pytest.approx(400.0)
    assert grid.size == 512
    grid = default_condition_grid(ExponentialKf(1.0))
    assert grid[-1] == pytest.approx(1e3)


def test_range_truncation_flag():
    rep = verify_gain_condition(LinearGain(4.0), 1.0, kf=ExponentialKf(1.0))
    assert rep.holds and rep.range_truncated
    rep = verify_gain_condition(LinearGain(1.0), 2.0, kf=LogisticKf(400.0, 2.0))
    assert not rep.holds and not rep.range_truncated


def test_condition_rejects_bad_inputs():
    with pytest.raises(RejectedInput):
        verify_gain_condition(LinearGain(1.0), 0.0, s_grid=[1.0])
    with pytest.raises(RejectedInput):
        verify_gain_condition(LinearGain(1.0), 1.0, s_grid=[])
    with pytest.raises(RejectedInput):
        verify_gain_condition(LinearGain(1.0), 1.0, s_grid=[0.0, 1.0])
    with pytest.raises(RejectedInput):
        verify_gain_condition(LinearGain(1.0), 1.0)
