import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from commslide.schedule import (
    InnerSchedule,
    OuterSchedule,
    ScheduleError,
    dcs_convex_schedule,
    dcs_strongly_convex_schedule,
    dpd_schedule,
    inner_report,
    sdcs_convex_schedule,
    sdcs_strongly_convex_schedule,
    validate_inner,
    validate_outer,
)


def test_dpd_schedule_values():
    s = dpd_schedule(3.0, 7)
    np.testing.assert_array_equal(s.eta, 6.0)
    np.testing.assert_array_equal(s.tau, 3.0)
    np.testing.assert_array_equal(dpd_schedule(1.0, 5).alpha, 1.0)
    assert validate_outer(s, 3.0).passed


def test_dcs_convex_T_and_inner_weights():
    outer, inner = dcs_convex_schedule(2.0, 2, 1.0, 8, 1.0)
    np.testing.assert_array_equal(outer.T, 4)
    assert inner.beta(1, 5.0) == 0.5
    assert inner.lam(4) == 5
    assert validate_outer(outer, 2.0).passed
    assert all(validate_inner(inner, e, 0.0, 1.0, int(T)) for e, T in zip(outer.eta, outer.T))


def test_dcs_strongly_convex_values():
    outer, inner = dcs_strongly_convex_schedule(2.0, 1.0, 1.5, 3, 1.0, 5, 1.0)
    assert outer.alpha[0] == 0.5 and outer.theta[0] == 2.0
    assert outer.eta[2] == 3.0
    for eta in outer.eta:
        assert inner.beta(1, eta) == pytest.approx(2.0 / (eta * 1.0))


def test_sdcs_convex_values():
    o0, _ = sdcs_convex_schedule(2.0, 2, 1.0, 0.0, 8, 1.0)
    d0, _ = dcs_convex_schedule(2.0, 2, 1.0, 8, 1.0)
    assert o0.to_dict() | {"mode": None} == d0.to_dict() | {"mode": None}
    o, _ = sdcs_convex_schedule(2.0, 2, 1.0, 1.0, 8, 1.0)
    np.testing.assert_array_equal(o.T, 8)
    np.testing.assert_array_equal(o.eta, 4.0)


def test_sdcs_strongly_convex_values():
    mu, C, Ln = 0.5, 1.0, 2.0
    outer, inner = sdcs_strongly_convex_schedule(mu, C, Ln, 2, 1.0, 0.0, 6, 1.0)
    assert outer.tau[0] == pytest.approx(2 * Ln**2 * C / mu)
    # with mu large both max(., 1) branches sit at 1 and the counts differ by sqrt(2)
    st, _ = sdcs_strongly_convex_schedule(20.0, C, Ln, 2, 1.0, 0.0, 100, 1.0)
    det, _ = dcs_strongly_convex_schedule(20.0, C, Ln, 2, 1.0, 100, 1.0)
    assert (st.T[0], det.T[0]) == (15, 10)
    assert 0.5 <= st.T[0] / det.T[0] <= 2.0
    assert validate_outer(outer, Ln, mu, C).passed


def test_strongly_convex_theta_eta_ds_zero_margin():
    outer, _ = dcs_strongly_convex_schedule(0.7, 1.3, 2.0, 4, 1.0, 12, 2.0)
    r = validate_outer(outer, 2.0, 0.7, 1.3)["theta_eta_ds"]
    assert r.passed and abs(r.margin) <= 1e-12


def test_inner_weight_identity_convex():
    inner = InnerSchedule("convex")
    t = np.arange(1, 50, dtype=float)
    lhs = inner.lam(t + 1) * inner.beta(t + 1, 3.0) * 3.0
    rhs = inner.lam(t) * (1 + inner.beta(t, 3.0)) * 3.0
    np.testing.assert_allclose(lhs, rhs, rtol=1e-15)
    assert validate_inner(inner, 3.0, 0.0, 1.0, 50)


def test_inner_strongly_convex_passes_with_theorem_eta():
    outer, inner = dcs_strongly_convex_schedule(0.5, 1.0, 3.0, 5, 2.0, 6, 4.0)
    for eta in outer.eta:
        assert validate_inner(inner, float(eta), 0.5, 1.0, 200)


def test_doubled_beta_fails():
    class Doubled(InnerSchedule):
        def beta(self, t, eta):
            return 2.0 * super().beta(t, eta)

    assert not validate_inner(Doubled("convex"), 2.0, 0.0, 1.0, 10)


def test_halved_tau_sits_on_the_boundary():
    # eta * tau / 2 = ||L||^2 exactly: the condition holds with equality.
    s = dpd_schedule(2.5, 6)
    r = validate_outer(s.replace(tau=s.tau / 2), 2.5)
    assert r.passed
    assert r["eta_tau_L_k"].margin == pytest.approx(0.0, abs=1e-12)
    assert validate_outer(s.replace(tau=s.tau * 0.499), 2.5)["eta_tau_L_k"].passed is False


def test_condition_sets_per_mode():
    assert validate_outer(dpd_schedule(1.0, 3), 1.0).names == [
        "theta_eta", "alpha_theta", "theta_tau", "eta_tau_L_k", "eta_tau", "eta_tau_theta"]
    outer, _ = dcs_convex_schedule(1.0, 2, 1.0, 3, 1.0)
    assert "theta_eta_d" in validate_outer(outer, 1.0).names
    assert "theta_eta" not in validate_outer(outer, 1.0).names


def test_theta_eta_d_perturbation():
    outer, _ = dcs_convex_schedule(1.0, 2, 1.0, 4, 1.0)
    eta = outer.eta.copy()
    eta[-1] *= 1.5
    rep = validate_outer(outer.replace(eta=eta), 1.0)
    assert "theta_eta_d" in rep.failed


def test_theta_eta_ds_perturbation_and_missing_mu():
    outer, _ = dcs_strongly_convex_schedule(1.0, 1.0, 1.0, 2, 1.0, 5, 1.0)
    eta = outer.eta.copy()
    eta[2:] *= 1.2
    assert "theta_eta_ds" in validate_outer(outer.replace(eta=eta), 1.0, 1.0, 1.0).failed
    assert not validate_outer(outer, 1.0, 0.0, 1.0)["theta_eta_ds"].passed


@pytest.mark.parametrize("bad", [dict(N=0), dict(N=2.5)])
def test_bad_N(bad):
    with pytest.raises(ScheduleError):
        dpd_schedule(1.0, bad["N"])


def test_T_cap():
    with pytest.raises(ScheduleError, match="cap"):
        dcs_convex_schedule(1.0, 10, 100.0, 100, 1e-3)


def test_strongly_convex_needs_mu():
    with pytest.raises(ScheduleError):
        dcs_strongly_convex_schedule(0.0, 1.0, 1.0, 2, 1.0, 3, 1.0)
    with pytest.raises(ScheduleError):
        sdcs_strongly_convex_schedule(-1.0, 1.0, 1.0, 2, 1.0, 0.0, 3, 1.0)


def test_roundtrip():
    outer, inner = dcs_strongly_convex_schedule(0.5, 1.0, 2.0, 3, 1.5, 4, 2.0)
    assert OuterSchedule.from_dict(outer.to_dict()).to_dict() == outer.to_dict()
    assert InnerSchedule.from_dict(inner.to_dict()).to_dict() == inner.to_dict()


@settings(max_examples=60, deadline=None)
@given(st.floats(0.1, 20), st.integers(2, 12), st.floats(0.1, 10), st.floats(0, 5),
       st.integers(1, 40), st.floats(0.5, 50), st.floats(0.05, 3), st.floats(1, 3))
def test_weights_condition_holds_beyond_checked_range(Ln, m, M, sig, N, D, mu, C):
    for outer, inner in [dcs_strongly_convex_schedule(mu, C, Ln, m, M, N, D, t_cap=10**18),
                         sdcs_strongly_convex_schedule(mu, C, Ln, m, M, sig, N, D, t_cap=10**18)]:
        assert validate_outer(outer, Ln, mu, C).passed
        for eta in outer.eta[:: max(1, N // 5)]:
            assert inner_report(inner, float(eta), mu, C, 500).passed
