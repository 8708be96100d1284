import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twolayer_ebm.asymptotics import (MU_MIN, RHO_MIN, L_eval, L_inverse, N_eval, N_star_eval,
                                      blow_up_certificate, blowup_time_remainder,
                                      bracket_epsilon_a0, choose_mu, convexity_report,
                                      escape_floor, in_escape_region, mu_star,
                                      mu_star_residual, n_root, n_star_min,
                                      n_star_sign_changes, phi_second_closed, phi_second_fd,
                                      rho_of_ts)
from twolayer_ebm.equilibria import solve_ta1
from twolayer_ebm.errors import DomainError, EpsilonNotSupercritical, LambdaZero
from twolayer_ebm.model import CoalbedoRamp, ModelParams, vector_field


def test_L_endpoints():
    assert L_eval(RHO_MIN) == pytest.approx(0.0, abs=1e-15)
    assert L_inverse(0.0) == RHO_MIN
    with pytest.raises(DomainError):
        L_eval(1.0)
    with pytest.raises(DomainError):
        L_inverse(-1.0)


@given(x=st.floats(RHO_MIN, 1 - 1e-6))
@settings(max_examples=200, deadline=None)
def test_L_inverse_round_trip(x):
    y = L_eval(x)
    assert L_inverse(y) == pytest.approx(x, rel=1e-12, abs=1e-12)


def test_rho_matches_direct_ratio(rng):
    p = ModelParams(lam=15.0, epsilon_a=1.2)
    for ts in rng.uniform(20, 600, 30):
        assert rho_of_ts(p, ts) == pytest.approx(solve_ta1(p, ts) / ts, rel=1e-10)
    with pytest.raises(LambdaZero):
        rho_of_ts(ModelParams(), 250.0)


def test_N_constants():
    assert abs(N_eval(RHO_MIN) - 1.0) <= 1e-12
    r0 = n_root()
    assert abs(r0 - 0.89) <= 0.01
    assert abs(N_eval(r0)) < 1e-12
    assert N_eval(1.0) == pytest.approx(-2.0)


def test_N_star_guard():
    with pytest.raises(DomainError):
        N_star_eval(1.0, RHO_MIN)


def test_N_star_positive_below_threshold():
    for eps in (0.2, 1.0, 1.9, 1.99):
        assert n_star_min(eps) > 0
        assert n_star_sign_changes(eps) == 0
    assert n_star_min(1.995) < 0
    assert n_star_sign_changes(1.995) == 2


def test_epsilon_a0_bracket():
    lo, hi = bracket_epsilon_a0(1e-4)
    assert 1.99 < lo < hi < 1.991
    assert hi - lo <= 1e-4
    assert n_star_min(lo) >= 0 > n_star_min(hi)


@given(lam=st.floats(0.5, 200.0), eps=st.floats(0.1, 1.95), ts=st.floats(150.0, 450.0))
@settings(max_examples=60, deadline=None)
def test_phi_second_closed_vs_fd(lam, eps, ts):
    p = ModelParams(lam=lam, epsilon_a=eps)
    a = phi_second_closed(p, ts)
    b = phi_second_fd(p, ts)
    assert a == pytest.approx(b, rel=1e-5)


def test_phi_second_lam0_is_quartic_curvature():
    p = ModelParams(epsilon_a=1.4)
    ts = 260.0
    assert phi_second_closed(p, ts) == pytest.approx(12 * p.sigma_b * 0.3 * ts ** 2)
    assert phi_second_fd(p, ts) == pytest.approx(phi_second_closed(p, ts), rel=1e-8)


def test_convexity_report():
    rep = convexity_report(ModelParams(lam=10.0, epsilon_a=1.5))
    assert rep.phi2_all_positive is True
    assert rep.sign_changes == 0
    d = rep.to_dict()
    assert 1.99 < d["epsilon_a0_bracket"][0] < d["epsilon_a0_bracket"][1] < 1.991
    assert abs(d["N_root"] - 0.89) < 0.01


@pytest.mark.parametrize("eps,expected", [(2.5, 1.19161), (3.0, 1.19323), (4.0, 1.19525)])
def test_mu_star(eps, expected):
    p = ModelParams(epsilon_a=eps)
    m = mu_star(p)
    assert MU_MIN < m < eps ** 0.25
    assert abs(mu_star_residual(p, m)) < 1e-9
    assert m == pytest.approx(expected, abs=1e-5)


def test_mu_star_requires_supercritical():
    with pytest.raises(EpsilonNotSupercritical):
        mu_star(ModelParams(epsilon_a=1.5))


def test_escape_region_lam0():
    p = ModelParams(epsilon_a=3.0)
    ta = 300.0
    # inside: sigma T_s^4 - q beta < eps sigma T_a^4 < eps sigma T_s^4 / 2
    assert in_escape_region(p, (ta, 1.25 * ta))
    assert not in_escape_region(p, (ta, 1.1 * ta))
    assert not in_escape_region(p, (ta, 1.5 * ta))
    fa, fs = vector_field(p, (ta, 1.25 * ta))
    assert fa > 0 and fs > 0


def test_escape_floor_and_region_lam_positive():
    # without atmospheric absorption the crossing holds at every temperature
    p = ModelParams(epsilon_a=3.0, lam=2.0)
    assert escape_floor(p) == 1.0
    ta = 300.0
    assert in_escape_region(p, (ta, 1.25 * ta))
    # absorbed flux in the atmosphere pushes the floor up
    pa = p.replace(coalbedo_a=CoalbedoRamp(0.1, 0.2, 200.0, 240.0))
    floor = escape_floor(pa)
    assert 1.0 < floor < 1e6
    assert not in_escape_region(pa, (0.5 * floor, 0.6 * floor))


def test_choose_mu():
    p = ModelParams(epsilon_a=3.0)
    ms = mu_star(p)
    assert choose_mu(p, (100.0, 125.0)) == pytest.approx(0.5 * (MU_MIN + ms))
    assert choose_mu(p, (100.0, 100.0 * MU_MIN)) is None
    m = choose_mu(p, (100.0, 100.0 * (MU_MIN + 1e-3)))
    assert MU_MIN < m < MU_MIN + 1e-3


@pytest.mark.parametrize("eps", [2.5, 3.0, 4.0])
def test_blowup_certificates(eps, rng):
    p = ModelParams(epsilon_a=eps)
    for ta, ts in rng.uniform(1, 400, (4, 2)):
        cert = blow_up_certificate(p, (ta, ts))
        assert cert.valid
        assert cert.stays_in_region and cert.ratio_in_range
        assert cert.tau0 <= cert.observed_escape <= cert.bound
        assert cert.bound == pytest.approx(
            cert.tau0 + blowup_time_remainder(p, cert.state0.t_a, cert.mu))
        assert math.isfinite(cert.bound)


def test_certificate_requires_supercritical():
    with pytest.raises(EpsilonNotSupercritical):
        blow_up_certificate(ModelParams(), (200.0, 200.0))
