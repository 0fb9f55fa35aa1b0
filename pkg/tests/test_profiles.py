import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kppfront.charroots import INV_E, ModelParams, c_star, classify, critical_constants, eps_star, root_data
from kppfront.errors import NoValidR, OrderingFailed, RejectedR
from kppfront.operators import OperatorConfig, apply
from kppfront.pipeline import critical_params
from kppfront.profiles import (
    LeftTail,
    Profile,
    RightTail,
    choose_r,
    critical_A_bound,
    critical_tau,
    grid_step,
    lower_critical,
    lower_critical_parts,
    lower_noncritical,
    lower_noncritical_parts,
    lower_residual,
    lower_tau,
    make_grid,
    profile_residual,
    shift_to_order,
    upper_noncritical,
    upper_parts,
    upper_residual,
    upper_sweep_ok,
    upper_t0,
)

H1, H0 = critical_constants()
AZ = root_data(ModelParams.from_epsilon(0.0, 0.24))


def roots_for(h, c):
    return root_data(ModelParams(h, c))


def noncritical_params():
    """(h, c) strictly inside the existence region, away from c*(h)."""

    @st.composite
    def build(draw):
        h = draw(st.floats(min_value=0.0, max_value=0.55))
        cs = c_star(h)
        top = 4.0 if math.isinf(cs) else min(4.0, 2.0 + 0.98 * (cs - 2.0))
        c = draw(st.floats(min_value=2.0, max_value=top))
        if not math.isinf(cs) and c >= cs * (1 - 1e-6):
            c = 2.0
        return h, c

    return build()


# ---------------------------------------------------------------- Profile


def test_profile_arrays_are_read_only():
    p = Profile(0.0, 0.1, np.linspace(0, 1, 11), LeftTail(0.0, 0.0), RightTail(-1.0, 0.0))
    with pytest.raises(ValueError):
        p.values[0] = 0.5


def test_profile_gaps_shape_checked():
    with pytest.raises(ValueError):
        Profile(0.0, 0.1, np.zeros(3), LeftTail(0.0, 0.0), RightTail(-1.0, 1.0), gaps=np.ones(4))


def test_profile_problems_detected():
    bad = Profile(0.0, 0.1, np.array([0.0, 0.5, 0.4, 1.2]), LeftTail(1.0, 0.3), RightTail(-1.0, 1.0))
    msgs = " ".join(bad.problems())
    assert "nondecreasing" in msgs and "outside" in msgs and "left tail" in msgs
    with pytest.raises(ValueError):
        bad.check()


def test_profile_evaluation_uses_tails():
    lo = lower_noncritical(AZ)
    t_out = np.array([lo.t_min - 3.0, lo.t_max + 3.0])
    phi, _, _, gap = lower_noncritical_parts(AZ)
    assert lo.at(t_out)[0] == pytest.approx(float(phi(t_out[0])), rel=1e-12)
    assert lo.gap_at(t_out)[1] == pytest.approx(float(gap(t_out[1])), rel=1e-12)
    mid = 0.5 * (lo.t[100] + lo.t[101])
    assert lo.at(mid) == pytest.approx(0.5 * (lo.values[100] + lo.values[101]))


def test_grid_step_divides_delay():
    for h in (0.0, 0.3, 0.56, 0.123456):
        d = grid_step(h)
        assert d <= 0.01
        if h > 0:
            assert abs(h / d - round(h / d)) < 1e-9


def test_grid_step_short_delays():
    assert grid_step(0.005) == 0.005
    assert grid_step(1e-4) == 1e-4
    with pytest.raises(ValueError):
        grid_step(1e-30)


def test_make_grid_depth_and_alignment():
    g = make_grid(0.3, 1.0, 2.0, -1.0)
    assert g.t_min <= 1.0 - 20.0 and g.t_max >= 1.0 + 40.0
    assert abs(g.t_min / g.step - round(g.t_min / g.step)) < 1e-9
    g = make_grid(0.0, 0.0, 1e-3, -1e-3)
    assert g.t_min >= -200.0 - g.step and g.t_max <= 200.0 + g.step


def test_csv_round_trip(tmp_path):
    lo = lower_noncritical(AZ)
    path = lo.to_csv(tmp_path / "lower.csv")
    assert path.read_text().splitlines()[0] == "t,phi"
    back = Profile.from_csv(path)
    assert back.problems() == []
    assert np.array_equal(back.values, lo.values)
    assert back.step == lo.step and back.t_min == lo.t_min
    assert back.left_tail == lo.left_tail and back.right_tail == lo.right_tail
    meta = json.loads(path.with_suffix(".json").read_text())
    assert meta["n"] == lo.n


def test_csv_without_sidecar(tmp_path):
    lo = lower_noncritical(AZ)
    path = lo.to_csv(tmp_path / "x.csv", sidecar=False)
    back = Profile.from_csv(path)
    assert back.n == lo.n and back.problems() == []


# ---------------------------------------------------------------- noncritical lower


def test_lower_tau_az():
    assert lower_tau(AZ) == pytest.approx(math.log(1.5) / (5.0 / 6.0), rel=1e-14)
    assert abs(lower_tau(AZ) - 0.48656) < 1e-5


@pytest.mark.parametrize("hc", [(0.0, 5.0 / math.sqrt(6.0)), (0.3, 2.5), (0.2, 2.0), (0.5, 2.05)])
def test_lower_junction_is_c1(hc):
    roots = roots_for(*hc)
    tau = lower_tau(roots)
    phi, dphi, _, gap = lower_noncritical_parts(roots)
    k = -roots.lambda2 / (roots.lam - roots.lambda2)
    assert float(phi(tau)) == pytest.approx(k, rel=1e-14)
    assert float(phi(tau)) == pytest.approx(1.0 - math.exp(roots.lambda2 * tau), rel=1e-14)
    left = roots.lam * k
    right = -roots.lambda2 * math.exp(roots.lambda2 * tau)
    assert left == pytest.approx(right, rel=1e-13)
    assert float(phi(tau) + gap(tau)) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("hc", [(0.0, 5.0 / math.sqrt(6.0)), (0.3, 2.5), (0.2, 2.0), (0.5, 2.05)])
def test_lower_inequality_strict_on_sweep(hc):
    roots = roots_for(*hc)
    tau = lower_tau(roots)
    t = np.linspace(tau - 10.0, tau + roots.h + 10.0, 10_000)
    assert np.all(lower_residual(roots, t) < 0.0)


@given(noncritical_params())
def test_lower_inequality_random(hc):
    roots = roots_for(*hc)
    tau = lower_tau(roots)
    t = np.linspace(tau - 10.0, tau + roots.h + 10.0, 4001)
    assert np.all(lower_residual(roots, t) < 0.0)


@pytest.mark.parametrize("hc", [(0.0, 5.0 / math.sqrt(6.0)), (0.3, 2.5), (0.5, 2.05)])
def test_rho_zero_identity(hc):
    # value of the residual just right of tau + h
    roots = roots_for(*hc)
    lam, l2, h = roots.lam, roots.lambda2, roots.h
    t = lower_tau(roots) + h
    got = float(lower_residual(roots, np.nextafter(t, np.inf) + 1e-12))
    want = -lam**2 / (lam - l2) ** 2 * math.exp(l2 * h)
    assert got < 0.0
    assert got == pytest.approx(want, rel=1e-8, abs=1e-10)


def test_lower_profile_invariants_and_tails():
    lo = lower_noncritical(AZ)
    assert lo.problems() == []
    assert lo.left_tail.rate == AZ.lam and lo.right_tail.rate == AZ.lambda2
    assert lo.right_tail.coeff == 1.0 and lo.right_tail.poly == 0
    assert lo.values[-1] > 1.0 - 1e-15


def test_lower_requires_simple_roots():
    crit = root_data(critical_params(0.45), double=True)
    with pytest.raises(ValueError):
        lower_noncritical(crit)
    with pytest.raises(ValueError):
        lower_noncritical(roots_for(0.6, 2.0))


# ---------------------------------------------------------------- noncritical upper


def test_upper_t0_limit():
    l2 = AZ.lambda2
    assert upper_t0(AZ, l2 - 1e-7) == pytest.approx(-1.0 / l2, rel=1e-6)


def test_upper_t0_is_minimum():
    r = AZ.lambda2 - 0.05
    t0 = upper_t0(AZ, r)
    assert AZ.lambda2 * math.exp(AZ.lambda2 * t0) == pytest.approx(r * math.exp(r * t0), rel=1e-13)
    _, dphi, _, _ = upper_parts(AZ, r)
    assert abs(float(dphi(t0 + 1e-12))) < 1e-10


def test_upper_inequality_az_sweep():
    r = AZ.lambda2 - 0.05
    t0 = upper_t0(AZ, r)
    t = np.linspace(t0 - 5.0, t0 + AZ.h + 20.0, 10_000)
    assert np.all(upper_residual(AZ, r, t) >= -1e-12)
    assert upper_sweep_ok(AZ, r)


def test_upper_residual_matches_generic_form():
    roots = roots_for(0.3, 2.5)
    r = choose_r(roots)
    t = np.linspace(upper_t0(roots, r), 6.0, 500)
    generic = profile_residual(upper_parts(roots, r), roots.epsilon, roots.h, t)
    assert np.allclose(upper_residual(roots, r, t), generic, atol=1e-12)


def test_choose_r_az():
    # the candidate sequence starts at lambda2 - 0.1 = -14/15 = -0.9333...
    r = choose_r(AZ)
    assert -14.0 / 15.0 - 1e-15 <= r < -5.0 / 6.0
    assert r == pytest.approx(-14.0 / 15.0, rel=1e-14)  # regression: the first candidate passes


def test_choose_r_near_existence_boundary():
    h = 0.5
    roots = roots_for(h, 0.999 * c_star(h))
    r = choose_r(roots)
    assert roots.lambda1 < r < roots.lambda2
    up = upper_noncritical(roots, r)
    assert up.problems() == []


@given(noncritical_params())
def test_choose_r_in_range(hc):
    roots = roots_for(*hc)
    r = choose_r(roots)
    assert r < roots.lambda2 and (math.isinf(roots.lambda1) or r > roots.lambda1)
    assert upper_sweep_ok(roots, r)


def test_upper_rejects_bad_r():
    with pytest.raises(RejectedR):
        upper_noncritical(AZ, AZ.lambda2 + 0.01)


def test_choose_r_fails_for_double_root():
    with pytest.raises(NoValidR):
        choose_r(root_data(critical_params(0.45), double=True))


def test_upper_profile_invariants():
    up = upper_noncritical(AZ, choose_r(AZ))
    assert up.problems() == []
    assert up.left_tail.rate == 0.0 and up.left_tail.coeff == up.values[0]


# ---------------------------------------------------------------- critical lower


@pytest.mark.parametrize("h", [0.4, 0.45, 0.5, H1])
def test_lower_critical_shape(h):
    params = critical_params(h)
    roots = root_data(params, double=True)
    A = 2.0 * critical_A_bound(roots)
    tau = critical_tau(roots, A)
    assert tau > h
    lo = lower_critical(roots, params)
    assert lo.problems() == []
    phi = lower_critical_parts(roots, A)[0]
    assert abs(float(phi(tau))) < 1e-12
    assert lo.values[-1] > 1.0 - 1e-12
    assert lo.left_tail.coeff == 0.0 and lo.right_tail.poly == 1
    assert lo.right_tail.coeff == pytest.approx(A)


def test_lower_critical_monotone_at_h056_c2():
    roots = root_data(ModelParams(0.56, 2.0))
    lo = lower_critical(roots, A=2.0 * critical_A_bound(roots), force=True)
    assert np.all(np.diff(lo.values) >= 0.0)


def test_lower_critical_is_lower_at_h1():
    params = critical_params(H1)
    roots = root_data(params, double=True)
    cfg = OperatorConfig.from_roots(roots, use_b=True)
    lo = lower_critical(roots, params)
    assert np.all(apply(cfg, lo).values >= lo.values - 1e-12)


def test_lower_critical_outside_band():
    roots = root_data(ModelParams(0.3, 2.5))
    with pytest.raises(ValueError):
        lower_critical(roots, ModelParams(0.3, 2.5))
    params = critical_params(0.45)
    crit = root_data(params, double=True)
    with pytest.raises(ValueError):
        lower_critical(crit, params, A=0.5 * critical_A_bound(crit))


# ---------------------------------------------------------------- ordering


def test_shift_to_order_translated_copy():
    lo = lower_noncritical(AZ)
    up = lower_noncritical(AZ, grid=lo.grid, shift=-1.0)  # lower(t + 1)
    pair = shift_to_order(lo, up)
    assert pair.shift == 0.0
    assert np.all(pair.lower.values <= pair.upper.values)


def test_shift_to_order_az_pair():
    lo = lower_noncritical(AZ)
    up = upper_noncritical(AZ, choose_r(AZ), grid=lo.grid)
    pair = shift_to_order(lo, up)
    assert math.isfinite(pair.shift)
    inner = (pair.lower.values > 1e-14) & (pair.lower.values < 1 - 1e-14)
    assert np.all(pair.lower.values[inner] < pair.upper.values[inner])


def test_shift_to_order_critical_against_front():
    from kppfront.pipeline import solve

    params = critical_params(0.45)
    res = solve(params, fits=False)
    roots = res.roots
    lo = lower_critical(roots, params, A=8.0 * critical_A_bound(roots), grid=res.profile.grid)
    pair = shift_to_order(lo, res.profile)
    assert math.isfinite(pair.shift)


def test_shift_to_order_failure():
    lo = lower_noncritical(AZ)
    # an "upper" that decays faster at +inf can never lie above
    up = Profile(lo.t_min, lo.step, lo.values * 0.5, lo.left_tail, RightTail(-5.0, 1.0))
    with pytest.raises(OrderingFailed):
        shift_to_order(lo, up, max_shift=8.0)
