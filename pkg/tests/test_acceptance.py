"""Acceptance criteria, each run at its stated tolerance.

Every test records one ``ACCEPTANCE n: PASS|FAIL`` line (collected in the
terminal summary) and then asserts the same verdict.
"""
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from oracles import aligned_grid
from kppfront.analysis import fit_plus_tail, validate_az
from kppfront.charroots import (
    ModelParams,
    PlusRegime,
    Verdict,
    classify,
    critical_constants,
    eps_sharp,
    eps_star,
    root_data,
)
from kppfront.errors import FitRejected, MonotonicityBroken, NotConverged, WindowTooShort
from kppfront.operators import OperatorConfig, OpKind, apply_raw, iterate, ode_residual, uniqueness_check
from kppfront.pipeline import critical_params, solve
from kppfront.profiles import LeftTail, Profile, RightTail, critical_A_bound, lower_critical, lower_noncritical

TESTS = Path(__file__).resolve().parent


def _chain_ok(profiles, tol=1e-12):
    return all(np.all(a.values <= b.values + tol) for a, b in zip(profiles[:-1], profiles[1:]))


# ---------------------------------------------------------------- 1


def test_criterion_1_kernel_normalization(acceptance):
    rng = np.random.default_rng(20240601)
    n = 2001
    worst, start = 0.0, time.perf_counter()
    for _ in range(50):
        eps = float(rng.uniform(0.01, 0.25))
        h = float(rng.uniform(0.01, 0.7))
        lam = (1.0 - math.sqrt(1.0 - 4.0 * eps)) / (2.0 * eps)
        mu = (1.0 + math.sqrt(1.0 - 4.0 * eps)) / (2.0 * eps)
        t0, step = aligned_grid(h, n)
        one = Profile(t0, step, np.ones(n), LeftTail(0.0, 1.0), RightTail(-1.0, 0.0), gaps=np.zeros(n))
        for cfg in (OperatorConfig(OpKind.A_OP, eps, lam, mu, h, "expfit", -1.0),
                    OperatorConfig(OpKind.B_OP, 0.25, 2.0, 2.0, h, "expfit", -1.0)):
            direct = apply_raw(cfg, one, form="direct")[0]
            worst = max(worst, float(np.max(np.abs(direct - 1.0))))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-8 and elapsed < 1.0
    acceptance(1, ok, f"max |K1 - 1| = {worst:.2e} (<= 1e-8), 100 operators in {elapsed:.2f} s (< 1 s)")
    assert ok


# ---------------------------------------------------------------- 2


def test_criterion_2_constants(acceptance):
    h1, h0 = critical_constants()
    e1, e0 = eps_star(h1), eps_sharp(h0)
    ok = (abs(h1 - 0.560771160) <= 1e-8 and abs(h0 - 0.5336619208) <= 1e-8
          and abs(e1 - 0.25) <= 1e-6 and abs(e0 - 0.25) <= 1e-6)
    acceptance(2, ok, f"h1 = {h1:.10f}, h0 = {h0:.10f}, eps*(h1) = {e1:.10f}, eps#(h0) = {e0:.10f}")
    assert ok


# ---------------------------------------------------------------- 3, 4, 5


def _az(delta):
    start = time.perf_counter()
    rep = validate_az(delta=delta)
    return rep, time.perf_counter() - start


def test_criterion_3_exact_front(acceptance):
    rep, elapsed = _az(0.01)
    c = rep["checks"]
    domain = rep["t_min"] <= -15.0 and rep["t_max"] >= 20.0
    ok = (domain and rep["delta"] <= 0.01 and c["sup_error"] and c["ordering"] and c["ode_residual"]
          and c["monotone"] and elapsed <= 30.0)
    acceptance(3, ok, f"sup err on [-10,10] = {rep['sup_error']:.3e} (<= 1e-3), ordering "
                      f"{'holds' if c['ordering'] else 'broken'}, ODE residual {rep['ode_residual']:.2e} "
                      f"(<= 5e-4), domain [{rep['t_min']:.1f}, {rep['t_max']:.1f}], {elapsed:.1f} s (<= 30 s)")
    assert ok


def test_criterion_4_tail_rates(acceptance):
    rep, _ = _az(0.01)
    plus, minus = rep["plus_fit"], rep["minus_fit"]
    ok = rep["checks"]["plus_rate"] and rep["checks"]["minus_rate"]
    pr = plus["fitted_rate"] if plus else float("nan")
    mr = minus["fitted_rate"] if minus else float("nan")
    acceptance(4, ok, f"plus rate {pr:.6f} vs -5/6 (rel err {abs(pr + 5 / 6) / (5 / 6):.1e}), "
                      f"minus rate {mr:.6f} vs 5/3 (rel err {abs(mr - 5 / 3) / (5 / 3):.1e}), 1% tolerance")
    assert ok


def test_criterion_5_convergence_order(acceptance):
    coarse, _ = _az(0.01)
    fine, _ = _az(0.005)
    ratio = coarse["sup_error"] / fine["sup_error"]
    ok = 3.0 <= ratio <= 5.0
    acceptance(5, ok, f"sup err {coarse['sup_error']:.3e} -> {fine['sup_error']:.3e}, ratio {ratio:.3f} in [3, 5]")
    assert ok


# ---------------------------------------------------------------- 6


def test_criterion_6_critical_case(acceptance):
    params = ModelParams(0.56, 2.0)
    roots = root_data(params)
    cfg = OperatorConfig.from_roots(roots, use_b=True)
    A0 = 2.0 * critical_A_bound(roots)
    failures = []
    for k in range(6):
        A = A0 * 2.0**k
        lower = lower_critical(roots, params, A=A, force=True)
        try:
            phi, rep = iterate(cfg, lower, tol_iter=1e-10, max_iter=5000, keep=4)
        except (MonotonicityBroken, NotConverged) as exc:
            where = f" at iteration {exc.iteration}" if getattr(exc, "iteration", None) else ""
            failures.append(f"A={A:.3g}: {exc.code}{where}")
            continue
        res = float(np.max(np.abs(ode_residual(cfg, phi, exclude=(lower.t_min,)))))
        try:
            fit = fit_plus_tail(phi, PlusRegime.DOUBLE_ROOT, roots)
            degree_ok = fit.fitted_poly_degree == 1 and fit.accepted
        except (FitRejected, WindowTooShort):
            degree_ok = False
        ordered = _chain_ok(list(rep.iterates) + [phi])
        ok = rep.monotonicity_violations == 0 and rep.converged and res <= 1e-3 and degree_ok and ordered
        acceptance(6, ok, f"A={A:.3g}: {rep.iterations} iterations, violations "
                          f"{rep.monotonicity_violations}, ODE residual {res:.2e}, degree-1 fit "
                          f"{'accepted' if degree_ok else 'rejected'}, ordering {'holds' if ordered else 'broken'}")
        assert ok
        return
    lam1, lam2 = roots.lambda1, roots.lambda2
    acceptance(6, False, f"h=0.56, c=2 is not a double root (lambda1={lam1:.4f}, lambda2={lam2:.4f}); "
                         f"lower_critical start is not a lower solution: " + "; ".join(failures))
    raise AssertionError("no admissible lower_critical start at h=0.56, c=2: " + "; ".join(failures))


def test_critical_case_at_h1_reference(acceptance):
    """The same checks where c = 2 is exactly the critical speed (h = h1)."""
    h1, _ = critical_constants()
    res = solve(critical_params(h1), keep=4)
    rep, phi = res.iteration, res.profile
    ode = rep.final_residual_ode
    fit = res.plus_fit
    degree_ok = fit is not None and fit.fitted_poly_degree == 1 and fit.accepted
    ordered = _chain_ok(list(rep.iterates) + [phi])
    ok = (res.config.kind is OpKind.B_OP and rep.monotonicity_violations == 0 and rep.converged
          and ode <= 1e-3 and degree_ok and ordered)
    acceptance("6 (reference at h1)", ok, f"{rep.iterations} iterations, violations "
                                          f"{rep.monotonicity_violations}, ODE residual {ode:.2e}, degree-1 fit "
                                          f"{'accepted' if degree_ok else 'rejected'}, ordering "
                                          f"{'holds' if ordered else 'broken'}")
    assert ok


# ---------------------------------------------------------------- 7


def test_criterion_7_uniqueness(acceptance):
    details, ok = [], True
    for params in (ModelParams.from_epsilon(0.0, 0.24), ModelParams(0.3, 2.5)):
        base = solve(params, fits=False)
        roots = base.roots
        worst = 0.0
        for shift in (2.5, -1.3):
            other = lower_noncritical(roots, grid=base.lower.grid, shift=shift)
            phi_b, _ = iterate(base.config, other)
            worst = max(worst, uniqueness_check(base.config, base.profile, phi_b))
        ok = ok and worst <= 1e-6
        details.append(f"(h={params.h:g}, c={params.c:.4f}) sup diff {worst:.2e}")
    acceptance(7, ok, "; ".join(details) + " (<= 1e-6)")
    assert ok


# ---------------------------------------------------------------- 8


def test_criterion_8_property_suite(acceptance):
    start = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
                           str(TESTS / "test_properties.py")], capture_output=True, text=True, cwd=TESTS.parent)
    elapsed = time.perf_counter() - start
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    ok = proc.returncode == 0 and elapsed < 60.0
    acceptance(8, ok, f"{summary}; {elapsed:.1f} s (< 60 s)")
    assert ok, proc.stdout[-3000:]


# ---------------------------------------------------------------- 9


def _independent_c_star(h):
    """c*(h) from the parametric form of the tangency curve, solved afresh."""
    if h <= math.exp(-1.0):
        return math.inf

    def h_of(s):
        r = math.sqrt(4.0 * s * s + 1.0)
        return (2.0 * s + r) * math.exp(-1.0 - 2.0 * s / (1.0 + r))

    s = brentq(lambda s: h_of(s) - h, 0.0, 50.0, xtol=1e-15, rtol=1e-15)
    return 1.0 / math.sqrt(s * h)


def _independent_h1():
    def h_of(s):
        r = math.sqrt(4.0 * s * s + 1.0)
        return (2.0 * s + r) * math.exp(-1.0 - 2.0 * s / (1.0 + r))

    s = brentq(lambda s: s * h_of(s) - 0.25, 0.0, 50.0, xtol=1e-15, rtol=1e-15)
    return h_of(s)


def test_criterion_9_region_grid(acceptance):
    h1 = _independent_h1()
    errors, bad, n_not = [], [], 0
    for h in np.linspace(0.0, 0.7, 50):
        for c in np.linspace(2.0, 4.0, 20):
            try:
                rep = classify(ModelParams(float(h), float(c)))
            except Exception as exc:  # any exception fails the criterion
                errors.append(f"({h:.4f}, {c:.4f}): {exc!r}")
                continue
            if rep.verdict is Verdict.NOT_EXISTS:
                n_not += 1
                if not (h > h1 or c > _independent_c_star(h)):
                    bad.append(f"({h:.4f}, {c:.4f})")
    ok = not errors and not bad
    acceptance(9, ok, f"1000 cells, {len(errors)} exceptions, {n_not} NOT_EXISTS cells, "
                      f"{len(bad)} contradicted by independent curves (h1 = {h1:.10f})")
    assert ok, errors[:5] + bad[:5]
