"""Integral operators whose fixed points are wave profiles, and the monotone iteration.

For ``eps < 1/4`` with zero-state roots ``lam < mu``::

    (A phi)(t) = 1/(eps (mu - lam)) * int_t^inf (e^{lam (t-s)} - e^{mu (t-s)}) g(s) ds

and for ``eps = 1/4``::

    (B phi)(t) = 4 int_t^inf (s - t) e^{2 (t-s)} g(s) ds,

with ``g(s) = phi(s) phi(s - h)``. Both are evaluated with one right-to-left
sweep of exact exponential recurrences; each panel integral is computed
exactly for ``g`` in a two-dimensional local basis (see :func:`panel_weights`).
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.signal import lfilter
from scipy.optimize import brentq, minimize_scalar
from scipy.special import gammainc

from .charroots import ModelParams, RegimeReport, RootData, classify, root_data
from .errors import MonotonicityBroken, NoHalfCrossing, NonalignedGrid, NotConverged, TailFitFailed
from .profiles import LeftTail, Profile, RightTail

log = logging.getLogger(__name__)

TAIL_FRACTION = 0.10
RIGHT_TAIL_FLOOR = 1e-13
LOWER_TOL = 1e-10
STEP_TOL = 1e-12


class OpKind(str, enum.Enum):
    A_OP = "A_OP"
    B_OP = "B_OP"


@dataclass(frozen=True)
class OperatorConfig:
    """Everything needed to apply one operator.

    ``quad`` selects the panel basis: ``"linear"`` integrates the linear
    interpolant of ``g`` exactly; ``"expfit"`` (default) integrates the
    interpolant in ``span{1, exp(fit_rate s)}`` exactly, which makes the
    decay mode ``exp(lambda2 t)`` at the positive state free of
    discretisation error.
    """

    kind: OpKind
    epsilon: float
    lam: float
    mu: float
    h: float
    quad: str = "expfit"
    fit_rate: Optional[float] = None
    tail_eps: float = 1e-15

    def __post_init__(self):
        if self.quad not in ("linear", "expfit"):
            raise ValueError(f"unknown panel rule {self.quad!r}")
        if self.quad == "expfit" and not (self.fit_rate is not None and self.fit_rate < 0):
            raise ValueError("expfit panels need a negative fit_rate")
        if self.kind is OpKind.B_OP and self.epsilon != 0.25:
            raise ValueError("B_OP requires epsilon == 0.25")
        if self.kind is OpKind.A_OP and not self.lam < self.mu:
            raise ValueError("A_OP requires lam < mu")

    @classmethod
    def from_roots(cls, roots: RootData, use_b: bool, quad: str = "expfit") -> "OperatorConfig":
        fit = roots.lambda2 if quad == "expfit" else None
        if use_b:
            return cls(OpKind.B_OP, 0.25, 2.0, 2.0, roots.h, quad, fit)
        return cls(OpKind.A_OP, roots.epsilon, roots.lam, roots.mu, roots.h, quad, fit)

    @classmethod
    def for_params(cls, params: ModelParams, quad: str = "expfit",
                   report: Optional[RegimeReport] = None) -> "OperatorConfig":
        report = report or classify(params)
        roots = root_data(params)
        use_b = report.uses_b_operator or params.epsilon == 0.25
        if use_b and params.epsilon != 0.25:
            params = ModelParams.from_epsilon(params.h, 0.25)
            roots = root_data(params)
        if roots.lambda2 is None and quad == "expfit":
            quad = "linear"
        return cls.from_roots(roots, use_b, quad)


# --------------------------------------------------------------------------
# panel weights


def _moment(k: int, b: float, delta: float) -> float:
    """``int_0^delta u^k e^{-b u} du`` for b > 0."""
    return math.factorial(k) / b ** (k + 1) * float(gammainc(k + 1, b * delta))


def panel_weights(k: int, a: float, delta: float, quad: str, fit_rate: Optional[float]) -> Tuple[float, float]:
    """Weights ``(w0, w1)`` with ``int_0^delta u^k e^{-a u} f(u) du ~ w0 f(0) + w1 f(delta)``.

    Exact for ``f`` constant and, depending on ``quad``, for ``f(u) = u``
    or ``f(u) = exp(fit_rate u)``. ``w0 + w1`` equals the exact kernel mass
    of the panel, which keeps ``K 1 = 1`` to rounding.
    """
    m = _moment(k, a, delta)
    if quad == "linear":
        w1 = _moment(k + 1, a, delta) / delta
    else:
        rho = fit_rate
        w1 = (_moment(k, a - rho, delta) - m) / math.expm1(rho * delta)
    return m - w1, w1


def _tail_gap_integral(a: float, k: int, terms, T: float) -> float:
    """``int_T^inf (s-T)^k e^{a(T-s)} sum_j P_j(s) e^{q_j s} ds``.

    ``terms`` holds pairs ``((c0, c1, c2), q)`` with ``P(s) = c0 + c1 s + c2 s^2``
    and ``q < a``. Substituting ``s = T + u`` leaves gamma integrals.
    """
    total = 0.0
    for (c0, c1, c2), q in terms:
        b = a - q
        p = (c0 + c1 * T + c2 * T * T, c1 + 2.0 * c2 * T, c2)
        acc = sum(pj * math.factorial(k + j) / b ** (k + j + 1) for j, pj in enumerate(p) if pj)
        total += math.exp(q * T) * acc
    return total


def _scan(decay: float, x: np.ndarray, start: float) -> np.ndarray:
    """Right-to-left ``I[i] = decay * I[i+1] + x[i]`` with ``I[-1] = start``."""
    rev = np.concatenate(([start], x[::-1]))
    out = lfilter([1.0], [1.0, -decay], rev)
    return out[::-1]


# --------------------------------------------------------------------------
# application


def delay_steps(h: float, step: float) -> int:
    ratio = h / step
    m = round(ratio)
    if abs(ratio - m) > 1e-9 * max(1.0, ratio):
        raise NonalignedGrid(f"delay {h!r} is not an integer multiple of step {step!r}")
    return int(m)


def delayed_values(phi: Profile, m: int, gaps: bool = False) -> np.ndarray:
    """``phi(t_i - h)`` (or ``1 - phi(t_i - h)``) on the grid, left tail where needed."""
    v = phi.y if gaps else phi.values
    if m == 0:
        return v
    out = np.empty_like(v)
    k = min(m, v.size)
    out[k:] = v[:v.size - k]
    lt = phi.left_tail(phi.t[:k] - m * phi.step)
    out[:k] = 1.0 - lt if gaps else lt
    return out


def _tail_model_terms(rt: RightTail, h: float):
    """``1 - g(s) = y(s) + y(s-h) - y(s) y(s-h)`` beyond the grid, as exponential terms.

    With ``y(s) = (a0 + b0 s) e^{r s}`` from the right tail this is a linear
    polynomial at rate ``r`` minus a quadratic one at rate ``2r``. Keeping the
    product term matters for fronts whose tail is a neutral mode of the
    linearised operator (the double-root case): without it the last grid
    point would see no gain at all.
    """
    r = rt.rate
    if rt.poly == 1:
        a0, b0 = rt.offset, rt.coeff
    else:
        a0, b0 = rt.coeff + rt.offset, 0.0
    eh = math.exp(-r * h)
    alpha = a0 * (1.0 + eh) - b0 * h * eh
    beta = b0 * (1.0 + eh)
    a1 = a0 - b0 * h
    quad = (-eh * a0 * a1, -eh * b0 * (a0 + a1), -eh * b0 * b0)
    return [((alpha, beta, 0.0), r), (quad, 2.0 * r)]


def _kernel(config: OperatorConfig, f: np.ndarray, step: float, tails) -> np.ndarray:
    """Apply the (linear) kernel integral to grid data ``f``.

    ``tails(a, k)`` gives the contribution of ``[t_max, inf)`` to the
    moment recurrence with decay ``a`` and polynomial weight ``(s-t)^k``.
    """
    quad, fit = config.quad, config.fit_rate
    fl, fr = f[:-1], f[1:]
    if config.kind is OpKind.A_OP:
        parts = []
        for a in (config.lam, config.mu):
            w0, w1 = panel_weights(0, a, step, quad, fit)
            parts.append(_scan(math.exp(-a * step), w0 * fl + w1 * fr, tails(a, 0)))
        return (parts[0] - parts[1]) / (config.epsilon * (config.mu - config.lam))

    a = 2.0
    decay = math.exp(-a * step)
    w0, w1 = panel_weights(0, a, step, quad, fit)
    i1 = _scan(decay, w0 * fl + w1 * fr, tails(a, 0))
    v0, v1 = panel_weights(1, a, step, quad, fit)
    x2 = decay * step * i1[1:] + v0 * fl + v1 * fr
    i2 = _scan(decay, x2, tails(a, 1))
    return 4.0 * i2


def apply_raw(config: OperatorConfig, phi: Profile, form: str = "auto") -> Tuple[np.ndarray, np.ndarray]:
    """Grid values of ``K phi`` and of ``1 - K phi`` (no clipping, no tail refit).

    The kernel has unit mass, so ``K phi = 1 - K(1 - g)``. The direct form
    is used where the result is below 1/2 and the complementary form above,
    so that both ``phi`` near 0 and ``1 - phi`` near 0 keep full relative
    precision. The gap channel matters: ``exp(lambda2 t)`` is a neutral
    mode at the positive state, so if ``1 - phi`` underflowed to 0 where it
    drops below 1e-16, the resulting deficit would travel leftwards by a
    fixed distance per iteration without decaying.

    ``form="direct"`` or ``"complement"`` forces one evaluation everywhere
    (the normalisation tests use this).
    """
    step = phi.step
    m = delay_steps(config.h, step)
    vh = delayed_values(phi, m)
    g = phi.values * vh
    y, yh = phi.y, delayed_values(phi, m, gaps=True)
    gap = y + yh - y * yh
    T = phi.t_max
    r = phi.right_tail.rate
    if not r < 0.0:
        raise TailFitFailed(f"right tail rate must be negative, got {r!r}")
    terms = _tail_model_terms(phi.right_tail, config.h)

    def gap_tail(a, k):
        return _tail_gap_integral(a, k, terms, T)

    def full_tail(a, k):
        return (1.0 / a if k == 0 else 1.0 / a**2) - gap_tail(a, k)

    direct = _kernel(config, g, step, full_tail)
    comp = _kernel(config, gap, step, gap_tail)
    if form == "direct":
        return direct, 1.0 - direct
    if form == "complement":
        return 1.0 - comp, comp
    low = direct < 0.5
    return np.where(low, direct, 1.0 - comp), np.where(low, 1.0 - direct, comp)


def refit_left_tail(t: np.ndarray, v: np.ndarray) -> LeftTail:
    """Least-squares ``log phi ~ log k + rate t`` on the leftmost 10% of points."""
    n = max(5, int(round(TAIL_FRACTION * v.size)))
    tt, vv = t[:n], v[:n]
    if np.any(vv <= 0.0):
        raise TailFitFailed("non-positive values in the left tail window")
    rate, logk = np.polyfit(tt, np.log(vv), 1)
    return LeftTail(rate=float(rate), coeff=float(math.exp(logk)))


def _linear_tail_fit(tt: np.ndarray, yy: np.ndarray, rate: float) -> Tuple[float, float, float]:
    """Relative least squares of ``y ~ (a + b t) e^{rate t}``; returns ``(a, b, sse)``."""
    base = np.exp(rate * tt) / yy
    M = np.column_stack((base, tt * base))
    coef, *_ = np.linalg.lstsq(M, np.ones_like(yy), rcond=None)
    res = M @ coef - 1.0
    return float(coef[0]), float(coef[1]), float(res @ res)


def refit_right_tail(t: np.ndarray, y: np.ndarray, poly: int) -> RightTail:
    """Fit the gap ``y = 1 - phi`` on the rightmost 10% of points with ``y > 1e-13``.

    ``poly = 0`` fits ``k e^{rate t}``; ``poly = 1`` fits ``(k t + b) e^{rate t}``
    by variable projection over the rate.
    """
    idx = np.flatnonzero(y > RIGHT_TAIL_FLOOR)
    if idx.size < 5:
        raise TailFitFailed("too few resolvable points in the right tail window")
    n = max(5, int(round(TAIL_FRACTION * idx.size)))
    idx = idx[-n:]
    tt, yy = t[idx], y[idx]
    rate, logk = np.polyfit(tt, np.log(yy), 1)
    if poly == 1:
        res = minimize_scalar(lambda r: _linear_tail_fit(tt, yy, r)[2],
                              bracket=(rate - 0.5, rate), tol=1e-12)
        rate = float(res.x)
        off, k, _ = _linear_tail_fit(tt, yy, rate)
        if not rate < 0.0:
            raise TailFitFailed(f"fitted right tail rate {rate!r} is not negative")
        return RightTail(rate=rate, coeff=k, poly=1, offset=off)
    if not rate < 0.0:
        raise TailFitFailed(f"fitted right tail rate {rate!r} is not negative")
    return RightTail(rate=float(rate), coeff=float(math.exp(logk)), poly=0)


def anchored_tails(phi: Profile, v: np.ndarray, y: np.ndarray, lam: float) -> Tuple[LeftTail, RightTail]:
    """Tails of ``phi``'s shape rescaled to the new boundary values.

    The shapes (rates, polynomial factor) stay fixed during an iteration and
    only the amplitudes follow ``v[0]`` and ``y[-1]``, so the extension beyond
    the grid is a positive multiple of boundary data and the discrete map
    stays order-preserving.
    """
    lt = phi.left_tail
    rate = lt.rate if lt.coeff > 0.0 else lam
    left = LeftTail(rate=rate, coeff=float(v[0]) * math.exp(-rate * phi.t_min))
    rt = phi.right_tail
    ref = float(rt.gap(phi.t_max))
    if ref > 0.0:
        k = float(y[-1]) / ref
        right = RightTail(rate=rt.rate, coeff=rt.coeff * k, poly=rt.poly, offset=rt.offset * k)
    else:
        right = rt
    return left, right


def apply(config: OperatorConfig, phi: Profile) -> Profile:
    """``K phi`` on the same grid, clipped to [0, 1], with re-anchored tails."""
    v, y = apply_raw(config, phi)
    v, y = np.clip(v, 0.0, 1.0), np.clip(y, 0.0, 1.0)
    lt, rt = anchored_tails(phi, v, y, config.lam)
    return phi.with_values(v, left_tail=lt, right_tail=rt, gaps=y)


# --------------------------------------------------------------------------
# residuals


def ode_residual(config: OperatorConfig, phi: Profile, exclude=(), margin: int = 2) -> np.ndarray:
    """Central-difference residual of ``eps phi'' - phi' + phi (1 - phi(t-h))``.

    Returns values on interior indices ``margin .. n-1-margin``; points whose
    stencil touches a junction in ``exclude`` are masked to 0.
    """
    v, d = phi.values, phi.step
    m = delay_steps(config.h, d)
    vh = delayed_values(phi, m)
    i = np.arange(margin, v.size - margin)
    d2 = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / d**2
    d1 = (v[i + 1] - v[i - 1]) / (2.0 * d)
    res = config.epsilon * d2 - d1 + v[i] * (1.0 - vh[i])
    t = phi.t[i]
    for tj in exclude:
        for shift in (0.0, config.h):
            res[np.abs(t - tj - shift) <= 1.5 * d] = 0.0
    return res


def fixed_point_residuals(config: OperatorConfig, phi: Profile, exclude=()) -> Tuple[float, float]:
    """``(sup |K phi - phi|, sup |ODE residual|)`` over the grid."""
    kphi = np.clip(apply_raw(config, phi)[0], 0.0, 1.0)
    sup_fp = float(np.max(np.abs(kphi - phi.values)))
    sup_ode = float(np.max(np.abs(ode_residual(config, phi, exclude))))
    return sup_fp, sup_ode


# --------------------------------------------------------------------------
# iteration


@dataclass
class IterationReport:
    iterations: int = 0
    sup_increments: List[float] = field(default_factory=list)
    final_residual_fp: float = math.nan
    final_residual_ode: float = math.nan
    converged: bool = False
    monotonicity_violations: int = 0
    iterates: List[Profile] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "sup_increments": [float(x) for x in self.sup_increments],
            "final_residual_fp": float(self.final_residual_fp),
            "final_residual_ode": float(self.final_residual_ode),
            "converged": self.converged,
            "monotonicity_violations": self.monotonicity_violations,
        }


def iterate(config: OperatorConfig, lower: Profile, upper: Optional[Profile] = None,
            tol_iter: float = 1e-10, max_iter: int = 5000, keep: int = 0,
            exclude=()) -> Tuple[Profile, IterationReport]:
    """Monotone iteration ``phi <- K phi`` started from a lower solution.

    ``keep`` retains the first ``keep`` iterates (the start included) in
    ``report.iterates``. Raises :class:`MonotonicityBroken` on any decrease
    beyond tolerance and :class:`NotConverged` when ``max_iter`` is hit.
    """
    report = IterationReport()
    if keep:
        report.iterates.append(lower)
    if upper is not None:
        if upper.n != lower.n or upper.t_min != lower.t_min or upper.step != lower.step:
            raise ValueError("upper must share the lower's grid")
        if np.any(lower.values > upper.values):
            raise ValueError("upper must lie above lower")

    phi = lower
    for j in range(1, max_iter + 1):
        nxt = apply(config, phi)
        diff = nxt.values - phi.values
        floor = -LOWER_TOL if j == 1 else -STEP_TOL
        if diff.min() < floor:
            report.monotonicity_violations += 1
            report.iterations = j
            what = "start is not a lower solution" if j == 1 else "iterate decreased"
            raise MonotonicityBroken(f"{what}: min increment {diff.min():.3e} at iteration {j}",
                                     iteration=j, report=report)
        if upper is not None and np.any(nxt.values > upper.values + LOWER_TOL):
            report.monotonicity_violations += 1
            raise MonotonicityBroken(f"iterate {j} exceeds the upper solution", iteration=j, report=report)
        inc = float(np.max(np.abs(diff)))
        report.sup_increments.append(inc)
        report.iterations = j
        phi = nxt
        if keep and len(report.iterates) < keep:
            report.iterates.append(phi)
        if inc <= tol_iter:
            report.converged = True
            break
        if j % 200 == 0:
            log.debug("iteration %d: sup increment %.3e", j, inc)

    report.final_residual_fp, report.final_residual_ode = fixed_point_residuals(config, phi, exclude)
    if not report.converged:
        raise NotConverged(f"no convergence after {max_iter} iterations", profile=phi, report=report)
    return phi, report


# --------------------------------------------------------------------------
# uniqueness


def half_crossing(phi: Profile, cubic: bool = False) -> float:
    """Point where ``phi = 1/2``.

    The bracketing cell is found by bisection on the grid. The crossing is then
    interpolated linearly, or with a local cubic when ``cubic`` is set.
    """
    v = phi.values
    if not (v[0] < 0.5 <= v[-1]):
        raise NoHalfCrossing("profile does not span 1/2")
    lo, hi = 0, v.size - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if v[mid] < 0.5:
            lo = mid
        else:
            hi = mid
    t = phi.t
    linear = float(t[lo] + (0.5 - v[lo]) / (v[hi] - v[lo]) * (t[hi] - t[lo]))
    if not cubic or lo < 1 or hi > v.size - 2:
        return linear
    sl = slice(lo - 1, hi + 2)
    local = CubicSpline(t[sl], v[sl] - 0.5)
    return float(brentq(local, t[lo], t[hi], xtol=1e-15))


def uniqueness_check(config: Optional[OperatorConfig], phi_a: Profile, phi_b: Profile) -> float:
    """Sup distance between two profiles after translating both to ``phi(0) = 1/2``.

    Both the alignment and the comparison use cubic interpolation. With linear
    interpolation the comparison itself would carry an O(step^2) error of
    about 1e-6 at step 0.01, whenever the two crossings are not a whole number
    of steps apart.
    """
    ta, tb = half_crossing(phi_a, cubic=True), half_crossing(phi_b, cubic=True)
    lo = max(phi_a.t_min - ta, phi_b.t_min - tb)
    hi = min(phi_a.t_max - ta, phi_b.t_max - tb)
    u = phi_a.t - ta
    u = u[(u >= lo) & (u <= hi)]
    spline_b = CubicSpline(phi_b.t, phi_b.values)
    return float(np.max(np.abs(phi_a.at(u + ta) - spline_b(u + tb))))
