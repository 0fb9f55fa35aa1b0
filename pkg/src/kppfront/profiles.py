"""Wave profiles on a uniform grid, and the explicit lower/upper solutions.

A :class:`Profile` stores samples ``phi(t_i)`` on ``t_i = t_min + i*step``
plus analytic tail models used outside the grid:

* left:  ``phi(t) ~ coeff * exp(rate * t)``  (``rate == 0`` means constant)
* right: ``1 - phi(t) ~ (coeff * t**poly + offset) * exp(rate * t)``
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from .charroots import ModelParams, RootData, classify, psi
from .errors import NoValidR, OrderingFailed, RejectedR

DELTA_TARGET = 0.01
DECAY_DEPTH = 40.0
T_CLAMP = 200.0
SWEEP_POINTS = 10_000
MIN_STEP_RATIO = 100.0


@dataclass(frozen=True)
class LeftTail:
    rate: float
    coeff: float

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.coeff == 0.0:
            return np.zeros_like(t)
        return self.coeff * np.exp(self.rate * t)

    def shifted(self, sigma: float) -> "LeftTail":
        """Tail of ``t -> phi(t + sigma)``."""
        return LeftTail(self.rate, self.coeff * math.exp(self.rate * sigma))


@dataclass(frozen=True)
class RightTail:
    rate: float
    coeff: float
    poly: int = 0
    offset: float = 0.0

    def gap(self, t):
        """``1 - phi(t)`` according to the tail model."""
        t = np.asarray(t, dtype=float)
        return (self.coeff * t**self.poly + self.offset) * np.exp(self.rate * t)

    def shifted(self, sigma: float) -> "RightTail":
        g = math.exp(self.rate * sigma)
        offset = self.offset + (self.coeff * sigma if self.poly == 1 else 0.0)
        return RightTail(self.rate, self.coeff * g, self.poly, offset * g)


@dataclass(frozen=True)
class Grid:
    t_min: float
    step: float
    n: int

    @property
    def t(self) -> np.ndarray:
        return self.t_min + self.step * np.arange(self.n)

    @property
    def t_max(self) -> float:
        return self.t_min + self.step * (self.n - 1)


def grid_step(h: float, delta_target: float = DELTA_TARGET) -> float:
    """Largest step <= ``delta_target`` that divides ``h`` exactly.

    Delays shorter than ``delta_target / MIN_STEP_RATIO`` cannot be aligned
    with a usable grid and raise ValueError.
    """
    if h <= 0.0:
        return delta_target
    if h < delta_target / MIN_STEP_RATIO:
        raise ValueError(f"delay h={h!r} is below the grid resolution "
                         f"(needs h = 0 or h >= {delta_target / MIN_STEP_RATIO:g})")
    m = max(1, math.ceil(h / delta_target - 1e-9))
    return h / m


def make_grid(h, center, left_rate, right_rate, delta_target=DELTA_TARGET,
              depth=DECAY_DEPTH) -> Grid:
    """Grid spanning ``depth`` decay lengths on each side of ``center``.

    Nodes sit at integer multiples of the step so that grids built for the
    same ``h`` share nodes.
    """
    step = grid_step(h, delta_target)
    lo = max(center - depth / left_rate, -T_CLAMP)
    hi = min(center + depth / abs(right_rate), T_CLAMP)
    i_lo = math.floor(lo / step)
    i_hi = math.ceil(hi / step)
    return Grid(t_min=i_lo * step, step=step, n=i_hi - i_lo + 1)


@dataclass(frozen=True, eq=False)
class Profile:
    t_min: float
    step: float
    values: np.ndarray
    left_tail: LeftTail
    right_tail: RightTail
    label: str = field(default="", compare=False)
    gaps: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.gaps is not None:
            g = np.asarray(self.gaps, dtype=float)
            if g.shape != v.shape:
                raise ValueError("gaps must match values")
            g.setflags(write=False)
            object.__setattr__(self, "gaps", g)

    @property
    def y(self) -> np.ndarray:
        """``1 - phi`` on the grid, at full relative precision when available."""
        return self.gaps if self.gaps is not None else 1.0 - self.values

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def grid(self) -> Grid:
        return Grid(self.t_min, self.step, self.n)

    @property
    def t(self) -> np.ndarray:
        return self.grid.t

    @property
    def t_max(self) -> float:
        return self.t_min + self.step * (self.n - 1)

    def with_values(self, values, left_tail=None, right_tail=None, label=None, gaps=None) -> "Profile":
        return replace(self, values=np.asarray(values, dtype=float),
                       left_tail=left_tail or self.left_tail,
                       right_tail=right_tail or self.right_tail,
                       label=self.label if label is None else label,
                       gaps=gaps)

    def at(self, t):
        """Evaluate on arbitrary points: linear interpolation inside, tails outside."""
        t = np.asarray(t, dtype=float)
        out = np.interp(t, self.t, self.values)
        left = t < self.t_min
        if np.any(left):
            out = np.where(left, self.left_tail(np.where(left, t, self.t_min)), out)
        right = t > self.t_max
        if np.any(right):
            out = np.where(right, 1.0 - self.right_tail.gap(np.where(right, t, self.t_max)), out)
        return out

    def gap_at(self, t):
        """``1 - phi`` on arbitrary points, interpolating the stored gaps."""
        t = np.asarray(t, dtype=float)
        out = np.interp(t, self.t, self.y)
        left = t < self.t_min
        if np.any(left):
            out = np.where(left, 1.0 - self.left_tail(np.where(left, t, self.t_min)), out)
        right = t > self.t_max
        if np.any(right):
            out = np.where(right, self.right_tail.gap(np.where(right, t, self.t_max)), out)
        return out

    def problems(self, tail_tol: float = 1e-6) -> list:
        """List violated invariants (empty when the profile is valid)."""
        v = self.values
        out = []
        if self.step <= 0:
            out.append("non-positive step")
        if np.any(np.diff(v) < 0):
            out.append(f"not nondecreasing (min diff {np.diff(v).min():.3e})")
        if v.min() < 0.0 or v.max() > 1.0:
            out.append("values outside [0, 1]")
        left_gap = abs(float(self.left_tail(self.t_min)) - v[0])
        if left_gap > tail_tol:
            out.append(f"left tail discontinuity {left_gap:.3e}")
        right_gap = abs(1.0 - float(self.right_tail.gap(self.t_max)) - v[-1])
        if right_gap > tail_tol:
            out.append(f"right tail discontinuity {right_gap:.3e}")
        return out

    def check(self, tail_tol: float = 1e-6) -> "Profile":
        bad = self.problems(tail_tol)
        if bad:
            raise ValueError("invalid profile: " + "; ".join(bad))
        return self

    # ---------------------------------------------------------------- I/O

    def sidecar(self) -> dict:
        return {
            "t_min": float(self.t_min),
            "t_max": float(self.t_max),
            "step": float(self.step),
            "n": int(self.n),
            "left_tail": {"rate": float(self.left_tail.rate), "coeff": float(self.left_tail.coeff)},
            "right_tail": {"rate": float(self.right_tail.rate), "coeff": float(self.right_tail.coeff),
                           "poly": int(self.right_tail.poly), "offset": float(self.right_tail.offset)},
            "label": self.label,
        }

    def to_csv(self, path, sidecar: bool = True) -> Path:
        path = Path(path)
        with open(path, "w") as fh:
            fh.write("t,phi\n")
            for ti, vi in zip(self.t, self.values):
                fh.write(f"{ti:.17g},{vi:.17g}\n")
        if sidecar:
            path.with_suffix(".json").write_text(json.dumps(self.sidecar(), indent=2))
        return path

    @classmethod
    def from_csv(cls, path, meta: Optional[dict] = None) -> "Profile":
        path = Path(path)
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if meta is None:
            side = path.with_suffix(".json")
            meta = json.loads(side.read_text()) if side.exists() else None
        t, v = data[:, 0], data[:, 1]
        step = meta["step"] if meta else float(np.mean(np.diff(t)))
        if np.max(np.abs(np.diff(t) - step)) > 1e-9 * max(1.0, abs(step)):
            raise ValueError("CSV grid is not uniform")
        if meta:
            lt = LeftTail(**meta["left_tail"])
            rt = RightTail(**meta["right_tail"])
            label = meta.get("label", "")
        else:
            lt, rt, label = LeftTail(0.0, float(v[0])), RightTail(0.0, 1.0 - float(v[-1])), ""
        return cls(t_min=float(t[0]), step=float(step), values=v, left_tail=lt, right_tail=rt, label=label)


def sample(fn: Callable, grid: Grid, left_tail: LeftTail, right_tail: RightTail, label="",
           gap_fn: Optional[Callable] = None) -> Profile:
    """Sample ``fn`` on ``grid``; ``gap_fn`` (if given) supplies ``1 - fn`` exactly."""
    t = grid.t
    gaps = None if gap_fn is None else np.clip(gap_fn(t), 0.0, 1.0)
    return Profile(t_min=grid.t_min, step=grid.step, values=np.clip(fn(t), 0.0, 1.0),
                   left_tail=left_tail, right_tail=right_tail, label=label, gaps=gaps)


# --------------------------------------------------------------------------
# noncritical lower solution


def _require_pair(roots: RootData):
    if roots.lambda2 is None:
        raise ValueError("psi has no negative roots; classify the parameters first")


def lower_tau(roots: RootData) -> float:
    """Junction point of the noncritical lower solution."""
    _require_pair(roots)
    lam, l2 = roots.lam, roots.lambda2
    return math.log(lam / (lam - l2)) / l2


def lower_noncritical_parts(roots: RootData, shift: float = 0.0):
    """Return ``(phi, dphi, d2phi, gap)`` callables for ``phi_-(t - shift)``.

    ``gap`` is ``1 - phi`` evaluated without cancellation.
    """
    _require_pair(roots)
    lam, l2 = roots.lam, roots.lambda2
    tau = lower_tau(roots) + shift
    k = -l2 / (lam - l2)

    def phi(t):
        t = np.asarray(t, dtype=float)
        return np.where(t <= tau, k * np.exp(lam * np.minimum(t - tau, 0.0)),
                        -np.expm1(l2 * (np.maximum(t, tau) - shift)))

    def gap(t):
        t = np.asarray(t, dtype=float)
        return np.where(t <= tau, 1.0 - k * np.exp(lam * np.minimum(t - tau, 0.0)),
                        np.exp(l2 * (np.maximum(t, tau) - shift)))

    def dphi(t):
        t = np.asarray(t, dtype=float)
        return np.where(t <= tau, lam * k * np.exp(lam * np.minimum(t - tau, 0.0)),
                        -l2 * np.exp(l2 * (np.maximum(t, tau) - shift)))

    def d2phi(t):
        t = np.asarray(t, dtype=float)
        return np.where(t <= tau, lam * lam * k * np.exp(lam * np.minimum(t - tau, 0.0)),
                        -l2 * l2 * np.exp(l2 * (np.maximum(t, tau) - shift)))

    return phi, dphi, d2phi, gap


def profile_residual(parts, epsilon: float, h: float, t):
    """``eps phi'' - phi' + phi(t) (1 - phi(t - h))`` from analytic pieces."""
    phi, dphi, d2phi, gap = parts
    t = np.asarray(t, dtype=float)
    return epsilon * d2phi(t) - dphi(t) + phi(t) * gap(t - h)


def lower_residual(roots: RootData, t, shift: float = 0.0):
    return profile_residual(lower_noncritical_parts(roots, shift), roots.epsilon, roots.h, t)


def lower_noncritical(roots: RootData, grid: Optional[Grid] = None, shift: float = 0.0,
                      delta: float = DELTA_TARGET) -> Profile:
    """Glued exponential lower solution, valid when ``lambda1 < lambda2``."""
    _require_pair(roots)
    if roots.lambda1 is not None and roots.lambda1 >= roots.lambda2:
        raise ValueError("lower_noncritical needs lambda1 < lambda2")
    lam, l2 = roots.lam, roots.lambda2
    tau = lower_tau(roots)
    if grid is None:
        grid = make_grid(roots.h, tau + shift, lam, l2, delta)
    k = -l2 / (lam - l2)
    parts = lower_noncritical_parts(roots, shift)
    left = LeftTail(rate=lam, coeff=k * math.exp(-lam * (tau + shift)))
    right = RightTail(rate=l2, coeff=math.exp(-l2 * shift))
    return sample(parts[0], grid, left, right, label="lower", gap_fn=parts[3])


# --------------------------------------------------------------------------
# noncritical upper solution


def upper_t0(roots: RootData, r: float) -> float:
    l2 = roots.lambda2
    return (math.log(-r) - math.log(-l2)) / (l2 - r)


def upper_parts(roots: RootData, r: float, shift: float = 0.0):
    """Pieces of ``phi_+(t - shift)``: constant left of t0, then 1 - e^{l2 t} + e^{r t}."""
    l2 = roots.lambda2
    t0 = upper_t0(roots, r)
    base = 1.0 - math.exp(l2 * t0) + math.exp(r * t0)
    t0s = t0 + shift

    def right(t):
        return np.maximum(t, t0s) - shift

    def gap(t):
        t = np.asarray(t, dtype=float)
        s = right(t)
        # e^{l2 s} - e^{r s} without cancellation; t0 is the global minimum of
        # phi, so the clamp only removes rounding excursions
        g = -np.exp(l2 * s) * np.expm1((r - l2) * s)
        return np.where(t <= t0s, 1.0 - base, np.minimum(g, 1.0 - base))

    def phi(t):
        t = np.asarray(t, dtype=float)
        return np.where(t <= t0s, base, 1.0 - gap(t))

    def dphi(t):
        t = np.asarray(t, dtype=float)
        s = right(t)
        return np.where(t <= t0s, 0.0, -l2 * np.exp(l2 * s) + r * np.exp(r * s))

    def d2phi(t):
        t = np.asarray(t, dtype=float)
        s = right(t)
        return np.where(t <= t0s, 0.0, -l2 * l2 * np.exp(l2 * s) + r * r * np.exp(r * s))

    return phi, dphi, d2phi, gap


def upper_residual(roots: RootData, r: float, t, shift: float = 0.0):
    """``N phi_+`` evaluated piecewise.

    Where both ``t`` and ``t - h`` fall on the exponential branch the
    cancellation-free form ``psi(r) e^{rt} - (e^{l2 t} - e^{rt})(e^{l2(t-h)} - e^{r(t-h)})``
    is used.
    """
    eps, h, l2 = roots.epsilon, roots.h, roots.lambda2
    t = np.asarray(t, dtype=float)
    generic = profile_residual(upper_parts(roots, r, shift), eps, h, t)
    s = t - shift
    t0 = upper_t0(roots, r)
    y = np.exp(l2 * s) - np.exp(r * s)
    yh = np.exp(l2 * (s - h)) - np.exp(r * (s - h))
    clean = psi(r, eps, h) * np.exp(r * s) - psi(l2, eps, h) * np.exp(l2 * s) - y * yh
    return np.where(s - h >= t0, clean, generic)


def upper_sweep_ok(roots: RootData, r: float, tol: float = 1e-12) -> bool:
    t0 = upper_t0(roots, r)
    t = np.linspace(t0 - 5.0, t0 + roots.h + 20.0, SWEEP_POINTS)
    return bool(np.all(upper_residual(roots, r, t) >= -tol))


def upper_noncritical(roots: RootData, r: float, grid: Optional[Grid] = None, shift: float = 0.0,
                      delta: float = DELTA_TARGET, verify: bool = True) -> Profile:
    """Upper solution flattened left of its minimum point t0(r)."""
    _require_pair(roots)
    l1, l2 = roots.lambda1, roots.lambda2
    if not (r < l2 and (l1 is None or r > l1)):
        raise RejectedR(f"r={r!r} must lie in (lambda1, lambda2) = ({l1}, {l2})")
    if verify and not upper_sweep_ok(roots, r):
        raise RejectedR(f"differential inequality fails for r={r!r}")
    t0 = upper_t0(roots, r)
    if grid is None:
        grid = make_grid(roots.h, t0 + shift, roots.lam, l2, delta)
    parts = upper_parts(roots, r, shift)
    base = float(parts[0](t0 + shift))
    return sample(parts[0], grid, LeftTail(rate=0.0, coeff=base),
                  RightTail(rate=l2, coeff=math.exp(-l2 * shift)), label="upper", gap_fn=parts[3])


def choose_r(roots: RootData, max_halvings: int = 40) -> float:
    """First ``r = lambda2 - d0 2^-k`` whose upper solution passes the sweep."""
    _require_pair(roots)
    l1, l2 = roots.lambda1, roots.lambda2
    if l1 is not None and l1 >= l2:
        raise NoValidR("lambda1 == lambda2: no noncritical upper solution")
    d0 = 0.1 if math.isinf(l1) else min(0.1, (l2 - l1) / 2.0)
    for k in range(max_halvings + 1):
        r = l2 - d0 * 2.0**-k
        if r >= l2:
            break
        if upper_sweep_ok(roots, r):
            return r
    raise NoValidR(f"no admissible r after {max_halvings} halvings")


# --------------------------------------------------------------------------
# critical lower solution


def critical_A_bound(roots: RootData) -> float:
    l2, h = roots.lambda2, roots.h
    return math.expm1(-l2 * h) / h


def critical_tau(roots: RootData, A: float) -> float:
    """Positive root of ``A t + 1 = exp(-lambda2 t)``; it exceeds h."""
    l2 = roots.lambda2
    f = lambda t: math.expm1(-l2 * t) - A * t
    hi = max(1.0, roots.h)
    while f(hi) <= 0.0:
        hi *= 2.0
    return brentq(f, roots.h, hi, xtol=1e-15)


def lower_critical_parts(roots: RootData, A: float, shift: float = 0.0):
    l2 = roots.lambda2
    tau = critical_tau(roots, A) + shift

    def s_of(t):
        return np.maximum(t, tau) - shift

    def phi(t):
        t = np.asarray(t, dtype=float)
        s = s_of(t)
        return np.where(t <= tau, 0.0, 1.0 - (A * s + 1.0) * np.exp(l2 * s))

    def gap(t):
        t = np.asarray(t, dtype=float)
        s = s_of(t)
        return np.where(t <= tau, 1.0, (A * s + 1.0) * np.exp(l2 * s))

    def dphi(t):
        t = np.asarray(t, dtype=float)
        s = s_of(t)
        return np.where(t <= tau, 0.0, -np.exp(l2 * s) * (A + l2 * (A * s + 1.0)))

    def d2phi(t):
        t = np.asarray(t, dtype=float)
        s = s_of(t)
        return np.where(t <= tau, 0.0, -np.exp(l2 * s) * l2 * (2.0 * A + l2 * (A * s + 1.0)))

    return phi, dphi, d2phi, gap


def lower_critical(roots: RootData, params: Optional[ModelParams] = None, A: Optional[float] = None,
                   grid: Optional[Grid] = None, shift: float = 0.0, delta: float = DELTA_TARGET,
                   force: bool = False) -> Profile:
    """Continuous, piecewise analytic lower solution for the double-root case.

    Zero up to ``tau'`` and ``1 - (A t + 1) e^{lambda2 t}`` beyond. ``A``
    defaults to twice its admissible lower bound. Outside the critical
    band a ValueError is raised unless ``force`` is set.
    """
    _require_pair(roots)
    if not force:
        in_band = classify(params).critical_speed if params is not None else roots.double_root
        if not in_band:
            raise ValueError("lower_critical applies only at the critical speed c = c*(h)")
    if roots.h <= 0.0:
        raise ValueError("lower_critical needs h > 0")
    bound = critical_A_bound(roots)
    if A is None:
        A = 2.0 * bound
    if not A > bound:
        raise ValueError(f"A={A!r} must exceed {bound!r}")
    tau = critical_tau(roots, A)
    if grid is None:
        grid = make_grid(roots.h, tau + shift, roots.lam, roots.lambda2, delta)
    parts = lower_critical_parts(roots, A, shift)
    l2 = roots.lambda2
    right = RightTail(rate=l2, coeff=A * math.exp(-l2 * shift), poly=1,
                      offset=(1.0 - A * shift) * math.exp(-l2 * shift))
    return sample(parts[0], grid, LeftTail(rate=roots.lam, coeff=0.0), right,
                  label="lower_critical", gap_fn=parts[3])


# --------------------------------------------------------------------------
# ordering


@dataclass(frozen=True)
class LowerUpperPair:
    lower: Profile
    upper: Profile
    shift: float


def _left_tail_below(lo: LeftTail, up: LeftTail, sigma: float) -> bool:
    if lo.coeff == 0.0:
        return True
    if up.rate == 0.0:
        return up.coeff > 0.0
    if lo.rate != up.rate:
        return lo.rate > up.rate
    return lo.coeff < up.coeff * math.exp(up.rate * sigma)


def _right_tail_below(lo: RightTail, up: RightTail, sigma: float) -> bool:
    # need 1 - lower(t) > 1 - upper(t + sigma) for t -> +inf
    if not math.isclose(lo.rate, up.rate, rel_tol=1e-12):
        return lo.rate > up.rate
    if lo.poly != up.poly:
        return lo.poly > up.poly
    return lo.coeff > up.coeff * math.exp(up.rate * sigma)


def _ordered(lower: Profile, upper: Profile, sigma: float, flat: float = 1e-14) -> bool:
    if not (_left_tail_below(lower.left_tail, upper.left_tail, sigma)
            and _right_tail_below(lower.right_tail, upper.right_tail, sigma)):
        return False
    t = np.union1d(lower.t, upper.t - sigma)
    a, b = lower.at(t), upper.at(t + sigma)
    if np.any(a > b):
        return False
    # float saturation at 0 or 1 is settled by the tail comparison above
    interior = (b > flat) & (a < 1.0 - flat)
    return bool(np.all(a[interior] < b[interior]))


def shift_to_order(lower: Profile, upper: Profile, max_shift: float = 2.0**10) -> LowerUpperPair:
    """Find ``sigma`` with ``lower(t) < upper(t + sigma)`` by doubling.

    The returned pair carries ``upper(. + sigma)`` resampled on the lower's grid.
    """
    sigma = 0.0
    while sigma <= max_shift:
        if _ordered(lower, upper, sigma):
            ts = lower.t + sigma
            shifted = Profile(t_min=lower.t_min, step=lower.step, values=upper.at(ts),
                              left_tail=upper.left_tail.shifted(sigma),
                              right_tail=upper.right_tail.shifted(sigma), label=upper.label,
                              gaps=upper.gap_at(ts))
            return LowerUpperPair(lower=lower, upper=shifted, shift=sigma)
        sigma = 1.0 if sigma == 0.0 else 2.0 * sigma
    raise OrderingFailed(f"no ordering shift up to {max_shift}")
