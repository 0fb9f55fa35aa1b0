"""Characteristic roots, critical curves and existence/regime classification.

The profile equation in scaled time is

    eps * phi'' - phi' + phi(t) * (1 - phi(t - h)) = 0,    eps = 1 / c**2.

Linearising at the zero state gives ``eps z^2 - z + 1 = 0`` (roots
``lam <= mu``); linearising at the positive state gives the transcendental
function ``psi(z) = eps z^2 - z - exp(-z h)`` whose negative zeros
``lambda1 <= lambda2 < 0`` govern the approach to 1.
"""
from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import brentq

# lambda1 when h == 0 (the delayed term disappears and psi is a quadratic).
NEG_INFINITY = -math.inf

INV_E = math.exp(-1.0)
HALF_LN2 = 0.5 * math.log(2.0)
C_ONE_TERM = 1.5 * math.sqrt(2.0)
DEFAULT_TOL = 1e-9

_XTOL = 1e-15


@dataclass(frozen=True)
class ModelParams:
    """Delay ``h`` and speed ``c`` of one problem instance.

    ``epsilon`` is derived as ``1/c**2`` unless given explicitly, which
    :meth:`from_epsilon` does so that ``epsilon`` is stored exactly.
    """

    h: float
    c: float
    epsilon: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if not (math.isfinite(self.h) and self.h >= 0.0):
            raise ValueError(f"delay h must be finite and >= 0, got {self.h!r}")
        if not (math.isfinite(self.c) and self.c >= 2.0):
            raise ValueError(f"speed c must be finite and >= 2, got {self.c!r}")
        if self.epsilon is None:
            object.__setattr__(self, "epsilon", 1.0 / self.c**2)
        if not 0.0 < self.epsilon <= 0.25:
            raise ValueError(f"epsilon must lie in (0, 0.25], got {self.epsilon!r}")

    @classmethod
    def from_epsilon(cls, h: float, epsilon: float) -> "ModelParams":
        if not 0.0 < epsilon <= 0.25:
            raise ValueError(f"epsilon must lie in (0, 0.25], got {epsilon!r}")
        return cls(h=float(h), c=1.0 / math.sqrt(epsilon), epsilon=float(epsilon))


@dataclass(frozen=True)
class RootData:
    """Characteristic roots at both steady states.

    ``lambda1`` is :data:`NEG_INFINITY` when ``h == 0``; ``lambda1`` and
    ``lambda2`` are ``None`` when psi has no negative zeros.
    """

    lam: float
    mu: float
    lambda1: Optional[float]
    lambda2: Optional[float]
    pos_root: float
    epsilon: float
    h: float

    @property
    def has_negative_roots(self) -> bool:
        return self.lambda2 is not None

    @property
    def double_root(self) -> bool:
        return self.lambda2 is not None and self.lambda1 == self.lambda2

    def to_dict(self) -> dict:
        l1 = self.lambda1
        return {
            "h": float(self.h),
            "epsilon": float(self.epsilon),
            "lambda": float(self.lam),
            "mu": float(self.mu),
            "lambda1": None if l1 is None or math.isinf(l1) else float(l1),
            "lambda1_neg_infinity": l1 is not None and math.isinf(l1),
            "lambda2": None if self.lambda2 is None else float(self.lambda2),
            "negative_roots_absent": self.lambda2 is None,
            "double_root": self.double_root,
            "pos_root": float(self.pos_root),
        }


def psi(z, epsilon, h):
    """Characteristic function at the positive steady state."""
    return epsilon * z * z - z - np.exp(-z * h)


def dpsi(z, epsilon, h):
    return 2.0 * epsilon * z - 1.0 + h * np.exp(-z * h)


def zero_state_roots(params: ModelParams) -> Tuple[float, float]:
    """Roots ``lam <= mu`` of ``eps z^2 - z + 1 = 0``.

    Uses the cancellation-free form ``lam = 2 / (1 + sqrt(1 - 4 eps))`` and
    ``mu = 1 / (eps lam)``.
    """
    eps = params.epsilon
    if not 0.0 < eps <= 0.25:
        raise ValueError(f"epsilon must lie in (0, 0.25], got {eps!r}")
    d = math.sqrt(max(0.0, 1.0 - 4.0 * eps))
    lam = 2.0 / (1.0 + d)
    mu = (1.0 + d) / (2.0 * eps)
    return lam, mu


def _newton_polish(z, eps, h, steps=3):
    best, fbest = z, abs(psi(z, eps, h))
    for _ in range(steps):
        d = dpsi(best, eps, h)
        if d == 0.0:
            break
        cand = best - psi(best, eps, h) / d
        fc = abs(psi(cand, eps, h))
        if fc < fbest:
            best, fbest = cand, fc
        else:
            break
    return float(best)


def _grow(f, start, step=1.0):
    """Smallest ``start + step 2^k`` (k >= 0) where ``f`` is positive."""
    for _ in range(200):
        x = start + step
        if f(x) > 0.0:
            return x
        step *= 2.0
    raise RuntimeError("could not bracket root")


# The delayed branch is solved in x = -z h > 0. In that variable the
# maximiser and lambda1 stay of moderate size even for tiny h, where z itself
# is of order log(1/h)/h, and logarithms avoid overflow of exp(-z h). When
# h is so small that lambda1 = -x/h overflows, lambda1 is reported as
# NEG_INFINITY, as for h = 0.


def _dpsi_sign(x, epsilon, h):
    """Same sign as ``psi'(-x/h)``; convex in x with minimum at ``1 - h/(2 eps)``."""
    return 2.0 * math.log(h) + x - math.log(h + 2.0 * epsilon * x)


def _psi_sign(x, epsilon, h):
    """Same sign as ``psi(-x/h)`` for ``x > 0``."""
    return math.log(x) + math.log(h + epsilon * x) - 2.0 * math.log(h) - x


def _maximizer_x(epsilon: float, h: float) -> Optional[float]:
    f = lambda x: _dpsi_sign(x, epsilon, h)
    x_c = max(0.0, 1.0 - h / (2.0 * epsilon))
    if f(x_c) >= 0.0:
        return None
    right = _grow(f, x_c)
    return brentq(f, x_c, right, xtol=1e-300, rtol=4 * np.finfo(float).eps)


def psi_maximizer(epsilon: float, h: float) -> Optional[float]:
    """Local maximum point of psi on (-inf, 0), or None if psi is increasing there.

    psi''' > 0, so psi' is convex; psi'(-inf) = +inf. The maximum is the
    leftmost zero of psi'.
    """
    if h <= 0.0:
        return None
    x = _maximizer_x(epsilon, h)
    return None if x is None else -x / h


def negative_roots(params: ModelParams) -> Optional[Tuple[float, float]]:
    """Negative zeros ``lambda1 <= lambda2 < 0`` of psi, or None when absent.

    For ``h == 0`` returns ``(NEG_INFINITY, root)`` where ``root`` is the
    negative root of ``eps z^2 - z - 1``. At tangency (psi's maximum equal
    to zero up to rounding) the double root is returned twice.
    """
    eps, h = params.epsilon, params.h
    if h == 0.0:
        return NEG_INFINITY, -2.0 / (1.0 + math.sqrt(1.0 + 4.0 * eps))
    xmax = _maximizer_x(eps, h)
    if xmax is None:
        return None
    with np.errstate(over="ignore"):
        zmax = -xmax / h
    if not math.isfinite(zmax):
        return NEG_INFINITY, _lambda2(eps, h, zmax)
    with np.errstate(over="ignore", invalid="ignore"):
        pmax = psi(zmax, eps, h)
        scale = eps * zmax * zmax + abs(zmax) + math.exp(min(xmax, 700.0))
    if math.isfinite(pmax) and abs(pmax) <= 8.0 * np.finfo(float).eps * scale:
        return zmax, zmax
    if _psi_sign(xmax, eps, h) < 0.0:
        return None
    rtol = 4 * np.finfo(float).eps
    g = lambda x: _psi_sign(x, eps, h)
    x_right = _grow(lambda x: -g(x), xmax)
    l1 = -brentq(g, xmax, x_right, xtol=1e-300, rtol=rtol) / h
    with np.errstate(over="ignore", invalid="ignore"):
        return _newton_polish(l1, eps, h), _lambda2(eps, h, zmax)


def _lambda2(eps, h, zmax):
    """The root in ``(zmax, 0)``, where psi decreases from positive to -1."""
    f = lambda z: psi(z, eps, h)
    left = -1.0
    while f(left) <= 0.0 and left > zmax:
        left *= 2.0
    left = max(left, zmax)
    l2 = brentq(f, left, 0.0, xtol=_XTOL, rtol=4 * np.finfo(float).eps)
    return _newton_polish(l2, eps, h)


def positive_root(params: ModelParams) -> float:
    """Unique positive zero of psi.

    psi(0) = -1 and psi(z) >= eps z^2 - z - 1 for z > 0, so the positive
    root of that quadratic is a valid right bracket.
    """
    eps, h = params.epsilon, params.h
    upper = (1.0 + math.sqrt(1.0 + 4.0 * eps)) / (2.0 * eps)
    if h == 0.0:
        return upper
    f = lambda z: psi(z, eps, h)
    if f(upper) <= 0.0:
        # psi(upper) = 1 - exp(-upper h) is below rounding: h is negligible
        return upper
    z = brentq(f, 0.0, upper, xtol=_XTOL, rtol=4 * np.finfo(float).eps)
    return _newton_polish(z, eps, h)


def root_data(params: ModelParams, double: bool = False) -> RootData:
    """Collect all roots for ``params``.

    With ``double=True`` the negative pair is replaced by the maximiser of
    psi counted twice; this is how the critical-speed band is entered.
    """
    lam, mu = zero_state_roots(params)
    if double:
        if params.h == 0.0:
            raise ValueError("no double negative root when h == 0")
        z = psi_maximizer(params.epsilon, params.h)
        if z is None:
            raise ValueError("psi has no interior maximum; no double root")
        neg = (z, z)
    else:
        neg = negative_roots(params)
    l1, l2 = neg if neg is not None else (None, None)
    return RootData(lam=lam, mu=mu, lambda1=l1, lambda2=l2, pos_root=positive_root(params),
                    epsilon=params.epsilon, h=params.h)


# --------------------------------------------------------------------------
# critical curves


def _h_star_param(t):
    s = np.sqrt(4.0 * t * t + 1.0)
    return (2.0 * t + s) * np.exp(-1.0 - 2.0 * t / (1.0 + s))


def _eps_sharp_param(t):
    return (t + 2.0 + np.sqrt(2.0 * t + 4.0)) / (t * t)


def _h_sharp_param(t):
    return -np.log(2.0 + np.sqrt(2.0 * t + 4.0)) / t


def _h1_equation(h):
    s = math.sqrt(1.0 + 4.0 * h * h)
    return 2.0 * h * h * math.exp(1.0 + s - 2.0 * h) - (1.0 + s)


@functools.lru_cache(maxsize=None)
def _star_t_end() -> float:
    t_end = brentq(lambda t: t * _h_star_param(t) - 0.25, 0.0, 1.0, xtol=1e-16)
    grid = np.linspace(0.0, t_end, 1000)
    if not np.all(np.diff(_h_star_param(grid)) > 0) or not np.all(np.diff(grid * _h_star_param(grid)) > 0):
        raise RuntimeError("parametric map for eps* is not monotone on its range")
    return t_end


@functools.lru_cache(maxsize=None)
def _sharp_t_end() -> float:
    t_end = brentq(lambda t: _eps_sharp_param(t) - 0.25, -1.95, -1.5, xtol=1e-16)
    grid = np.linspace(-2.0 + 1e-9, t_end, 1000)
    if not np.all(np.diff(_h_sharp_param(grid)) > 0) or not np.all(np.diff(_eps_sharp_param(grid)) > 0):
        raise RuntimeError("parametric map for eps# is not monotone on its range")
    return t_end


@functools.lru_cache(maxsize=None)
def critical_constants() -> Tuple[float, float]:
    """Return ``(h1, h0)``.

    ``h1`` bounds the delays admitting monotone fronts; ``h0`` is the delay
    beyond which ``lambda1 > 2 lambda2`` for every admissible speed.
    """
    h1 = brentq(_h1_equation, 0.4, 0.7, xtol=1e-16)
    h0 = float(_h_sharp_param(_sharp_t_end()))
    return h1, h0


def eps_star(h: float) -> float:
    """Threshold ``eps*(h)`` on ``(1/e, h1]`` by inverting the parametric map."""
    h1, _ = critical_constants()
    if not INV_E < h <= h1 * (1.0 + 1e-13):
        raise ValueError(f"eps_star is defined on (1/e, h1], got h={h!r}")
    t_end = _star_t_end()
    if h >= _h_star_param(t_end):
        return 0.25
    t = brentq(lambda s: _h_star_param(s) - h, 0.0, t_end, xtol=1e-14)
    return min(float(t * _h_star_param(t)), 0.25)


def eps_sharp(h: float) -> float:
    """Threshold ``eps#(h)`` on ``(0.5 ln 2, h0]``."""
    _, h0 = critical_constants()
    if not HALF_LN2 < h <= h0 * (1.0 + 1e-13):
        raise ValueError(f"eps_sharp is defined on (0.5 ln 2, h0], got h={h!r}")
    t_end = _sharp_t_end()
    if h >= _h_sharp_param(t_end):
        return 0.25
    t = brentq(lambda s: _h_sharp_param(s) - h, -2.0, t_end, xtol=1e-14)
    return min(float(_eps_sharp_param(t)), 0.25)


def c_star(h: float) -> Optional[float]:
    """Maximal speed of monotone fronts: inf for h <= 1/e, None beyond h1."""
    h1, _ = critical_constants()
    if h <= INV_E:
        return math.inf
    if h > h1 * (1.0 + 1e-13):
        return None
    return 1.0 / math.sqrt(eps_star(h))


def c_sharp(h: float) -> float:
    """Speed below which the +inf expansion has no ``exp(lambda1 t)`` term."""
    _, h0 = critical_constants()
    if h <= HALF_LN2:
        return math.inf
    if h > h0:
        return 2.0
    return 1.0 / math.sqrt(eps_sharp(h))


# --------------------------------------------------------------------------
# classification


class Verdict(str, enum.Enum):
    EXISTS = "EXISTS"
    NOT_EXISTS = "NOT_EXISTS"


class MinusRegime(str, enum.Enum):
    CRITICAL_C2 = "CRITICAL_C2"
    TWO_TERM = "TWO_TERM"
    ONE_TERM = "ONE_TERM"


class PlusRegime(str, enum.Enum):
    CLEAN = "CLEAN"
    TWO_EXP = "TWO_EXP"
    DOUBLE_ROOT = "DOUBLE_ROOT"


@dataclass(frozen=True)
class RegimeReport:
    h: float
    c: float
    epsilon: float
    verdict: Verdict
    critical_speed: bool = False
    minus_regime: Optional[MinusRegime] = None
    plus_regime: Optional[PlusRegime] = None
    c_star: Optional[float] = None
    c_sharp: Optional[float] = None

    @property
    def exists(self) -> bool:
        return self.verdict is Verdict.EXISTS

    @property
    def uses_b_operator(self) -> bool:
        return self.minus_regime is MinusRegime.CRITICAL_C2

    def to_dict(self) -> dict:
        """JSON-ready dict; infinite speeds become ``None`` with an ``*_infinite`` flag."""

        def num(x):
            return None if x is None or math.isinf(x) else float(x)

        return {
            "h": float(self.h),
            "c": float(self.c),
            "epsilon": float(self.epsilon),
            "verdict": self.verdict.value,
            "critical_speed": self.critical_speed,
            "minus_regime": self.minus_regime.value if self.minus_regime else None,
            "plus_regime": self.plus_regime.value if self.plus_regime else None,
            "c_star": num(self.c_star),
            "c_sharp": num(self.c_sharp),
            "c_star_infinite": self.c_star is not None and math.isinf(self.c_star),
            "c_sharp_infinite": self.c_sharp is not None and math.isinf(self.c_sharp),
        }


def classify(params: ModelParams, tol: float = DEFAULT_TOL) -> RegimeReport:
    """Existence verdict and asymptotic regimes at both ends.

    ``tol`` is a relative band in ``c`` used for the curve boundaries
    ``c = 2`` and ``c = c*(h)``. Never raises for valid ``params``.
    """
    h, c = params.h, params.c
    base = dict(h=h, c=c, epsilon=params.epsilon)
    cs = c_star(h)
    if cs is None:
        return RegimeReport(verdict=Verdict.NOT_EXISTS, **base)
    critical = math.isfinite(cs) and abs(c - cs) <= tol * cs
    if c > cs and not critical:
        return RegimeReport(verdict=Verdict.NOT_EXISTS, c_star=cs, **base)

    if abs(c - 2.0) <= 2.0 * tol:
        minus = MinusRegime.CRITICAL_C2
    elif c < C_ONE_TERM:
        minus = MinusRegime.TWO_TERM
    else:
        minus = MinusRegime.ONE_TERM

    _, h0 = critical_constants()
    csh = c_sharp(h)
    if critical:
        plus = PlusRegime.DOUBLE_ROOT
    elif h <= h0 and c <= csh * (1.0 + tol):
        plus = PlusRegime.CLEAN
    else:
        # covers c in (c#, c*) and also c = 2 with h in (h0, h1), where
        # lambda1 > 2 lambda2 and the lambda1 term is the first correction.
        plus = PlusRegime.TWO_EXP
    return RegimeReport(verdict=Verdict.EXISTS, critical_speed=critical,
                        minus_regime=minus, plus_regime=plus, c_star=cs, c_sharp=csh, **base)
