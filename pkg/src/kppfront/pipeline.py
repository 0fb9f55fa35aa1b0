"""End-to-end front computation: classify, build starts, iterate, audit, fit."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

from .analysis import ExpansionFit, fit_minus_tail, fit_plus_tail, safe_fit
from .charroots import (
    ModelParams,
    RegimeReport,
    RootData,
    c_star,
    classify,
    eps_star,
    root_data,
)
from .errors import MonotonicityBroken, NotConverged, WavefrontError
from .operators import IterationReport, OperatorConfig, iterate
from .profiles import (
    DECAY_DEPTH,
    DELTA_TARGET,
    Profile,
    choose_r,
    critical_A_bound,
    critical_tau,
    lower_critical,
    lower_noncritical,
    lower_tau,
    make_grid,
    shift_to_order,
    upper_noncritical,
)

log = logging.getLogger(__name__)

MAX_A_DOUBLINGS = 6


class NoFront(WavefrontError):
    code = "NOT_EXISTS"


def critical_params(h: float) -> ModelParams:
    """Parameters at the critical speed ``c*(h)`` (requires ``1/e < h <= h1``)."""
    cs = c_star(h)
    if cs is None or math.isinf(cs):
        raise ValueError(f"no finite critical speed at h={h!r}")
    return ModelParams.from_epsilon(h, eps_star(h))


@dataclass
class SolveResult:
    params: ModelParams
    report: RegimeReport
    roots: RootData
    config: OperatorConfig
    profile: Profile
    iteration: IterationReport
    lower: Profile
    upper: Optional[Profile] = None
    shift: float = 0.0
    A: Optional[float] = None
    plus_fit: Optional[ExpansionFit] = None
    minus_fit: Optional[ExpansionFit] = None
    fit_errors: dict = field(default_factory=dict)

    @property
    def iterates(self) -> List[Profile]:
        return self.iteration.iterates


def _snap(params: ModelParams, report: RegimeReport) -> ModelParams:
    """Move parameters inside a tolerance band exactly onto the band's value."""
    if report.critical_speed and params.epsilon != eps_star(params.h):
        return ModelParams.from_epsilon(params.h, eps_star(params.h))
    if report.uses_b_operator and params.epsilon != 0.25:
        return ModelParams.from_epsilon(params.h, 0.25)
    return params


def _critical_start(roots, params, delta, depth, A):
    tau = critical_tau(roots, A)
    grid = make_grid(roots.h, tau, roots.lam, roots.lambda2, delta, depth=depth)
    return lower_critical(roots, params, A=A, grid=grid)


def _noncritical_start(roots, delta, depth):
    tau = lower_tau(roots)
    grid = make_grid(roots.h, tau, roots.lam, roots.lambda2, delta, depth=depth)
    lower = lower_noncritical(roots, grid=grid)
    r = choose_r(roots)
    pair = shift_to_order(lower, upper_noncritical(roots, r, grid=grid))
    # rebuild the shifted upper analytically on the lower's grid
    upper = upper_noncritical(roots, r, grid=grid, shift=-pair.shift, verify=False)
    return lower, upper, pair.shift


def solve(params: ModelParams, delta: float = DELTA_TARGET, tol_iter: float = 1e-10,
          max_iter: int = 5000, keep: int = 0, quad: str = "expfit", fits: bool = True,
          tol: float = 1e-9) -> SolveResult:
    """Compute the monotone front for ``params``.

    Raises :class:`NoFront` when no front exists, and propagates
    :class:`~kppfront.errors.NotConverged` / ``MonotonicityBroken``.
    """
    report = classify(params, tol=tol)
    if not report.exists:
        raise NoFront(f"no monotone front for h={params.h!r}, c={params.c!r}")
    params = _snap(params, report)
    roots = root_data(params, double=report.critical_speed)
    use_b = params.epsilon == 0.25
    config = OperatorConfig.from_roots(roots, use_b, quad)

    depth = DECAY_DEPTH
    for attempt in range(2):
        upper, shift, A = None, 0.0, None
        try:
            if report.critical_speed:
                A = 2.0 * critical_A_bound(roots)
                for _ in range(MAX_A_DOUBLINGS):
                    lower = _critical_start(roots, params, delta, depth, A)
                    try:
                        phi, rep = iterate(config, lower, None, tol_iter, max_iter, keep)
                        break
                    except MonotonicityBroken as exc:
                        if exc.iteration == 1:
                            log.info("critical start rejected at A=%g, doubling", A)
                            A *= 2.0
                            continue
                        raise
                else:
                    raise MonotonicityBroken("no admissible A for the critical lower solution")
            else:
                lower, upper, shift = _noncritical_start(roots, delta, depth)
                phi, rep = iterate(config, lower, upper, tol_iter, max_iter, keep)
            break
        except NotConverged:
            if upper is not None or attempt == 1:
                raise
            depth *= 1.5
            log.info("no convergence without an upper bound; widening the grid (depth %g)", depth)

    result = SolveResult(params, report, roots, config, phi, rep, lower, upper, shift, A)
    if fits:
        result.plus_fit, err_p = safe_fit(fit_plus_tail, phi, report.plus_regime, roots)
        result.minus_fit, err_m = safe_fit(fit_minus_tail, phi, report.minus_regime, roots)
        result.fit_errors = {k: v for k, v in (("plus", err_p), ("minus", err_m)) if v}
    return result
