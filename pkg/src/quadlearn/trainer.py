"""BFGS with backtracking Armijo line search, plus the network training wrapper."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NonFinite
from .network import Architecture, ScalingParams, loss_and_gradient, nse_denominator

log = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITER = "max_iter"
BUDGET = "budget"
LINE_SEARCH_FAILED = "line_search_failed"
NON_FINITE = "non_finite"

# CPU time of the calling thread; time the scheduler gives to others does not count
budget_clock = time.thread_time


@dataclass(frozen=True)
class TrainerConfig:
    max_iter: int = 600
    c1: float = 1e-4
    backtrack: float = 0.5
    max_trials: int = 30
    gtol: float = 1e-7
    n_candidates: int = 100
    seed: int = 0
    online_max_iter: int = 2
    online_budget_ms: float = 6.0
    holdout_fraction: float = 0.2

    def __post_init__(self) -> None:
        if self.max_iter < 1 or self.online_max_iter < 1:
            raise ValueError("iteration caps must be >= 1")
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be >= 1")
        if self.online_budget_ms <= 0:
            raise ValueError("budget must be positive")
        if not (0 < self.c1 < 1 and 0 < self.backtrack < 1):
            raise ValueError("line-search constants must lie in (0, 1)")


@dataclass
class QNResult:
    x: np.ndarray
    f: float
    history: list[float] = field(default_factory=list)
    iterations: int = 0
    evaluations: int = 0
    status: str = CONVERGED

    @property
    def flagged(self) -> bool:
        return self.status in (LINE_SEARCH_FAILED, NON_FINITE)


def _first_step(f: float, gnorm: float) -> float:
    """Steepest-descent trial length: the zero-loss step of the local
    quadratic model, never longer than unit length in parameter space."""
    step = 1.0 / gnorm
    if f > 0:
        step = min(step, 2.0 * f / (gnorm * gnorm))
    return step


def _shrink(step: float, f0: float, slope: float, f_trial: float, factor: float) -> float:
    """Minimizer of the quadratic through f0, slope and f_trial, kept in
    [0.1, factor] * step."""
    curv = f_trial - f0 - slope * step
    if curv > 0 and math.isfinite(curv):
        new = -slope * step * step / (2.0 * curv)
        return min(max(new, 0.1 * step), factor * step)
    return factor * step


def minimize_bfgs(
    fg: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0: np.ndarray,
    *,
    max_iter: int = 100,
    gtol: float = 1e-8,
    c1: float = 1e-4,
    backtrack: float = 0.5,
    max_trials: int = 30,
    deadline: float | None = None,
) -> QNResult:
    """Minimize with a dense inverse-Hessian BFGS update.

    Rejected trial steps shrink by quadratic interpolation, safeguarded to
    between 0.1 and ``backtrack`` times the previous trial.
    Steepest-descent steps start at ``min(1/|g|, 2 f/|g|^2)`` (losses here
    are non-negative); the
    inverse Hessian is rescaled by ``s'y / y'y`` before the first update and
    reset to the identity whenever the search direction stops descending or
    the line search fails. ``deadline`` is a ``budget_clock()`` value
    checked before every function evaluation, the first one included; a run
    that starts past it returns ``x0`` untouched with f = nan.

    The returned ``history`` holds f at the start and after every accepted
    step, so it is strictly decreasing.
    """
    x = np.array(x0, dtype=float)
    n = x.size
    if deadline is not None and budget_clock() >= deadline:
        return QNResult(x, math.nan, [], 0, 0, BUDGET)
    try:
        f, g = fg(x)
    except NonFinite:
        return QNResult(x, math.nan, [], 0, 1, NON_FINITE)
    res = QNResult(x, f, [f], 0, 1, MAX_ITER)
    H = np.eye(n)
    fresh = True

    def out_of_time() -> bool:
        return deadline is not None and budget_clock() >= deadline

    while True:
        gnorm = float(np.linalg.norm(g))
        if gnorm < gtol:
            res.status = CONVERGED
            break
        if res.iterations >= max_iter:
            res.status = MAX_ITER
            break
        if out_of_time():
            res.status = BUDGET
            break

        d = -(H @ g)
        slope = float(g @ d)
        if not fresh and slope >= 0:
            H, fresh = np.eye(n), True
            d, slope = -g, -gnorm * gnorm
        step = _first_step(f, gnorm) if fresh else 1.0

        accepted = False
        timed_out = False
        for _ in range(max_trials):
            if out_of_time():
                timed_out = True
                break
            x_new = x + step * d
            try:
                f_new, g_new = fg(x_new)
            except NonFinite:
                res.x, res.f, res.status = x, f, NON_FINITE
                return res
            res.evaluations += 1
            if f_new <= f + c1 * step * slope and f_new < f:
                accepted = True
                break
            step = _shrink(step, f, slope, f_new, backtrack)

        if timed_out:
            res.status = BUDGET
            break
        if not accepted:
            if not fresh:
                H, fresh = np.eye(n), True
                continue
            res.status = LINE_SEARCH_FAILED
            log.debug("line search failed after %d iterations, f=%g", res.iterations, f)
            break

        s = x_new - x
        yv = g_new - g
        sy = float(s @ yv)
        if sy > 1e-12 * float(np.linalg.norm(s)) * float(np.linalg.norm(yv)):
            if fresh:
                H = np.eye(n) * (sy / float(yv @ yv))
            rho = 1.0 / sy
            Hy = H @ yv
            H = H + ((sy + yv @ Hy) * rho * rho) * np.outer(s, s) - rho * (np.outer(Hy, s) + np.outer(s, Hy))
            fresh = False
        x, f, g = x_new, f_new, g_new
        res.iterations += 1
        res.history.append(f)

    res.x, res.f = x, f
    return res


def train_quasi_newton(
    params: np.ndarray,
    arch: Architecture,
    scaling: ScalingParams,
    X: np.ndarray,
    y: np.ndarray,
    config: TrainerConfig,
    *,
    online: bool = False,
    start: float | None = None,
) -> QNResult:
    """Fit network parameters to (X, y) under the NSE loss.

    In online mode the iteration cap is ``online_max_iter`` and the run stops
    once ``online_budget_ms`` of thread CPU time has elapsed since ``start``
    (a ``budget_clock()`` reading, default: now).
    The inverse Hessian always starts from the identity.
    """
    deadline = None
    max_iter = config.max_iter
    if online:
        t0 = budget_clock() if start is None else start
        deadline = t0 + config.online_budget_ms * 1e-3
        max_iter = config.online_max_iter
        if budget_clock() >= deadline:
            return QNResult(np.array(params, dtype=float), math.nan, [], 0, 0, BUDGET)
    Xs = scaling.scale(np.atleast_2d(np.asarray(X, dtype=float)))
    y = np.asarray(y, dtype=float)
    denom, _ = nse_denominator(y)

    def fg(p: np.ndarray) -> tuple[float, np.ndarray]:
        return loss_and_gradient(p, arch, scaling, Xs, y, denom, prescaled=True)

    return minimize_bfgs(
        fg,
        params,
        max_iter=max_iter,
        gtol=config.gtol,
        c1=config.c1,
        backtrack=config.backtrack,
        max_trials=config.max_trials,
        deadline=deadline,
    )
