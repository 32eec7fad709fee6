"""Penalized fitting: prox-gradient descent with restarts, penalty schedules,
and a brute-force grid oracle for low dimensions.

The estimator is the minimizer over R^d of the empirical risk plus
``lam * |theta|_1``.  The risks here are nonconvex, so a single descent run
only certifies a stationary point; the fit runs several restarts and keeps
the best objective, and for d <= 3 an exhaustive grid scan provides an
independent certificate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, substream
from .losses import ModelSpec, loss_constants, loss_value, loss_deriv

__all__ = [
    "NumericalError",
    "PenaltySchedule",
    "FitConfig",
    "FitResult",
    "soft_threshold",
    "lambda_for",
    "manual_schedule",
    "k_schedule",
    "prox_gradient_fit",
    "lambda_path",
    "grid_oracle",
    "ball_b_check",
]

PAPER_TAGS = ("robust-paper", "binary-paper")


class NumericalError(RuntimeError):
    """A non-finite objective or gradient appeared during a fit."""

    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


def soft_threshold(v, tau: float):
    """Componentwise sign(v) * max(|v| - tau, 0), the exact l1 prox."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)


@dataclass(frozen=True)
class PenaltySchedule:
    """Penalty level with the theory-side sequences it came from.

    ``lam`` is the l1 penalty; ``delta_n = sqrt(log(2d)/n)`` and
    ``r_n = 16 * L * m_x * sqrt(log(4nd)/n)`` are the floor and increment
    rate of the uniform-deviation bound.  Paper schedules must satisfy
    ``lam >= 2 r_n`` (they do with equality for binary and, with the
    bisquare's derivative cap as Lipschitz constant, for robust).
    """

    lam: float
    delta_n: float
    r_n: float
    formula_tag: str
    k: float | None = None

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise ValueError("lambda must be a positive finite real")
        if self.formula_tag not in PAPER_TAGS + ("nls-k", "manual"):
            raise ValueError(f"unknown formula tag {self.formula_tag!r}")
        if self.formula_tag in PAPER_TAGS:
            if self.lam < 2.0 * self.r_n * (1.0 - 1e-12):
                raise ValueError("paper schedule violates lambda >= 2 r_n")


def _rate_terms(n: int, d: int) -> tuple[float, float]:
    if n < 1 or d < 1:
        raise ValueError("n and d must be at least 1")
    return math.sqrt(math.log(4.0 * n * d) / n), math.sqrt(math.log(2.0 * d) / n)


def lambda_for(model: ModelSpec, n: int, d: int, m_x: float = 1.0,
               k: float | None = None) -> PenaltySchedule:
    """Penalty schedule from the model's closed-form constants.

    Robust: lam = 32 * m_rho * m_x * sqrt(log(4nd)/n).
    Binary: lam = 96 * m_sigma * m_x * sqrt(log(4nd)/n).
    Nls: lam = k * sqrt(log(4nd)/n); the theory only asserts existence of a
    constant, so the default mirrors the binary constant for the bounded part
    plus a Gaussian cross-term margin, k = 96*m_f*m_x + 8*noise_sd*m_f*m_x.
    """
    rate, delta_n = _rate_terms(n, d)
    consts = loss_constants(model)
    r_n = 16.0 * consts.lipschitz_l * m_x * rate
    if model.kind == "robust":
        return PenaltySchedule(32.0 * consts.m_rho * m_x * rate, delta_n, r_n,
                               "robust-paper")
    if model.kind == "binary":
        return PenaltySchedule(96.0 * consts.m_sigma * m_x * rate, delta_n, r_n,
                               "binary-paper")
    if k is None:
        k = 96.0 * consts.m_f * m_x + 8.0 * model.noise_sd * consts.m_f * m_x
    return PenaltySchedule(k * rate, delta_n, r_n, "nls-k", k=k)


def manual_schedule(model: ModelSpec, lam: float, n: int, d: int,
                    m_x: float = 1.0) -> PenaltySchedule:
    """A user-chosen lambda, with delta_n and r_n still populated."""
    rate, delta_n = _rate_terms(n, d)
    r_n = 16.0 * loss_constants(model).lipschitz_l * m_x * rate
    return PenaltySchedule(lam, delta_n, r_n, "manual")


def k_schedule(model: ModelSpec, k: float, n: int, d: int,
               m_x: float = 1.0) -> PenaltySchedule:
    """lam = k * sqrt(log(4nd)/n) for an explicit constant k."""
    rate, delta_n = _rate_terms(n, d)
    r_n = 16.0 * loss_constants(model).lipschitz_l * m_x * rate
    return PenaltySchedule(k * rate, delta_n, r_n, "nls-k", k=k)


@dataclass(frozen=True)
class FitConfig:
    """Prox-gradient settings: iteration budget, tolerances, restarts, step rule."""

    max_iters: int = 5000
    tol_objective: float = 1e-10
    tol_prox_residual: float = 1e-8
    restarts: int = 5
    init: str = "zero"                 # "zero" | "warm-ridge" | "custom"
    init_theta: tuple | None = None    # custom starting point
    ridge: float = 1.0                 # warm-ridge regularization
    shrink: float = 0.5
    grow: float = 2.0
    init_step: float = 1.0
    armijo: float = 1e-4

    def __post_init__(self):
        if self.tol_objective <= 0 or self.tol_prox_residual <= 0:
            raise ValueError("tolerances must be positive")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        if not (0.0 < self.shrink < 1.0) or self.grow <= 1.0 or self.init_step <= 0:
            raise ValueError("invalid backtracking parameters")
        if self.init not in ("zero", "warm-ridge", "custom"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.init == "custom" and self.init_theta is None:
            raise ValueError("custom init requires init_theta")


@dataclass(frozen=True)
class FitResult:
    """Best fit across restarts with its diagnostics.

    ``objective`` equals the empirical risk at ``theta_hat`` plus
    ``lam * |theta_hat|_1`` exactly as evaluated.  Errors against theta0 are
    ``None`` when the truth is unknown, as is ``in_ball_b`` when no estimate
    of R(theta0) was supplied.
    """

    theta_hat: np.ndarray
    objective: float
    iterations: int
    converged: bool
    prox_residual: float
    restart_index: int
    err_l1: float | None
    err_l2: float | None
    support: tuple
    in_ball_b: bool | None
    objective_trace: np.ndarray = field(repr=False, default=None)
    step_final: float = float("nan")


def _risk_and_grad_fns(model: ModelSpec, x: np.ndarray, y: np.ndarray):
    n = x.shape[0]

    def risk(theta):
        return float(np.mean(loss_value(model, x @ theta, y)))

    def grad(theta):
        return (x.T @ loss_deriv(model, x @ theta, y)) / n

    return risk, grad


def _descend(model, x, y, lam, config, theta_init):
    """One prox-gradient run with Armijo backtracking; monotone in objective."""
    risk_fn, grad_fn = _risk_and_grad_fns(model, x, y)

    def risk(theta, it):
        try:
            value = risk_fn(theta)
        except ValueError as exc:  # non-finite index values
            raise NumericalError(str(exc), it) from exc
        if not np.isfinite(value):
            raise NumericalError("non-finite objective", it)
        return value

    def grad(theta, it):
        try:
            value = grad_fn(theta)
        except ValueError as exc:
            raise NumericalError(str(exc), it) from exc
        if not np.all(np.isfinite(value)):
            raise NumericalError("non-finite gradient", it)
        return value

    theta = np.asarray(theta_init, dtype=np.float64).copy()
    obj = risk(theta, 0) + lam * np.sum(np.abs(theta))
    if not np.isfinite(obj):
        raise NumericalError("non-finite objective at the starting point", 0)
    step = config.init_step
    trace = [obj]
    rel_change = math.inf
    converged = False
    resid = math.inf
    iterations = 0
    for it in range(1, config.max_iters + 1):
        iterations = it
        g = grad(theta, it)
        prox_point = soft_threshold(theta - step * g, step * lam)
        resid = float(np.linalg.norm(theta - prox_point)
                      / max(1.0, np.linalg.norm(theta)))
        if rel_change <= config.tol_objective and resid <= config.tol_prox_residual:
            converged = True
            break
        # Backtrack until the candidate gives sufficient decrease.
        accepted = None
        while True:
            cand = soft_threshold(theta - step * g, step * lam)
            diff = cand - theta
            dd = float(diff @ diff)
            if dd == 0.0:
                break  # exact prox fixed point at this step size
            obj_cand = risk(cand, it) + lam * np.sum(np.abs(cand))
            if obj_cand <= obj - config.armijo * dd / step:
                accepted = (cand, obj_cand)
                break
            step *= config.shrink
            if step < 1e-18:
                break  # cannot improve at float resolution
        if accepted is None:
            rel_change = 0.0
        else:
            cand, obj_cand = accepted
            rel_change = abs(obj - obj_cand) / max(1.0, abs(obj_cand))
            theta, obj = cand, obj_cand
            trace.append(obj)
        step *= config.grow
    return theta, obj, iterations, converged, resid, np.asarray(trace), step


def _warm_ridge_init(model, x, y, ridge):
    """Ridge least squares on a linearized pseudo-response."""
    if model.kind == "robust":
        z = y
    elif model.kind == "binary":
        z = 4.0 * (y - 0.5)  # slope-matched linearization of the logistic at 0
    else:
        if model.link == "tanh":
            z = np.arctanh(np.clip(y, -0.95, 0.95))
        else:
            c = np.clip(y, 0.05, 0.95)
            z = np.log(c / (1.0 - c))
    n, d = x.shape
    a = x.T @ x + ridge * n * np.eye(d)
    return np.linalg.solve(a, x.T @ z)


def _random_l1_ball(rng, d, radius):
    """Uniform draw from the l1 ball of the given radius."""
    simplex = rng.dirichlet(np.ones(d))
    signs = 2.0 * rng.integers(0, 2, size=d) - 1.0
    return radius * rng.random() ** (1.0 / d) * simplex * signs


def _restart_inits(model, data, lam, config):
    d = data.d
    inits = []
    if config.init == "zero":
        inits.append(np.zeros(d))
    elif config.init == "custom":
        theta = np.asarray(config.init_theta, dtype=np.float64)
        if theta.shape != (d,):
            raise ValueError("init_theta has the wrong dimension")
        inits.append(theta)
    else:
        inits.append(_warm_ridge_init(model, data.x, data.y, config.ridge))
    if config.restarts >= 2 and config.init != "warm-ridge":
        inits.append(_warm_ridge_init(model, data.x, data.y, config.ridge))
    if len(inits) < config.restarts:
        if model.theta0 is not None:
            radius = float(np.sum(np.abs(model.theta0)))
        else:
            r0 = float(np.mean(loss_value(model, data.x @ np.zeros(d), data.y)))
            radius = (r0 + 1.0) / lam
        rng = substream(data.seed, "restart-inits")
        while len(inits) < config.restarts:
            inits.append(_random_l1_ball(rng, d, radius))
    return inits[: config.restarts]


def prox_gradient_fit(model: ModelSpec, data: Dataset, schedule: PenaltySchedule,
                      config: FitConfig = FitConfig(),
                      r_theta0: float | None = None) -> FitResult:
    """Minimize the penalized empirical risk; best of several restarts.

    Within each restart the accepted steps never increase the objective
    (backtracking guarantee).  ``converged`` means both the relative
    objective change and the scaled prox residual fell below their
    tolerances before the iteration budget.  When ``r_theta0`` (an estimate
    of the true risk at theta0) is given and theta0 is known, the result
    reports membership of theta_hat in the l1 ball B.
    """
    if model.theta0 is not None and data.d != model.theta0.size:
        raise ValueError("data dimension does not match theta0")
    lam = schedule.lam
    best = None
    for idx, theta_init in enumerate(_restart_inits(model, data, lam, config)):
        theta, obj, iters, conv, resid, trace, step = _descend(
            model, data.x, data.y, lam, config, theta_init)
        if best is None or obj < best[1]:
            best = (theta, obj, iters, conv, resid, trace, step, idx)
    theta, obj, iters, conv, resid, trace, step, idx = best
    err_l1 = err_l2 = None
    in_ball = None
    if model.theta0 is not None:
        diff = theta - model.theta0
        err_l1 = float(np.sum(np.abs(diff)))
        err_l2 = float(np.linalg.norm(diff))
        if r_theta0 is not None:
            in_ball = ball_b_check(theta, schedule, r_theta0,
                                   float(np.sum(np.abs(model.theta0))))
    return FitResult(
        theta_hat=theta,
        objective=obj,
        iterations=iters,
        converged=conv,
        prox_residual=resid,
        restart_index=idx,
        err_l1=err_l1,
        err_l2=err_l2,
        support=tuple(int(j) for j in np.nonzero(theta)[0]),
        in_ball_b=in_ball,
        objective_trace=trace,
        step_final=step,
    )


def lambda_path(model: ModelSpec, data: Dataset, lambdas, config: FitConfig = FitConfig(),
                m_x: float = 1.0) -> list[FitResult]:
    """Warm-started fits along a lambda sequence (run in the given order)."""
    results = []
    cfg = config
    for lam in lambdas:
        schedule = manual_schedule(model, float(lam), data.n, data.d, m_x)
        results.append(prox_gradient_fit(model, data, schedule, cfg))
        cfg = replace(config, init="custom", restarts=1,
                      init_theta=tuple(results[-1].theta_hat))
    return results


def _objective_on_points(model, data, lam, points):
    """Penalized objective at many points, chunked so the per-chunk loss
    matrix stays cache-resident (elementwise loss evaluation is the hot path)."""
    out = np.empty(points.shape[0])
    chunk = max(1, int(240_000 // max(1, data.n)))
    for lo in range(0, points.shape[0], chunk):
        block = points[lo:lo + chunk]
        t = data.x @ block.T  # (n, chunk)
        losses = loss_value(model, t, data.y[:, None])
        out[lo:lo + chunk] = losses.mean(axis=0) + lam * np.sum(np.abs(block), axis=1)
    return out


def grid_oracle(model: ModelSpec, data: Dataset, lam: float, box_half_width: float,
                points_per_axis: int, refine_rounds: int = 0):
    """Exhaustive minimizer of the penalized objective on a grid (d <= 3).

    Scans the cube of the given half width centered at the origin; ties break
    to the first grid point in lexicographic scan order.  Optional refinement
    rounds re-scan a shrunken box around the incumbent; the reported
    objective never increases across rounds.
    """
    if data.d > 3:
        raise ValueError("grid oracle supports d <= 3 only")
    if points_per_axis < 11:
        raise ValueError("points_per_axis must be at least 11")
    if not (np.isfinite(lam) and lam >= 0):
        raise ValueError("lambda must be nonnegative and finite")
    center = np.zeros(data.d)
    half = float(box_half_width)
    best_theta, best_obj = None, math.inf
    for _ in range(refine_rounds + 1):
        axes = [np.linspace(center[j] - half, center[j] + half, points_per_axis)
                for j in range(data.d)]
        mesh = np.meshgrid(*axes, indexing="ij")
        points = np.stack([m.reshape(-1) for m in mesh], axis=1)
        values = _objective_on_points(model, data, lam, points)
        j = int(np.argmin(values))
        if values[j] < best_obj:
            best_obj = float(values[j])
            best_theta = points[j].copy()
        center = points[j]
        half = axes[0][1] - axes[0][0]  # next round: one old spacing around the argmin
    return best_theta, best_obj


def ball_b_check(theta, schedule: PenaltySchedule, r_theta0: float,
                 l1_theta0: float) -> bool:
    """Membership in B: |theta|_1 <= (R(theta0) + 1)/lambda + |theta0|_1."""
    if schedule.lam <= 0:
        raise ValueError("lambda must be positive")
    if r_theta0 < 0:
        raise ValueError("r_theta0 must be nonnegative")
    radius = (r_theta0 + 1.0) / schedule.lam + l1_theta0
    return float(np.sum(np.abs(theta))) <= radius
