"""Numerical checks of the theory: identification, curvature constants,
increment-rate bounds, and the concentration lemmas.

Every probe returns a :class:`ProbeReport`.  The uniform pass rule is

    passed  <=>  measured <= bound + slack,

with ``slack = 5 * mc_std_error`` for Monte Carlo checks and 0 for
deterministic ones.  Checks that are naturally lower bounds (for example a
curvature ratio that must stay above ``c(gamma)``) store ``measured`` and
``bound`` negated so the same rule applies; their ``margin = bound -
measured`` is then the distance by which the quantity clears its lower
bound.  The suprema over continuous sets (the increment ratio over the ball
B) are sampled maxima over designed point clouds, so these probes can
falsify a bound but never certify it.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .data import (DesignSpec, NoiseSpec, Dataset, derive_seed, gen_design,
                   gen_response, rho_x_of, substream)
from .losses import ModelSpec, link_eval, loss_value, tukey_rho, tukey_rho_deriv

__all__ = [
    "CurvatureSpec",
    "ProbeReport",
    "make_report",
    "report_to_line",
    "write_reports",
    "load_reports",
    "estimate_g",
    "estimate_g_mc",
    "estimate_big_l",
    "curvature_constant",
    "identification_samples",
    "gradient_identification_check",
    "increment_ratio_probe",
    "lemma_max_average_check",
    "lemma_subgaussian_truncation_check",
    "risk_curvature_scan",
]


@dataclass(frozen=True)
class CurvatureSpec:
    """Radii entering the curvature lower bounds.

    ``gamma`` is the l2 radius of the neighborhood being scanned, ``eta_star``
    the radius of the local strong convexity neighborhood, and ``m_0`` an
    upper bound on |theta0|_2 (binary/nls only).
    """

    gamma: float
    eta_star: float = 1.0
    m_0: float = 1.0

    def __post_init__(self):
        if not (self.gamma > 0 and self.eta_star > 0 and self.m_0 > 0):
            raise ValueError("gamma, eta_star, and m_0 must be positive")


@dataclass(frozen=True)
class ProbeReport:
    """Outcome of one check; see the module docstring for the pass rule."""

    check_name: str
    passed: bool
    measured: float
    bound: float
    margin: float
    mc_std_error: float
    n_samples: int
    seed: int


def make_report(check_name: str, measured: float, bound: float,
                mc_std_error: float, n_samples: int, seed: int,
                deterministic: bool = False) -> ProbeReport:
    slack = 0.0 if deterministic else 5.0 * mc_std_error
    return ProbeReport(
        check_name=check_name,
        passed=bool(measured <= bound + slack),
        measured=float(measured),
        bound=float(bound),
        margin=float(bound) - float(measured),
        mc_std_error=float(mc_std_error),
        n_samples=int(n_samples),
        seed=int(seed),
    )


def report_to_line(report: ProbeReport) -> str:
    """One JSON record per report, floats rendered with 17 significant digits."""
    return ("{" + ", ".join([
        f'"check_name": {json.dumps(report.check_name)}',
        f'"passed": {"true" if report.passed else "false"}',
        f'"measured": {report.measured:.17g}',
        f'"bound": {report.bound:.17g}',
        f'"margin": {report.margin:.17g}',
        f'"mc_std_error": {report.mc_std_error:.17g}',
        f'"n_samples": {report.n_samples}',
        f'"seed": {report.seed}',
    ]) + "}")


def write_reports(reports, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for report in reports:
            fh.write(report_to_line(report) + "\n")


def load_reports(path) -> list[ProbeReport]:
    out = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            if line.strip():
                out.append(ProbeReport(**json.loads(line)))
    return out


# ---------------------------------------------------------------------------
# Identification function g and the curvature constants
# ---------------------------------------------------------------------------

def estimate_g(noise: NoiseSpec, t0: float, t: float, tol: float = 1e-10) -> float:
    """g(t) = E[rho'(t + eps)] by adaptive quadrature against the noise density.

    The integrand vanishes unless |t + e| <= t0, so the integration domain
    [-t0 - t, t0 - t] is exact.  Falls back to Monte Carlo with a warning if
    the noise family has no usable density (degenerate gaussian sd = 0).
    """
    try:
        noise.density(0.0)
    except ValueError:
        warnings.warn("noise density unavailable; falling back to Monte Carlo")
        return estimate_g_mc(noise, t0, t, 200_000, 0)[0]
    value, _ = quad(lambda e: tukey_rho_deriv(t + e, t0) * float(noise.density(e)),
                    -t0 - t, t0 - t, epsabs=tol, epsrel=1e-12, limit=200)
    return float(value)


def estimate_g_mc(noise: NoiseSpec, t0: float, t: float, n: int,
                  seed: int) -> tuple[float, float]:
    """Monte Carlo mean of rho'(t + eps) with its standard error."""
    rng = substream(seed, "g-mc")
    values = tukey_rho_deriv(t + noise.sample(rng, n), t0)
    return float(np.mean(values)), float(np.std(values, ddof=1) / math.sqrt(n))


def estimate_big_l(noise: NoiseSpec, t0: float, s: float, grid: int = 200) -> float:
    """L(s) = inf over 0 < |t| <= s of g(t)/t, scanned on a log-spaced grid.

    Oddness of g makes positive t sufficient.  L is nonincreasing in s.
    """
    if s <= 0:
        raise ValueError("s must be positive")
    if grid < 100:
        raise ValueError("grid must be at least 100")
    ts = np.geomspace(s * 1e-3, s, grid)
    return min(estimate_g(noise, t0, float(t)) / float(t) for t in ts)


def _link_sq_inf(link: str, half_width: float, grid: int = 4001) -> float:
    """inf of the squared link derivative over |t| <= half_width."""
    ts = np.linspace(0.0, half_width, grid)  # derivative is even in t
    _, deriv = link_eval(link, ts)
    return float(np.min(deriv) ** 2)


def curvature_constant(model: ModelSpec, curv: CurvatureSpec, m_x: float,
                       rho_x: float, noise: NoiseSpec | None = None) -> float:
    """Lower-bound curvature constant c(gamma) of the population risk.

    Robust: c(gamma) = L(s_gamma) * rho_x / 2 with
    s_gamma = 2 m_x gamma sqrt(log(8 sqrt2 m_x^2 / rho_x)).
    Binary and nls: c(gamma) = inf_{|t| <= 2 s} sigma'(t)^2 * rho_x with
    s = 2 m_x (gamma v m_0) sqrt(log(16 sqrt2 m_x^2 / rho_x)), the link
    derivative playing sigma' or f'.  Strictly positive and nonincreasing
    in gamma.
    """
    if m_x <= 0 or rho_x <= 0:
        raise ValueError("m_x and rho_x must be positive")
    if model.kind == "robust":
        if noise is None:
            raise ValueError("the robust curvature constant needs the noise law")
        s_gamma = 2.0 * m_x * curv.gamma * math.sqrt(
            math.log(8.0 * math.sqrt(2.0) * m_x**2 / rho_x))
        return estimate_big_l(noise, model.t0, s_gamma) * rho_x / 2.0
    if model.theta0 is not None:
        l2 = float(np.linalg.norm(model.theta0))
        if curv.m_0 < l2 * (1 - 1e-12):
            raise ValueError("m_0 must dominate |theta0|_2 for this instance")
    s = 2.0 * m_x * max(curv.gamma, curv.m_0) * math.sqrt(
        math.log(16.0 * math.sqrt(2.0) * m_x**2 / rho_x))
    return _link_sq_inf(model.link, 2.0 * s) * rho_x


# ---------------------------------------------------------------------------
# Identification probe (gradient inner products and curvature ratios)
# ---------------------------------------------------------------------------

def identification_samples(model: ModelSpec, design: DesignSpec, n_dirs: int,
                           gamma: float, mc_n: int, seed: int,
                           noise: NoiseSpec | None = None):
    """Sampled ratios grad R(theta)^T (theta-theta0) / |theta-theta0|_2^2.

    Points are theta0 + delta*u over random unit directions u and radii
    delta in [gamma/4, gamma]; the gradient inner product is estimated by
    Monte Carlo over a fresh design sample (shared across directions).
    Returns ``(ratios, std_errors, radii)``.
    """
    theta0 = model.require_theta0()
    if n_dirs < 10:
        raise ValueError("n_dirs must be at least 10")
    rng = substream(seed, "directions")
    dirs = rng.normal(size=(model.d, n_dirs))
    dirs /= np.linalg.norm(dirs, axis=0, keepdims=True)
    radii = rng.uniform(gamma / 4.0, gamma, size=n_dirs)
    x = gen_design(design, mc_n, derive_seed(seed, "identification-x"))
    z_unit = x @ dirs                       # (mc_n, n_dirs)
    if model.kind == "robust":
        if noise is None:
            raise ValueError("the robust identification probe needs the noise law")
        eps = noise.sample(substream(seed, "identification-eps"), mc_n)
    else:
        t_base = x @ theta0
        base_value, _ = link_eval(model.link, t_base)
    ratios = np.empty(n_dirs)
    ses = np.empty(n_dirs)
    for k in range(n_dirs):
        z = radii[k] * z_unit[:, k]
        if model.kind == "robust":
            # grad R(theta)^T delta = E[rho'(z - eps) z] by oddness of rho'
            w = tukey_rho_deriv(z - eps, model.t0) * z
        else:
            value, deriv = link_eval(model.link, t_base + z)
            w = 2.0 * deriv * (value - base_value) * z
        ratios[k] = np.mean(w) / radii[k] ** 2
        ses[k] = np.std(w, ddof=1) / math.sqrt(mc_n) / radii[k] ** 2
    return ratios, ses, radii


def gradient_identification_check(model: ModelSpec, design: DesignSpec,
                                  n_dirs: int, gamma: float, mc_n: int,
                                  seed: int, noise: NoiseSpec | None = None,
                                  curv: CurvatureSpec | None = None) -> ProbeReport:
    """Check the curvature ratio against c(gamma) on sampled directions.

    Passing means every sampled ratio clears c(gamma) minus five of its own
    standard errors (which also forces the gradient inner products to be
    nonnegative within noise, as c(gamma) > 0).  Stored in negated
    lower-bound form.
    """
    if curv is None:
        m_0 = max(1.0, float(np.linalg.norm(model.require_theta0())))
        curv = CurvatureSpec(gamma=gamma, m_0=m_0)
    c_gamma = curvature_constant(model, curv, design.m_x, rho_x_of(design), noise)
    ratios, ses, _ = identification_samples(model, design, n_dirs, gamma,
                                            mc_n, seed, noise)
    worst = int(np.argmax(c_gamma - ratios - 5.0 * ses))
    return make_report(
        check_name=f"identification-{model.kind}-gamma={gamma:g}",
        measured=-float(ratios[worst]),
        bound=-c_gamma,
        mc_std_error=float(ses[worst]),
        n_samples=mc_n,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Increment-rate probe (sampled version of the uniform deviation bound)
# ---------------------------------------------------------------------------

def _probe_cloud(model: ModelSpec, radius_b: float, n_probe: int, seed: int):
    """Points in the ball B: sparse perturbations of theta0, dense random
    directions at varied l1 radii, and scaled-truth ray points."""
    theta0 = model.require_theta0()
    d, s0 = model.d, model.s0
    rng = substream(seed, "probe-points")
    slack = radius_b - float(np.sum(np.abs(theta0)))  # l1 room around theta0
    points = np.empty((n_probe, d))
    for i in range(n_probe):
        r = slack * rng.random() ** 2  # denser near theta0, still reaching far
        mode = i % 3
        if mode == 0:
            k = int(rng.integers(1, max(2, 2 * s0) + 1))
            support = rng.choice(d, size=min(k, d), replace=False)
            bump = np.zeros(d)
            weights = rng.dirichlet(np.ones(len(support)))
            signs = 2.0 * rng.integers(0, 2, size=len(support)) - 1.0
            bump[support] = r * weights * signs
            theta = theta0 + bump
        elif mode == 1:
            u = rng.normal(size=d)
            u /= np.sum(np.abs(u))
            theta = theta0 + r * u
        else:
            theta = theta0 * rng.uniform(0.0, 1.0 + slack / max(1.0, np.sum(np.abs(theta0))))
        l1 = float(np.sum(np.abs(theta)))
        if l1 > radius_b:
            theta = theta * (radius_b / l1)
        points[i] = theta
    return points


def increment_ratio_probe(model: ModelSpec, data: Dataset,
                          schedule, n_probe: int, oracle_mc_n: int,
                          seed: int) -> ProbeReport:
    """Sampled max of |Delta(theta) - Delta(theta0)| / (|theta-theta0|_1 v delta_n).

    Delta(theta) is the empirical-minus-true risk; the true risk is estimated
    once on a shared fresh sample (common random numbers), so the sampled
    statistic is a lower bound on the supremum over B.  Passing means the
    max stays at or below r_n.
    """
    if n_probe < 100:
        raise ValueError("n_probe must be at least 100")
    theta0 = model.require_theta0()
    xf = gen_design(data.design, oracle_mc_n, derive_seed(seed, "oracle-x"))
    yf = gen_response(model, xf, data.noise, derive_seed(seed, "oracle-y"))
    loss0_f = loss_value(model, xf @ theta0, yf)
    r_theta0 = float(np.mean(loss0_f))
    radius_b = (r_theta0 + 1.0) / schedule.lam + float(np.sum(np.abs(theta0)))
    points = _probe_cloud(model, radius_b, n_probe, seed)

    rhat0 = float(np.mean(loss_value(model, data.x @ theta0, data.y)))
    delta0 = rhat0 - r_theta0

    ratios = np.empty(n_probe)
    ratio_ses = np.empty(n_probe)
    chunk = max(1, int(4_000_000 // oracle_mc_n))
    for lo in range(0, n_probe, chunk):
        block = points[lo:lo + chunk]
        tf = xf @ block.T
        losses_f = loss_value(model, tf, yf[:, None])
        r_true = losses_f.mean(axis=0)
        diff_se = losses_f.std(axis=0, ddof=1) / math.sqrt(oracle_mc_n)
        td = data.x @ block.T
        r_hat = loss_value(model, td, data.y[:, None]).mean(axis=0)
        l1 = np.sum(np.abs(block - theta0), axis=1)
        denom = np.maximum(l1, schedule.delta_n)
        ratios[lo:lo + chunk] = np.abs((r_hat - r_true) - delta0) / denom
        ratio_ses[lo:lo + chunk] = diff_se / denom
    worst = int(np.argmax(ratios))
    return make_report(
        check_name=f"increment-ratio-{model.kind}-n={data.n}-d={data.d}",
        measured=float(ratios[worst]),
        bound=float(schedule.r_n),
        mc_std_error=float(ratio_ses[worst]),
        n_samples=oracle_mc_n,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Concentration lemmas
# ---------------------------------------------------------------------------

def lemma_max_average_check(m: float, n: int, d: int, reps: int, seed: int,
                            variant: str = "bounded", sigma: float = 1.0) -> ProbeReport:
    """E |(1/n) sum Z_i|_inf against M sqrt(2 log(2d)/n).

    ``bounded`` draws Z_i as Rademacher vectors scaled by m; ``gaussian``
    draws Z_i = eps_i X_i with standard-normal eps (times sigma) and
    Rademacher X, giving the bound sigma * m * sqrt(2 log(2d)/n).
    """
    if reps < 200:
        raise ValueError("reps must be at least 200")
    if variant not in ("bounded", "gaussian"):
        raise ValueError(f"unknown variant {variant!r}")
    rng = substream(seed, "lemma-a1", variant)
    scale = m if variant == "bounded" else sigma * m
    bound = scale * math.sqrt(2.0 * math.log(2.0 * d) / n)
    maxima = np.empty(reps)
    chunk = max(1, int(8_000_000 // (n * d)))
    done = 0
    while done < reps:
        take = min(chunk, reps - done)
        bits = rng.integers(0, 2, size=(take, n, d), dtype=np.int8)
        if variant == "bounded":
            sums = np.sum(bits, axis=1, dtype=np.int64)
            means = m * (2.0 * sums - n) / n
        else:
            eps = sigma * rng.normal(size=(take, n, 1))
            means = np.mean(eps * (m * (2.0 * bits - 1.0)), axis=1)
        maxima[done:done + take] = np.max(np.abs(means), axis=1)
        done += take
    measured = float(np.mean(maxima))
    se = float(np.std(maxima, ddof=1) / math.sqrt(reps))
    return make_report(
        check_name=f"lemma-max-average-{variant}-n={n}-d={d}",
        measured=measured, bound=bound, mc_std_error=se,
        n_samples=reps, seed=seed,
    )


def lemma_subgaussian_truncation_check(v: float, v_prime: float, delta: float,
                                       mc_n: int, seed: int,
                                       dependent: bool = False) -> ProbeReport:
    """E[Z^2 1{|Z'| > 2 sqrt(v' log(4 sqrt2 / delta))}] against v * delta.

    Z and Z' are centered Gaussians with variances v and v'; ``dependent``
    makes them perfectly correlated (Z' = sqrt(v'/v) Z), the lemma holds
    either way.
    """
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must lie in (0, 1)")
    threshold = 2.0 * math.sqrt(v_prime * math.log(4.0 * math.sqrt(2.0) / delta))
    rng = substream(seed, "lemma-s1", "dep" if dependent else "indep")
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < mc_n:
        take = min(5_000_000, mc_n - done)
        z = math.sqrt(v) * rng.normal(size=take)
        if dependent:
            z_prime = math.sqrt(v_prime / v) * z
        else:
            z_prime = math.sqrt(v_prime) * rng.normal(size=take)
        vals = z**2 * (np.abs(z_prime) > threshold)
        total += float(np.sum(vals))
        total_sq += float(np.sum(vals**2))
        done += take
    mean = total / mc_n
    var = max(0.0, total_sq / mc_n - mean**2) * mc_n / (mc_n - 1)
    se = math.sqrt(var / mc_n)
    dep_tag = "dependent" if dependent else "independent"
    return make_report(
        check_name=f"lemma-subgaussian-truncation-v={v:g}-vp={v_prime:g}"
                   f"-delta={delta:g}-{dep_tag}",
        measured=mean, bound=v * delta, mc_std_error=se,
        n_samples=mc_n, seed=seed,
    )


# ---------------------------------------------------------------------------
# Local strong convexity scan
# ---------------------------------------------------------------------------

def risk_curvature_scan(model: ModelSpec, design: DesignSpec,
                        noise: NoiseSpec | None, eta_star: float,
                        n_radii: int, mc_n: int, seed: int,
                        n_dirs: int = 8) -> ProbeReport:
    """Scan R(theta) - R(theta0) on rays up to eta_star against c(eta*) r^2 / 2.

    The implied strong convexity constant is the sampled minimum of
    2 (R(theta) - R(theta0)) / r^2, which must clear c(eta_star).  Stored in
    negated lower-bound form.
    """
    theta0 = model.require_theta0()
    m_0 = max(1.0, float(np.linalg.norm(theta0)))
    curv = CurvatureSpec(gamma=eta_star, eta_star=eta_star, m_0=m_0)
    c_eta = curvature_constant(model, curv, design.m_x, rho_x_of(design), noise)
    rng = substream(seed, "curvature-dirs")
    x = gen_design(design, mc_n, derive_seed(seed, "curvature-x"))
    if model.kind == "robust":
        if noise is None:
            raise ValueError("the robust curvature scan needs the noise law")
        eps = noise.sample(substream(seed, "curvature-eps"), mc_n)
        base = tukey_rho(eps, model.t0)
    else:
        value0, _ = link_eval(model.link, x @ theta0)
    radii = np.linspace(eta_star / n_radii, eta_star, n_radii)
    ratios, ses = [], []
    for _ in range(n_dirs):
        u = rng.normal(size=model.d)
        u /= np.linalg.norm(u)
        zu = x @ u
        for r in radii:
            if model.kind == "robust":
                # R(theta)-R(theta0) = E[rho(eps - r z) - rho(eps)] by eps ~ -eps
                diffs = tukey_rho(eps - r * zu, model.t0) - base
            else:
                value, _ = link_eval(model.link, x @ theta0 + r * zu)
                diffs = (value - value0) ** 2
            ratios.append(2.0 * float(np.mean(diffs)) / r**2)
            ses.append(2.0 * float(np.std(diffs, ddof=1)) / math.sqrt(mc_n) / r**2)
    ratios = np.asarray(ratios)
    ses = np.asarray(ses)
    worst = int(np.argmax(c_eta - ratios - 5.0 * ses))
    return make_report(
        check_name=f"risk-curvature-{model.kind}-eta={eta_star:g}",
        measured=-float(ratios[worst]),
        bound=-c_eta,
        mc_std_error=float(ses[worst]),
        n_samples=mc_n,
        seed=seed,
    )
