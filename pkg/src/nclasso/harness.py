"""Monte Carlo sweeps over (n, d, s0), rate-slope estimation, and reporting.

A sweep fixes one model family and iterates cells x replicates.  Each record
gets its own seed derived from (master seed, cell index, replicate index), so
results are reproducible and independent of scheduling or worker count.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field, fields

import numpy as np
from joblib import Parallel, delayed

from .data import DesignSpec, NoiseSpec, derive_seed, gen_theta0, make_dataset
from .losses import ModelSpec, true_risk_oracle
from .solver import (FitConfig, NumericalError, k_schedule, lambda_for,
                     manual_schedule, prox_gradient_fit)

__all__ = [
    "Cell",
    "LambdaPolicy",
    "SweepConfig",
    "SweepRecord",
    "RateFit",
    "run_sweep",
    "rate_slope",
    "emit_report",
    "write_records",
    "read_records",
    "sweep_config_from_dict",
    "sweep_config_from_json",
]

BALL_ORACLE_MC_N = 100_000

CSV_COLUMNS = ("n", "d", "s0", "replicate", "seed", "lambda", "err_l1", "err_l2",
               "support_recovered", "objective", "iterations", "converged",
               "in_ball_b", "wall_time_ms")


@dataclass(frozen=True)
class Cell:
    n: int
    d: int
    s0: int
    magnitude: float = 1.0

    def __post_init__(self):
        if not (1 <= self.s0 <= self.d):
            raise ValueError(f"cell requires 1 <= s0 <= d, got s0={self.s0}, d={self.d}")
        if self.n < 1:
            raise ValueError("cell requires n >= 1")


@dataclass(frozen=True)
class LambdaPolicy:
    """How the penalty is chosen per cell: the closed-form schedule
    ("paper"), a fixed manual value, or k * sqrt(log(4nd)/n)."""

    kind: str = "paper"
    value: float | None = None

    def __post_init__(self):
        if self.kind not in ("paper", "manual", "k"):
            raise ValueError(f"unknown lambda policy {self.kind!r}")
        if self.kind != "paper" and (self.value is None or self.value <= 0):
            raise ValueError(f"lambda policy {self.kind!r} needs a positive value")


@dataclass(frozen=True)
class SweepConfig:
    model_kind: str
    cells: tuple
    replicates: int
    master_seed: int
    t0: float = 4.685
    link: str | None = None
    noise_sd: float = 0.5
    design_family: str = "rademacher"
    design_scale: float = 1.0
    n_mix: int | None = None
    noise: NoiseSpec = field(default_factory=NoiseSpec.gaussian)
    lambda_policy: LambdaPolicy = field(default_factory=LambdaPolicy)
    fit: FitConfig = field(default_factory=FitConfig)
    out_path: str | None = None

    def __post_init__(self):
        if self.model_kind not in ("robust", "binary", "nls"):
            raise ValueError(f"unknown model kind {self.model_kind!r}")
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if not self.cells:
            raise ValueError("at least one cell is required")
        object.__setattr__(self, "cells", tuple(self.cells))
        if self.link is None:
            object.__setattr__(self, "link",
                               "tanh" if self.model_kind == "nls" else "logistic")

    def design_for(self, d: int) -> DesignSpec:
        return DesignSpec(d=d, family=self.design_family,
                          scale=self.design_scale, n_mix=self.n_mix)

    def model_for(self, theta0) -> ModelSpec:
        return ModelSpec(self.model_kind, theta0, t0=self.t0, link=self.link,
                         noise_sd=self.noise_sd)

    def schedule_for(self, model: ModelSpec, n: int, d: int):
        m_x = self.design_scale
        if self.lambda_policy.kind == "paper":
            return lambda_for(model, n, d, m_x)
        if self.lambda_policy.kind == "manual":
            return manual_schedule(model, self.lambda_policy.value, n, d, m_x)
        return k_schedule(model, self.lambda_policy.value, n, d, m_x)


@dataclass(frozen=True)
class SweepRecord:
    n: int
    d: int
    s0: int
    replicate: int
    seed: int
    lam: float
    err_l1: float
    err_l2: float
    support_recovered: bool
    objective: float
    iterations: int
    converged: bool
    in_ball_b: bool
    wall_time_ms: float


def _cell_r_theta0(config: SweepConfig, cell: Cell, cell_idx: int) -> float:
    """Estimate of R(theta0) used for the ball-B radius, one per cell.

    The generators make the law of X^T theta0 depend on theta0 only through
    (s0, magnitude), so a single per-cell estimate serves every replicate.
    For nls the value is the analytic noise variance.
    """
    if config.model_kind == "nls":
        return config.noise_sd**2
    seed = derive_seed(config.master_seed, "cell-oracle", cell_idx)
    theta0 = gen_theta0(cell.d, cell.s0, cell.magnitude, seed)
    model = config.model_for(theta0)
    noise = config.noise if config.model_kind == "robust" else None
    est, _ = true_risk_oracle(model, config.design_for(cell.d), theta0,
                              BALL_ORACLE_MC_N, seed, noise=noise)
    return est


def _run_record(config: SweepConfig, cell: Cell, cell_idx: int, rep: int,
                r_theta0: float) -> SweepRecord:
    seed = derive_seed(config.master_seed, cell_idx, rep)
    theta0 = gen_theta0(cell.d, cell.s0, cell.magnitude, seed)
    model = config.model_for(theta0)
    design = config.design_for(cell.d)
    noise = config.noise if config.model_kind == "robust" else None
    data = make_dataset(model, design, noise, cell.n, seed)
    schedule = config.schedule_for(model, cell.n, cell.d)
    start = time.perf_counter()
    try:
        fit = prox_gradient_fit(model, data, schedule, config.fit, r_theta0=r_theta0)
    except NumericalError:
        # Recorded in the row as a non-converged fit; the sweep continues.
        elapsed = 1000.0 * (time.perf_counter() - start)
        nan = float("nan")
        return SweepRecord(cell.n, cell.d, cell.s0, rep, seed, schedule.lam,
                           nan, nan, False, nan, 0, False, False, elapsed)
    elapsed = 1000.0 * (time.perf_counter() - start)
    recovered = bool(np.array_equal(np.sign(fit.theta_hat), np.sign(theta0)))
    return SweepRecord(
        n=cell.n, d=cell.d, s0=cell.s0, replicate=rep, seed=seed,
        lam=schedule.lam, err_l1=fit.err_l1, err_l2=fit.err_l2,
        support_recovered=recovered, objective=fit.objective,
        iterations=fit.iterations, converged=fit.converged,
        in_ball_b=bool(fit.in_ball_b), wall_time_ms=elapsed,
    )


def run_sweep(config: SweepConfig, jobs: int = 1) -> list[SweepRecord]:
    """Run every cell x replicate; deterministic apart from wall_time_ms.

    Replicates within a cell run concurrently when ``jobs > 1``; output order
    is always (cell index, replicate index).  With an ``out_path`` configured,
    records are appended and flushed after each cell.
    """
    records: list[SweepRecord] = []
    sink = None
    if config.out_path is not None:
        sink = open(config.out_path, "w", encoding="ascii")
        sink.write(",".join(CSV_COLUMNS) + "\n")
    try:
        for cell_idx, cell in enumerate(config.cells):
            r_theta0 = _cell_r_theta0(config, cell, cell_idx)
            if jobs > 1:
                cell_records = Parallel(n_jobs=jobs)(
                    delayed(_run_record)(config, cell, cell_idx, rep, r_theta0)
                    for rep in range(config.replicates))
            else:
                cell_records = [_run_record(config, cell, cell_idx, rep, r_theta0)
                                for rep in range(config.replicates)]
            records.extend(cell_records)
            if sink is not None:
                for rec in cell_records:
                    sink.write(_record_line(rec) + "\n")
                sink.flush()
    finally:
        if sink is not None:
            sink.close()
    return records


# ---------------------------------------------------------------------------
# Rate-slope estimation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r_squared: float


PREDICTORS = ("s0-sqrt-log-over-n", "n-only", "s0-only")


def _predictor_value(kind: str, n: int, d: int, s0: int) -> float:
    if kind == "s0-sqrt-log-over-n":
        return s0 * math.sqrt(math.log(n * d) / n)
    if kind == "n-only":
        return float(n)
    if kind == "s0-only":
        return float(s0)
    raise ValueError(f"unknown predictor {kind!r}")


def cell_medians(records) -> dict:
    """Median err_l1 per (n, d, s0) cell."""
    groups: dict = {}
    for rec in records:
        groups.setdefault((rec.n, rec.d, rec.s0), []).append(rec.err_l1)
    return {key: float(np.median(vals)) for key, vals in sorted(groups.items())}


def rate_slope(records, predictor: str = "s0-sqrt-log-over-n") -> RateFit:
    """OLS of log(per-cell median err_l1) on log(predictor)."""
    medians = cell_medians(records)
    xs, ys = [], []
    for (n, d, s0), med in medians.items():
        xs.append(math.log(_predictor_value(predictor, n, d, s0)))
        ys.append(math.log(med))
    if len(set(xs)) < 3:
        raise ValueError("rate_slope needs at least 3 distinct predictor values")
    xs = np.asarray(xs)
    ys = np.asarray(ys)
    slope, intercept = np.polyfit(xs, ys, 1)
    resid = ys - (slope * xs + intercept)
    total = ys - ys.mean()
    r2 = 1.0 - float(resid @ resid) / float(total @ total)
    return RateFit(slope=float(slope), intercept=float(intercept), r_squared=r2)


# ---------------------------------------------------------------------------
# Persistence and reporting
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.17g}"


def _record_line(rec: SweepRecord) -> str:
    values = (rec.n, rec.d, rec.s0, rec.replicate, rec.seed, rec.lam, rec.err_l1,
              rec.err_l2, rec.support_recovered, rec.objective, rec.iterations,
              rec.converged, rec.in_ball_b, rec.wall_time_ms)
    return ",".join(_fmt(v) for v in values)


def write_records(records, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for rec in records:
            fh.write(_record_line(rec) + "\n")


def read_records(path) -> list[SweepRecord]:
    out = []
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        if header != ",".join(CSV_COLUMNS):
            raise ValueError(f"{path}: unexpected CSV header")
        for line in fh:
            if not line.strip():
                continue
            parts = line.strip().split(",")
            out.append(SweepRecord(
                n=int(parts[0]), d=int(parts[1]), s0=int(parts[2]),
                replicate=int(parts[3]), seed=int(parts[4]), lam=float(parts[5]),
                err_l1=float(parts[6]), err_l2=float(parts[7]),
                support_recovered=parts[8] == "true", objective=float(parts[9]),
                iterations=int(parts[10]), converged=parts[11] == "true",
                in_ball_b=parts[12] == "true", wall_time_ms=float(parts[13]),
            ))
    return out


def emit_report(records, probes, out_path) -> tuple[int, int]:
    """Write the per-cell summary, plot-ready rate data, and a probe roster.

    Returns ``(n_pass, n_fail)`` over the probe roster; the summary file ends
    with the same counts.
    """
    if not records:
        raise ValueError("emit_report needs at least one record")
    os.makedirs(out_path, exist_ok=True)
    groups: dict = {}
    for rec in records:
        groups.setdefault((rec.n, rec.d, rec.s0), []).append(rec)

    lines = ["# nclasso sweep summary",
             "# n d s0 median_err_l1 iqr_err_l1 converged_frac ball_frac"]
    plot_lines = ["# predictor_s0_sqrt_log_nd_over_n median_err_l1"]
    for (n, d, s0), recs in sorted(groups.items()):
        errs = np.asarray([r.err_l1 for r in recs])
        med = float(np.median(errs))
        iqr = float(np.percentile(errs, 75) - np.percentile(errs, 25))
        conv = float(np.mean([r.converged for r in recs]))
        ball = float(np.mean([r.in_ball_b for r in recs]))
        lines.append(f"{n} {d} {s0} {_fmt(med)} {_fmt(iqr)} {_fmt(conv)} {_fmt(ball)}")
        pred = _predictor_value("s0-sqrt-log-over-n", n, d, s0)
        plot_lines.append(f"{_fmt(pred)} {_fmt(med)}")

    lines.append("# probe roster")
    n_pass = n_fail = 0
    for probe in probes:
        status = "PASS" if probe.passed else "FAIL"
        n_pass += probe.passed
        n_fail += not probe.passed
        lines.append(f"{status} {probe.check_name} margin={_fmt(probe.margin)}")
    lines.append(f"pass={n_pass} fail={n_fail}")

    with open(os.path.join(out_path, "summary.txt"), "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(os.path.join(out_path, "rate_data.dat"), "w", encoding="ascii") as fh:
        fh.write("\n".join(plot_lines) + "\n")
    return n_pass, n_fail


# ---------------------------------------------------------------------------
# Config file loading (strict: unknown keys are errors)
# ---------------------------------------------------------------------------

def _check_keys(section: str, given: dict, allowed) -> None:
    unknown = set(given) - set(allowed)
    if unknown:
        raise ValueError(f"unknown keys in {section}: {sorted(unknown)}")


def sweep_config_from_dict(raw: dict) -> SweepConfig:
    _check_keys("config", raw, {"model", "design", "noise", "cells", "replicates",
                                "lambda_policy", "fit", "master_seed", "out_path"})
    for key in ("model", "cells", "replicates", "master_seed"):
        if key not in raw:
            raise ValueError(f"config is missing required key {key!r}")

    model = dict(raw["model"])
    _check_keys("model", model, {"kind", "t0", "link", "noise_sd"})
    kind = model.pop("kind")

    design = dict(raw.get("design", {}))
    _check_keys("design", design, {"family", "scale", "n_mix"})

    noise_raw = dict(raw.get("noise", {"family": "gaussian"}))
    _check_keys("noise", noise_raw, {"family", "sd", "scale", "dof", "sd2", "mix"})
    noise = NoiseSpec(**noise_raw)

    cells = []
    for cell_raw in raw["cells"]:
        _check_keys("cell", cell_raw, {"n", "d", "s0", "magnitude"})
        cells.append(Cell(**cell_raw))

    policy_raw = dict(raw.get("lambda_policy", {"kind": "paper"}))
    _check_keys("lambda_policy", policy_raw, {"kind", "value"})
    policy = LambdaPolicy(**policy_raw)

    fit_raw = dict(raw.get("fit", {}))
    _check_keys("fit", fit_raw, {f.name for f in fields(FitConfig)})
    fit = FitConfig(**fit_raw)

    return SweepConfig(
        model_kind=kind,
        cells=tuple(cells),
        replicates=int(raw["replicates"]),
        master_seed=int(raw["master_seed"]),
        t0=float(model.get("t0", 4.685)),
        link=model.get("link"),
        noise_sd=float(model.get("noise_sd", 0.5)),
        design_family=design.get("family", "rademacher"),
        design_scale=float(design.get("scale", 1.0)),
        n_mix=design.get("n_mix"),
        noise=noise,
        lambda_policy=policy,
        fit=fit,
        out_path=raw.get("out_path"),
    )


def sweep_config_from_json(path) -> SweepConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return sweep_config_from_dict(json.load(fh))
