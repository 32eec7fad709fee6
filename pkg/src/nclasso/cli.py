"""Command-line entry point.

Subcommands: ``generate`` (dataset to file), ``fit`` (one dataset), ``sweep``
(run a SweepConfig file), ``probe`` (assumption/lemma checks), ``oracle-check``
(grid certification for d <= 3), and ``report`` (aggregate results).

Exit codes: 0 all checks pass, 1 any probe or acceptance failure, 2 usage
error, 3 runtime or numerical failure.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .data import (DesignSpec, NoiseSpec, gen_theta0, load_dataset,
                   make_dataset, save_dataset, substream)
from .harness import (emit_report, read_records, run_sweep,
                      sweep_config_from_json, write_records)
from .losses import ModelSpec
from .probes import (ProbeReport, gradient_identification_check,
                     increment_ratio_probe, lemma_max_average_check,
                     lemma_subgaussian_truncation_check, risk_curvature_scan,
                     write_reports)
from .solver import (FitConfig, NumericalError, grid_oracle, lambda_for,
                     manual_schedule, prox_gradient_fit)


def _noise_from_args(args) -> NoiseSpec:
    family = args.noise
    if family == "gaussian":
        return NoiseSpec.gaussian(args.noise_sd)
    if family == "laplace":
        return NoiseSpec.laplace(args.noise_sd)
    if family == "student":
        return NoiseSpec.student(scale=args.noise_sd)
    return NoiseSpec.contam(sd1=args.noise_sd)


def _build_model(args, theta0) -> ModelSpec:
    link = "tanh" if args.model == "nls" else "logistic"
    return ModelSpec(args.model, theta0, t0=args.t0, link=link,
                     noise_sd=args.noise_sd)


def cmd_generate(args) -> int:
    theta0 = gen_theta0(args.d, args.s0, args.magnitude, args.seed)
    model = _build_model(args, theta0)
    design = DesignSpec(d=args.d)
    noise = _noise_from_args(args) if args.model == "robust" else None
    data = make_dataset(model, design, noise, args.n, args.seed)
    save_dataset(data, args.out)
    print(f"wrote {args.n} x {args.d} {args.model} dataset to {args.out}")
    return 0


def cmd_fit(args) -> int:
    data = load_dataset(args.data, t0=args.t0, noise_sd=args.noise_sd)
    model = data.model
    if args.lam is not None:
        schedule = manual_schedule(model, args.lam, data.n, data.d,
                                   m_x=data.design.m_x)
    else:
        schedule = lambda_for(model, data.n, data.d, m_x=data.design.m_x)
    fit = prox_gradient_fit(model, data, schedule)
    nz = len(fit.support)
    print(f"lambda={schedule.lam:.6g} objective={fit.objective:.10g} "
          f"iterations={fit.iterations} converged={fit.converged} "
          f"nonzeros={nz}")
    if args.out:
        np.savetxt(args.out, fit.theta_hat, fmt="%.17g")
        print(f"wrote theta_hat to {args.out}")
    return 0


def cmd_sweep(args) -> int:
    config = sweep_config_from_json(args.config)
    records = run_sweep(config, jobs=args.jobs)
    out = args.out or config.out_path
    if out is not None and out != config.out_path:
        write_records(records, out)
    n_conv = sum(r.converged for r in records)
    print(f"ran {len(records)} fits over {len(config.cells)} cells; "
          f"{n_conv} converged")
    if out:
        print(f"records at {out}")
    return 0


def default_probe_battery(seed: int) -> list[ProbeReport]:
    """A quick roster covering each probe family at reduced sizes."""
    noise = NoiseSpec.gaussian(1.0)
    rng = substream(seed, "battery")
    theta0 = gen_theta0(20, 3, 0.5, int(rng.integers(1 << 31)))
    design = DesignSpec(d=20)
    robust = ModelSpec.robust(theta0)
    binary = ModelSpec.binary(theta0)
    reports = [
        lemma_max_average_check(1.0, 400, 100, 300, seed, variant="bounded"),
        lemma_max_average_check(1.0, 400, 100, 300, seed, variant="gaussian"),
        lemma_subgaussian_truncation_check(1.0, 1.0, 0.1, 2_000_000, seed),
        lemma_subgaussian_truncation_check(1.0, 1.0, 0.1, 2_000_000, seed,
                                           dependent=True),
        gradient_identification_check(robust, design, 50, 0.5, 20_000, seed,
                                      noise=noise),
        gradient_identification_check(binary, design, 50, 0.5, 20_000, seed),
        risk_curvature_scan(robust, design, noise, 1.0, 5, 20_000, seed),
        risk_curvature_scan(binary, design, None, 1.0, 5, 20_000, seed),
    ]
    model = ModelSpec.robust(gen_theta0(20, 2, 1.0, seed))
    data = make_dataset(model, DesignSpec(d=20), noise, 500, seed)
    schedule = lambda_for(model, 500, 20)
    reports.append(increment_ratio_probe(model, data, schedule, 100, 20_000, seed))
    return reports


def cmd_probe(args) -> int:
    reports = default_probe_battery(args.seed)
    for report in reports:
        status = "PASS" if report.passed else "FAIL"
        print(f"{status} {report.check_name} measured={report.measured:.6g} "
              f"bound={report.bound:.6g} margin={report.margin:.6g}")
    if args.out:
        write_reports(reports, args.out)
        print(f"reports at {args.out}")
    failures = sum(not r.passed for r in reports)
    print(f"pass={len(reports) - failures} fail={failures}")
    return 1 if failures else 0


def cmd_oracle_check(args) -> int:
    if args.d > 3:
        raise ValueError("oracle-check supports d <= 3 only")
    noise = _noise_from_args(args)
    worst = -np.inf
    failures = 0
    for i in range(args.instances):
        seed = args.seed + i
        rng = substream(seed, "oracle-instance")
        s0 = int(rng.integers(1, args.d + 1))
        magnitude = float(rng.uniform(0.5, 2.0))
        theta0 = gen_theta0(args.d, s0, magnitude, seed)
        model = _build_model(args, theta0)
        design = DesignSpec(d=args.d)
        data = make_dataset(model, design,
                            noise if args.model == "robust" else None,
                            args.n, seed)
        if args.lam is not None:
            schedule = manual_schedule(model, args.lam, args.n, args.d)
        else:
            schedule = lambda_for(model, args.n, args.d)
        fit = prox_gradient_fit(model, data, schedule)
        box = 2.0 * (float(np.max(np.abs(theta0))) + 1.0)
        _, grid_obj = grid_oracle(model, data, schedule.lam, box, 81,
                                  refine_rounds=1)
        gap = fit.objective - grid_obj
        tol = 1e-6 * (1.0 + abs(grid_obj))
        worst = max(worst, gap)
        if gap > tol:
            failures += 1
            print(f"FAIL instance {i}: solver objective exceeds grid by {gap:.3e}")
    print(f"{args.instances} instances, worst solver-minus-grid gap {worst:.3e}")
    return 1 if failures else 0


def cmd_report(args) -> int:
    records = []
    for path in args.records:
        records.extend(read_records(path))
    probes = []
    if args.probes:
        from .probes import load_reports
        probes = load_reports(args.probes)
    n_pass, n_fail = emit_report(records, probes, args.out)
    print(f"summary at {args.out}; probes pass={n_pass} fail={n_fail}")
    return 1 if n_fail else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nclasso")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_model_flags(p):
        p.add_argument("--model", choices=("robust", "binary", "nls"),
                       default="robust")
        p.add_argument("--t0", type=float, default=4.685)
        p.add_argument("--noise", choices=("gaussian", "laplace", "student",
                                           "contam"), default="gaussian")
        p.add_argument("--noise-sd", type=float, default=1.0, dest="noise_sd")

    p = sub.add_parser("generate", help="generate a dataset file")
    add_model_flags(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--s0", type=int, required=True)
    p.add_argument("--magnitude", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit", help="fit one dataset file")
    p.add_argument("data")
    p.add_argument("--lambda", type=float, default=None, dest="lam")
    p.add_argument("--t0", type=float, default=4.685)
    p.add_argument("--noise-sd", type=float, default=0.0, dest="noise_sd")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("sweep", help="run a sweep config file")
    p.add_argument("--config", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("probe", help="run the assumption/lemma probe battery")
    p.add_argument("--seed", type=int, default=20240801)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("oracle-check", help="certify fits against the grid oracle")
    add_model_flags(p)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--instances", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lambda", type=float, default=None, dest="lam")
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("report", help="aggregate sweep records and probe reports")
    p.add_argument("--records", nargs="+", required=True)
    p.add_argument("--probes", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
