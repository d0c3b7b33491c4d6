"""Command-line orchestration: dataset generation, simulator and cluster
runs, step-size condition checks, and speedup sweeps.

Exit codes: 0 success, 1 condition check failed, 2 usage error, 3 run
diverged, 4 speedup target unreached. All printed reals carry 17 significant
digits. The default output directory is ``.``, overridden by the ASYPROX_OUT
environment variable, overridden in turn by ``--out``.
"""
from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from .analysis import (
    check_step_conditions,
    constant_step_plan,
    min_gradient_mapping,
    speedup_records_to_csv,
    speedup_table,
)
from .config import RunConfig, parse_config_file
from .data_io import (
    RngStream,
    batch_stream,
    block_stream,
    data_stream,
    delay_stream,
    synthesize,
    write_libsvm,
    write_truth,
)
from .engine import run_cluster_on, worker_reports_to_csv
from .objective import estimate_lipschitz, estimate_variance
from .simulate import (
    DivergedError,
    UniformRandomDelay,
    ZeroDelay,
    estimate_psi_star,
    run_global,
    run_serial_proxsgd,
)

_VARIANCE_STREAM = 4


def _default_out():
    return os.environ.get("ASYPROX_OUT", ".")


def _add_problem_flags(sub):
    sub.add_argument("--data", dest="data_path", help="libsvm dataset path")
    sub.add_argument("--n", type=int, help="synthetic sample count")
    sub.add_argument("--d", type=int, help="synthetic feature count")
    sub.add_argument("--density", type=float, help="synthetic nonzero fraction")
    sub.add_argument("--truth-nnz", type=int, dest="truth_nnz",
                     help="nonzeros in the planted truth")
    sub.add_argument("--noise", type=float, help="synthetic label noise scale")
    sub.add_argument("--seed", type=int, help="base RNG seed")


def _add_run_flags(sub):
    _add_problem_flags(sub)
    sub.add_argument("--blocks", type=int, help="number of model blocks M")
    sub.add_argument("--workers", type=int, help="worker count (cluster mode)")
    sub.add_argument("--staleness", type=int, help="delay bound T")
    sub.add_argument("--batch", type=int, dest="batch_size", help="minibatch size N")
    sub.add_argument("--iters", type=int, dest="iterations", help="block updates K")
    sub.add_argument("--step-kind", choices=["invsqrt", "constant"], dest="step_kind")
    sub.add_argument("--step-value", type=float, dest="step_value",
                     help="c for invsqrt (eta_k = c/sqrt(1+k)) or the constant eta")
    sub.add_argument("--l1", type=float, help="absolute-value coefficient")
    sub.add_argument("--l2", type=float, help="squared coefficient")
    sub.add_argument("--stride", type=int, dest="telemetry_stride")
    sub.add_argument("--assignment", help='"random" or "pinned:<block>"')
    sub.add_argument("--timeout", type=float, dest="timeout_s")
    sub.add_argument("--x0-scale", type=float, dest="x0_scale",
                     help="start at -scale * planted truth (synthetic only)")
    sub.add_argument("--out", dest="out_dir", help="output directory")
    sub.add_argument("--config", help="key=value config file (flags override)")


def _config_from_args(parser, args):
    base = {}
    if getattr(args, "config", None):
        try:
            raw = parse_config_file(args.config)
        except (OSError, ValueError) as exc:
            parser.error(str(exc))
        fields = {f.name for f in RunConfig.__dataclass_fields__.values()}
        for key, val in raw.items():
            if key not in fields:
                parser.error(f"unknown config key {key!r}")
            base[key] = val
    cfg = RunConfig()
    for name in RunConfig.__dataclass_fields__:
        if name in base:
            current = getattr(cfg, name)
            caster = type(current) if current is not None else str
            try:
                setattr(cfg, name, caster(base[name]))
            except ValueError:
                parser.error(f"bad value for config key {name!r}: {base[name]!r}")
        override = getattr(args, name, None)
        if override is not None:
            setattr(cfg, name, override)
    if isinstance(cfg.assignment, str) and cfg.assignment.startswith("pinned:"):
        try:
            cfg.assignment = int(cfg.assignment.split(":", 1)[1])
        except ValueError:
            parser.error(f"bad assignment {cfg.assignment!r}")
    elif cfg.assignment not in ("random",) and not isinstance(cfg.assignment, int):
        parser.error(f'assignment must be "random" or "pinned:<block>"')
    try:
        cfg.validate()
    except ValueError as exc:
        parser.error(str(exc))
    return cfg


def _write(path, text):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def cmd_gen_data(parser, args):
    cfg = _config_from_args(parser, args)
    if cfg.data_path is not None:
        parser.error("gen-data only produces synthetic instances; drop --data")
    data, x_true = synthesize(
        cfg.n, cfg.d, cfg.density, cfg.truth_nnz, cfg.noise, data_stream(cfg.seed)
    )
    out = cfg.out_dir
    try:
        os.makedirs(out, exist_ok=True)
        base = os.path.join(out, args.name)
        _write(base + ".libsvm", write_libsvm(data))
        _write(base + ".true", write_truth(x_true))
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"samples={data.num_samples} features={data.num_features} nnz={data.nnz}")
    print(f"wrote {base}.libsvm and {base}.true")
    return 0


def cmd_run(parser, args):
    cfg = _config_from_args(parser, args)
    problem, x0 = cfg.build()
    steps = cfg.step_schedule()
    os.makedirs(cfg.out_dir, exist_ok=True)
    t0 = time.perf_counter()
    try:
        if args.mode == "sim":
            delays = (
                ZeroDelay()
                if cfg.staleness == 0
                else UniformRandomDelay(cfg.staleness, delay_stream(cfg.seed))
            )
            traj = run_global(
                problem,
                steps,
                delays,
                cfg.iterations,
                cfg.batch_size,
                batch_stream(cfg.seed),
                block_stream(cfg.seed),
                x0=x0,
                telemetry_stride=cfg.telemetry_stride,
            )
            reports = None
        else:
            result = run_cluster_on(
                problem,
                steps,
                K=cfg.iterations,
                N=cfg.batch_size,
                seed=cfg.seed,
                workers=cfg.workers,
                T=cfg.staleness,
                assignment=cfg.assignment,
                x0=x0,
                telemetry_stride=cfg.telemetry_stride,
                timeout_s=cfg.timeout_s,
            )
            traj, reports = result.trajectory, result.reports
    except DivergedError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return 3
    elapsed = time.perf_counter() - t0
    _write(os.path.join(cfg.out_dir, "trajectory.csv"), traj.to_csv())
    if reports is not None:
        _write(os.path.join(cfg.out_dir, "workers.csv"), worker_reports_to_csv(reports))
    print(f"final_psi={traj.final_psi():.17g}")
    print(f"min_gm_sq={min_gradient_mapping(traj):.17g}")
    print(f"elapsed_s={elapsed:.17g}")
    return 0


def cmd_check(parser, args):
    cfg = _config_from_args(parser, args)
    if args.L is not None and args.L_max is not None:
        L, L_max = args.L, args.L_max
        sigma_sq = args.sigma_sq
    elif cfg.data_path is not None or args.estimate:
        problem = cfg.build_problem()
        est = estimate_lipschitz(problem)
        L, L_max = est.full, est.block_max
        if est.degenerate:
            print("warning: all-zero design matrix, constants degenerate",
                  file=sys.stderr)
        x0 = np.zeros(problem.dim)
        sigma_sq = estimate_variance(
            problem, x0, args.variance_trials, RngStream(cfg.seed, _VARIANCE_STREAM)
        )
        print(f"estimated L={L:.17g} L_max={L_max:.17g} sigma_sq={sigma_sq:.17g}")
    else:
        parser.error("provide --L and --L-max, or --data/--estimate to estimate them")
    report = check_step_conditions(
        cfg.step_schedule(), cfg.iterations, L, L_max, cfg.staleness, cfg.blocks
    )
    sys.stdout.write(report.to_text())
    os.makedirs(cfg.out_dir, exist_ok=True)
    _write(os.path.join(cfg.out_dir, "conditions.csv"), report.to_csv())
    if args.psi_gap is not None:
        if sigma_sq is None or sigma_sq <= 0:
            parser.error("the constant-step plan needs --sigma-sq > 0 (or --data)")
        plan = constant_step_plan(
            args.psi_gap, cfg.blocks, cfg.batch_size, L, cfg.iterations, sigma_sq
        )
        sys.stdout.write(plan.to_text(cfg.staleness))
    return 0 if report.all_ok else 1


def cmd_speedup(parser, args):
    cfg = _config_from_args(parser, args)
    try:
        worker_list = [int(tok) for tok in args.workers_list.split(",") if tok]
    except ValueError:
        parser.error(f"bad worker list {args.workers_list!r}")
    if not worker_list or any(p < 1 for p in worker_list):
        parser.error("worker list must contain positive integers")
    if 1 not in worker_list:
        parser.error("worker list must include the 1-worker baseline")
    if len(set(worker_list)) != len(worker_list):
        parser.error("worker list must not repeat entries")
    problem, x0 = cfg.build()
    steps = cfg.step_schedule()
    if args.psi_star is not None:
        psi_star = args.psi_star
    else:
        psi_star = estimate_psi_star(
            problem,
            steps,
            args.psi_star_factor * cfg.iterations,
            cfg.batch_size,
            batch_stream(cfg.seed),
            x0=x0,
            telemetry_stride=cfg.telemetry_stride,
        )
    print(f"psi_star={psi_star:.17g}")
    runs = []
    for p in worker_list:
        result = run_cluster_on(
            problem,
            steps,
            K=cfg.iterations,
            N=cfg.batch_size,
            seed=cfg.seed,
            workers=p,
            T=cfg.staleness,
            assignment=cfg.assignment,
            x0=x0,
            telemetry_stride=cfg.telemetry_stride,
            timeout_s=cfg.timeout_s,
        )
        runs.append((p, result.trajectory))
    records = speedup_table(runs, args.target_gap, psi_star)
    os.makedirs(cfg.out_dir, exist_ok=True)
    _write(os.path.join(cfg.out_dir, "speedup.csv"), speedup_records_to_csv(records))
    for rec in records:
        status = "reached" if rec.reached else "unreached"
        print(
            f"p={rec.workers} iters={rec.iters_to_target} "
            f"iteration_speedup={rec.iteration_speedup:.17g} "
            f"time_speedup={rec.time_speedup:.17g} [{status}]"
        )
    return 4 if any(not rec.reached for rec in records) else 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="asyprox",
        description="Asynchronous model-parallel proximal SGD toolkit",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    g = subs.add_parser("gen-data", help="write a synthetic libsvm dataset")
    _add_run_flags(g)
    g.add_argument("--name", default="synthetic", help="output file base name")

    r = subs.add_parser("run", help="run the simulator or the cluster engine")
    r.add_argument("--mode", choices=["sim", "cluster"], default="sim")
    _add_run_flags(r)

    c = subs.add_parser("check", help="evaluate step-size admissibility")
    _add_run_flags(c)
    c.add_argument("--L", type=float, help="full-gradient Lipschitz constant")
    c.add_argument("--L-max", type=float, dest="L_max",
                   help="block-gradient Lipschitz constant")
    c.add_argument("--sigma-sq", type=float, dest="sigma_sq",
                   help="gradient variance for the constant-step plan")
    c.add_argument("--psi-gap", type=float, dest="psi_gap",
                   help="objective gap for the constant-step plan")
    c.add_argument("--estimate", action="store_true",
                   help="estimate constants from the (synthetic) instance")
    c.add_argument("--variance-trials", type=int, default=1000,
                   dest="variance_trials")

    s = subs.add_parser("speedup", help="iteration/time speedup sweep")
    _add_run_flags(s)
    s.add_argument("--workers-list", default="1,2,4", dest="workers_list",
                   help="comma-separated worker counts, must include 1")
    s.add_argument("--target-gap", type=float, default=0.1, dest="target_gap")
    s.add_argument("--psi-star", type=float, dest="psi_star",
                   help="reference optimum; estimated from a long serial run "
                        "when omitted")
    s.add_argument("--psi-star-factor", type=int, default=5,
                   dest="psi_star_factor",
                   help="serial reference length as a multiple of --iters")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "out_dir", None) is None and hasattr(args, "out_dir"):
        args.out_dir = _default_out()
    handlers = {
        "gen-data": cmd_gen_data,
        "run": cmd_run,
        "check": cmd_check,
        "speedup": cmd_speedup,
    }
    return handlers[args.command](parser, args)


if __name__ == "__main__":
    sys.exit(main())
