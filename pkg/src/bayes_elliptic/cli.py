"""Command-line interface.

Examples::

    bayes-elliptic mesh build-disk --nodes 1981 --out mesh.txt
    bayes-elliptic fem solve --mesh mesh.txt --field const:1 --source const:1 --out u.csv
    bayes-elliptic eigen --mesh mesh.txt --lambda-max 1000 --method fem --out basis.csv
    bayes-elliptic simulate --mesh mesh.txt --truth four-bumps --n 1000 --sigma 0.001 --seed 7 --out data.csv
    bayes-elliptic infer --config run.toml --out-dir runs/matern
    bayes-elliptic sweep --preset matern --threads 4 --out-dir runs/table
    bayes-elliptic rate-study --replications 3 --out-dir runs/rates
    bayes-elliptic analyze --trace runs/matern/trace.csv
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import experiments as ex
from .eigen import eigen_disk_analytic, eigen_fem
from .fem import ForwardOperator
from .mesh import DISK_RADIUS, build_disk_mesh, read_mesh, write_mesh
from .model import ground_truth_field, generate_data

logger = logging.getLogger("bayes_elliptic")

EXIT_OK, EXIT_ERROR, EXIT_PARTIAL = 0, 1, 2


def _const_or_file(spec: str, M: int) -> np.ndarray:
    if spec.startswith("const:"):
        return np.full(M, float(spec.split(":", 1)[1]))
    values = ex.read_vector(spec)
    if len(values) != M:
        raise ValueError(f"{spec}: {len(values)} values for a mesh with {M} nodes")
    return values


def _source(spec: str) -> float:
    if not spec.startswith("const:"):
        raise ValueError("source must be given as const:<value>")
    return float(spec.split(":", 1)[1])


def _resolve_config(args) -> ex.ExperimentConfig:
    cfg = ex.load_config(args.config) if getattr(args, "config", None) else ex.preset(args.preset)
    cfg = cfg.with_seed(getattr(args, "seed", None))
    if getattr(args, "out_dir", None):
        cfg = replace(cfg, out_dir=args.out_dir)
    if getattr(args, "threads", None):
        cfg = replace(cfg, threads=args.threads)
    pcn = cfg.pcn
    if args.H is not None:
        pcn = replace(pcn, H=args.H)
    if args.burn_in is not None:
        pcn = replace(pcn, burn_in=args.burn_in)
    if args.delta is not None:
        pcn = replace(pcn, delta=args.delta)
    cfg = replace(cfg, pcn=pcn)
    if args.n is not None:
        if args.command == "infer":
            cfg = replace(cfg, data=replace(cfg.data, n=args.n[0]))
        else:
            # keep the configured per-n step sizes where they exist
            known = dict(zip(cfg.sweep.n, cfg.sweep.delta))
            delta = [known[n] for n in args.n] if all(n in known for n in args.n) else []
            cfg = replace(cfg, sweep=replace(cfg.sweep, n=list(args.n), delta=delta))
    cfg.validate()
    return cfg


# --------------------------------------------------------------------------
# subcommands

def cmd_mesh(args) -> int:
    mesh = build_disk_mesh(args.nodes, args.radius)
    write_mesh(mesh, args.out)
    print(f"mesh: {mesh.M} nodes, {mesh.n_triangles} triangles, area {mesh.total_area:.6f} -> {args.out}")
    return EXIT_OK


def cmd_fem(args) -> int:
    mesh = read_mesh(args.mesh)
    f = _const_or_file(args.field, mesh.M)
    u = ForwardOperator(mesh, _source(args.source)).solve(f)
    ex.write_vector(args.out, u)
    print(f"fem: solved on {mesh.M} nodes, min u = {u.min():.6g} -> {args.out}")
    return EXIT_OK


def cmd_eigen(args) -> int:
    mesh = read_mesh(args.mesh)
    if args.method == "analytic":
        basis = eigen_disk_analytic(DISK_RADIUS, args.lambda_max, mesh)
    else:
        basis = eigen_fem(mesh, args.lambda_max)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        for lam, vec in zip(basis.lambdas, basis.vectors.T):
            w.writerow([repr(float(lam))] + [repr(float(v)) for v in vec])
    print(f"eigen ({args.method}): {basis.J} eigenpairs in [0, {args.lambda_max:g}] -> {args.out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    mesh = read_mesh(args.mesh) if args.mesh else build_disk_mesh(args.nodes)
    if args.truth != "four-bumps":
        raise ValueError(f"unknown truth {args.truth!r}")
    seed = args.seed if args.seed is not None else 7
    obs = generate_data(mesh, ground_truth_field(mesh), _source(args.source), args.n, args.sigma, seed)
    obs.to_csv(args.out)
    print(f"simulate: {obs.n} observations, sigma {obs.sigma:g}, seed {seed} -> {args.out}")
    return EXIT_OK


def cmd_infer(args) -> int:
    cfg = _resolve_config(args)
    problem = ex.build_problem(cfg)
    res = ex.run_inference(cfg, problem)
    out = ex.write_inference_outputs(cfg.out_dir, cfg, res, args.band_level)
    print(json.dumps(res.summary(), indent=2))
    print(f"outputs in {out}")
    return EXIT_OK


def _report_study(result: ex.RateStudyResult, out) -> int:
    print(f"{'n':>6} {'L2 error':>10} {'pred. err':>10} {'accept':>7}")
    for n, e, p, a in zip(result.n_values, result.l2_errors, result.prediction_errors,
                          result.acceptance_rates):
        fmt = lambda v, spec: "failed".rjust(len(format(0.0, spec))) if v is None else format(v, spec)
        print(f"{n:>6} {fmt(e, '10.5f')} {fmt(p, '10.3e')} {fmt(a, '7.3f')}")
    s = result.summary()
    for key in ("l2_loglog_slope", "prediction_loglog_slope"):
        if s[key] is not None:
            print(f"{key}: {s[key]:.4f}")
    print(f"theory prediction exponent (alpha+1)/(2alpha+2+d): {result.prediction_exponent:.4f}")
    print(f"theory inversion exponent (beta={result.beta:g}): {result.inversion_exponent:.4f}")
    if out is not None:
        print(f"outputs in {out}")
    for arm in result.failures:
        print(f"arm n={arm['n']} rep={arm['replication']} FAILED: {arm['error']}", file=sys.stderr)
    return EXIT_PARTIAL if result.failures else EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _resolve_config(args)
    result = ex.run_table1_sweep(cfg, out_dir=cfg.out_dir)
    return _report_study(result, cfg.out_dir)


def cmd_rate_study(args) -> int:
    cfg = _resolve_config(args)
    if args.beta is not None:
        cfg = replace(cfg, sweep=replace(cfg.sweep, beta=args.beta))
    reps = args.replications or cfg.sweep.replications
    result = ex.run_rate_study(cfg, replications=reps, out_dir=cfg.out_dir)
    return _report_study(result, cfg.out_dir)


def cmd_analyze(args) -> int:
    trace = Path(args.trace) if args.trace else Path(args.out_dir or ".") / "trace.csv"
    report = ex.analyze_trace(trace, args.burn_in, args.window)
    text = json.dumps(report, indent=2)
    print(text)
    if args.out_dir:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        (Path(args.out_dir) / "analysis.json").write_text(text + "\n")
    return EXIT_OK


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS keeps subcommand copies of the global flags from clobbering
    # values given before the subcommand name
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="TOML or JSON experiment config")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="global seed")
    common.add_argument("--out-dir", default=argparse.SUPPRESS, help="run directory")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="parallel sweep arms")
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="bayes-elliptic", parents=[common],
                                description="Bayesian recovery of the diffusivity in div(f grad u) = s.")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("mesh", parents=[common], help="mesh generation")
    msub = m.add_subparsers(dest="action", required=True)
    bd = msub.add_parser("build-disk", parents=[common], help="unit-area disk mesh")
    bd.add_argument("--nodes", type=int, default=1981)
    bd.add_argument("--radius", type=float, default=DISK_RADIUS)
    bd.add_argument("--out", required=True)
    bd.set_defaults(func=cmd_mesh)

    fe = sub.add_parser("fem", parents=[common], help="forward solver")
    fsub = fe.add_subparsers(dest="action", required=True)
    fs = fsub.add_parser("solve", parents=[common], help="solve div(f grad u) = s, u = 0 on the boundary")
    fs.add_argument("--mesh", required=True)
    fs.add_argument("--field", default="const:1", help="CSV of nodal values or const:<value>")
    fs.add_argument("--source", default="const:1")
    fs.add_argument("--out", required=True)
    fs.set_defaults(func=cmd_fem)

    eg = sub.add_parser("eigen", parents=[common], help="Dirichlet-Laplacian eigenpairs")
    eg.add_argument("--mesh", required=True)
    eg.add_argument("--lambda-max", type=float, default=1000.0)
    eg.add_argument("--method", choices=["fem", "analytic"], default="fem")
    eg.add_argument("--out", required=True)
    eg.set_defaults(func=cmd_eigen)

    def add_simulate(parser):
        parser.add_argument("--mesh", help="mesh file (default: fresh disk mesh)")
        parser.add_argument("--nodes", type=int, default=1981)
        parser.add_argument("--truth", default="four-bumps")
        parser.add_argument("--n", type=int, default=1000)
        parser.add_argument("--sigma", type=float, default=0.001)
        parser.add_argument("--source", default="const:1")
        parser.add_argument("--out", required=True)
        parser.set_defaults(func=cmd_simulate)

    add_simulate(sub.add_parser("simulate", parents=[common], help="simulate noisy observations"))
    mo = sub.add_parser("model", parents=[common], help="observation model")
    add_simulate(mo.add_subparsers(dest="action", required=True).add_parser("simulate", parents=[common]))

    def add_run_options(parser, multi_n):
        parser.add_argument("--preset", choices=["matern", "series"], default="matern",
                            help="built-in settings used when no --config is given")
        parser.add_argument("--H", type=int, help="chain length")
        parser.add_argument("--burn-in", type=int)
        parser.add_argument("--delta", type=float, help="pCN step size (all arms)")
        parser.add_argument("--n", type=int, nargs="+" if multi_n else 1, help="sample size(s)")

    inf = sub.add_parser("infer", parents=[common], help="single pCN inference run")
    add_run_options(inf, False)
    inf.add_argument("--band-level", type=float, default=0.95)
    inf.set_defaults(func=cmd_infer)

    sw = sub.add_parser("sweep", parents=[common], help="errors over a list of sample sizes")
    add_run_options(sw, True)
    sw.set_defaults(func=cmd_sweep)

    rs = sub.add_parser("rate-study", parents=[common], help="replicated sweep with rate exponents")
    add_run_options(rs, True)
    rs.add_argument("--replications", type=int)
    rs.add_argument("--beta", type=float, help="smoothness parameter used only for the reported exponent")
    rs.set_defaults(func=cmd_rate_study)

    an = sub.add_parser("analyze", parents=[common], help="diagnostics from a chain trace")
    an.add_argument("--trace", help="trace CSV (default: <out-dir>/trace.csv)")
    an.add_argument("--burn-in", type=int, default=1000)
    an.add_argument("--window", type=int, default=1000)
    an.set_defaults(func=cmd_analyze)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    verbose = getattr(args, "verbose", 0)
    logging.basicConfig(level=logging.DEBUG if verbose > 1 else logging.INFO if verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    for name in ("config", "seed", "out_dir", "threads"):
        if not hasattr(args, name):
            setattr(args, name, None)
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError) as err:
        logger.debug("command failed", exc_info=True)
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
