"""
Command-line driver for the space-time DG HJB solver.

Subcommands: verify-cordes, solve, convergence, tauq. Every subcommand reads a
TOML manifest (--config), writes into --out and assembles with --threads workers.
"""

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np
from loguru import logger

from .analysis import (
    TAUQ_AXES,
    TAUQ_ERRORS,
    ErrorTable,
    compute_errors,
    convergence_plot_data,
    exp_rate_fit,
    reference_solution,
    tauq_plot_data,
    write_plot_data,
)
from .config import Config, configure_logging, load_run_config, resolve_threads
from .errors import ConfigError, CordesViolationError, HJBError
from .forms import SpatialOperators, assemble_spatial_operators, build_penalties
from .hjb_problem import HJBProblem, build_problem, verify_cordes
from .mesh import build_graded_quad_mesh, build_uniform_quad_mesh, extract_faces
from .models import ErrorRow, RunConfig
from .solver import SolutionHistory, march, save_history
from .spaces import DGSpace, TimePartition, build_time_partition, degree_ratio, graded_degrees


@dataclass
class Run:
    """Everything one solve needs, built from a manifest."""
    problem: HJBProblem
    space: DGSpace
    partition: TimePartition
    ops: SpatialOperators


def build_run(cfg: RunConfig, threads: int = 1, k: Optional[int] = None, levels: Optional[int] = None,
              N: Optional[int] = None) -> Run:
    """
    Problem, space, partition and spatial operators for a manifest.

    k, levels and N override the manifest's mesh level, graded levels and
    number of slabs for sweeps.
    """
    problem = build_problem(cfg.problem.key, omega=cfg.problem.omega, n_controls=cfg.problem.n_controls)
    verify_cordes(problem)
    if cfg.mesh.kind == "uniform":
        mesh = build_uniform_quad_mesh(k if k is not None else cfg.mesh.k)
    else:
        mesh = build_graded_quad_mesh(levels if levels is not None else cfg.mesh.levels)
    p = graded_degrees(mesh, cfg.degree.p_min) if cfg.degree.kind == "graded" else cfg.degree.p
    space = DGSpace(mesh, p)
    t = cfg.time
    partition = build_time_partition(t.kind, t.T, N if N is not None else t.N, t.sigma, t.q_rule, t.q)
    faces = extract_faces(mesh)
    if cfg.degree.kind == "graded":
        degree_ratio(space, faces)
    penalties = build_penalties(space, faces, cfg.penalty.c_s, cfg.penalty.sigma, problem.lam)
    ops = assemble_spatial_operators(space, penalties, threads)
    logger.info(
        f"{problem.key}: {mesh.n_elements} elements, dof_x={space.dim}, N={partition.N}, dof_t={partition.dof_t}"
    )
    return Run(problem=problem, space=space, partition=partition, ops=ops)


def error_row(cfg: RunConfig, run: Run, history: SolutionHistory, level: int) -> ErrorRow:
    """Relative errors of one solved run as an ErrorTable row."""
    ref = reference_solution(run.problem, cfg.problem.series_terms)
    errs = compute_errors(run.space, run.partition, run.ops.penalties, history.blocks, ref, run.problem.omega)
    return ErrorRow(
        level=level,
        h=run.space.mesh.h,
        tau=float(run.partition.tau.max()),
        p=int(run.space.p.max()),
        q=int(run.partition.q.max()),
        dof_x=run.space.dim,
        dof_t=run.partition.dof_t,
        **errs,
    )


def _output_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out or cfg.output.dir or Config.OUTPUT_DIR)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(cfg.normalized() + "\n")
    return out


def cmd_verify_cordes(args, cfg: RunConfig) -> int:
    """Print the sampled Cordes report; a violation exits with status 1."""
    problem = build_problem(cfg.problem.key, omega=cfg.problem.omega, n_controls=cfg.problem.n_controls)
    try:
        report = verify_cordes(problem)
    except CordesViolationError as e:
        if e.report is not None:
            print(e.report.summary())
        raise
    print(report.summary())
    return 0


def cmd_solve(args, cfg: RunConfig) -> int:
    """One solve: checkpoint, per-slab statistics and errors when a reference exists."""
    out = _output_dir(args, cfg)
    run = build_run(cfg, args.threads)
    history = march(run.problem, run.ops, run.partition, cfg.solver, args.threads)
    save_history(history, out / cfg.output.checkpoint_name)
    print("slab q iterations final_residual restarted")
    for s in history.stats:
        print(f"{s.slab} {s.q} {s.iterations} {s.final_residual:.3e} {s.restarted}")
    if run.problem.solution is not None or run.problem.key == "exp2-heat":
        row = error_row(cfg, run, history, level=cfg.mesh.k if cfg.mesh.kind == "uniform" else cfg.mesh.levels)
        print(f"err_X={row.err_X:.6e} err_E={row.err_E:.6e} err_H1_T={row.err_H1_T:.6e}")
    return 0


def cmd_convergence(args, cfg: RunConfig) -> int:
    """Uniform h-sweep with tau = tau_factor * 2**-k; writes the CSV and log-log plot data."""
    if cfg.mesh.kind != "uniform":
        raise ConfigError("convergence sweeps need mesh.kind = \"uniform\"")
    out = _output_dir(args, cfg)
    table = ErrorTable()
    for k in cfg.sweep_levels():
        N = max(1, int(round(cfg.time.T / (cfg.sweep.tau_factor * 2.0 ** -k))))
        try:
            run = build_run(cfg, args.threads, k=k, N=N)
            history = march(run.problem, run.ops, run.partition, cfg.solver, args.threads)
        except HJBError as e:
            logger.error(f"convergence sweep failed at level k={k}: {e}")
            raise
        row = error_row(cfg, run, history, level=k)
        table.add(row)
        logger.info(f"k={k}: err_X={row.err_X:.3e} err_E={row.err_E:.3e} err_H1_T={row.err_H1_T:.3e}")
        if row.err_E <= 1e-8:
            print(f"k={k}: exact (err_E = {row.err_E:.3e})")
    table.to_csv(out / cfg.output.csv_name)
    write_plot_data(out / cfg.output.plot_name, *convergence_plot_data(table))
    print(table.to_frame().to_string(index=False))
    return 0


def cmd_tauq(args, cfg: RunConfig) -> int:
    """N-sweep over the configured (normally geometric) partitions with exponential-rate fits in DoF_t and DoF_x."""
    out = _output_dir(args, cfg)
    table = ErrorTable()
    for N in cfg.sweep.N_values:
        levels = max(1, N - 1) if cfg.sweep.couple_mesh_to_N else cfg.mesh.levels
        run = build_run(cfg, args.threads, levels=levels, N=N)
        history = march(run.problem, run.ops, run.partition, cfg.solver, args.threads)
        row = error_row(cfg, run, history, level=N)
        table.add(row)
        logger.info(f"N={N}: err_X={row.err_X:.3e} err_L2H1={row.err_L2H1:.3e}")
    errs = [r.err_X for r in table.rows]
    steps_up = int(np.sum(np.diff(errs) > 0))
    if steps_up:
        logger.warning(f"err_X increased in {steps_up} step(s) of the N sweep")
    table.to_csv(out / cfg.output.csv_name)
    write_plot_data(out / cfg.output.plot_name, *tauq_plot_data(table))
    plot = Path(cfg.output.plot_name)
    for dofs in TAUQ_AXES:
        for error in TAUQ_ERRORS:
            write_plot_data(out / f"{plot.stem}_{dofs}_{error}{plot.suffix}", *tauq_plot_data(table, dofs, error))
    print("N dof_x dof_t err_X err_L2H1")
    for r in table.rows:
        print(f"{r.level} {r.dof_x} {r.dof_t} {r.err_X:.6e} {r.err_L2H1:.6e}")
    for dofs, (exponent, label) in TAUQ_AXES.items():
        for error in TAUQ_ERRORS:
            fit = exp_rate_fit([getattr(r, error) for r in table.rows], [getattr(r, dofs) for r in table.rows],
                               exponent=exponent)
            flag = f" (degenerate: {fit.message})" if fit.degenerate else ""
            print(f"fit log({error}) ~ {label}: slope={fit.slope:.4f} r2={fit.r_squared:.4f}{flag}")
    return 0


COMMANDS = {
    "verify-cordes": cmd_verify_cordes,
    "solve": cmd_solve,
    "convergence": cmd_convergence,
    "tauq": cmd_tauq,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stdg-hjb", description=Config.DESCRIPTION)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__.strip().splitlines()[0])
        p.add_argument("--config", required=True, help="TOML experiment manifest")
        p.add_argument("--out", default=None, help="Output directory")
        p.add_argument("--threads", type=int, default=Config.THREADS, help="Assembly workers (0 = auto)")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Entry point.

    Returns:
        int: 0 on success, 2 on configuration errors, 1 on any other solver error
    """
    args = build_parser().parse_args(argv)
    configure_logging()
    try:
        args.threads = resolve_threads(args.threads)
        cfg = load_run_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except HJBError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
