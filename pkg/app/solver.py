"""
Time marching: policy iteration (semismooth Newton) per slab and the
solution history with its text checkpoint format.
"""

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
import scipy.sparse as sp
from loguru import logger
from scipy.sparse.linalg import splu

from .errors import ConfigError, SlabSolveError
from .forms import SlabAssembler, SpatialOperators, initial_coupling
from .hjb_problem import HJBProblem
from .models import SlabStats, SolverConfig
from .spaces import DGSpace, TimePartition, project, trace_at

CHECKPOINT_MAGIC = "# stdg-hjb checkpoint v1"


@dataclass
class SolutionHistory:
    """
    Discrete solution u_h as per-slab coefficient blocks.

    blocks[n-1] holds slab n with unknown k*dim + j; end_traces[n-1] is the
    spatial coefficient vector of u_h(t_n).
    """
    space: DGSpace
    partition: TimePartition
    blocks: List[np.ndarray] = field(default_factory=list)
    end_traces: List[np.ndarray] = field(default_factory=list)
    stats: List[SlabStats] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return len(self.blocks) == self.partition.N

    def slab(self, n: int) -> np.ndarray:
        return self.blocks[n - 1]

    def end_trace(self, n: int) -> np.ndarray:
        return self.end_traces[n - 1]

    def start_trace(self, n: int) -> np.ndarray:
        """Spatial coefficients of u_h(t_{n-1}^+)."""
        q = int(self.partition.q[n - 1])
        return trace_at(self.blocks[n - 1], self.space, (-1.0) ** np.arange(q + 1))

    @property
    def final_trace(self) -> np.ndarray:
        return self.end_traces[-1]

    def global_vector(self) -> np.ndarray:
        """All slab blocks concatenated in slab order."""
        return np.concatenate(self.blocks)

    def append(self, block: np.ndarray, stats: SlabStats) -> None:
        q = int(self.partition.q[len(self.blocks)])
        self.blocks.append(block)
        self.end_traces.append(trace_at(block, self.space, np.ones(q + 1)))
        self.stats.append(stats)

    @classmethod
    def from_vector(cls, space: DGSpace, partition: TimePartition, vector: np.ndarray) -> "SolutionHistory":
        """Split a global space-time vector into slab blocks."""
        expected = partition.dof_t * space.dim
        if expected != len(vector):
            raise ConfigError(f"vector of length {len(vector)} does not match {expected} space-time unknowns")
        history = cls(space=space, partition=partition)
        offset = 0
        for n in range(1, partition.N + 1):
            size = (int(partition.q[n - 1]) + 1) * space.dim
            history.append(vector[offset:offset + size].copy(), SlabStats(slab=n, q=int(partition.q[n - 1]), iterations=0))
            offset += size
        return history


def _residual(matrix: sp.csr_matrix, U: np.ndarray, rhs: np.ndarray) -> float:
    scale = float(np.linalg.norm(rhs)) or 1.0
    return float(np.linalg.norm(matrix @ U - rhs)) / scale


def _same_policy(a: Optional[List[np.ndarray]], b: List[np.ndarray]) -> bool:
    return a is not None and all(np.array_equal(x, y) for x, y in zip(a, b))


def solve_slab(
    assembler: SlabAssembler,
    prev_end: Optional[np.ndarray],
    config: SolverConfig,
    initial: Optional[np.ndarray] = None,
    guess: Optional[np.ndarray] = None,
):
    """
    Solve the nonlinear equations of one slab by policy iteration.

    Each iteration freezes the control attaining F_gamma at every
    space-time quadrature point, assembles the linear system, checks the
    residual of the current iterate and otherwise solves with a sparse LU.
    The iteration count is the number of linear solves. The loop stops once
    the residual is below newton_tol and either the policy is unchanged or
    the previous iterate was already below newton_tol. Residual increases
    only count towards a restart while the residual is above newton_tol.

    Args:
        assembler: Slab assembler of slab n
        prev_end: u_h(t_{n-1}) coefficients (None on slab 1)
        config: Solver settings
        initial: a_h(u_0, phi_i) vector for slab 1
        guess: Starting coefficients; zero when omitted

    Returns:
        Tuple[np.ndarray, SlabStats]: Slab coefficients and iteration statistics

    Raises:
        SlabSolveError: On a singular system, a non-finite iterate or exhausted iterations
    """
    n = assembler.n
    U = np.zeros(assembler.size) if guess is None else guess.copy()
    residuals: List[float] = []
    prev_policy = None
    solves = 0
    increases = 0
    restarted = False

    while True:
        policy = assembler.policy(U)
        system = assembler.system(policy, prev_end=prev_end, initial=initial)
        res = _residual(system.matrix, U, system.rhs)
        residuals.append(res)
        logger.debug(f"slab {n} iteration {solves}: residual {res:.3e}")

        converged = res < config.newton_tol
        if solves > 0 and converged:
            # policy may still flicker at points sitting on the tie threshold
            settled = len(residuals) > 1 and residuals[-2] < config.newton_tol
            if _same_policy(prev_policy, policy) or settled:
                break

        if converged:
            increases = 0
        else:
            increases = increases + 1 if len(residuals) > 1 and res > residuals[-2] else 0
        if increases >= config.divergence_window:
            if restarted:
                raise SlabSolveError(f"slab {n}: residual diverged after restart", slab=n,
                                     residuals=residuals, iterations=solves)
            logger.warning(f"slab {n}: residual increased {increases} times, restarting from zero")
            U = np.zeros(assembler.size)
            restarted = True
            increases = 0
            prev_policy = None
            continue

        if solves >= config.max_newton_iters:
            raise SlabSolveError(
                f"slab {n}: no convergence after {solves} policy iterations (last residual {res:.3e})",
                slab=n, residuals=residuals, iterations=solves,
            )
        try:
            U = splu(system.matrix.tocsc()).solve(system.rhs)
        except RuntimeError as e:
            raise SlabSolveError(f"slab {n}: singular system ({e})", slab=n,
                                 residuals=residuals, iterations=solves) from e
        if not np.all(np.isfinite(U)):
            raise SlabSolveError(f"slab {n}: non-finite solution", slab=n, residuals=residuals, iterations=solves)
        solves += 1
        prev_policy = policy

    stats = SlabStats(slab=n, q=assembler.q, iterations=solves, residuals=residuals, restarted=restarted)
    logger.info(f"slab {n}: {solves} iteration(s), residual {stats.final_residual:.3e}")
    return U, stats


def march(
    problem: HJBProblem,
    ops: SpatialOperators,
    partition: TimePartition,
    config: Optional[SolverConfig] = None,
    threads: int = 1,
) -> SolutionHistory:
    """
    Solve slab after slab with u_h(t_0) := u_0.

    The first policy of each slab is taken around the previous end trace
    held constant in time (slab 1: the L2 projection of u_0).

    Args:
        problem: Problem data
        ops: Spatial operators of the space and penalties
        partition: Time partition
        config: Solver settings
        threads: Workers for per-element assembly

    Returns:
        SolutionHistory: Coefficients of every slab

    Raises:
        SlabSolveError: Tagged with the failing slab index
    """
    config = config or SolverConfig()
    space = ops.space
    history = SolutionHistory(space=space, partition=partition)
    initial = initial_coupling(problem, ops)
    lift = project(space, problem.u0)
    prev_end = None
    for n in range(1, partition.N + 1):
        assembler = SlabAssembler(problem, ops, partition, n, threads)
        start = lift if n == 1 else prev_end
        guess = np.zeros(assembler.size)
        guess[:space.dim] = start
        block, stats = solve_slab(assembler, prev_end, config, initial=initial, guess=guess)
        history.append(block, stats)
        prev_end = history.end_trace(n)
    return history


def slab_residual(problem: HJBProblem, ops: SpatialOperators, history: SolutionHistory, n: int) -> float:
    """Relative residual of slab n re-assembled at the stored solution."""
    assembler = SlabAssembler(problem, ops, history.partition, n)
    U = history.slab(n)
    prev = history.end_trace(n - 1) if n > 1 else None
    system = assembler.system(assembler.policy(U), prev_end=prev)
    return _residual(system.matrix, U, system.rhs)


# Checkpoints
def _partition_hash(partition: TimePartition) -> str:
    h = hashlib.sha256()
    h.update(np.asarray(partition.breakpoints, dtype=float).tobytes())
    h.update(np.asarray(partition.q, dtype=np.int64).tobytes())
    return h.hexdigest()


def save_history(history: SolutionHistory, path: Union[str, Path]) -> None:
    """
    Write a text checkpoint.

    The header records SHA-256 hashes of the mesh, the space and the
    partition; then one line "n q_n dim coeffs..." per slab.
    """
    space = history.space
    lines = [
        CHECKPOINT_MAGIC,
        f"# mesh {hashlib.sha256(space.mesh.fingerprint()).hexdigest()}",
        f"# space {space.fingerprint()}",
        f"# partition {_partition_hash(history.partition)}",
        f"# slabs {len(history.blocks)}",
    ]
    for n, block in enumerate(history.blocks, start=1):
        coeffs = " ".join(f"{c:.17g}" for c in block)
        lines.append(f"{n} {int(history.partition.q[n - 1])} {space.dim} {coeffs}")
    Path(path).write_text("\n".join(lines) + "\n")
    logger.info(f"wrote checkpoint {path} ({len(history.blocks)} slabs)")


def load_history(path: Union[str, Path], space: DGSpace, partition: TimePartition) -> SolutionHistory:
    """
    Read a checkpoint written by save_history.

    Raises:
        ConfigError: If the file is malformed or was written for another mesh, space or partition
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    lines = path.read_text().splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise ConfigError(f"{path}: not a solution checkpoint")
    header = {}
    body = []
    for line in lines[1:]:
        if line.startswith("# "):
            key, _, value = line[2:].partition(" ")
            header[key] = value.strip()
        elif line.strip():
            body.append(line)
    expected = {
        "mesh": hashlib.sha256(space.mesh.fingerprint()).hexdigest(),
        "space": space.fingerprint(),
        "partition": _partition_hash(partition),
    }
    for key, value in expected.items():
        if header.get(key) != value:
            raise ConfigError(f"{path}: {key} hash does not match the configured run")

    history = SolutionHistory(space=space, partition=partition)
    for expected_n, line in enumerate(body, start=1):
        parts = line.split()
        try:
            n, q, dim = int(parts[0]), int(parts[1]), int(parts[2])
            coeffs = np.array([float(v) for v in parts[3:]])
        except (IndexError, ValueError) as e:
            raise ConfigError(f"{path}: malformed slab line {expected_n}") from e
        if expected_n > partition.N:
            raise ConfigError(f"{path}: more slabs than the partition has")
        if n != expected_n or q != int(partition.q[n - 1]) or dim != space.dim or len(coeffs) != (q + 1) * dim:
            raise ConfigError(f"{path}: slab {expected_n} block does not match the partition")
        history.append(coeffs, SlabStats(slab=n, q=q, iterations=0))
    return history
