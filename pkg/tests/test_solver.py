"""
Tests for policy iteration, time marching and checkpoints.
"""

import numpy as np
import pytest

from app.analysis import compute_errors, reference_solution
from app.errors import ConfigError, SlabSolveError
from app.forms import SlabAssembler
from app.models import SolverConfig
from app.solver import (
    CHECKPOINT_MAGIC,
    SolutionHistory,
    load_history,
    march,
    save_history,
    slab_residual,
    solve_slab,
)
from app.spaces import DGSpace, build_time_partition, project


def _bubble(x, y):
    return x * (1 - x) * y * (1 - y)


@pytest.fixture
def poly_history(poly_problem, calibrated_ops1, partition2):
    return march(poly_problem, calibrated_ops1, partition2)


class TestPolicyIteration:
    """Test the per-slab nonlinear solver."""

    def test_singleton_control_one_iteration(self, heat_problem, calibrated_ops1, partition2):
        """Test a linear problem converges after a single solve."""
        assembler = SlabAssembler(heat_problem, calibrated_ops1, partition2, 1)
        _, stats = solve_slab(assembler, None, SolverConfig())
        assert stats.iterations == 1
        assert stats.final_residual < 1e-10
        assert not stats.restarted

    def test_zero_data(self, zero_problem, calibrated_ops1, partition2):
        """Test zero data gives the zero solution."""
        history = march(zero_problem, calibrated_ops1, partition2)
        assert np.all(history.global_vector() == 0.0)
        assert all(s.iterations == 1 for s in history.stats)

    def test_iteration_budget(self, mild_problem, calibrated_ops1, partition2):
        """Test an exhausted budget raises SlabSolveError with the history attached."""
        assembler = SlabAssembler(mild_problem, calibrated_ops1, partition2, 1)
        with pytest.raises(SlabSolveError) as excinfo:
            solve_slab(assembler, None, SolverConfig(max_newton_iters=1, newton_tol=1e-300))
        assert excinfo.value.slab == 1
        assert excinfo.value.iterations == 1
        assert len(excinfo.value.residuals) == 2


class TestMarch:
    """Test time marching on the polynomial heat problem."""

    def test_polynomial_exactness(self, poly_problem, calibrated_ops1, partition2, poly_history):
        """Test u = t x(1-x)y(1-y) is reproduced exactly by p = 2, q = 1."""
        space = calibrated_ops1.space
        W = project(space, _bubble)
        for n in range(1, partition2.N + 1):
            t0, t1 = partition2.interval(n)
            tau = t1 - t0
            expected = np.concatenate([(t0 + tau / 2) * W, (tau / 2) * W])
            assert np.allclose(poly_history.slab(n), expected, atol=1e-10)
        errors = compute_errors(
            space, partition2, calibrated_ops1.penalties, poly_history.blocks,
            reference_solution(poly_problem), poly_problem.omega,
        )
        assert errors["err_E"] <= 1e-8
        assert errors["err_X"] <= 1e-8
        assert errors["a_h_clipped"] == 0

    def test_end_traces(self, poly_history, calibrated_ops1, partition2):
        """Test end traces are u_h(t_n) and start traces continue them for smooth data."""
        W = project(calibrated_ops1.space, _bubble)
        assert poly_history.complete
        assert np.allclose(poly_history.end_trace(1), 0.5 * W, atol=1e-10)
        assert np.allclose(poly_history.final_trace, W, atol=1e-10)
        assert np.allclose(poly_history.start_trace(2), poly_history.end_trace(1), atol=1e-10)

    def test_slab_residual(self, poly_problem, calibrated_ops1, poly_history):
        """Test the stored solution satisfies each slab system."""
        for n in (1, 2):
            assert slab_residual(poly_problem, calibrated_ops1, poly_history, n) < 1e-9

    def test_from_vector(self, poly_history, calibrated_ops1, partition2):
        """Test splitting a global vector reproduces the blocks."""
        again = SolutionHistory.from_vector(calibrated_ops1.space, partition2, poly_history.global_vector())
        for a, b in zip(again.blocks, poly_history.blocks):
            assert np.array_equal(a, b)
        with pytest.raises(ConfigError):
            SolutionHistory.from_vector(calibrated_ops1.space, partition2, np.zeros(3))
        longer = np.concatenate([poly_history.global_vector(), np.zeros(1)])
        with pytest.raises(ConfigError):
            SolutionHistory.from_vector(calibrated_ops1.space, partition2, longer)


class TestCheckpoint:
    """Test the text checkpoint format."""

    def test_save_and_load(self, poly_history, space1, partition2, tmp_path):
        """Test a checkpoint reloads bit-for-bit."""
        path = tmp_path / "run.ckpt"
        save_history(poly_history, path)
        assert path.read_text().splitlines()[0] == CHECKPOINT_MAGIC
        loaded = load_history(path, space1, partition2)
        for a, b in zip(loaded.blocks, poly_history.blocks):
            assert np.array_equal(a, b)

    def test_space_mismatch(self, poly_history, mesh1, partition2, tmp_path):
        """Test a checkpoint of another space is rejected."""
        path = tmp_path / "run.ckpt"
        save_history(poly_history, path)
        with pytest.raises(ConfigError, match="space"):
            load_history(path, DGSpace(mesh1, 3), partition2)

    def test_partition_mismatch(self, poly_history, space1, tmp_path):
        """Test a checkpoint of another partition is rejected."""
        path = tmp_path / "run.ckpt"
        save_history(poly_history, path)
        with pytest.raises(ConfigError, match="partition"):
            load_history(path, space1, build_time_partition("uniform", 1.0, 3, q=1))

    def test_not_a_checkpoint(self, space1, partition2, tmp_path):
        """Test foreign files are rejected."""
        path = tmp_path / "other.txt"
        path.write_text("hello\n")
        with pytest.raises(ConfigError):
            load_history(path, space1, partition2)


@pytest.mark.integration
class TestAnisotropic:
    """Test the strongly anisotropic sup problem on one slab."""

    def test_one_slab_converges(self, exp1_problem, calibrated_ops1):
        """Test policy iteration converges in at most ten solves without a restart."""
        partition = build_time_partition("uniform", 1.0, 1, q=1)
        history = march(exp1_problem, calibrated_ops1, partition)
        stats = history.stats[0]
        assert stats.iterations <= 10
        assert not stats.restarted
        assert stats.final_residual < SolverConfig().newton_tol
        assert slab_residual(exp1_problem, calibrated_ops1, history, 1) < 1e-9

    def test_policy_stable_at_solution(self, exp1_problem, calibrated_ops1):
        """Test the attaining controls do not move under rounding of the converged slab."""
        partition = build_time_partition("uniform", 1.0, 1, q=1)
        history = march(exp1_problem, calibrated_ops1, partition)
        assembler = SlabAssembler(exp1_problem, calibrated_ops1, partition, 1)
        U = history.slab(1)
        base = assembler.policy(U)
        nudged = assembler.policy(U * (1.0 + 1e-14))
        changed = sum(int(np.sum(a != b)) for a, b in zip(base, nudged))
        assert changed == 0
