"""
Tests for reference solutions, norms, EOC tables and rate fits.
"""

import numpy as np
import pytest

from app.analysis import (
    CSV_HEADER,
    DifferenceField,
    DiscreteField,
    ErrorTable,
    ReferenceField,
    a_h_norm_sq,
    end_time_H1,
    eoc,
    exp2_tail_bound,
    exp_rate_fit,
    norm_E,
    norm_h1,
    norm_L2H1,
    norm_X,
    reference_exp2,
    reference_solution,
    temporal_jump,
    tauq_plot_data,
    write_plot_data,
)
from app.errors import ArgumentError, ConfigError
from app.forms import assemble_spatial_operators, build_penalties
from app.hjb_problem import build_problem
from app.models import ErrorRow
from app.spaces import trace_at


def _linear_in_time(x, y, t):
    """v = t with all spatial derivatives zero."""
    n = np.size(x)
    return t.copy(), np.ones(n), np.zeros((n, 2)), np.zeros((n, 2, 2))


def _random_field(space, partition, rng):
    blocks = [rng.normal(size=(int(q) + 1) * space.dim) for q in partition.q]
    return DiscreteField(space, partition, blocks)


def _row(level, h, err):
    return ErrorRow(level=level, h=h, tau=h, p=2, q=1, dof_x=36 * 4 ** level, dof_t=2 ** level,
                    err_X=err, err_E=err, err_H1_T=err / 2, err_L2H1=err / 4)


class TestEOC:
    """Test experimental orders of convergence."""

    def test_halving(self):
        """Test errors decreasing by 4 under halving give order 2."""
        assert eoc([1.0, 0.25, 0.0625], [1.0, 0.5, 0.25]) == pytest.approx([2.0, 2.0])

    def test_invalid(self):
        """Test mismatched, short and nonpositive inputs."""
        with pytest.raises(ArgumentError):
            eoc([1.0], [1.0])
        with pytest.raises(ArgumentError):
            eoc([1.0, 0.5], [1.0])
        with pytest.raises(ArgumentError):
            eoc([1.0, 0.0], [1.0, 0.5])
        with pytest.raises(ArgumentError):
            eoc([1.0, 0.5], [0.5, 0.5])


class TestExpRateFit:
    """Test log-linear fits against sqrt(DoF)."""

    def test_exact_exponential(self):
        """Test exp(-2 sqrt(d)) is fitted with slope -2."""
        d = np.array([4.0, 9.0, 16.0, 25.0])
        fit = exp_rate_fit(np.exp(-2 * np.sqrt(d)), d)
        assert fit.slope == pytest.approx(-2.0)
        assert fit.r_squared == pytest.approx(1.0)
        assert not fit.degenerate

    def test_single_point(self):
        """Test a single point is degenerate."""
        fit = exp_rate_fit([0.1], [4.0])
        assert fit.degenerate
        assert fit.slope == 0.0

    def test_two_points(self):
        """Test two points fit but are flagged."""
        fit = exp_rate_fit([0.1, 0.01], [4.0, 9.0])
        assert fit.degenerate
        assert fit.slope == pytest.approx(np.log(0.1) / 1.0)

    def test_constant_errors(self):
        """Test constant errors have r^2 = 1 and are flagged."""
        fit = exp_rate_fit([0.1, 0.1, 0.1], [4.0, 9.0, 16.0])
        assert fit.r_squared == 1.0
        assert fit.degenerate

    def test_invalid(self):
        """Test nonpositive values are rejected."""
        with pytest.raises(ArgumentError):
            exp_rate_fit([0.1, -0.1], [4.0, 9.0])


class TestReferenceExp2:
    """Test the Fourier series reference of the heat experiment."""

    def test_initial_datum(self):
        """Test t = 0 returns x(1-x) sin(pi y)."""
        u, _, _, _, tail = reference_exp2(np.array([0.5]), np.array([0.5]), np.array([0.0]))
        assert u[0] == pytest.approx(0.25)
        assert tail == 0.0

    def test_boundary(self):
        """Test the series vanishes at x = 0."""
        u, _, _, _, _ = reference_exp2(np.array([0.0]), np.array([0.3]), np.array([0.01]))
        assert u[0] == pytest.approx(0.0, abs=1e-14)

    def test_decay(self):
        """Test values decrease in time at an interior point."""
        t = np.array([0.001, 0.01, 0.05])
        u, _, _, _, _ = reference_exp2(np.full(3, 0.4), np.full(3, 0.6), t)
        assert u[0] > u[1] > u[2] > 0

    def test_truncation_within_tail(self):
        """Test K and 2K terms agree up to the tail bound of K."""
        x, y, t = np.linspace(0.05, 0.95, 7), np.full(7, 0.5), np.full(7, 0.002)
        coarse = reference_exp2(x, y, t, K=5)
        fine = reference_exp2(x, y, t, K=10)
        assert np.max(np.abs(coarse[0] - fine[0])) <= exp2_tail_bound(5, 0.002)

    def test_heat_equation(self):
        """Test u_t = Laplace u term by term."""
        x, y, t = np.array([0.3, 0.7]), np.array([0.2, 0.9]), np.array([0.01, 0.03])
        u, ut, _, hess, _ = reference_exp2(x, y, t)
        assert np.allclose(ut, hess[:, 0, 0] + hess[:, 1, 1])

    def test_invalid_truncation(self):
        """Test K < 1 is rejected."""
        with pytest.raises(ArgumentError):
            reference_exp2(np.array([0.5]), np.array([0.5]), np.array([0.1]), K=0)

    def test_registry(self):
        """Test the registry reference records tail bounds."""
        ref = reference_solution(build_problem("exp2-heat"), series_terms=50)
        ref(np.array([0.5]), np.array([0.5]), np.array([0.01]))
        assert ref.series_terms == 50
        assert len(ref.tail_bounds) == 1

    def test_missing_reference(self):
        """Test problems without a solution raise ConfigError."""
        problem = build_problem("heat-singleton")
        object.__setattr__(problem, "solution", None)
        with pytest.raises(ConfigError):
            reference_solution(problem)


class TestNorms:
    """Test the scheme norms."""

    def test_norm_X_of_time(self, space1, partition2):
        """Test ||t||_X^2 = int_0^1 1 + t^2 dt = 4/3."""
        assert norm_X(space1, partition2, ReferenceField(_linear_in_time)) == pytest.approx(np.sqrt(4.0 / 3.0))

    def test_zero(self, space1, partition2):
        """Test every norm of the zero field is zero."""
        zero = DiscreteField(space1, partition2, [np.zeros(2 * space1.dim)] * 2)
        pen = build_penalties(space1, c_s=10.0)
        assert norm_X(space1, partition2, zero) == 0.0
        assert norm_E(space1, partition2, pen, zero) == 0.0
        assert norm_L2H1(space1, partition2, zero) == 0.0
        assert end_time_H1(space1, partition2, zero) == 0.0

    def test_homogeneity_and_triangle(self, calibrated_ops1, partition2, rng):
        """Test ||2v|| = 2||v|| and ||v + w|| <= ||v|| + ||w||."""
        space1, pen = calibrated_ops1.space, calibrated_ops1.penalties
        v = _random_field(space1, partition2, rng)
        w = _random_field(space1, partition2, rng)
        twice = DiscreteField(space1, partition2, [2 * b for b in v.blocks])
        total = DiscreteField(space1, partition2, [a + b for a, b in zip(v.blocks, w.blocks)])
        for norm in (lambda f: norm_X(space1, partition2, f), lambda f: norm_E(space1, partition2, pen, f)):
            assert norm(twice) == pytest.approx(2 * norm(v))
            assert norm(total) <= norm(v) + norm(w) + 1e-12

    def test_difference_field(self, space1, partition2, rng):
        """Test v - v has zero norm."""
        v = _random_field(space1, partition2, rng)
        assert norm_X(space1, partition2, DifferenceField(v, v)) == 0.0

    def test_end_jump_identity(self, calibrated_ops1, partition2, rng):
        """Test ||v||_{h,1}^2 = |||v|||^2 + omega a_h(v(T), v(T)) on random fields."""
        ops = calibrated_ops1
        space, pen = ops.space, ops.penalties
        for _ in range(100):
            v = _random_field(space, partition2, rng)
            vT = trace_at(v.blocks[-1], space, np.ones(2))
            expected = norm_E(space, partition2, pen, v) ** 2 + vT @ (ops.A @ vT)
            assert norm_h1(space, partition2, pen, v) ** 2 == pytest.approx(expected, rel=1e-10)

    def test_a_h_quadrature_matches_matrix(self, calibrated_ops1, partition2, rng):
        """Test a_h(w, w) by quadrature equals the assembled matrix."""
        ops = calibrated_ops1
        v = _random_field(ops.space, partition2, rng)
        vT = trace_at(v.blocks[-1], ops.space, np.ones(2))
        value = a_h_norm_sq(ops.space, ops.penalties, temporal_jump(v, partition2, partition2.N))
        assert value == pytest.approx(vT @ (ops.A @ vT), rel=1e-9)

    def test_negative_a_h_is_recorded(self, space1, partition2):
        """Test an under-penalised a_h clips to zero and records the negative value."""
        pen = build_penalties(space1, c_s=1e-3)
        A = assemble_spatial_operators(space1, pen).A.toarray()
        eigvals, eigvecs = np.linalg.eigh(A)
        assert eigvals[0] < 0
        block = np.concatenate([eigvecs[:, 0], np.zeros(space1.dim)])
        v = DiscreteField(space1, partition2, [np.zeros(2 * space1.dim), block])
        clips = []
        value = a_h_norm_sq(space1, pen, temporal_jump(v, partition2, partition2.N), clips)
        assert value == 0.0
        assert len(clips) == 1
        assert clips[0] == pytest.approx(eigvals[0], rel=1e-8)

    def test_jump_index(self, space1, partition2, rng):
        """Test jump indices outside 0..N are rejected."""
        with pytest.raises(ArgumentError):
            temporal_jump(_random_field(space1, partition2, rng), partition2, 3)


class TestErrorTable:
    """Test the CSV error table."""

    def test_header(self, tmp_path):
        """Test the header line is stable."""
        table = ErrorTable()
        table.add(_row(1, 0.5, 0.1))
        path = tmp_path / "errors.csv"
        table.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == CSV_HEADER
        assert lines[1].endswith(",,")

    def test_eoc_columns(self):
        """Test EOC columns are filled from the second row."""
        table = ErrorTable([_row(1, 0.5, 0.1), _row(2, 0.25, 0.025)])
        df = table.to_frame()
        assert np.isnan(df["eoc_X"].iloc[0])
        assert df["eoc_X"].iloc[1] == pytest.approx(2.0)
        assert table.last_eoc["eoc_H1T"] == pytest.approx(2.0)

    def test_plot_data(self, tmp_path):
        """Test plot data files hold one pair per row."""
        table = ErrorTable([_row(1, 0.5, 0.1), _row(2, 0.25, 0.025)])
        xs, ys = tauq_plot_data(table)
        assert xs[1] == pytest.approx(2.0)
        path = tmp_path / "plot.dat"
        write_plot_data(path, xs, ys)
        assert len(path.read_text().splitlines()) == 2

    def test_plot_data_spatial_axis(self):
        """Test the DoF_x axis uses cube roots and reads the L2(H1) column."""
        table = ErrorTable([_row(1, 0.5, 0.1), _row(2, 0.25, 0.025)])
        xs, ys = tauq_plot_data(table, dofs="dof_x", error="err_L2H1")
        assert xs[0] == pytest.approx(144.0 ** (1.0 / 3.0))
        assert ys[1] == pytest.approx(np.log10(0.025 / 4))
        with pytest.raises(ArgumentError):
            tauq_plot_data(table, dofs="dof_y")
