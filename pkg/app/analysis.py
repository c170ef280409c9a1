"""
Post-processing: reference solutions, the scheme norms, relative errors,
EOC tables and exponential-rate fits.

Norms act on anything implementing the Field protocol, so discrete
solutions, exact solutions and their differences share one code path.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger

from .errors import ArgumentError, ConfigError
from .forms import PenaltyTable
from .hjb_problem import HJBProblem, SolutionFn
from .mesh import Face
from .models import ErrorRow, FitSummary
from .spaces import DGSpace, TimePartition, face_points, gauss_rule, legendre_table, tensor_rule

CSV_HEADER = "level,h,tau,p,q,dof_x,dof_t,err_X,err_E,err_H1_T,eoc_X,eoc_H1T"

# (v, grad, hess, v_t) with shapes (nt, nx), (nt, nx, 2), (nt, nx, 2, 2), (nt, nx)
FieldValues = Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]


class Field(Protocol):
    """Space-time function evaluable on one element during one slab."""

    def evaluate(self, K: int, pts: np.ndarray, n: int, times: np.ndarray) -> FieldValues:
        """
        Values at physical points of element K and times in the closure of slab n.

        Endpoint times give one-sided limits from inside slab n.
        """
        ...

    def initial(self, K: int, pts: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(value, grad) of v(t_0^-), the datum the first temporal jump is taken against."""
        ...


@dataclass
class DiscreteField:
    """u_h given by per-slab coefficient blocks (unknown k*dim + j)."""
    space: DGSpace
    partition: TimePartition
    blocks: Sequence[np.ndarray]
    initial_datum: Optional["Snapshot"] = None

    def initial(self, K: int, pts: np.ndarray):
        if self.initial_datum is None:
            return np.zeros(len(pts)), np.zeros((len(pts), 2))
        return self.initial_datum(K, pts)

    def evaluate(self, K: int, pts: np.ndarray, n: int, times: np.ndarray) -> FieldValues:
        t0, t1 = self.partition.interval(n)
        tau = t1 - t0
        q = int(self.partition.q[n - 1])
        psi, dpsi, _ = legendre_table(q, 2.0 * (np.asarray(times, dtype=float) - t0) / tau - 1.0, orthonormal=False)
        dpsi = dpsi * 2.0 / tau
        values, grads, hess = self.space.evaluate(K, pts)
        Uk = np.asarray(self.blocks[n - 1]).reshape(q + 1, self.space.dim)[:, self.space.dofs(K)]
        sv = values @ Uk.T
        sg = np.einsum("xja,kj->xka", grads, Uk)
        sh = np.einsum("xjab,kj->xkab", hess, Uk)
        return (
            psi @ sv.T,
            np.einsum("tk,xka->txa", psi, sg),
            np.einsum("tk,xkab->txab", psi, sh),
            dpsi @ sv.T,
        )


@dataclass
class ReferenceField:
    """Smooth function given by a solution callback (x, y, t) -> (u, u_t, grad, hess)."""
    solution: SolutionFn

    def evaluate(self, K: int, pts: np.ndarray, n: int, times: np.ndarray) -> FieldValues:
        times = np.asarray(times, dtype=float)
        nt, nx = len(times), len(pts)
        x = np.tile(pts[:, 0], nt)
        y = np.tile(pts[:, 1], nt)
        t = np.repeat(times, nx)
        u, ut, grad, hess = self.solution(x, y, t)
        return u.reshape(nt, nx), grad.reshape(nt, nx, 2), hess.reshape(nt, nx, 2, 2), ut.reshape(nt, nx)

    def initial(self, K: int, pts: np.ndarray):
        u, _, grad, _ = self.solution(pts[:, 0], pts[:, 1], np.zeros(len(pts)))
        return u, grad


@dataclass
class DifferenceField:
    """a - b."""
    a: Field
    b: Field

    def evaluate(self, K: int, pts: np.ndarray, n: int, times: np.ndarray) -> FieldValues:
        return tuple(x - y for x, y in zip(self.a.evaluate(K, pts, n, times), self.b.evaluate(K, pts, n, times)))

    def initial(self, K: int, pts: np.ndarray):
        return tuple(x - y for x, y in zip(self.a.initial(K, pts), self.b.initial(K, pts)))


# Reference solutions
def _exp2_initial(x, y):
    sy, cy = np.sin(np.pi * y), np.cos(np.pi * y)
    w = x * (1 - x)
    u = w * sy
    grad = np.stack([(1 - 2 * x) * sy, np.pi * w * cy], -1)
    hxy = np.pi * (1 - 2 * x) * cy
    hess = np.stack([np.stack([-2 * sy, hxy], -1), np.stack([hxy, -np.pi ** 2 * u], -1)], -2)
    return u, hess[..., 0, 0] + hess[..., 1, 1], grad, hess


def exp2_tail_bound(K: int, t: float) -> float:
    """Bound on the discarded terms k > K of the exp2-heat series at time t."""
    return float(np.exp(-(K ** 2 + 1) * np.pi ** 2 * t) * 4.0 / (np.pi ** 3 * K ** 2))


def reference_exp2(x, y, t, K: int = 4000):
    """
    Truncated Fourier series of the exp2-heat solution with term-by-term derivatives.

    u = (4/pi^3) sum_{k odd <= K} (2/k^3) exp(-(k^2+1) pi^2 t) sin(k pi x) sin(pi y).
    Points with t == 0 return the closed-form initial datum. For t < 1e-5 the
    truncation is doubled until the tail bound is below 1e-10.

    Args:
        x, y, t: Point arrays of equal shape
        K: Truncation order, >= 1

    Returns:
        Tuple: (u, u_t, grad (n,2), hess (n,2,2)) and the tail bound as a 5th entry
    """
    if K < 1:
        raise ArgumentError(f"series truncation must be >= 1, got {K}")
    x, y, t = (np.atleast_1d(np.asarray(v, dtype=float)).ravel() for v in np.broadcast_arrays(x, y, t))
    u, ut = np.zeros_like(x), np.zeros_like(x)
    grad, hess = np.zeros(x.shape + (2,)), np.zeros(x.shape + (2, 2))

    zero = t <= 0.0
    if np.any(zero):
        u[zero], ut[zero], grad[zero], hess[zero] = _exp2_initial(x[zero], y[zero])

    tail = 0.0
    live = ~zero
    if np.any(live):
        t_min = float(t[live].min())
        if t_min < 1e-5:
            while exp2_tail_bound(K, t_min) >= 1e-10:
                K *= 2
        # terms with exp(-k^2 pi^2 t) < 1e-20 at every point are dropped
        k_cut = int(np.ceil(np.sqrt(np.log(1e20) / (np.pi ** 2 * t_min))))
        K_eff = max(1, min(K, k_cut))
        tail = exp2_tail_bound(K_eff, t_min) if K_eff < K else exp2_tail_bound(K, t_min)
        ks = np.arange(1, K_eff + 1, 2, dtype=float)
        xs, ys, ts = x[live, None], y[live], t[live, None]
        pi = np.pi
        amp = (8.0 / pi ** 3) / ks ** 3 * np.exp(-(ks ** 2 + 1) * pi ** 2 * ts)
        sx, cx = np.sin(ks * pi * xs), np.cos(ks * pi * xs)
        sy, cy = np.sin(pi * ys), np.cos(pi * ys)
        base = np.sum(amp * sx, axis=1)
        u[live] = base * sy
        ut[live] = -pi ** 2 * np.sum(amp * (ks ** 2 + 1) * sx, axis=1) * sy
        dx = pi * np.sum(amp * ks * cx, axis=1)
        grad[live, 0] = dx * sy
        grad[live, 1] = pi * base * cy
        hess[live, 0, 0] = -pi ** 2 * np.sum(amp * ks ** 2 * sx, axis=1) * sy
        hess[live, 1, 1] = -pi ** 2 * u[live]
        hess[live, 0, 1] = hess[live, 1, 0] = pi * dx * cy
    return u, ut, grad, hess, tail


@dataclass
class ReferenceSolution:
    """Exact solution callbacks; for exp2-heat also the truncation and last tail bound."""
    key: str
    solution: SolutionFn
    series_terms: Optional[int] = None
    tail_bounds: List[float] = field(default_factory=list)

    def __call__(self, x, y, t):
        return self.solution(x, y, t)

    def as_field(self) -> ReferenceField:
        return ReferenceField(self)


def reference_solution(problem: HJBProblem, series_terms: int = 4000) -> ReferenceSolution:
    """
    Reference solution of a registry problem.

    Raises:
        ConfigError: If the problem has no known exact solution
    """
    if problem.key == "exp2-heat":
        ref = ReferenceSolution(key=problem.key, solution=None, series_terms=series_terms)

        def series(x, y, t):
            u, ut, grad, hess, tail = reference_exp2(x, y, t, series_terms)
            ref.tail_bounds.append(tail)
            return u, ut, grad, hess

        ref.solution = series
        return ref
    if problem.solution is None:
        raise ConfigError(f"{problem.key} has no reference solution")
    return ReferenceSolution(key=problem.key, solution=problem.solution)


# Quadrature helpers
def _element_rule(space: DGSpace, K: int, extra: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    rule = tensor_rule(space.element_rule_points(K, extra))
    x0, y0, x1, y1 = space.mesh.boxes[K]
    hx, hy = x1 - x0, y1 - y0
    pts = np.column_stack([x0 + 0.5 * (rule.points[:, 0] + 1.0) * hx, y0 + 0.5 * (rule.points[:, 1] + 1.0) * hy])
    return pts, rule.weights * hx * hy / 4.0


def _time_rule(partition: TimePartition, n: int, extra: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    t0, t1 = partition.interval(n)
    rule = gauss_rule(int(partition.q[n - 1]) + 2 + extra)
    return t0 + 0.5 * (rule.points + 1.0) * (t1 - t0), rule.weights * (t1 - t0) / 2.0


def _face_rule(space: DGSpace, face: Face, extra: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    return face_points(face, gauss_rule(max(int(space.p[e]) for e in face.elements) + 3 + extra))


def _volume_integral(space: DGSpace, partition: TimePartition, v: Field,
                     density: Callable[[FieldValues], np.ndarray]) -> float:
    total = 0.0
    for n in range(1, partition.N + 1):
        times, tw = _time_rule(partition, n)
        for K in range(space.mesh.n_elements):
            pts, xw = _element_rule(space, K)
            total += float(tw @ density(v.evaluate(K, pts, n, times)) @ xw)
    return total


def _hess2(vals: FieldValues) -> np.ndarray:
    return np.sum(vals[2] ** 2, axis=(-2, -1))


def _grad2(vals: FieldValues) -> np.ndarray:
    return np.sum(vals[1] ** 2, axis=-1)


def _lam_hessian_density(vals: FieldValues, lam: float) -> np.ndarray:
    """|v|^2_{H2,lam} density: |D2 v|^2 + 2 lam |grad v|^2 + lam^2 v^2."""
    return _hess2(vals) + 2.0 * lam * _grad2(vals) + lam ** 2 * vals[0] ** 2


def _side_values(v: Field, face: Face, pts: np.ndarray, n: int, times: np.ndarray) -> List[FieldValues]:
    return [v.evaluate(e, pts, n, times) for e in face.elements]


def _jump(sides: List[np.ndarray]) -> np.ndarray:
    return sides[0] - sides[1] if len(sides) == 2 else sides[0]


def _avg(sides: List[np.ndarray]) -> np.ndarray:
    return 0.5 * (sides[0] + sides[1]) if len(sides) == 2 else sides[0]


def jump_seminorm(space: DGSpace, partition: TimePartition, penalties: PenaltyTable, v: Field) -> float:
    """int_I |v|_J^2 dt by face and time quadrature."""
    total = 0.0
    for i, face in enumerate(penalties.faces):
        pts, fw = _face_rule(space, face)
        nrm, tan = face.normal, face.tangent
        for n in range(1, partition.N + 1):
            times, tw = _time_rule(partition, n)
            sides = _side_values(v, face, pts, n, times)
            jv = _jump([s[0] for s in sides])
            jg = _jump([s[1] for s in sides])
            dens = penalties.mu[i] * (jg @ tan) ** 2 + penalties.eta[i] * jv ** 2
            if face.is_interior:
                dens = dens + penalties.mu[i] * (jg @ nrm) ** 2
            total += float(tw @ dens @ fw)
    return total


Snapshot = Callable[[int, np.ndarray], Tuple[np.ndarray, np.ndarray]]


def temporal_jump(v: Field, partition: TimePartition, n: int) -> Snapshot:
    """
    Spatial function (value, grad) of the temporal jump at t_n.

    n = 0 gives v(t_0^-) - v(t_0^+) with v(t_0^-) from Field.initial, n = N
    gives v(t_N), otherwise v(t_n) - v(t_n^+).
    """
    N = partition.N
    if not 0 <= n <= N:
        raise ArgumentError(f"jump index {n} outside 0..{N}")
    t = np.array([partition.breakpoints[n]])

    def snap(K: int, pts: np.ndarray):
        if n == 0:
            vals, grads = v.initial(K, pts)
        else:
            left = v.evaluate(K, pts, n, t)
            vals, grads = left[0][0], left[1][0]
        if n < N:
            right = v.evaluate(K, pts, n + 1, t)
            vals, grads = vals - right[0][0], grads - right[1][0]
        return vals, grads

    return snap


def a_h_norm_sq(space: DGSpace, penalties: PenaltyTable, w: Snapshot, clips: Optional[List[float]] = None) -> float:
    """
    a_h(w, w) by quadrature, clipped at zero.

    Negative values beyond rounding mean the penalty is too small for a_h to
    be coercive; they are logged and appended to clips when it is given.
    """
    lam = penalties.lam
    total = 0.0
    scale = 0.0
    for K in range(space.mesh.n_elements):
        pts, xw = _element_rule(space, K)
        val, grad = w(K, pts)
        vol = float(xw @ (np.sum(grad ** 2, axis=-1) + lam * val ** 2))
        total += vol
        scale += vol
    for i, face in enumerate(penalties.faces):
        pts, fw = _face_rule(space, face)
        sides = [w(e, pts) for e in face.elements]
        jv = _jump([s[0] for s in sides])
        adn = _avg([s[1] @ face.normal for s in sides])
        total += float(fw @ (-2.0 * adn * jv + penalties.mu[i] * jv ** 2))
        scale += float(fw @ (2.0 * np.abs(adn * jv) + penalties.mu[i] * jv ** 2))
    if total < -1e-12 * scale:
        logger.warning(f"a_h(w, w) = {total:.3e} < 0; the penalty is too small for coercivity")
        if clips is not None:
            clips.append(total)
    return max(total, 0.0)


def _jump_sum(space, partition, penalties, v, n_values, clips=None) -> float:
    return sum(a_h_norm_sq(space, penalties, temporal_jump(v, partition, n), clips) for n in n_values)


def norm_X(space: DGSpace, partition: TimePartition, v: Field, omega: float = 1.0) -> float:
    """sqrt(sum_n int_In sum_K omega^2 ||v_t||^2 + ||v||^2_{H2(K)} dt) with the full H2 norm."""
    return float(np.sqrt(_volume_integral(
        space, partition, v,
        lambda s: omega ** 2 * s[3] ** 2 + s[0] ** 2 + _grad2(s) + _hess2(s),
    )))


def norm_E(space: DGSpace, partition: TimePartition, penalties: PenaltyTable, v: Field, omega: float = 1.0,
           clips: Optional[List[float]] = None) -> float:
    """
    The scheme's error norm.

    |||v|||^2 = int_I [omega^2 ||v_t||^2 + sum_K |v|^2_{H2(K),lam} + |v|_J^2] dt
              + omega sum_{n=0}^{N-1} ||<<v>>_n||^2_{a_h}
    """
    lam = penalties.lam
    vol = _volume_integral(space, partition, v, lambda s: omega ** 2 * s[3] ** 2 + _lam_hessian_density(s, lam))
    jumps = _jump_sum(space, partition, penalties, v, range(partition.N), clips)
    return float(np.sqrt(vol + jump_seminorm(space, partition, penalties, v) + omega * jumps))


def norm_h1(space: DGSpace, partition: TimePartition, penalties: PenaltyTable, v: Field, omega: float = 1.0,
            clips: Optional[List[float]] = None) -> float:
    """||v||_{h,1}: norm_E with the end-time jump n = N included."""
    e2 = norm_E(space, partition, penalties, v, omega, clips) ** 2
    end = a_h_norm_sq(space, penalties, temporal_jump(v, partition, partition.N), clips)
    return float(np.sqrt(e2 + omega * end))


def norm_L2H1(space: DGSpace, partition: TimePartition, v: Field) -> float:
    """L2(I; H1(Omega; T_h)) norm."""
    return float(np.sqrt(_volume_integral(space, partition, v, lambda s: s[0] ** 2 + _grad2(s))))


def end_time_H1(space: DGSpace, partition: TimePartition, v: Field) -> float:
    """Broken H1 norm of v(T), taken from the last slab."""
    N, T = partition.N, np.array([partition.T])
    total = 0.0
    for K in range(space.mesh.n_elements):
        pts, xw = _element_rule(space, K)
        s = v.evaluate(K, pts, N, T)
        total += float(xw @ (s[0][0] ** 2 + _grad2(s)[0]))
    return float(np.sqrt(total))


def end_time_H1_error(space: DGSpace, partition: TimePartition, solution: Field, reference: Field) -> float:
    """||u(T) - u_h(T)||_{H1(Omega; T_h)}."""
    return end_time_H1(space, partition, DifferenceField(reference, solution))


def _relative(err: float, ref: float) -> float:
    return err / ref if ref > 0.0 else err


def compute_errors(
    space: DGSpace,
    partition: TimePartition,
    penalties: PenaltyTable,
    blocks: Sequence[np.ndarray],
    reference: ReferenceSolution,
    omega: float = 1.0,
) -> Dict[str, float]:
    """
    Relative errors of u_h against the reference in every reported norm.

    Each error is divided by the same norm of the reference solution.
    a_h_clipped counts temporal jumps whose a_h(w, w) came out negative.
    """
    clips: List[float] = []
    u = reference.as_field()
    uh = DiscreteField(space, partition, blocks, initial_datum=u.initial)
    diff = DifferenceField(u, uh)
    errors = {
        "err_X": _relative(norm_X(space, partition, diff, omega), norm_X(space, partition, u, omega)),
        "err_E": _relative(norm_E(space, partition, penalties, diff, omega, clips),
                           norm_E(space, partition, penalties, u, omega, clips)),
        "err_H1_T": _relative(end_time_H1(space, partition, diff), end_time_H1(space, partition, u)),
        "err_L2H1": _relative(norm_L2H1(space, partition, diff), norm_L2H1(space, partition, u)),
    }
    errors["a_h_clipped"] = len(clips)
    if clips:
        logger.warning(f"{len(clips)} temporal jump(s) had negative a_h(w, w), smallest {min(clips):.3e}")
    logger.debug(f"errors: {errors}")
    return errors


# Rates and tables
def eoc(errors: Sequence[float], hs: Sequence[float]) -> List[float]:
    """
    Experimental orders log(e_i/e_{i+1}) / log(h_i/h_{i+1}).

    Raises:
        ArgumentError: On mismatched or short inputs, nonpositive entries or repeated h
    """
    e = np.asarray(errors, dtype=float)
    h = np.asarray(hs, dtype=float)
    if e.shape != h.shape or e.ndim != 1 or len(e) < 2:
        raise ArgumentError("eoc needs two sequences of equal length >= 2")
    if np.any(e <= 0) or np.any(h <= 0):
        raise ArgumentError("eoc needs positive errors and mesh sizes")
    ratio = np.log(h[:-1] / h[1:])
    if np.any(ratio == 0):
        raise ArgumentError("consecutive mesh sizes must differ")
    return list(np.log(e[:-1] / e[1:]) / ratio)


def exp_rate_fit(errors: Sequence[float], dofs: Sequence[float], exponent: float = 0.5) -> FitSummary:
    """
    Least-squares fit of log(error) against dofs**exponent.

    Fewer than three points or constant data give a fit flagged degenerate.

    Raises:
        ArgumentError: On mismatched lengths, an empty input or nonpositive values
    """
    e = np.asarray(errors, dtype=float)
    d = np.asarray(dofs, dtype=float)
    if e.shape != d.shape or e.size == 0:
        raise ArgumentError("exp_rate_fit needs equal-length non-empty sequences")
    if np.any(e <= 0) or np.any(d <= 0):
        raise ArgumentError("exp_rate_fit needs positive errors and dof counts")
    x, y = d ** exponent, np.log(e)
    n = len(x)
    if n < 2 or np.ptp(x) == 0.0:
        return FitSummary(slope=0.0, intercept=float(y.mean()), r_squared=0.0, n_points=n,
                          degenerate=True, message="not enough distinct points for a fit")
    slope, intercept = np.polyfit(x, y, 1)
    ss_res = float(np.sum((y - (slope * x + intercept)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    messages = []
    if ss_tot == 0.0:
        r2 = 1.0
        messages.append("errors are constant")
    else:
        r2 = 1.0 - ss_res / ss_tot
    if n < 3:
        messages.append("fewer than 3 points")
    return FitSummary(
        slope=float(slope), intercept=float(intercept), r_squared=float(r2), n_points=n,
        degenerate=bool(messages), message="; ".join(messages) or None,
    )


class ErrorTable:
    """Rows of one convergence sweep with EOC columns between consecutive rows."""

    def __init__(self, rows: Optional[List[ErrorRow]] = None):
        self.rows: List[ErrorRow] = list(rows or [])

    def add(self, row: ErrorRow) -> None:
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    def to_frame(self) -> pd.DataFrame:
        columns = CSV_HEADER.split(",")
        df = pd.DataFrame([r.model_dump() for r in self.rows], columns=columns[:10])
        df["eoc_X"] = np.nan
        df["eoc_H1T"] = np.nan
        if len(df) >= 2:
            h = df["h"].to_numpy()
            for col, out in (("err_X", "eoc_X"), ("err_H1_T", "eoc_H1T")):
                e = df[col].to_numpy()
                if np.all(e > 0) and np.all(np.diff(h) != 0):
                    df.loc[1:, out] = eoc(e, h)
        return df[columns]

    def to_csv(self, path: Union[str, Path]) -> None:
        """Write the table with the stable header; missing EOC cells are empty."""
        self.to_frame().to_csv(path, index=False, float_format="%.10e", na_rep="")

    @property
    def last_eoc(self) -> Dict[str, float]:
        df = self.to_frame()
        return {"eoc_X": float(df["eoc_X"].iloc[-1]), "eoc_H1T": float(df["eoc_H1T"].iloc[-1])}


def write_plot_data(path: Union[str, Path], xs: Sequence[float], ys: Sequence[float]) -> None:
    """Plain "x y" lines."""
    lines = [f"{x:.10e} {y:.10e}" for x, y in zip(xs, ys)]
    Path(path).write_text("\n".join(lines) + "\n")


def convergence_plot_data(table: ErrorTable) -> Tuple[np.ndarray, np.ndarray]:
    """(log10 h, log10 err_X) pairs of a level sweep."""
    df = table.to_frame()
    return np.log10(df["h"].to_numpy()), np.log10(df["err_X"].to_numpy())


# DoF axis of an N sweep -> (exponent of the exponential rate, plot label)
TAUQ_AXES = {"dof_t": (0.5, "sqrt(dof_t)"), "dof_x": (1.0 / 3.0, "cbrt(dof_x)")}
TAUQ_ERRORS = ("err_X", "err_L2H1")


def tauq_plot_data(table: ErrorTable, dofs: str = "dof_t", error: str = "err_X") -> Tuple[np.ndarray, np.ndarray]:
    """
    (DoF**exponent, log10 error) pairs of an N sweep.

    The exponent is 1/2 for DoF_t and 1/3 for DoF_x, so an exponential rate
    shows up as a straight line.

    Raises:
        ArgumentError: On an unknown DoF axis or error column
    """
    if dofs not in TAUQ_AXES or error not in TAUQ_ERRORS:
        raise ArgumentError(f"no tauq plot for {error} against {dofs}")
    x = np.array([getattr(r, dofs) for r in table.rows], dtype=float)
    e = np.array([getattr(r, error) for r in table.rows], dtype=float)
    return x ** TAUQ_AXES[dofs][0], np.log10(e)
