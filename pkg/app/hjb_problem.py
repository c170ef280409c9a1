"""
HJB problem data: control samples, coefficients, Cordes verification,
the renormalisation gamma and the pointwise operator F_gamma.
"""

from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from loguru import logger

from .errors import ConfigError, CordesViolationError, DataError
from .models import CordesReport, PROBLEM_KEYS, Witness

DIM = 2

# controls whose scaled residual is within this relative distance of the minimum tie
TIE_TOL = 1e-10

# (x, y, t) arrays of equal shape (n,) -> coefficient arrays over all controls
CoefficientFn = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
# (x, y, t) -> (u, u_t, grad (n,2), hess (n,2,2))
SolutionFn = Callable[[np.ndarray, np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class PointState:
    """Arguments of L^alpha and F_gamma at a batch of points."""
    v: np.ndarray       # (n,)
    grad: np.ndarray    # (n, 2)
    hess: np.ndarray    # (n, 2, 2)
    vt: np.ndarray      # (n,)

    @classmethod
    def single(cls, v: float, grad, hess, vt: float) -> "PointState":
        return cls(
            v=np.array([v], dtype=float),
            grad=np.asarray(grad, dtype=float).reshape(1, 2),
            hess=np.asarray(hess, dtype=float).reshape(1, 2, 2),
            vt=np.array([vt], dtype=float),
        )


@dataclass(frozen=True)
class HJBProblem:
    """
    Parabolic HJB data over a finite sample of the control set.

    Coefficient callbacks take point arrays x, y, t of shape (n,) and return
    arrays with a leading control axis: a -> (M, n, 2, 2), b -> (M, n, 2),
    c and f -> (M, n). b and c are None when the problem has no lower-order terms.
    """
    key: str
    controls: np.ndarray
    a: CoefficientFn
    f: CoefficientFn
    u0: Callable[[np.ndarray, np.ndarray], np.ndarray]
    u0_grad: Callable[[np.ndarray, np.ndarray], np.ndarray]
    omega: float = 1.0
    lam: float = 0.0
    b: Optional[CoefficientFn] = None
    c: Optional[CoefficientFn] = None
    T: float = 1.0
    solution: Optional[SolutionFn] = None

    def __post_init__(self):
        if self.omega <= 0:
            raise ConfigError(f"omega must be positive, got {self.omega}")
        if len(self.controls) == 0:
            raise ConfigError("the control sample is empty")
        if not self.has_lower_order and self.lam != 0.0:
            raise DataError("lambda must be 0 when b and c vanish")
        if self.has_lower_order and self.lam <= 0.0:
            raise DataError("problems with lower-order terms need lambda > 0")

    @property
    def has_lower_order(self) -> bool:
        return self.b is not None or self.c is not None

    @property
    def n_controls(self) -> int:
        return len(self.controls)

    def coefficients(self, x: np.ndarray, y: np.ndarray, t: np.ndarray) -> Tuple[np.ndarray, ...]:
        """(a, b, c, f) at the points for every control; absent terms are zero arrays."""
        x, y, t = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, y, t)))
        a = self.a(x, y, t)
        m, n = a.shape[0], x.size
        b = self.b(x, y, t) if self.b is not None else np.zeros((m, n, DIM))
        c = self.c(x, y, t) if self.c is not None else np.zeros((m, n))
        f = self.f(x, y, t)
        return a, b, c, f


def gamma_from(problem: HJBProblem, a, b, c) -> np.ndarray:
    """gamma from coefficient arrays with a leading control axis."""
    tr = np.trace(a, axis1=-2, axis2=-1)
    a2 = np.sum(a * a, axis=(-2, -1))
    inv_w = 1.0 / problem.omega
    if not problem.has_lower_order:
        return (tr + inv_w) / (a2 + inv_w ** 2)
    lam = problem.lam
    return (tr + c / lam + inv_w) / (a2 + np.sum(b * b, axis=-1) / (2.0 * lam) + (c / lam) ** 2 + inv_w ** 2)


def _cordes_ratio(problem: HJBProblem, a, b, c) -> np.ndarray:
    """Sample slack: (numerator of gamma)**2 / denominator - d (or - (d+1))."""
    tr = np.trace(a, axis1=-2, axis2=-1)
    a2 = np.sum(a * a, axis=(-2, -1))
    inv_w = 1.0 / problem.omega
    if not problem.has_lower_order:
        return (tr + inv_w) ** 2 / (a2 + inv_w ** 2) - DIM
    lam = problem.lam
    num = (tr + c / lam + inv_w) ** 2
    den = a2 + np.sum(b * b, axis=-1) / (2.0 * lam) + (c / lam) ** 2 + inv_w ** 2
    return num / den - (DIM + 1)


def check_data(problem: HJBProblem, a: np.ndarray, c: np.ndarray) -> None:
    """Raise DataError unless a is symmetric, uniformly elliptic and c >= 0 at the samples."""
    scale = max(1.0, float(np.abs(a).max()))
    if np.abs(a - np.swapaxes(a, -1, -2)).max() > 1e-12 * scale:
        raise DataError(f"{problem.key}: diffusion matrix is not symmetric")
    nu = float(np.linalg.eigvalsh(a).min())
    if nu <= 0.0:
        raise DataError(f"{problem.key}: diffusion is not uniformly elliptic (smallest eigenvalue {nu:.3e})")
    if np.any(c < 0):
        raise DataError(f"{problem.key}: c must be nonnegative")


def verify_cordes(problem: HJBProblem, nx: int = 17, nt: int = 5) -> CordesReport:
    """
    Sampled Cordes slack over a tensor grid of Omega x [0, T] x controls.

    The result is a sample minimum, not a certified bound.

    Args:
        problem: Problem data
        nx: Points per spatial axis
        nt: Points in time

    Returns:
        CordesReport: eps_min (clamped to 1), raw minimum and witness

    Raises:
        DataError: If ellipticity or symmetry fails at a sample
        CordesViolationError: If eps_min <= 0
    """
    xs = np.linspace(0.0, 1.0, nx)
    ts = np.linspace(0.0, problem.T, nt)
    X, Y, Tt = np.meshgrid(xs, xs, ts, indexing="ij")
    x, y, t = X.ravel(), Y.ravel(), Tt.ravel()
    a, b, c, _ = problem.coefficients(x, y, t)
    check_data(problem, a, c)
    ratio = _cordes_ratio(problem, a, b, c)
    m, i = np.unravel_index(int(np.argmin(ratio)), ratio.shape)
    eps_raw = float(ratio[m, i])
    report = CordesReport(
        eps_min=min(eps_raw, 1.0),
        eps_raw=eps_raw,
        witness=Witness(x=float(x[i]), y=float(y[i]), t=float(t[i]), control=int(m)),
        samples_used=int(ratio.size),
        branch="general" if problem.has_lower_order else "no-lower-order",
    )
    logger.debug(f"{problem.key}: Cordes eps_min={report.eps_min:.6e} over {report.samples_used} samples")
    if report.eps_min <= 0.0:
        raise CordesViolationError(f"{problem.key}: Cordes condition fails (eps_min = {eps_raw:.6e})", report=report)
    return report


def gamma_eval(problem: HJBProblem, x, y, t) -> np.ndarray:
    """gamma^alpha at the points, shape (M, n)."""
    a, b, c, _ = problem.coefficients(x, y, t)
    return gamma_from(problem, a, b, c)


def F_gamma_pointwise(
    problem: HJBProblem,
    state: PointState,
    x, y, t,
    gamma: Optional[np.ndarray] = None,
    coeffs: Optional[Tuple[np.ndarray, ...]] = None,
    tie_tol: float = TIE_TOL,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    F_gamma and the attaining control at a batch of points.

    value = min_alpha gamma^alpha (v_t - a:D2v - b.grad v + c v + f); the
    attaining index is the maximiser of the sup form, lowest index on ties.
    Values within tie_tol * max(1, |min|) of the minimum count as ties, so
    the selected control is stable under rounding of the state.

    Args:
        problem: Problem data
        state: v, grad, hess and v_t at the points
        x, y, t: Point coordinates
        gamma: Optional (M, n) override of the renormalisation
        coeffs: Optional precomputed (a, b, c, f) at the points
        tie_tol: Relative tie tolerance

    Returns:
        Tuple: (values (n,), control indices (n,))
    """
    a, b, c, f = coeffs if coeffs is not None else problem.coefficients(x, y, t)
    if gamma is None:
        gamma = gamma_from(problem, a, b, c)
    residual = (
        state.vt[None, :]
        - np.einsum("mnij,nij->mn", a, state.hess)
        - np.einsum("mni,ni->mn", b, state.grad)
        + c * state.v[None, :]
        + f
    )
    scaled = gamma * residual
    value = scaled.min(axis=0)
    idx = np.argmax(scaled <= value + tie_tol * np.maximum(1.0, np.abs(value)), axis=0)
    return value, idx


def select_controls(problem: HJBProblem, idx: np.ndarray, x, y, t) -> Dict[str, np.ndarray]:
    """Coefficients and gamma of the frozen control at each point."""
    a, b, c, f = problem.coefficients(x, y, t)
    gamma = gamma_from(problem, a, b, c)
    cols = np.arange(a.shape[1])
    return {
        "gamma": gamma[idx, cols],
        "a": a[idx, cols],
        "b": b[idx, cols],
        "c": c[idx, cols],
        "f": f[idx, cols],
    }


# Registry
def rotation(theta: np.ndarray) -> np.ndarray:
    """Rotation matrices of shape (M, 2, 2)."""
    cs, sn = np.cos(theta), np.sin(theta)
    return np.stack([np.stack([cs, -sn], -1), np.stack([sn, cs], -1)], -2)


def angle_controls(n: int) -> np.ndarray:
    """n uniformly spaced angles in [0, 2pi)."""
    return 2.0 * np.pi * np.arange(n) / n


def _rotated_diffusion(base: np.ndarray, thetas: np.ndarray) -> CoefficientFn:
    mats = np.einsum("mij,jk,mlk->mil", rotation(thetas), base, rotation(thetas))

    def a(x, y, t):
        return np.broadcast_to(mats[:, None, :, :], (len(thetas), np.size(x), 2, 2)).copy()

    return a


def _identity_diffusion(x, y, t):
    return np.broadcast_to(np.eye(2), (1, np.size(x), 2, 2)).copy()


def _manufactured_source(a_fn: CoefficientFn, solution: SolutionFn) -> CoefficientFn:
    """f^alpha = a^alpha : D2u - u_t, which makes every control attain the sup."""

    def f(x, y, t):
        _, ut, _, hess = solution(x, y, t)
        return np.einsum("mnij,nij->mn", a_fn(x, y, t), hess) - ut[None, :]

    return f


def _separable(time, space) -> SolutionFn:
    """u = g(t) w(x, y) from g -> (g, g') and w -> (w, grad, hess)."""

    def solution(x, y, t):
        g, gt = time(t)
        w, grad, hess = space(x, y)
        return g * w, gt * w, g[:, None] * grad, g[:, None, None] * hess

    return solution


def _exp1_space(x, y):
    E = np.exp(x * y)
    sx, cx = np.sin(np.pi * x), np.cos(np.pi * x)
    sy, cy = np.sin(np.pi * y), np.cos(np.pi * y)
    S = sx * sy
    pi = np.pi
    w = E * S
    wx = E * (y * S + pi * cx * sy)
    wy = E * (x * S + pi * sx * cy)
    wxx = E * (y * y * S + 2 * pi * y * cx * sy - pi * pi * S)
    wyy = E * (x * x * S + 2 * pi * x * sx * cy - pi * pi * S)
    wxy = E * (x * y * S + pi * x * cx * sy + S + pi * y * sx * cy + pi * pi * cx * cy)
    return w, np.stack([wx, wy], -1), np.stack([np.stack([wxx, wxy], -1), np.stack([wxy, wyy], -1)], -2)


def _exp1_time(t):
    return 1.0 - np.exp(-t), np.exp(-t)


def _poly_space(x, y):
    bx, by = x * (1 - x), y * (1 - y)
    w = bx * by
    grad = np.stack([(1 - 2 * x) * by, bx * (1 - 2 * y)], -1)
    wxy = (1 - 2 * x) * (1 - 2 * y)
    hess = np.stack([np.stack([-2 * by, wxy], -1), np.stack([wxy, -2 * bx], -1)], -2)
    return w, grad, hess


def _sine_space(x, y):
    pi = np.pi
    sx, cx = np.sin(pi * x), np.cos(pi * x)
    sy, cy = np.sin(pi * y), np.cos(pi * y)
    w = sx * sy
    grad = np.stack([pi * cx * sy, pi * sx * cy], -1)
    hxy = pi * pi * cx * cy
    hess = np.stack([np.stack([-pi * pi * w, hxy], -1), np.stack([hxy, -pi * pi * w], -1)], -2)
    return w, grad, hess


def _zero_source(n_controls: int) -> CoefficientFn:
    def f(x, y, t):
        return np.zeros((n_controls, np.size(x)))

    return f


def _sup_problem(key: str, base: np.ndarray, n_controls: int, omega: float) -> HJBProblem:
    thetas = angle_controls(n_controls)
    a = _rotated_diffusion(base, thetas)
    solution = _separable(_exp1_time, _exp1_space)
    return HJBProblem(
        key=key,
        controls=thetas,
        a=a,
        f=_manufactured_source(a, solution),
        u0=lambda x, y: np.zeros_like(x),
        u0_grad=lambda x, y: np.zeros(np.shape(x) + (2,)),
        omega=omega,
        solution=solution,
    )


def _heat_problem(key: str, omega: float, u0, u0_grad, T: float = 1.0, f=None, solution=None) -> HJBProblem:
    return HJBProblem(
        key=key,
        controls=np.zeros(1),
        a=_identity_diffusion,
        f=f or _zero_source(1),
        u0=u0,
        u0_grad=u0_grad,
        omega=omega,
        T=T,
        solution=solution,
    )


def build_problem(key: str, omega: float = 1.0, n_controls: int = 32) -> HJBProblem:
    """
    Registry of built-in problems.

    Args:
        key: One of PROBLEM_KEYS
        omega: Time-scaling parameter of the Cordes condition
        n_controls: Angle samples of SO(2) for the anisotropic problems

    Returns:
        HJBProblem: Problem data
    """
    if key == "exp1-anisotropic-sup":
        return _sup_problem(key, np.array([[1.0, 1.0 / 40.0], [1.0 / 40.0, 1.0 / 800.0]]), n_controls, omega)
    if key == "mild-anisotropic-sup":
        return _sup_problem(key, np.diag([1.0, 0.5]), n_controls, omega)
    if key == "exp2-heat":
        return _heat_problem(
            key, omega,
            u0=lambda x, y: x * (1 - x) * np.sin(np.pi * y),
            u0_grad=lambda x, y: np.stack(
                [(1 - 2 * x) * np.sin(np.pi * y), np.pi * x * (1 - x) * np.cos(np.pi * y)], -1),
            T=0.05,
        )
    if key == "heat-singleton":
        decay = 2.0 * np.pi ** 2
        return _heat_problem(
            key, omega,
            u0=lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y),
            u0_grad=lambda x, y: _sine_space(x, y)[1],
            solution=_separable(lambda t: (np.exp(-decay * t), -decay * np.exp(-decay * t)), _sine_space),
        )
    if key == "poly-heat":
        solution = _separable(lambda t: (t, np.ones_like(t)), _poly_space)
        return _heat_problem(
            key, omega,
            u0=lambda x, y: np.zeros_like(x),
            u0_grad=lambda x, y: np.zeros(np.shape(x) + (2,)),
            f=_manufactured_source(_identity_diffusion, solution),
            solution=solution,
        )
    raise ConfigError(f"unknown problem key {key!r}; expected one of {', '.join(PROBLEM_KEYS)}")
