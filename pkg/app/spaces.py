"""
Discrete spaces: broken tensor-Legendre spaces on the mesh, temporal partitions,
Gauss-Legendre quadrature and the basis/trace tabulations used by the forms.
"""

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from numpy.polynomial import legendre

from .errors import ConfigError
from .mesh import Face, Mesh2D


@dataclass(frozen=True)
class QuadratureRule:
    """Points and positive weights on [-1,1] or [-1,1]^2."""
    points: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def size(self) -> int:
        return len(self.weights)


def gauss_rule(n: int) -> QuadratureRule:
    """n-point Gauss-Legendre rule on [-1,1], exact to degree 2n-1."""
    if n < 1:
        raise ConfigError(f"quadrature needs at least one point, got {n}")
    x, w = legendre.leggauss(n)
    return QuadratureRule(points=x, weights=w, degree=2 * n - 1)


def tensor_rule(n: int) -> QuadratureRule:
    """Tensor Gauss-Legendre rule on [-1,1]^2 with n points per axis."""
    r = gauss_rule(n)
    X, Y = np.meshgrid(r.points, r.points, indexing="ij")
    W = np.outer(r.weights, r.weights)
    return QuadratureRule(points=np.column_stack([X.ravel(), Y.ravel()]), weights=W.ravel(), degree=r.degree)


def legendre_table(k_max: int, s: np.ndarray, orthonormal: bool = True) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Legendre polynomials of degree 0..k_max and their first two derivatives.

    Args:
        k_max: Highest degree
        s: Points in [-1,1]
        orthonormal: Scale by sqrt((2k+1)/2) so the family is L2-orthonormal on [-1,1]

    Returns:
        Tuple of arrays (len(s), k_max+1): values, first and second derivatives
    """
    s = np.asarray(s, dtype=float)
    vals = np.empty((s.size, k_max + 1))
    d1 = np.empty_like(vals)
    d2 = np.empty_like(vals)
    for k in range(k_max + 1):
        c = np.zeros(k + 1)
        c[k] = np.sqrt((2 * k + 1) / 2.0) if orthonormal else 1.0
        vals[:, k] = legendre.legval(s, c)
        d1[:, k] = legendre.legval(s, legendre.legder(c, 1)) if k >= 1 else 0.0
        d2[:, k] = legendre.legval(s, legendre.legder(c, 2)) if k >= 2 else 0.0
    return vals, d1, d2


@dataclass(frozen=True)
class ElementTable:
    """Basis tables of one element at physical quadrature points."""
    element: int
    points: np.ndarray      # (nq, 2)
    weights: np.ndarray     # (nq,) physical weights
    values: np.ndarray      # (nq, nloc)
    grads: np.ndarray       # (nq, nloc, 2)
    hess: np.ndarray        # (nq, nloc, 2, 2)
    dofs: np.ndarray        # (nloc,) global indices

    @property
    def laplacian(self) -> np.ndarray:
        return self.hess[:, :, 0, 0] + self.hess[:, :, 1, 1]


@dataclass(frozen=True)
class SideTrace:
    """One-sided trace tables of one element on a face."""
    element: int
    dofs: np.ndarray
    values: np.ndarray      # v
    dn: np.ndarray          # grad v . n_F
    dt: np.ndarray          # grad_T v
    dtt: np.ndarray         # Div_T grad_T v
    dtn: np.ndarray         # grad_T (grad v . n_F)


@dataclass(frozen=True)
class FaceTable:
    """Trace tables on one face; jump and average act on the concatenated side dofs."""
    face: Face
    points: np.ndarray
    weights: np.ndarray
    sides: Tuple[SideTrace, ...]

    @property
    def dofs(self) -> np.ndarray:
        return np.concatenate([s.dofs for s in self.sides])

    def jump(self, name: str) -> np.ndarray:
        """[[.]] = ext - int on interior faces, the trace itself on boundary faces."""
        if len(self.sides) == 1:
            return getattr(self.sides[0], name)
        return np.hstack([getattr(self.sides[0], name), -getattr(self.sides[1], name)])

    def avg(self, name: str) -> np.ndarray:
        """{.} = (ext + int)/2 on interior faces, the trace itself on boundary faces."""
        if len(self.sides) == 1:
            return getattr(self.sides[0], name)
        return 0.5 * np.hstack([getattr(self.sides[0], name), getattr(self.sides[1], name)])


@dataclass
class DGSpace:
    """
    Broken space V_{h,p} of tensor polynomials of degree p_K on each element.

    The local basis is the L2-orthonormal tensor Legendre family mapped
    affinely, so every element mass matrix is the identity. Local index
    j = ix*(p_K+1) + iy for x-degree ix and y-degree iy.
    """
    mesh: Mesh2D
    p: np.ndarray
    dof_offsets: np.ndarray = field(init=False)
    _element_cache: Dict[int, ElementTable] = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.int64)
        if p.shape == ():
            p = np.full(self.mesh.n_elements, int(p), dtype=np.int64)
        if p.shape != (self.mesh.n_elements,):
            raise ConfigError(f"expected {self.mesh.n_elements} degrees, got {p.shape}")
        if np.any(p < 2):
            raise ConfigError("spatial degrees must be >= 2")
        self.p = p
        self.dof_offsets = np.concatenate([[0], np.cumsum((p + 1) ** 2)])

    @property
    def dim(self) -> int:
        return int(self.dof_offsets[-1])

    def n_local(self, K: int) -> int:
        return int((self.p[K] + 1) ** 2)

    def dofs(self, K: int) -> np.ndarray:
        return np.arange(self.dof_offsets[K], self.dof_offsets[K + 1])

    def fingerprint(self) -> str:
        """SHA-256 of the mesh and degree vector."""
        h = hashlib.sha256()
        h.update(self.mesh.fingerprint())
        h.update(self.p.tobytes())
        return h.hexdigest()

    def evaluate(self, K: int, pts: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Basis values, gradients and Hessians of element K at physical points.

        Args:
            K: Element id
            pts: Physical points (npts, 2), normally inside the closure of K

        Returns:
            Tuple: values (npts, nloc), grads (npts, nloc, 2), hess (npts, nloc, 2, 2)
        """
        pts = np.atleast_2d(pts)
        x0, y0, x1, y1 = self.mesh.boxes[K]
        hx, hy = x1 - x0, y1 - y0
        sx, sy = 2.0 / hx, 2.0 / hy
        scale = 2.0 / np.sqrt(hx * hy)
        pk = int(self.p[K])
        Lx, dLx, ddLx = legendre_table(pk, sx * (pts[:, 0] - x0) - 1.0)
        Ly, dLy, ddLy = legendre_table(pk, sy * (pts[:, 1] - y0) - 1.0)

        def tens(a, b):
            return np.einsum("qi,qj->qij", a, b).reshape(len(pts), -1)

        values = scale * tens(Lx, Ly)
        grads = np.empty(values.shape + (2,))
        grads[..., 0] = scale * sx * tens(dLx, Ly)
        grads[..., 1] = scale * sy * tens(Lx, dLy)
        hess = np.empty(values.shape + (2, 2))
        hess[..., 0, 0] = scale * sx * sx * tens(ddLx, Ly)
        hess[..., 1, 1] = scale * sy * sy * tens(Lx, ddLy)
        hess[..., 0, 1] = hess[..., 1, 0] = scale * sx * sy * tens(dLx, dLy)
        return values, grads, hess

    def element_rule_points(self, K: int, extra: int = 0) -> int:
        """Gauss points per axis: p_K + 3 (+ extra for error integrands)."""
        return int(self.p[K]) + 3 + extra


def tabulate_element(space: DGSpace, K: int, rule: Optional[QuadratureRule] = None) -> ElementTable:
    """
    Basis tables of element K at its physical quadrature points.

    Args:
        space: Discrete space
        K: Element id
        rule: Reference rule on [-1,1]^2; defaults to p_K + 3 points per axis

    Returns:
        ElementTable: Values, gradients and Hessians with the affine chain rule applied
    """
    cached = rule is None
    if cached and K in space._element_cache:
        return space._element_cache[K]
    if rule is None:
        rule = tensor_rule(space.element_rule_points(K))
    x0, y0, x1, y1 = space.mesh.boxes[K]
    hx, hy = x1 - x0, y1 - y0
    pts = np.column_stack([x0 + 0.5 * (rule.points[:, 0] + 1.0) * hx, y0 + 0.5 * (rule.points[:, 1] + 1.0) * hy])
    values, grads, hess = space.evaluate(K, pts)
    table = ElementTable(
        element=K, points=pts, weights=rule.weights * hx * hy / 4.0,
        values=values, grads=grads, hess=hess, dofs=space.dofs(K),
    )
    if cached:
        space._element_cache[K] = table
    return table


def face_points(face: Face, rule: QuadratureRule) -> Tuple[np.ndarray, np.ndarray]:
    """Physical points and weights of a 1D reference rule mapped onto a face."""
    e0, e1 = face.endpoints
    s = 0.5 * (rule.points + 1.0)
    pts = e0[None, :] + s[:, None] * (e1 - e0)[None, :]
    return pts, rule.weights * face.length / 2.0


def side_trace(space: DGSpace, K: int, face: Face, pts: np.ndarray) -> SideTrace:
    """One-sided traces of element K's basis at face points."""
    n, t = face.normal, face.tangent
    values, grads, hess = space.evaluate(K, pts)
    return SideTrace(
        element=K,
        dofs=space.dofs(K),
        values=values,
        dn=grads @ n,
        dt=grads @ t,
        dtt=np.einsum("qjab,a,b->qj", hess, t, t),
        dtn=np.einsum("qjab,a,b->qj", hess, t, n),
    )


def tabulate_face(space: DGSpace, face: Face, rule: Optional[QuadratureRule] = None) -> FaceTable:
    """
    Trace tables of the one or two elements adjacent to a face.

    On a hanging-node facet the coarse element is evaluated on the
    sub-facet points directly.

    Args:
        space: Discrete space
        face: The face
        rule: 1D reference rule; defaults to max(p_K) + 3 points

    Returns:
        FaceTable: Per-side value, normal, tangential and mixed derivative tables
    """
    if rule is None:
        rule = gauss_rule(max(int(space.p[e]) for e in face.elements) + 3)
    pts, w = face_points(face, rule)
    sides = tuple(side_trace(space, e, face, pts) for e in face.elements)
    return FaceTable(face=face, points=pts, weights=w, sides=sides)


def project(space: DGSpace, func: Callable[[np.ndarray, np.ndarray], np.ndarray], extra: int = 1) -> np.ndarray:
    """L2 projection of func(x, y) onto the space (element mass matrices are the identity)."""
    coeffs = np.zeros(space.dim)
    for K in range(space.mesh.n_elements):
        tab = tabulate_element(space, K, tensor_rule(space.element_rule_points(K, extra)))
        f = func(tab.points[:, 0], tab.points[:, 1])
        coeffs[tab.dofs] = tab.values.T @ (tab.weights * f)
    return coeffs


def graded_degrees(mesh: Mesh2D, p_min: int = 3) -> np.ndarray:
    """Degrees increasing linearly away from the boundary: p_K = p_min + (L_max - level_K)."""
    if p_min < 2:
        raise ConfigError(f"p_min must be >= 2, got {p_min}")
    levels = mesh.levels
    return p_min + (levels.max() - levels)


def degree_ratio(space: DGSpace, faces: Sequence[Face]) -> float:
    """Largest max(p_K,p_K')/min(p_K,p_K') over interior faces (c_P)."""
    ratios = [
        max(space.p[f.k_ext], space.p[f.k_int]) / min(space.p[f.k_ext], space.p[f.k_int])
        for f in faces if f.is_interior
    ]
    c_p = float(max(ratios)) if ratios else 1.0
    logger.debug(f"degree ratio c_P = {c_p:g}")
    return c_p


# Temporal discretisation
@dataclass(frozen=True)
class TimePartition:
    """Breakpoints 0 = t_0 < ... < t_N = T with per-interval temporal degrees."""
    breakpoints: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.breakpoints) <= 0):
            raise ConfigError("time breakpoints must be strictly increasing")
        if len(self.q) != len(self.breakpoints) - 1 or np.any(self.q < 1):
            raise ConfigError("one temporal degree >= 1 is required per interval")

    @property
    def N(self) -> int:
        return len(self.q)

    @property
    def T(self) -> float:
        return float(self.breakpoints[-1])

    @property
    def tau(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    @property
    def dof_t(self) -> int:
        return int(np.sum(self.q + 1))

    def interval(self, n: int) -> Tuple[float, float]:
        """(t_{n-1}, t_n) for slab n = 1..N."""
        return float(self.breakpoints[n - 1]), float(self.breakpoints[n])


def build_time_partition(
    kind: str,
    T: float,
    N: int,
    sigma: float = 0.2,
    q_rule: str = "constant",
    q: int = 1,
) -> TimePartition:
    """
    Uniform or geometric partition of (0, T].

    Args:
        kind: "uniform" or "geometric" (t_n = sigma**(N-n) * T)
        T: Final time
        N: Number of intervals
        sigma: Geometric grading factor in (0, 1)
        q_rule: "constant" (q_n = q) or "linear" (q_n = n + 1)
        q: Constant temporal degree

    Returns:
        TimePartition: The partition
    """
    if N < 1:
        raise ConfigError(f"N must be >= 1, got {N}")
    if T <= 0:
        raise ConfigError(f"T must be positive, got {T}")
    if kind == "uniform":
        t = T * np.arange(N + 1) / N
    elif kind == "geometric":
        if not 0.0 < sigma < 1.0:
            raise ConfigError(f"geometric grading needs 0 < sigma < 1, got {sigma}")
        t = np.concatenate([[0.0], [sigma ** (N - n) * T for n in range(1, N + 1)]])
    else:
        raise ConfigError(f"unknown time partition kind: {kind}")
    if q_rule == "constant":
        if q < 1:
            raise ConfigError(f"q must be >= 1, got {q}")
        qs = np.full(N, q, dtype=np.int64)
    elif q_rule == "linear":
        qs = np.arange(2, N + 2, dtype=np.int64)
    else:
        raise ConfigError(f"unknown q rule: {q_rule}")
    return TimePartition(breakpoints=t, q=qs)


@dataclass(frozen=True)
class TemporalTable:
    """Legendre basis P_k(s) on one interval, t = t_start + (s+1) tau/2."""
    q: int
    tau: float
    points: np.ndarray      # physical times
    weights: np.ndarray
    values: np.ndarray      # (nt, q+1)
    derivs: np.ndarray      # (nt, q+1), d/dt
    left: np.ndarray        # P_k(-1) = (-1)**k, value at t_{n-1}^+
    right: np.ndarray       # P_k(1) = 1, value at t_n

    @property
    def mass(self) -> np.ndarray:
        """int psi_k psi_l dt, diagonal."""
        return np.einsum("t,tk,tl->lk", self.weights, self.values, self.values)

    @property
    def stiffness(self) -> np.ndarray:
        """[l, k] = int psi_k psi_l' dt."""
        return np.einsum("t,tk,tl->lk", self.weights, self.values, self.derivs)

    @property
    def dd(self) -> np.ndarray:
        """int psi_k' psi_l' dt."""
        return np.einsum("t,tk,tl->lk", self.weights, self.derivs, self.derivs)


def temporal_basis(q: int, tau: float = 1.0, t_start: float = 0.0, n_points: Optional[int] = None) -> TemporalTable:
    """
    Degree-q Legendre basis on (t_start, t_start + tau) at Gauss points.

    Args:
        q: Temporal degree, >= 1
        tau: Interval length
        t_start: Left endpoint
        n_points: Gauss points; defaults to q + 2

    Returns:
        TemporalTable: Values, time derivatives and endpoint values
    """
    if q < 1:
        raise ConfigError(f"temporal degree must be >= 1, got {q}")
    rule = gauss_rule(n_points or q + 2)
    vals, d1, _ = legendre_table(q, rule.points, orthonormal=False)
    ends, _, _ = legendre_table(q, np.array([-1.0, 1.0]), orthonormal=False)
    return TemporalTable(
        q=q, tau=tau,
        points=t_start + 0.5 * (rule.points + 1.0) * tau,
        weights=rule.weights * tau / 2.0,
        values=vals,
        derivs=d1 * 2.0 / tau,
        left=np.round(ends[0]),
        right=np.round(ends[1]),
    )


def temporal_jump_avg(values_left, values_right, n: int, N: int):
    """
    Temporal jump and average at t_n.

    values_left is v(t_n) from I_n, values_right is v(t_n^+) from I_{n+1};
    the missing side is ignored at n = 0 and n = N.

    Returns:
        Tuple: (jump, average)
    """
    if not 0 <= n <= N:
        raise ConfigError(f"jump index {n} outside 0..{N}")
    if n == 0:
        right = np.asarray(values_right, dtype=float)
        return -right, right
    left = np.asarray(values_left, dtype=float)
    if n == N:
        return left, left
    right = np.asarray(values_right, dtype=float)
    return left - right, 0.5 * (left + right)


def slab_layout(space: DGSpace, q: int) -> Tuple[int, int]:
    """(number of temporal modes, slab unknowns); unknown k*dim + j is mode k, spatial dof j."""
    return q + 1, (q + 1) * space.dim


def spatial_block(coeffs: np.ndarray, space: DGSpace, k: int) -> np.ndarray:
    """Spatial coefficient vector of temporal mode k."""
    return coeffs[k * space.dim:(k + 1) * space.dim]


def trace_at(coeffs: np.ndarray, space: DGSpace, weights: np.ndarray) -> np.ndarray:
    """Spatial coefficients of sum_k weights[k] * mode_k, e.g. an endpoint trace."""
    return np.asarray(weights, dtype=float) @ coeffs.reshape(len(weights), space.dim)


def element_tables(space: DGSpace, extra: int = 0) -> List[ElementTable]:
    """Tables of every element in element order."""
    if extra == 0:
        return [tabulate_element(space, K) for K in range(space.mesh.n_elements)]
    return [
        tabulate_element(space, K, tensor_rule(space.element_rule_points(K, extra)))
        for K in range(space.mesh.n_elements)
    ]
