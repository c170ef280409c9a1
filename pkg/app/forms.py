"""
Bilinear forms of the space-time DG scheme and the per-slab algebraic systems.

Spatial forms (a_h, J_h, B_{h,*}, B_{h,theta}, the flux part of C_h^F) are sparse
matrices M with M[i, j] = form(phi_j, phi_i). Slab unknowns are temporal mode
major: index k*dim + j is temporal mode k of spatial basis function j.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from loguru import logger

from .errors import ConfigError
from .hjb_problem import F_gamma_pointwise, HJBProblem, PointState, gamma_from
from .mesh import Face, extract_faces, face_penalty_geometry
from .spaces import (
    DGSpace,
    ElementTable,
    FaceTable,
    TemporalTable,
    TimePartition,
    element_tables,
    tabulate_face,
    temporal_basis,
)


@dataclass(frozen=True)
class PenaltyTable:
    """Per-face penalties mu_F = sigma c_s p~^2/h~ and eta_F = sigma max(1,lam) c_s p~^6/h~^3."""
    faces: Tuple[Face, ...]
    mu: np.ndarray
    eta: np.ndarray
    c_s: float
    sigma: float
    lam: float


def build_penalties(
    space: DGSpace,
    faces: Optional[Sequence[Face]] = None,
    c_s: float = 2.5,
    sigma: float = 1.0,
    lam: float = 0.0,
) -> PenaltyTable:
    """
    Penalty table over all faces of the space's mesh.

    Args:
        space: Discrete space
        faces: Faces of the mesh; extracted when omitted
        c_s: Penalty constant, > 0
        sigma: Fixed multiplier, >= 1
        lam: Lower-order parameter lambda >= 0

    Returns:
        PenaltyTable: mu_F and eta_F per face
    """
    if c_s <= 0:
        raise ConfigError(f"c_s must be positive, got {c_s}")
    if sigma < 1:
        raise ConfigError(f"penalty sigma must be >= 1, got {sigma}")
    faces = tuple(faces if faces is not None else extract_faces(space.mesh))
    geo = np.array([face_penalty_geometry(space.mesh, f, space.p) for f in faces], dtype=float)
    h, p = geo[:, 0], geo[:, 1]
    mu = sigma * c_s * p ** 2 / h
    eta = sigma * max(1.0, lam) * c_s * p ** 6 / h ** 3
    return PenaltyTable(faces=faces, mu=mu, eta=eta, c_s=c_s, sigma=sigma, lam=lam)


def _pair(w: np.ndarray, test: np.ndarray, trial: np.ndarray) -> np.ndarray:
    """Local matrix [i, j] = sum_q w_q test[q, i] trial[q, j]."""
    return test.T @ (w[:, None] * trial)


def _element_blocks(tab: ElementTable, lam: float) -> Dict[str, np.ndarray]:
    w, vals = tab.weights, tab.values
    mass = _pair(w, vals, vals)
    grad = np.einsum("q,qia,qja->ij", w, tab.grads, tab.grads)
    hess = np.einsum("q,qiab,qjab->ij", w, tab.hess, tab.hess)
    l_lam = tab.laplacian - lam * vals
    h2 = hess + 2.0 * lam * grad + lam ** 2 * mass
    return {
        "A": grad + lam * mass,
        "B": h2,
        "H2": h2,
        "L": _pair(w, l_lam, l_lam),
        "ML": _pair(w, l_lam, vals),
        "mass": mass,
        "grad": grad,
        "HX": hess + grad + mass,
    }


def _face_blocks(ft: FaceTable, mu: float, eta: float, lam: float) -> Dict[str, np.ndarray]:
    w = ft.weights
    Jv, Jdn, Jt = ft.jump("values"), ft.jump("dn"), ft.jump("dt")
    Av, Adn, Att, Atn = ft.avg("values"), ft.avg("dn"), ft.avg("dtt"), ft.avg("dtn")

    def P(test, trial):
        return _pair(w, test, trial)

    jv = P(Jv, Jv)
    A = -P(Jv, Adn) - P(Adn, Jv) + mu * jv
    B = -(P(Jt, Atn) + P(Atn, Jt)) - lam * (P(Jv, Adn) + P(Adn, Jv))
    J = mu * P(Jt, Jt) + eta * jv
    CF = mu * jv - P(Adn, Jv)
    if ft.face.is_interior:
        B += P(Jdn, Att) + P(Att, Jdn) - lam * (P(Jdn, Av) + P(Av, Jdn))
        J += mu * P(Jdn, Jdn)
        CF += P(Av, Jdn)
    return {"A": A, "B": B, "J": J, "CF": CF}


def parallel_map(fn: Callable, items: Iterable, threads: int = 1) -> List:
    """map() over items, threaded when threads > 1; results keep input order."""
    items = list(items)
    if threads <= 1 or len(items) < 2:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


class _Triplets:
    """COO accumulator merged in insertion order."""

    def __init__(self):
        self.rows: List[np.ndarray] = []
        self.cols: List[np.ndarray] = []
        self.vals: List[np.ndarray] = []

    def add(self, rows: np.ndarray, cols: np.ndarray, local: np.ndarray) -> None:
        self.rows.append(np.repeat(rows, len(cols)))
        self.cols.append(np.tile(cols, len(rows)))
        self.vals.append(local.ravel())

    def tocsr(self, shape: Tuple[int, int]) -> sp.csr_matrix:
        if not self.rows:
            return sp.csr_matrix(shape)
        return sp.coo_matrix(
            (np.concatenate(self.vals), (np.concatenate(self.rows), np.concatenate(self.cols))), shape=shape
        ).tocsr()


@dataclass(frozen=True)
class SpatialOperators:
    """All spatial matrices of one space and penalty table."""
    space: DGSpace
    penalties: PenaltyTable
    A: sp.csr_matrix        # a_h
    J: sp.csr_matrix        # J_h
    B_star: sp.csr_matrix   # B_{h,*}
    L: sp.csr_matrix        # sum_K (L_lam u, L_lam v)_K
    ML: sp.csr_matrix       # [i, j] = sum_K (phi_j, L_lam phi_i)_K
    H2: sp.csr_matrix       # sum_K |.|^2_{H2(K),lam}
    HX: sp.csr_matrix       # full broken H2 inner product
    grad: sp.csr_matrix
    mass: sp.csr_matrix
    CF: sp.csr_matrix       # spatial factor of C_h^F

    @property
    def lam(self) -> float:
        return self.penalties.lam

    def B_theta(self, theta: float) -> sp.csr_matrix:
        if not 0.0 <= theta <= 1.0:
            raise ConfigError(f"theta must lie in [0, 1], got {theta}")
        return (theta * self.B_star + (1.0 - theta) * self.L + self.J).tocsr()

    @property
    def slab_spatial(self) -> sp.csr_matrix:
        """B_{h,1/2} - sum_K (L_lam, L_lam)_K = B_*/2 - L/2 + J."""
        return (0.5 * self.B_star - 0.5 * self.L + self.J).tocsr()


def assemble_spatial_operators(space: DGSpace, penalties: PenaltyTable, threads: int = 1) -> SpatialOperators:
    """
    Assemble every spatial matrix in one pass over elements and faces.

    Local contributions are computed concurrently and merged in element then
    face index order, so the result is bitwise reproducible.
    """
    lam = penalties.lam
    n = space.dim
    elem = parallel_map(lambda tab: (tab.dofs, _element_blocks(tab, lam)), element_tables(space), threads)

    def face_job(i):
        ft = tabulate_face(space, penalties.faces[i])
        return ft.dofs, _face_blocks(ft, penalties.mu[i], penalties.eta[i], lam)

    face = parallel_map(face_job, range(len(penalties.faces)), threads)

    acc: Dict[str, _Triplets] = {}
    for dofs, blocks in elem + face:
        for name, local in blocks.items():
            acc.setdefault(name, _Triplets()).add(dofs, dofs, local)
    mats = {name: t.tocsr((n, n)) for name, t in acc.items()}
    mats["B_star"] = mats.pop("B")
    logger.debug(f"assembled spatial operators: dim={n}, faces={len(penalties.faces)}")
    return SpatialOperators(space=space, penalties=penalties, **mats)


def assemble_a_h(space: DGSpace, penalties: PenaltyTable, threads: int = 1) -> sp.csr_matrix:
    """Symmetric interior penalty matrix of -L_lambda."""
    return assemble_spatial_operators(space, penalties, threads).A


def assemble_J_h(space: DGSpace, penalties: PenaltyTable, threads: int = 1) -> sp.csr_matrix:
    """Jump stabilisation J_h (normal-derivative, tangential-gradient and value jumps)."""
    return assemble_spatial_operators(space, penalties, threads).J


def assemble_B_theta(space: DGSpace, penalties: PenaltyTable, theta: float, threads: int = 1) -> sp.csr_matrix:
    """B_{h,theta} = theta B_{h,*} + (1-theta) sum_K (L_lam, L_lam)_K + J_h."""
    return assemble_spatial_operators(space, penalties, threads).B_theta(theta)


def assemble_CF_h(ops: SpatialOperators, table: TemporalTable, omega: float) -> sp.csr_matrix:
    """
    Slab block of the flux form C_h^F.

    Row (l, i), column (k, j) holds omega * int psi_k psi_l' dt * CF[i, j].
    """
    return omega * sp.kron(table.stiffness, ops.CF, format="csr")


def initial_coupling(problem: HJBProblem, ops: SpatialOperators) -> np.ndarray:
    """
    Vector g_i = a_h(u_0, phi_i), integrated from the u_0 callback directly.

    u_0 vanishes on the boundary and is continuous, so its jump is taken as
    its boundary trace and zero on interior faces.
    """
    space, pen = ops.space, ops.penalties
    g = np.zeros(space.dim)
    for tab in element_tables(space):
        x, y = tab.points[:, 0], tab.points[:, 1]
        du = problem.u0_grad(x, y)
        g[tab.dofs] += np.einsum("q,qja,qa->j", tab.weights, tab.grads, du)
        if ops.lam:
            g[tab.dofs] += ops.lam * tab.values.T @ (tab.weights * problem.u0(x, y))
    for i, face in enumerate(pen.faces):
        ft = tabulate_face(space, face)
        x, y = ft.points[:, 0], ft.points[:, 1]
        dn = problem.u0_grad(x, y) @ face.normal
        jump = np.zeros_like(x) if face.is_interior else problem.u0(x, y)
        w = ft.weights
        Jv, Adn = ft.jump("values"), ft.avg("dn")
        g[ft.dofs] += -Jv.T @ (w * dn) - Adn.T @ (w * jump) + pen.mu[i] * Jv.T @ (w * jump)
    return g


@dataclass
class SlabSystem:
    """Linear system of one policy iteration on slab n."""
    slab: int
    q: int
    matrix: sp.csr_matrix
    rhs: np.ndarray
    controls: List[np.ndarray]

    @property
    def size(self) -> int:
        return len(self.rhs)


def _lomega_block(ops: SpatialOperators, table: TemporalTable, omega: float) -> sp.csr_matrix:
    """Slab block of sum_K int (L_omega u, L_omega v)_K dt."""
    st = table.stiffness
    return (
        omega ** 2 * sp.kron(table.dd, ops.mass)
        - omega * sp.kron(st.T, ops.ML)
        - omega * sp.kron(st, ops.ML.T)
        + sp.kron(table.mass, ops.L)
    ).tocsr()


def _slab_linear_part(ops: SpatialOperators, table: TemporalTable, omega: float) -> sp.csr_matrix:
    """Control-independent slab blocks: B_{h,1/2} - (L_lam, L_lam), C_h^F and omega a_h at t_{n-1}^+."""
    e = table.left
    return (
        sp.kron(table.mass, ops.slab_spatial)
        + assemble_CF_h(ops, table, omega)
        + omega * sp.kron(np.outer(e, e), ops.A)
    ).tocsr()


class SlabAssembler:
    """
    Builds the policy-frozen linear systems of one time slab.

    Coefficients of every control at the space-time quadrature points are
    evaluated once; each policy iteration only re-selects them.
    """

    def __init__(self, problem: HJBProblem, ops: SpatialOperators, partition: TimePartition, n: int,
                 threads: int = 1):
        if not 1 <= n <= partition.N:
            raise ConfigError(f"slab index {n} outside 1..{partition.N}")
        self.problem = problem
        self.ops = ops
        self.space = ops.space
        self.n = n
        self.q = int(partition.q[n - 1])
        t0, t1 = partition.interval(n)
        self.table = temporal_basis(self.q, t1 - t0, t0)
        self.threads = threads
        self.tabs = element_tables(self.space)
        nt = len(self.table.points)
        self._points = []
        self._coeffs = []
        for tab in self.tabs:
            nx = len(tab.weights)
            xy = np.tile(tab.points, (nt, 1))
            t = np.repeat(self.table.points, nx)
            a, b, c, f = problem.coefficients(xy[:, 0], xy[:, 1], t)
            self._points.append((xy[:, 0], xy[:, 1], t))
            self._coeffs.append((a, b, c, f, gamma_from(problem, a, b, c)))
        self.linear = _slab_linear_part(ops, self.table, problem.omega)

    @property
    def size(self) -> int:
        return (self.q + 1) * self.space.dim

    def _slab_dofs(self, tab: ElementTable) -> np.ndarray:
        return (np.arange(self.q + 1)[:, None] * self.space.dim + tab.dofs[None, :]).ravel()

    def state(self, K: int, U: np.ndarray) -> PointState:
        """v, grad, hess and v_t of the slab function U at element K's quadrature points."""
        tab = self.tabs[K]
        Uk = U.reshape(self.q + 1, self.space.dim)[:, tab.dofs]
        psi, dpsi = self.table.values, self.table.derivs
        vx = tab.values @ Uk.T
        gx = np.einsum("xja,kj->xka", tab.grads, Uk)
        hx = np.einsum("xjab,kj->xkab", tab.hess, Uk)
        return PointState(
            v=(psi @ vx.T).ravel(),
            grad=np.einsum("tk,xka->txa", psi, gx).reshape(-1, 2),
            hess=np.einsum("tk,xkab->txab", psi, hx).reshape(-1, 2, 2),
            vt=(dpsi @ vx.T).ravel(),
        )

    def F_gamma(self, K: int, U: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """F_gamma[U] and the attaining controls at element K's space-time points."""
        a, b, c, f, gamma = self._coeffs[K]
        x, y, t = self._points[K]
        return F_gamma_pointwise(self.problem, self.state(K, U), x, y, t, gamma=gamma, coeffs=(a, b, c, f))

    def policy(self, U: np.ndarray) -> List[np.ndarray]:
        """Attaining control index at every space-time quadrature point, per element."""
        return parallel_map(lambda K: self.F_gamma(K, U)[1], range(len(self.tabs)), self.threads)

    def _weights(self, tab: ElementTable) -> np.ndarray:
        return np.repeat(self.table.weights, len(tab.weights)) * np.tile(tab.weights, len(self.table.weights))

    def _test_table(self, tab: ElementTable) -> np.ndarray:
        """L_omega (psi_l phi_i) at the space-time points, shape (P, (q+1)*nloc)."""
        nx = len(tab.weights)
        psi = np.repeat(self.table.values, nx, axis=0)
        dpsi = np.repeat(self.table.derivs, nx, axis=0)
        nt = len(self.table.weights)
        vals = np.tile(tab.values, (nt, 1))
        l_lam = np.tile(tab.laplacian - self.ops.lam * tab.values, (nt, 1))
        omega = self.problem.omega
        return (omega * dpsi[:, :, None] * vals[:, None, :] - psi[:, :, None] * l_lam[:, None, :]).reshape(len(vals), -1)

    def _volume(self, K: int, controls: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        tab = self.tabs[K]
        a, b, c, f, gamma = self._coeffs[K]
        cols = np.arange(a.shape[1])
        a, b, c, f, gamma = a[controls, cols], b[controls, cols], c[controls, cols], f[controls, cols], gamma[controls, cols]
        nt = len(self.table.weights)
        nx = len(tab.weights)
        psi = np.repeat(self.table.values, nx, axis=0)
        dpsi = np.repeat(self.table.derivs, nx, axis=0)
        vals = np.tile(tab.values, (nt, 1))
        grads = np.tile(tab.grads, (nt, 1, 1))
        hess = np.tile(tab.hess, (nt, 1, 1, 1))
        l_alpha = np.einsum("pab,pjab->pj", a, hess) + np.einsum("pa,pja->pj", b, grads) - c[:, None] * vals
        trial = (dpsi[:, :, None] * vals[:, None, :] - psi[:, :, None] * l_alpha[:, None, :]).reshape(len(vals), -1)
        test = self._test_table(tab)
        wg = self._weights(tab) * gamma
        dofs = self._slab_dofs(tab)
        return dofs, _pair(wg, test, trial), -test.T @ (wg * f)

    def system(self, controls: List[np.ndarray], prev_end: Optional[np.ndarray] = None,
               initial: Optional[np.ndarray] = None) -> SlabSystem:
        """
        Linear system for frozen controls.

        Args:
            controls: Control index per space-time quadrature point, per element
            prev_end: u_h(t_{n-1}) coefficients (slabs n >= 2)
            initial: a_h(u_0, phi_i) vector (slab 1); computed when omitted

        Returns:
            SlabSystem: Matrix and right-hand side
        """
        local = parallel_map(lambda K: self._volume(K, controls[K]), range(len(self.tabs)), self.threads)
        acc = _Triplets()
        rhs = np.zeros(self.size)
        for dofs, mat, vec in local:
            acc.add(dofs, dofs, mat)
            rhs[dofs] += vec
        matrix = (acc.tocsr((self.size, self.size)) + self.linear).tocsr()
        if self.n == 1:
            coupling = initial if initial is not None else initial_coupling(self.problem, self.ops)
        else:
            if prev_end is None:
                raise ConfigError(f"slab {self.n} needs the previous end trace")
            coupling = self.ops.A @ prev_end
        rhs += self.problem.omega * np.kron(self.table.left, coupling)
        return SlabSystem(slab=self.n, q=self.q, matrix=matrix, rhs=rhs, controls=controls)

    def volume_form(self, U: np.ndarray, V: np.ndarray) -> float:
        """sum_K int (F_gamma[U], L_omega V)_K dt over the slab."""
        total = 0.0
        for K, tab in enumerate(self.tabs):
            values, _ = self.F_gamma(K, U)
            lw = self._test_table(tab) @ V[self._slab_dofs(tab)]
            total += float(np.sum(self._weights(tab) * values * lw))
        return total


def build_slab_system(
    problem: HJBProblem,
    ops: SpatialOperators,
    partition: TimePartition,
    n: int,
    prev_end: Optional[np.ndarray],
    control_field: List[np.ndarray],
    threads: int = 1,
) -> SlabSystem:
    """Policy-frozen linear system of slab n (see SlabAssembler.system)."""
    return SlabAssembler(problem, ops, partition, n, threads).system(control_field, prev_end)


# Global forms over the whole partition
def slab_offsets(partition: TimePartition, dim: int) -> np.ndarray:
    """Start index of each slab block in a global space-time vector, plus the total."""
    return np.concatenate([[0], np.cumsum((partition.q + 1) * dim)])


def temporal_tables(partition: TimePartition) -> List[TemporalTable]:
    tables = []
    for n in range(1, partition.N + 1):
        t0, t1 = partition.interval(n)
        tables.append(temporal_basis(int(partition.q[n - 1]), t1 - t0, t0))
    return tables


def assemble_C_h(ops: SpatialOperators, partition: TimePartition, omega: float) -> sp.csr_matrix:
    """
    Global C_h over all slabs as a block lower-bidiagonal matrix.

    Diagonal blocks hold the slab-local terms; the block below the diagonal
    couples u(t_{n-1}) from slab n-1 to v(t_{n-1}^+) with -omega a_h.
    """
    dim = ops.space.dim
    offs = slab_offsets(partition, dim)
    tables = temporal_tables(partition)
    blocks = [[None] * partition.N for _ in range(partition.N)]
    for n, table in enumerate(tables):
        blocks[n][n] = _lomega_block(ops, table, omega) + _slab_linear_part(ops, table, omega)
        if n > 0:
            blocks[n][n - 1] = -omega * sp.kron(np.outer(table.left, tables[n - 1].right), ops.A)
    C = sp.bmat(blocks, format="csr")
    assert C.shape == (offs[-1], offs[-1])
    return C


def evaluate_A_h(
    problem: HJBProblem,
    ops: SpatialOperators,
    partition: TimePartition,
    U: np.ndarray,
    V: np.ndarray,
    C: Optional[sp.csr_matrix] = None,
) -> float:
    """
    Nonlinear form A_h(U; V) for global space-time coefficient vectors.

    The F_gamma volume term is integrated by quadrature; the remainder is
    C_h(U, V) minus its (L_omega, L_omega) part.
    """
    dim = ops.space.dim
    offs = slab_offsets(partition, dim)
    tables = temporal_tables(partition)
    if C is None:
        C = assemble_C_h(ops, partition, problem.omega)
    total = float(V @ (C @ U))
    for n in range(1, partition.N + 1):
        s = slice(offs[n - 1], offs[n])
        slab = SlabAssembler(problem, ops, partition, n)
        total += slab.volume_form(U[s], V[s])
        total -= float(V[s] @ (_lomega_block(ops, tables[n - 1], problem.omega) @ U[s]))
    return total


def evaluate_CF_h(ops: SpatialOperators, partition: TimePartition, omega: float, U: np.ndarray, V: np.ndarray) -> float:
    """C_h^F(U, V) over the whole partition."""
    offs = slab_offsets(partition, ops.space.dim)
    total = 0.0
    for n, table in enumerate(temporal_tables(partition), start=1):
        s = slice(offs[n - 1], offs[n])
        total += float(V[s] @ (assemble_CF_h(ops, table, omega) @ U[s]))
    return total


def lomega_form(ops: SpatialOperators, partition: TimePartition, omega: float, U: np.ndarray, V: np.ndarray) -> float:
    """sum_n int sum_K (L_omega U, L_omega V)_K dt."""
    offs = slab_offsets(partition, ops.space.dim)
    total = 0.0
    for n, table in enumerate(temporal_tables(partition), start=1):
        s = slice(offs[n - 1], offs[n])
        total += float(V[s] @ (_lomega_block(ops, table, omega) @ U[s]))
    return total


def calibrate_penalty(
    space: DGSpace,
    lam: float,
    kappa: float,
    c_s: float = 2.5,
    sigma: float = 1.0,
    max_doublings: int = 16,
    faces: Optional[Sequence[Face]] = None,
) -> float:
    """
    Smallest c_s = c_s0 * 2**m for which B_* + J/2 - H2/kappa and a_h are positive semidefinite.

    The first condition gives B_{h,theta}(v,v) >= sum_K [theta/kappa |v|^2_{H2,lam} +
    (1-theta) ||L_lam v||^2] + |v|_J^2/2 for every theta in [0,1] on this space.

    Raises:
        ConfigError: If kappa <= 1 or no tried value passes
    """
    if kappa <= 1.0:
        raise ConfigError(f"kappa must exceed 1, got {kappa}")
    faces = tuple(faces if faces is not None else extract_faces(space.mesh))
    for _ in range(max_doublings + 1):
        ops = assemble_spatial_operators(space, build_penalties(space, faces, c_s, sigma, lam))
        M = (ops.B_star + 0.5 * ops.J - ops.H2 / kappa).toarray()
        A = ops.A.toarray()
        tol = 1e-10 * max(1.0, np.abs(np.diag(M)).max())
        m_min = scipy.linalg.eigh(0.5 * (M + M.T), eigvals_only=True, subset_by_index=[0, 0])[0]
        a_min = scipy.linalg.eigh(0.5 * (A + A.T), eigvals_only=True, subset_by_index=[0, 0])[0]
        logger.debug(f"calibrate_penalty: c_s={c_s:g} min eig {m_min:.3e} (B), {a_min:.3e} (a_h)")
        if m_min >= -tol and a_min > 0.0:
            logger.info(f"calibrated c_s = {c_s:g} for kappa = {kappa:g}")
            return c_s
        c_s *= 2.0
    raise ConfigError(f"penalty calibration failed after {max_doublings} doublings")


def dump_matrix(matrix: sp.spmatrix, path: Union[str, Path]) -> None:
    """Coordinate-format text dump, one "row col value" line per stored entry."""
    coo = sp.coo_matrix(matrix)
    lines = [f"{r} {c} {v:.17g}" for r, c, v in zip(coo.row, coo.col, coo.data)]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))
