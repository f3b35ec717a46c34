"""Nested multilevel preconditioner: transfers, inherited operators, smoothers.

The level hierarchy is built once: prolongations interpolate coarse
bounding-box polynomials at the fine entities' support nodes (one dense block
per fine entity), coarse operators are inherited Galerkin products
``A_{l+1} = P^T A_l P``, and each level carries a degree-3 Chebyshev-Jacobi
smoother whose range comes from a Lanczos estimate of the diagonally
preconditioned spectrum.  One V-cycle application is the PCG preconditioner;
with identical symmetric pre/post smoothing it is an SPD linear operator.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import eigh_tridiagonal

from . import solver as slv
from . import space as spc


class MultigridError(ValueError):
    """Invalid multigrid construction or application."""


@dataclass
class MGOptions:
    """Tunables for hierarchy construction (defaults follow the 2D setup)."""

    levels: int = 3
    smoother_degree: int = 3
    smoother_sweeps: int = 3
    coarse_solver: str = "auto"       # auto | direct | pcg
    coarse_direct_max: int = 20000
    cheby_range_divisor: float = 20.0
    lanczos_iters: int = 12
    seed: int = 0


# ---------------------------------------------------------------------------
# transfers
# ---------------------------------------------------------------------------

class Prolongation:
    """Block interpolation matrix from a coarse level to the next finer one."""

    def __init__(self, matrix):
        self.matrix = matrix.tocsr()
        self._transpose = self.matrix.T.tocsr()

    @property
    def shape(self):
        return self.matrix.shape

    def apply(self, coarse):
        return self.matrix @ coarse

    def restrict(self, fine):
        """Adjoint action; no separate restriction matrix is assembled."""
        return self._transpose @ fine


def compute_prolongation(fine_space, coarse_space, parent):
    """Nodal interpolation blocks between nested box spaces.

    Block (i, parent[i]) holds the coarse bounding-box Lagrange basis
    evaluated at fine entity i's support nodes; coarse nodal coefficients of
    any Q_p polynomial prolongate to its exact fine nodal coefficients.
    """
    if fine_space.degree != coarse_space.degree or fine_space.dim != coarse_space.dim:
        raise MultigridError("prolongation requires matching degree and dimension")
    parent = np.asarray(parent, dtype=np.int64)
    n_fine = fine_space.entity_count
    if parent.shape != (n_fine,):
        raise MultigridError("parent map must assign one coarse entity per fine entity")
    dim = fine_space.dim
    n1 = fine_space.degree + 1
    nodes = fine_space.nodes1d
    basis = coarse_space.basis1d

    per_axis = []
    for a in range(dim):
        xf = fine_space.boxes_lo[:, a, None] + nodes[None, :] * (
            fine_space.boxes_hi[:, a] - fine_space.boxes_lo[:, a])[:, None]
        clo = coarse_space.boxes_lo[parent, a, None]
        chi = coarse_space.boxes_hi[parent, a, None]
        ref = (xf - clo) / (chi - clo)
        per_axis.append(basis.values(ref.reshape(-1)).reshape(n_fine, n1, n1))

    if dim == 2:
        blocks = np.einsum("eik,ejl->eijkl", per_axis[1], per_axis[0])
    else:
        blocks = np.einsum("eik,ejl,emn->eijmkln", per_axis[2], per_axis[1],
                           per_axis[0])
    nb = n1**dim
    blocks = blocks.reshape(n_fine, nb, nb)
    indptr = np.arange(n_fine + 1)
    mat = sp.bsr_matrix((blocks, parent, indptr),
                        shape=(n_fine * nb, coarse_space.entity_count * nb))
    return Prolongation(mat)


def galerkin_product(A, prolongation):
    """Inherited coarse operator P^T A P, numerically symmetrized."""
    P = prolongation.matrix if isinstance(prolongation, Prolongation) else prolongation
    if A.shape[1] != P.shape[0]:
        raise MultigridError(f"shape mismatch: A {A.shape} vs P {P.shape}")
    B = (P.T @ (A @ P)).tocsr()
    return (0.5 * (B + B.T)).tocsr()


# ---------------------------------------------------------------------------
# spectrum estimate and Chebyshev smoothing
# ---------------------------------------------------------------------------

def estimate_eig_max(apply_op, diag_inv, n, iterations=12, seed=0, safety=1.2):
    """Largest eigenvalue estimate of diag^{-1} A via Lanczos, times `safety`.

    Runs on the symmetrized operator D^{-1/2} A D^{-1/2} with a seeded start
    vector; on early breakdown the Ritz value of the partial tridiagonal is
    used (with a power-iteration fallback if nothing was produced).
    """
    rng = np.random.default_rng(seed)
    dsq = np.sqrt(diag_inv)

    def cop(x):
        return dsq * apply_op(dsq * x)

    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    v_prev = np.zeros_like(v)
    beta = 0.0
    alphas, betas = [], []
    for _ in range(min(iterations, n)):
        w = cop(v)
        alpha = float(v @ w)
        w -= alpha * v + beta * v_prev
        alphas.append(alpha)
        beta_new = float(np.linalg.norm(w))
        if not np.isfinite(alpha) or beta_new < 1e-13 * max(abs(alpha), 1.0):
            break
        betas.append(beta_new)
        v_prev = v
        v = w / beta_new
        beta = beta_new
    if betas and len(betas) == len(alphas):
        betas = betas[:-1]

    if alphas and np.all(np.isfinite(alphas)):
        if not betas:
            lam = max(alphas)
        else:
            lam = float(eigh_tridiagonal(np.array(alphas), np.array(betas),
                                         eigvals_only=True)[-1])
    else:  # degenerate breakdown: plain power iteration
        v = rng.standard_normal(n)
        lam = 0.0
        for _ in range(20):
            w = cop(v)
            lam = float(np.linalg.norm(w) / np.linalg.norm(v))
            v = w
        if lam == 0.0:
            raise MultigridError("eigenvalue estimation failed (zero operator?)")
    return safety * lam


class ChebyshevSmoother:
    """Degree-k Chebyshev acceleration of the Jacobi iteration.

    Targets the range [eig_max_est / range_divisor, 1.02 * eig_max_est] of
    the diagonally preconditioned operator.  Fixed coefficients make each
    application a linear, symmetric operation, as required inside a V-cycle
    used for PCG.
    """

    def __init__(self, apply_op, diag_inv, eig_max_est, degree=3, range_divisor=20.0):
        if eig_max_est <= 0.0:
            raise MultigridError("eig_max_est must be positive")
        if degree < 1:
            raise MultigridError("smoother degree must be >= 1")
        self.apply_op = apply_op
        self.diag_inv = diag_inv
        self.degree = degree
        self.eig_max_est = eig_max_est
        self.low = eig_max_est / range_divisor
        self.high = 1.02 * eig_max_est

    @classmethod
    def exact_range(cls, apply_op, diag_inv, low, high, degree=3):
        """Smoother with explicitly pinned spectrum bounds (testing hook)."""
        obj = cls.__new__(cls)
        obj.apply_op = apply_op
        obj.diag_inv = diag_inv
        obj.degree = degree
        obj.eig_max_est = high
        obj.low = low
        obj.high = high
        return obj

    def smooth(self, b, x, x_is_zero=False):
        """One degree-`degree` Chebyshev application updating x in place."""
        theta = 0.5 * (self.high + self.low)
        delta = 0.5 * (self.high - self.low)
        if delta <= 1e-12 * theta:
            # degenerate (single-point) range: scaled Jacobi steps are exact
            for _ in range(self.degree):
                r = b.copy() if x_is_zero else b - self.apply_op(x)
                x_is_zero = False
                x += self.diag_inv * r / theta
            return x
        r = b.copy() if x_is_zero else b - self.apply_op(x)
        sigma1 = theta / delta
        rho_prev = 1.0 / sigma1
        d = self.diag_inv * r / theta
        x += d
        for _ in range(self.degree - 1):
            r = r - self.apply_op(d)
            rho = 1.0 / (2.0 * sigma1 - rho_prev)
            d = rho * rho_prev * d + (2.0 * rho / delta) * (self.diag_inv * r)
            x += d
            rho_prev = rho
        return x


# ---------------------------------------------------------------------------
# coarse solvers
# ---------------------------------------------------------------------------

class CoarseSolver:
    """Coarsest-level solve: sparse direct factorization or tightly converged
    PCG with the block-Jacobi baseline as inner preconditioner."""

    def __init__(self, A, mode, block_size=None, pcg_tol=1e-12, max_iter=2000):
        self.mode = mode
        if mode == "direct":
            self._lu = spla.splu(A.tocsc())
            self._solve = self._lu.solve
        elif mode == "pcg":
            bj = slv.block_jacobi_build(A, block_size)
            self._A = A.tocsr()
            self._bj = bj
            self._tol = pcg_tol
            self._max_iter = max_iter
            self._solve = self._pcg_solve
        else:
            raise MultigridError(f"unknown coarse solver mode {mode!r}")

    def _pcg_solve(self, b):
        x, _ = slv.pcg(lambda v: self._A @ v, self._bj.apply, b,
                       rel_tol=self._tol, abs_tol=0.0, max_iter=self._max_iter)
        return x

    def __call__(self, b):
        return self._solve(b)


# ---------------------------------------------------------------------------
# hierarchy
# ---------------------------------------------------------------------------

@dataclass
class MGLevel:
    apply_op: object            # callable vector -> vector
    diag: np.ndarray
    smoother: ChebyshevSmoother
    nnz: int
    n_dofs: int
    matrix: object = None       # CSR on coarse levels; None when matrix-free
    prolongation: Prolongation = None   # to the next coarser level


@dataclass
class MGHierarchy:
    """Level operators, transfers and smoothers; applied as one V-cycle."""

    levels: list
    coarse: CoarseSolver
    sweeps: int = 3

    @property
    def n_levels(self):
        return len(self.levels)

    def vcycle(self, b):
        """Preconditioner action z = V(b) with zero initial correction."""
        x = np.zeros_like(b)
        self._cycle(0, b, x, x_is_zero=True)
        return x

    def _cycle(self, l, b, x, x_is_zero=False):
        if l == self.n_levels - 1:
            x[:] = self.coarse(b)
            return
        lvl = self.levels[l]
        for s in range(self.sweeps):
            lvl.smoother.smooth(b, x, x_is_zero=(x_is_zero and s == 0))
        r = b - lvl.apply_op(x)
        bc = lvl.prolongation.restrict(r)
        xc = np.zeros(self.levels[l + 1].n_dofs)
        self._cycle(l + 1, bc, xc, x_is_zero=True)
        x += lvl.prolongation.apply(xc)
        for _ in range(self.sweeps):
            lvl.smoother.smooth(b, x)

    def as_preconditioner(self):
        return self.vcycle


def operator_complexity(hier):
    """Sum of level-operator nonzeros over the fine-level nonzeros."""
    return sum(lvl.nnz for lvl in hier.levels) / hier.levels[0].nnz


def build_mg(A0, hierarchy, degree, options=None, fine_apply=None, fine_diag=None):
    """Assemble the multilevel preconditioner from the fine operator.

    Parameters
    ----------
    A0 : csr_matrix
        Assembled fine-level system matrix (used for the Galerkin chain; may
        be discarded by the caller afterwards).
    hierarchy : AgglomerationHierarchy
        Nested agglomerated levels on top of the fine mesh.
    degree : int
        Polynomial degree shared by all levels.
    options : MGOptions
    fine_apply : callable, optional
        Matrix-free action of A0 used for level-0 smoothing and residuals;
        defaults to CSR products with A0.
    fine_diag : ndarray, optional
        Fine-level diagonal (defaults to A0.diagonal()).
    """
    opts = options or MGOptions()
    mesh = hierarchy.mesh
    n_agg_levels = min(opts.levels - 1, len(hierarchy.levels))
    nb = (degree + 1) ** mesh.dim

    fine_space = spc.space_from_mesh(mesh, degree)
    spaces = [fine_space] + [spc.space_from_agglomerates(hierarchy, k + 1, degree)
                             for k in range(n_agg_levels)]

    # element -> first-level agglomerate map
    parents = []
    if n_agg_levels >= 1:
        p0 = np.empty(mesh.n_elements, dtype=np.int64)
        for a, mem in enumerate(hierarchy.levels[0].members):
            p0[mem] = a
        parents.append(p0)
        for k in range(n_agg_levels - 1):
            parents.append(hierarchy.levels[k].parent)

    mats = [A0.tocsr()]
    prolongs = []
    for k in range(n_agg_levels):
        P = compute_prolongation(spaces[k], spaces[k + 1], parents[k])
        prolongs.append(P)
        mats.append(galerkin_product(mats[k], P))

    levels = []
    for k, A in enumerate(mats):
        if k == 0:
            diag = fine_diag if fine_diag is not None else A.diagonal()
            apply_op = fine_apply if fine_apply is not None else (lambda v, M=A: M @ v)
        else:
            diag = A.diagonal()
            apply_op = (lambda v, M=A: M @ v)
        if np.any(diag <= 0.0):
            raise MultigridError(f"nonpositive diagonal entry on level {k}")
        dinv = 1.0 / diag
        est = estimate_eig_max(apply_op, dinv, A.shape[0],
                               iterations=opts.lanczos_iters, seed=opts.seed + k)
        smoother = ChebyshevSmoother(apply_op, dinv, est,
                                     degree=opts.smoother_degree,
                                     range_divisor=opts.cheby_range_divisor)
        levels.append(MGLevel(apply_op, diag, smoother, nnz=A.nnz,
                              n_dofs=A.shape[0],
                              matrix=None if (k == 0 and fine_apply is not None) else A,
                              prolongation=prolongs[k] if k < len(prolongs) else None))

    Ac = mats[-1]
    mode = opts.coarse_solver
    if mode == "auto":
        mode = "direct" if Ac.shape[0] <= opts.coarse_direct_max else "pcg"
    coarse = CoarseSolver(Ac, mode, block_size=nb)
    return MGHierarchy(levels, coarse, sweeps=opts.smoother_sweeps)


def build_single_level(A0, options=None, fine_apply=None):
    """Degenerate hierarchy (L = 1): the V-cycle is the direct coarse solve."""
    A0 = A0.tocsr()
    lvl = MGLevel(fine_apply or (lambda v: A0 @ v), A0.diagonal(), None,
                  nnz=A0.nnz, n_dofs=A0.shape[0], matrix=A0)
    return MGHierarchy([lvl], CoarseSolver(A0, "direct"), sweeps=0)
