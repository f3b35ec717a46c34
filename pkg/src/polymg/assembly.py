"""SIPG assembly of the monodomain system on axis-aligned box meshes.

The stiffness form couples neighboring elements through interior faces only
(homogeneous Neumann boundary), with consistency and symmetry terms
subtracted and the penalty added:

    a_h(u, v) = sum_K int_K D grad u . grad v
              - sum_F int_F ( {D grad u} . [v] + {D grad v} . [u] )
              + sum_F int_F sigma [u] . [v]

with the face penalty ``sigma = alpha * n^T D n`` and
``alpha = p (p+1) |F| * max(1/|K+|, 1/|K-|)``.

The time-discrete system matrix is ``A_0 = 3 chi_m C_m M / (2 dt) + A`` and
the right-hand side uses second-order extrapolation of the potential with
nodal (ICI) evaluation of the ionic current.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import space as spc


class AssemblyError(ValueError):
    """Invalid assembly input."""


# ---------------------------------------------------------------------------
# coefficients
# ---------------------------------------------------------------------------

@dataclass
class ModelConstants:
    """Membrane constants and time step: chi_m [1/m], c_m [F/m^2], dt, t_final [s]."""

    chi_m: float
    c_m: float
    dt: float
    t_final: float

    def __post_init__(self):
        if min(self.chi_m, self.c_m, self.dt, self.t_final) <= 0.0:
            raise AssemblyError("model constants must be positive")
        if self.dt > self.t_final:
            raise AssemblyError("dt must not exceed t_final")

    @property
    def mass_shift(self):
        """Coefficient of M in the BDF2 system matrix: 3 chi_m c_m / (2 dt)."""
        return 1.5 * self.chi_m * self.c_m / self.dt


class ConductivityField:
    """Conductivity tensor field D(x), isotropic or built from a fiber frame.

    The orthotropic form is ``sigma_l f0 f0^T + sigma_t s0 s0^T (+ sigma_n
    n0 n0^T)`` with an orthonormal frame returned by ``frame(points)`` as an
    array (n, dim, dim) whose rows are the directions.
    """

    def __init__(self, dim, sigma_iso=None, sigmas=None, frame=None):
        self.dim = dim
        if (sigma_iso is None) == (sigmas is None):
            raise AssemblyError("specify exactly one of sigma_iso or sigmas")
        if sigmas is not None:
            sigmas = tuple(float(s) for s in sigmas)
            if len(sigmas) != dim:
                raise AssemblyError(f"need {dim} conductivities, got {len(sigmas)}")
            if any(s < 0 for s in sigmas):
                raise AssemblyError("conductivities must be nonnegative")
            if frame is None:
                raise AssemblyError("orthotropic conductivity needs a fiber frame")
        self.sigma_iso = None if sigma_iso is None else float(sigma_iso)
        self.sigmas = sigmas
        self.frame = frame

    @classmethod
    def isotropic(cls, dim, sigma):
        return cls(dim, sigma_iso=sigma)

    @classmethod
    def orthotropic(cls, dim, sigmas, frame):
        return cls(dim, sigmas=sigmas, frame=frame)

    def tensor_at(self, points):
        """D at each point, shape (n, dim, dim); validates frame orthonormality."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n = pts.shape[0]
        if self.sigma_iso is not None:
            return np.broadcast_to(self.sigma_iso * np.eye(self.dim), (n, self.dim, self.dim)).copy()
        fr = np.asarray(self.frame(pts), dtype=float)
        if fr.shape != (n, self.dim, self.dim):
            raise AssemblyError(f"frame must return shape {(n, self.dim, self.dim)}")
        gram = np.einsum("nik,njk->nij", fr, fr)
        if not np.allclose(gram, np.eye(self.dim), atol=1e-12):
            raise AssemblyError("fiber frame is not orthonormal to 1e-12")
        w = np.array(self.sigmas)
        return np.einsum("k,nki,nkj->nij", w, fr, fr)


def axis_aligned_frame(dim):
    """Constant frame aligned with the coordinate axes."""

    def frame(points):
        n = np.atleast_2d(points).shape[0]
        return np.broadcast_to(np.eye(dim), (n, dim, dim)).copy()

    return frame


def rotating_fiber_frame(lo, hi, twist, axis=2):
    """3D analytic fiber field: in-plane fibers rotating linearly along `axis`.

    The fiber angle varies by `twist` radians across the domain extent, a
    stand-in for rule-based transmural fiber generation on box geometries.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)

    def frame(points):
        pts = np.atleast_2d(points)
        s = (pts[:, axis] - lo[axis]) / (hi[axis] - lo[axis])
        theta = twist * (s - 0.5)
        c, sn = np.cos(theta), np.sin(theta)
        zero = np.zeros_like(c)
        one = np.ones_like(c)
        inplane = [i for i in range(3) if i != axis]
        f0 = np.zeros((pts.shape[0], 3))
        s0 = np.zeros((pts.shape[0], 3))
        n0 = np.zeros((pts.shape[0], 3))
        f0[:, inplane[0]], f0[:, inplane[1]] = c, sn
        s0[:, inplane[0]], s0[:, inplane[1]] = -sn, c
        n0[:, axis] = one
        del zero
        return np.stack([f0, s0, n0], axis=1)

    return frame


# ---------------------------------------------------------------------------
# applied-current stimuli
# ---------------------------------------------------------------------------

@dataclass
class BoxStimulus:
    """I_app = amplitude inside an axis-aligned box for t in [t_start, t_end]."""

    amplitude: float
    lo: np.ndarray
    hi: np.ndarray
    t_start: float = 0.0
    t_end: float = 1e-3

    def evaluate(self, points, t):
        pts = np.atleast_2d(points)
        if not self.t_start <= t <= self.t_end:
            return np.zeros(pts.shape[0])
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        inside = np.all((pts >= lo) & (pts <= hi), axis=1)
        return self.amplitude * inside.astype(float)


@dataclass
class PointsStimulus:
    """I_app = amplitude inside balls of given radius around each center."""

    amplitude: float
    centers: np.ndarray
    radius: float
    t_start: float = 0.0
    t_end: float = 3e-3

    def evaluate(self, points, t):
        pts = np.atleast_2d(points)
        if not self.t_start <= t <= self.t_end:
            return np.zeros(pts.shape[0])
        centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        inside = (d2 <= self.radius**2).any(axis=1)
        return self.amplitude * inside.astype(float)


# ---------------------------------------------------------------------------
# penalty and shared face geometry
# ---------------------------------------------------------------------------

def penalty_alpha(degree, face_meas, vol_plus, vol_minus):
    """alpha = p (p+1) |F| * max(1/|K+|, 1/|K-|) (coercivity-safe variant)."""
    return degree * (degree + 1) * face_meas * np.maximum(1.0 / vol_plus, 1.0 / vol_minus)


def penalty(space, d_face, face_meas, vol_plus, vol_minus, factor=1.0):
    """Face penalty sigma = factor * alpha * mean_q(n^T D n).

    ``d_face`` holds n^T D n at the face quadrature points (array or scalar).
    """
    alpha = penalty_alpha(space.degree, face_meas, vol_plus, vol_minus)
    sigma = factor * alpha * float(np.mean(d_face))
    if sigma <= 0.0:
        raise AssemblyError("nonpositive penalty (degenerate face?)")
    return sigma


def _face_quad_points(dim, axis, side, qpts1):
    """Reference points of a face quadrature grid, tangential-x fastest."""
    nq = qpts1.size
    tang = [a for a in range(dim) if a != axis]
    nqf = nq ** (dim - 1)
    pts = np.empty((nqf, dim))
    pts[:, axis] = float(side)
    if dim == 2:
        pts[:, tang[0]] = qpts1
    else:
        g1, g0 = np.meshgrid(qpts1, qpts1, indexing="ij")  # (t1, t0), t0 fastest
        pts[:, tang[0]] = g0.reshape(-1)
        pts[:, tang[1]] = g1.reshape(-1)
    return pts


class FaceGroup:
    """Interior faces sharing a normal axis, with precomputed coefficients.

    Attributes: ``ep``/``em`` plus/minus element ids (each unique within the
    group), ``wJf`` quadrature weights times face measure (nF, nqf), ``nD``
    rows n^T D at the face quadrature points (nF, nqf, dim), ``sigma``
    per-face penalties (nF,), ``h_plus``/``h_minus`` element extents.
    """

    def __init__(self, axis, ep, em, wJf, nD, sigma, h_plus, h_minus):
        self.axis = axis
        self.ep = ep
        self.em = em
        self.wJf = wJf
        self.nD = nD
        self.sigma = sigma
        self.h_plus = h_plus
        self.h_minus = h_minus

    @property
    def n_faces(self):
        return self.ep.size


def face_groups(mesh, space, fld, penalty_factor=1.0):
    """Per-axis interior face groups shared by assembly and matrix-free apply."""
    dim = mesh.dim
    nq = space.degree + 1
    q1, w1 = spc.gauss_points(nq)
    wf = spc.tensor_quadrature(dim - 1, nq)[1] if dim > 2 else w1
    groups = []
    faces = mesh.interior_faces
    for axis in range(dim):
        mask = faces[:, 2] // 2 == axis
        fa = faces[mask]
        if fa.size == 0:
            groups.append(None)
            continue
        ep, em = fa[:, 0], fa[:, 1]
        lo_p, hi_p = mesh.element_lo[ep], mesh.element_hi[ep]
        h_plus = hi_p - lo_p
        h_minus = mesh.element_hi[em] - mesh.element_lo[em]
        tang = [a for a in range(dim) if a != axis]
        face_meas = np.prod(h_plus[:, tang], axis=1)
        vol_p = np.prod(h_plus, axis=1)
        vol_m = np.prod(h_minus, axis=1)

        ref = _face_quad_points(dim, axis, 1, q1)  # plus-side reference coords
        phys = lo_p[:, None, :] + ref[None, :, :] * h_plus[:, None, :]
        nF, nqf = phys.shape[0], phys.shape[1]
        D = fld.tensor_at(phys.reshape(-1, dim)).reshape(nF, nqf, dim, dim)
        nD = D[:, :, axis, :]  # n = +e_axis, n^T D row
        ndn = nD[:, :, axis]
        alpha = penalty_alpha(space.degree, face_meas, vol_p, vol_m)
        sigma = penalty_factor * alpha * ndn.mean(axis=1)
        wJf = wf[None, :] * face_meas[:, None]
        groups.append(FaceGroup(axis, ep, em, wJf, nD, sigma, h_plus, h_minus))
    return groups


# ---------------------------------------------------------------------------
# element-block assembly
# ---------------------------------------------------------------------------

_CHUNK = 2048


def reference_mass(space):
    """Reference-box mass block (dofs x dofs); element mass = volume * this."""
    qp, qw = spc.tensor_quadrature(space.dim, space.degree + 1)
    V = space.shape_values(qp)
    return V.T @ (qw[:, None] * V)


def _cell_stiffness_blocks(mesh, space, fld):
    dim, nb = mesh.dim, space.dofs_per_entity
    qp, qw = spc.tensor_quadrature(dim, space.degree + 1)
    G = space.shape_gradients(qp)  # (nq, nb, dim) reference
    nE = mesh.n_elements
    out = np.empty((nE, nb, nb))
    for s in range(0, nE, _CHUNK):
        e = slice(s, min(s + _CHUNK, nE))
        lo, hi = mesh.element_lo[e], mesh.element_hi[e]
        h = hi - lo
        vol = np.prod(h, axis=1)
        phys = lo[:, None, :] + qp[None, :, :] * h[:, None, :]
        c = phys.shape[0]
        D = fld.tensor_at(phys.reshape(-1, dim)).reshape(c, -1, dim, dim)
        Gp = G[None, :, :, :] / h[:, None, None, :]
        DG = np.einsum("cqij,cqbj->cqbi", D, Gp)
        out[e] = np.einsum("q,c,cqai,cqbi->cab", qw, vol, Gp, DG, optimize=True)
    return out


def _face_trace_tables(space, axis, side):
    """(values, gradients) of all basis functions at the face quadrature grid."""
    q1, _ = spc.gauss_points(space.degree + 1)
    ref = _face_quad_points(space.dim, axis, side, q1)
    return space.shape_values(ref), space.shape_gradients(ref)


def _face_blocks(space, group):
    """Dense face blocks (Kpp, Kpm, Kmm) for one axis group; Kmp = Kpm^T."""
    axis = group.axis
    Tp, Gp_ref = _face_trace_tables(space, axis, 1)
    Tm, Gm_ref = _face_trace_tables(space, axis, 0)
    nF = group.n_faces
    nb = space.dofs_per_entity
    Kpp = np.empty((nF, nb, nb))
    Kpm = np.empty((nF, nb, nb))
    Kmm = np.empty((nF, nb, nb))
    for s in range(0, nF, _CHUNK):
        f = slice(s, min(s + _CHUNK, nF))
        w = group.wJf[f]
        ws = w * group.sigma[f, None]
        nD = group.nD[f]
        Gp = Gp_ref[None] / group.h_plus[f, None, None, :]
        Gm = Gm_ref[None] / group.h_minus[f, None, None, :]
        Fp = np.einsum("fqj,fqbj->fqb", nD, Gp)
        Fm = np.einsum("fqj,fqbj->fqb", nD, Gm)
        PP = np.einsum("fq,qa,qb->fab", ws, Tp, Tp)
        PM = np.einsum("fq,qa,qb->fab", ws, Tp, Tm)
        MM = np.einsum("fq,qa,qb->fab", ws, Tm, Tm)
        CpTp = np.einsum("fq,fqa,qb->fab", w, Fp, Tp)   # rows flux+, cols trace+
        CpTm = np.einsum("fq,fqa,qb->fab", w, Fp, Tm)
        CmTp = np.einsum("fq,fqa,qb->fab", w, Fm, Tp)
        CmTm = np.einsum("fq,fqa,qb->fab", w, Fm, Tm)
        Kpp[f] = PP - 0.5 * (CpTp + CpTp.transpose(0, 2, 1))
        Kpm[f] = -PM - 0.5 * CmTp.transpose(0, 2, 1) + 0.5 * CpTm
        Kmm[f] = MM + 0.5 * (CmTm + CmTm.transpose(0, 2, 1))
    return Kpp, Kpm, Kmm


def _bsr_from_blocks(n_entities, nb, diag_blocks, rows, cols, blocks):
    """CSR matrix from unique (row, col) block COO plus per-entity diagonal."""
    all_rows = np.concatenate([np.arange(n_entities)] + rows)
    all_cols = np.concatenate([np.arange(n_entities)] + cols)
    all_data = np.concatenate([diag_blocks] + blocks, axis=0)
    order = np.lexsort((all_cols, all_rows))
    indptr = np.zeros(n_entities + 1, dtype=np.int64)
    np.add.at(indptr, all_rows + 1, 1)
    indptr = np.cumsum(indptr)
    mat = sp.bsr_matrix((all_data[order], all_cols[order], indptr),
                        shape=(n_entities * nb, n_entities * nb))
    return mat.tocsr()


def assemble_stiffness(mesh, space, fld, penalty_factor=1.0):
    """SIPG stiffness matrix A (CSR): symmetric, PSD, constants in the kernel."""
    if space.entity_count != mesh.n_elements:
        raise AssemblyError("space and mesh entity counts differ")
    nb = space.dofs_per_entity
    diag = _cell_stiffness_blocks(mesh, space, fld)
    rows, cols, blocks = [], [], []
    for group in face_groups(mesh, space, fld, penalty_factor):
        if group is None:
            continue
        Kpp, Kpm, Kmm = _face_blocks(space, group)
        diag[group.ep] += Kpp
        diag[group.em] += Kmm
        rows.extend([group.ep, group.em])
        cols.extend([group.em, group.ep])
        blocks.extend([Kpm, Kpm.transpose(0, 2, 1)])
    return _bsr_from_blocks(mesh.n_elements, nb, diag, rows, cols, blocks)


def assemble_mass(mesh, space):
    """Block-diagonal mass matrix M (CSR), SPD."""
    if space.entity_count != mesh.n_elements:
        raise AssemblyError("space and mesh entity counts differ")
    Mref = reference_mass(space)
    vol = np.prod(mesh.element_hi - mesh.element_lo, axis=1)
    blocks = vol[:, None, None] * Mref[None, :, :]
    nb = space.dofs_per_entity
    indptr = np.arange(mesh.n_elements + 1)
    mat = sp.bsr_matrix((blocks, np.arange(mesh.n_elements), indptr),
                        shape=(space.total_dofs, space.total_dofs))
    return mat.tocsr()


def assemble_system(M, A, constants):
    """System matrix A_0 = 3 chi_m c_m / (2 dt) * M + A (SPD)."""
    if M.shape != A.shape:
        raise AssemblyError("mass and stiffness dimensions differ")
    return (constants.mass_shift * M + A).tocsr()


# ---------------------------------------------------------------------------
# right-hand side (extrapolation + ICI + applied current)
# ---------------------------------------------------------------------------

class MassApplier:
    """Matrix-free action of the mass matrix (volume-scaled reference block)."""

    def __init__(self, mesh, space):
        self.Mref = reference_mass(space)
        self.vol = np.prod(mesh.element_hi - mesh.element_lo, axis=1)
        self.nb = space.dofs_per_entity

    def __call__(self, x):
        X = np.asarray(x).reshape(-1, self.nb)
        return (self.vol[:, None] * (X @ self.Mref.T)).reshape(-1)


def integrate_source(mesh, space, values_at_quad):
    """Load vector entries int f phi_i from values at the volume quad points."""
    qp, qw = spc.tensor_quadrature(space.dim, space.degree + 1)
    V = space.shape_values(qp)
    vol = np.prod(mesh.element_hi - mesh.element_lo, axis=1)
    contrib = np.einsum("qa,eq->ea", V, values_at_quad * (vol[:, None] * qw[None, :]))
    return contrib.reshape(-1)


def source_quad_points(mesh, space):
    """Physical volume quadrature points, shape (n_elements, nq, dim)."""
    qp, _ = spc.tensor_quadrature(space.dim, space.degree + 1)
    lo, hi = mesh.element_lo, mesh.element_hi
    return lo[:, None, :] + qp[None, :, :] * (hi - lo)[:, None, :]


def applied_current_vector(mesh, space, stimulus, t):
    """Load vector of the applied current at time t (zero when inactive)."""
    if stimulus is None:
        return np.zeros(space.total_dofs)
    pts = source_quad_points(mesh, space)
    vals = stimulus.evaluate(pts.reshape(-1, mesh.dim), t)
    if not np.any(vals):
        return np.zeros(space.total_dofs)
    return integrate_source(mesh, space, vals.reshape(pts.shape[0], -1))


def assemble_rhs(mesh, space, t_next, U_n, U_nm1, W_next, model, stimulus,
                 constants, mass_apply=None, forcing=None):
    """BDF2 right-hand side at t_next.

    Uses the extrapolated potential ``U* = 2 U_n - U_nm1``; the ionic current
    is evaluated nodally at the DoFs with the already-updated gating state
    ``W_next`` and carried through the mass matrix (ICI).
    """
    n = space.total_dofs
    if U_n.shape != (n,) or U_nm1.shape != (n,):
        raise AssemblyError("state vector size does not match the space")
    if mass_apply is None:
        mass_apply = MassApplier(mesh, space)
    shift = constants.chi_m * constants.c_m / (2.0 * constants.dt)
    b = shift * mass_apply(4.0 * U_n - U_nm1)
    if model is not None:
        ustar = 2.0 * U_n - U_nm1
        iion = model.iion(ustar, W_next)
        b -= constants.chi_m * mass_apply(iion)
    if stimulus is not None:
        b += applied_current_vector(mesh, space, stimulus, t_next)
    if forcing is not None:
        b += forcing(t_next) if callable(forcing) else forcing
    return b
