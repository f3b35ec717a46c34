"""Sum-factorized, assembly-free application of the fine-level operator.

``apply(v)`` returns ``(3 chi_m C_m / (2 dt) M + A) v`` without reading a
global matrix: cell integrals are evaluated by one-dimensional contractions
(interpolate to Gauss points, collocation derivatives, multiply by fused
metric factors, integrate back), and interior-face terms gather the two
adjacent coefficient blocks, take endpoint traces of the Gauss-Lobatto
blocks, and scatter penalty and flux contributions back.

All geometry (quadrature weights, Jacobians, conductivity, penalty) is fused
into per-element and per-face coefficient arrays at construction; coefficient
blocks that are identically zero (isotropic media have no tangential flux
coupling) are skipped.  Within one axis group every element appears at most
once per side, so face scatters are plain fancy-indexed adds with unique
indices and the result is deterministic.
"""

import numpy as np

from . import space as spc
from .assembly import AssemblyError, face_groups


def operation_count_estimate(p, d):
    """(naive, sum_factorized) per-element operation counts.

    Naive block application costs ``(p+1)**(2d)`` operations; the factorized
    cell kernel costs about ``d * (p+1)**(d+1)`` per pass family.
    """
    if p < 1:
        raise AssemblyError("degree must be >= 1")
    return (p + 1) ** (2 * d), d * (p + 1) ** (d + 1)


def _axis_dim(dim, axis):
    """Tensor dimension (after the leading batch dim) of a spatial axis."""
    return 1 + (dim - 1 - axis)


def _contract(arr, mat, tdim):
    """Contract tensor dimension `tdim` of `arr` with `mat` (out, in).

    Operates on collapsed (lead, n, trail) views so every product is a plain
    matmul on contiguous data; chained passes stay contiguous.
    """
    shape = arr.shape
    n_in = shape[tdim]
    lead = 1
    for s in shape[:tdim]:
        lead *= s
    trail = 1
    for s in shape[tdim + 1:]:
        trail *= s
    if trail == 1:
        out = arr.reshape(lead, n_in) @ mat.T
    else:
        out = mat @ arr.reshape(lead, n_in, trail)
    return out.reshape(shape[:tdim] + (mat.shape[0],) + shape[tdim + 1:])


def _contract_vec(arr, vec, tdim):
    """Contract tensor dimension `tdim` with a vector (the dimension drops)."""
    shape = arr.shape
    n_in = shape[tdim]
    lead = 1
    for s in shape[:tdim]:
        lead *= s
    trail = 1
    for s in shape[tdim + 1:]:
        trail *= s
    if trail == 1:
        out = arr.reshape(lead, n_in) @ vec
    else:
        out = vec @ arr.reshape(lead, n_in, trail)
    return out.reshape(shape[:tdim] + shape[tdim + 1:])


class _FaceData:
    """Fused per-axis-group face coefficients."""

    __slots__ = ("axis", "ep", "em", "wsig", "half_wnd", "inv_hp", "inv_hm")

    def __init__(self, group, dim):
        self.axis = group.axis
        self.ep = group.ep
        self.em = group.em
        self.wsig = group.wJf * group.sigma[:, None]
        self.half_wnd = []
        for j in range(dim):
            nd = group.nD[:, :, j]
            self.half_wnd.append(0.5 * group.wJf * nd if np.any(nd) else None)
        self.inv_hp = 1.0 / group.h_plus
        self.inv_hm = 1.0 / group.h_minus


class MatrixFreeContext:
    """Precomputed fused geometry and 1D operator tables for the fine level."""

    def __init__(self, mesh, space, fld, constants=None, penalty_factor=1.0):
        if space.entity_count != mesh.n_elements:
            raise AssemblyError("space and mesh entity counts differ")
        self.mesh = mesh
        self.space = space
        self.dim = mesh.dim
        self.n1 = space.degree + 1
        self.nb = space.dofs_per_entity
        self.mass_shift = constants.mass_shift if constants is not None else 0.0

        q1, _ = spc.gauss_points(self.n1)
        basis = space.basis1d
        self.V1 = basis.values(q1)
        D1 = basis.derivatives(q1)
        self.Dcol = np.ascontiguousarray(D1 @ np.linalg.inv(self.V1))
        self.V1T = np.ascontiguousarray(self.V1.T)
        self.DcolT = np.ascontiguousarray(self.Dcol.T)
        self.dtrace = (basis.derivatives(np.array([0.0]))[0],
                       basis.derivatives(np.array([1.0]))[0])

        d = self.dim
        h = mesh.element_hi - mesh.element_lo
        vol = np.prod(h, axis=1)
        qp, wq = spc.tensor_quadrature(d, self.n1)
        self.wv = wq[None, :] * vol[:, None]                  # (nE, nq)

        pts = mesh.element_lo[:, None, :] + qp[None, :, :] * h[:, None, :]
        nE, nq = pts.shape[0], pts.shape[1]
        D = fld.tensor_at(pts.reshape(-1, d)).reshape(nE, nq, d, d)
        # fused gradient metric: geo[i][j] = w |J| D_ij / (h_i h_j), None if 0
        self.geo = [[None] * d for _ in range(d)]
        for i in range(d):
            for j in range(d):
                block = D[:, :, i, j]
                if np.any(block):
                    scale = self.wv / (h[:, i] * h[:, j])[:, None]
                    self.geo[i][j] = np.ascontiguousarray(block * scale)
        del D

        self.faces = [None if g is None else _FaceData(g, d)
                      for g in face_groups(mesh, space, fld, penalty_factor)]

    @property
    def total_dofs(self):
        return self.space.total_dofs

    def _dims(self, batch):
        return (batch,) + (self.n1,) * self.dim

    def _chunk(self, count):
        # keep per-chunk work arrays around cache size (~512 KB each)
        return max(512, (1 << 19) // (8 * self.nb))

    # -- cell kernel ---------------------------------------------------------

    def _cell(self, v, out, mass_coeff):
        d, nE = self.dim, self.mesh.n_elements
        v2 = v.reshape(nE, self.nb)
        o2 = out.reshape(nE, self.nb)
        cs = self._chunk(nE)
        for s in range(0, nE, cs):
            e = min(s + cs, nE)
            n = e - s
            uq = v2[s:e].reshape(self._dims(n))
            for a in range(d):
                uq = _contract(uq, self.V1, _axis_dim(d, a))

            grads = [None] * d
            for a in range(d):
                grads[a] = _contract(uq, self.Dcol, _axis_dim(d, a)).reshape(n, -1)

            uq_flat = uq.reshape(n, -1)
            if mass_coeff:
                acc = self.wv[s:e] * uq_flat
                acc *= mass_coeff
            else:
                acc = np.zeros_like(uq_flat)
            Z = acc.reshape(self._dims(n))
            for i in range(d):
                Gi = None
                for j in range(d):
                    if self.geo[i][j] is None:
                        continue
                    if Gi is None:
                        Gi = self.geo[i][j][s:e] * grads[j]
                    else:
                        Gi += self.geo[i][j][s:e] * grads[j]
                if Gi is not None:
                    Z += _contract(Gi.reshape(self._dims(n)), self.DcolT,
                                   _axis_dim(d, i))
            for a in range(d):
                Z = _contract(Z, self.V1T, _axis_dim(d, a))
            o2[s:e] = Z.reshape(n, -1)

    # -- face kernel ---------------------------------------------------------

    def _face_eval(self, block, axis, side, inv_h, need):
        """Value trace and the needed physical-gradient traces of one side."""
        d = self.dim
        td = _axis_dim(d, axis)
        tang = [t for t in range(d) if t != axis]
        pos = {t: 1 + sum(1 for s in tang if s > t) for t in tang}

        sl = np.take(block, -1 if side == 1 else 0, axis=td)
        up = sl
        for t in tang:
            up = _contract(up, self.V1, pos[t])

        nF = block.shape[0]
        grads = [None] * d
        for t in tang:
            if need[t]:
                grads[t] = (_contract(up, self.Dcol, pos[t]).reshape(nF, -1)
                            * inv_h[:, t][:, None])
        gn = _contract_vec(block, self.dtrace[side], td)
        for t in tang:
            gn = _contract(gn, self.V1, pos[t])
        grads[axis] = gn.reshape(nF, -1) * inv_h[:, axis][:, None]
        return up.reshape(nF, -1), grads

    def _face_scatter(self, axis, side, inv_h, s_val, c_grad):
        """Adjoint of `_face_eval`: per-face coefficient blocks.

        ``s_val`` multiplies the value trace of the test function and
        ``c_grad[j]`` (where not None) its j-th physical derivative trace.
        """
        d, n1 = self.dim, self.n1
        td = _axis_dim(d, axis)
        tang = [t for t in range(d) if t != axis]
        pos = {t: 1 + sum(1 for s in tang if s > t) for t in tang}
        nF = s_val.shape[0]
        fdims = (nF,) + (n1,) * (d - 1)

        Z = s_val.reshape(fdims)
        for t in tang:
            if c_grad[t] is not None:
                Z = Z + _contract((c_grad[t] * inv_h[:, t][:, None]).reshape(fdims),
                                  self.DcolT, pos[t])
        for t in tang:
            Z = _contract(Z, self.V1T, pos[t])

        Zn = (c_grad[axis] * inv_h[:, axis][:, None]).reshape(fdims)
        for t in tang:
            Zn = _contract(Zn, self.V1T, pos[t])

        shape = [1] * (d + 1)
        shape[td] = n1
        B = self.dtrace[side].reshape(shape) * np.expand_dims(Zn, td)
        idx = [slice(None)] * (d + 1)
        idx[td] = n1 - 1 if side == 1 else 0
        B[tuple(idx)] += Z
        return B.reshape(nF, -1)

    def _faces(self, v, out):
        v2 = v.reshape(-1, self.nb)
        o2 = out.reshape(-1, self.nb)
        for g in self.faces:
            if g is None:
                continue
            need = [w is not None for w in g.half_wnd]
            cs = self._chunk(g.ep.size)
            for s in range(0, g.ep.size, cs):
                e = min(s + cs, g.ep.size)
                n = e - s
                ep, em = g.ep[s:e], g.em[s:e]
                ihp, ihm = g.inv_hp[s:e], g.inv_hm[s:e]
                Up = v2[ep].reshape(self._dims(n))
                Um = v2[em].reshape(self._dims(n))
                up, gp = self._face_eval(Up, g.axis, 1, ihp, need)
                um, gm = self._face_eval(Um, g.axis, 0, ihm, need)

                jump = up
                jump -= um
                s_plus = g.wsig[s:e] * jump
                for j in range(self.dim):
                    if g.half_wnd[j] is not None:
                        s_plus -= g.half_wnd[j][s:e] * (gp[j] + gm[j])
                c_grad = [None if g.half_wnd[j] is None
                          else -(g.half_wnd[j][s:e] * jump)
                          for j in range(self.dim)]

                o2[ep] += self._face_scatter(g.axis, 1, ihp, s_plus, c_grad)
                o2[em] += self._face_scatter(g.axis, 0, ihm, -s_plus, c_grad)

    # -- public API -----------------------------------------------------------

    def apply(self, v, mass_coeff=None):
        """Operator action (mass_coeff * M + A) v; defaults to the BDF2 shift."""
        v = np.asarray(v, dtype=float)
        if v.shape != (self.total_dofs,):
            raise AssemblyError(f"vector has size {v.size}, expected {self.total_dofs}")
        if mass_coeff is None:
            mass_coeff = self.mass_shift
        out = np.empty_like(v)
        self._cell(v, out, mass_coeff)   # initializes out entirely
        self._faces(v, out)
        return out

    def apply_mass(self, v):
        """Mass-matrix action alone (used by the right-hand side assembly)."""
        v = np.asarray(v, dtype=float)
        d = self.dim
        U = v.reshape(self._dims(self.mesh.n_elements))
        for a in range(d):
            U = _contract(U, self.V1, _axis_dim(d, a))
        U = (U.reshape(-1, self.wv.shape[1]) * self.wv).reshape(
            self._dims(self.mesh.n_elements))
        for a in range(d):
            U = _contract(U, self.V1T, _axis_dim(d, a))
        return U.reshape(-1)

    def as_linear_operator(self):
        import scipy.sparse.linalg as spla

        n = self.total_dofs
        return spla.LinearOperator((n, n), matvec=self.apply, rmatvec=self.apply,
                                   dtype=float)
