"""Tensor-product discontinuous Lagrange spaces on axis-aligned boxes.

Level 0 uses the mesh elements as entities; coarser levels use agglomerate
bounding boxes.  The 1D support nodes are Gauss-Lobatto points on [0, 1], so
endpoint traces of the basis are plain slices of the local coefficient block.

Local DoF ordering is lexicographic with x fastest:
``i = ix + (p+1)*iy (+ (p+1)**2*iz)``.  Global numbering is entity-major.
"""

from dataclasses import dataclass
from functools import reduce

import numpy as np
from numpy.polynomial import legendre as npleg


class SpaceError(ValueError):
    """Invalid space construction or evaluation request."""


def gauss_points(n):
    """n-point Gauss-Legendre rule on [0, 1]; exact through degree 2n-1."""
    x, w = npleg.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def gauss_lobatto_points(n):
    """n Gauss-Lobatto points on [0, 1] (endpoints included), n >= 2."""
    if n < 2:
        raise SpaceError("Gauss-Lobatto needs at least 2 points")
    if n == 2:
        return np.array([0.0, 1.0])
    # interior nodes are the roots of P'_{n-1}
    coeffs = np.zeros(n)
    coeffs[-1] = 1.0
    interior = npleg.legroots(npleg.legder(coeffs))
    return np.concatenate([[0.0], 0.5 * (interior + 1.0), [1.0]])


class Lagrange1D:
    """Lagrange basis on a given 1D node set, evaluated barycentrically."""

    def __init__(self, nodes):
        self.nodes = np.asarray(nodes, dtype=float)
        self.n = self.nodes.size
        diff = self.nodes[:, None] - self.nodes[None, :]
        np.fill_diagonal(diff, 1.0)
        self.bary = 1.0 / np.prod(diff, axis=1)

    def values(self, x):
        """Basis values, shape (len(x), n); exact deltas at the nodes."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        d = x[:, None] - self.nodes[None, :]
        hit = d == 0.0
        on_node = hit.any(axis=1)
        d_safe = np.where(hit, 1.0, d)
        terms = self.bary[None, :] / d_safe
        denom = terms.sum(axis=1, keepdims=True)
        denom[on_node] = 1.0
        vals = terms / denom
        vals[on_node] = hit[on_node].astype(float)
        return vals

    def derivatives(self, x):
        """Basis first derivatives, shape (len(x), n)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty((x.size, self.n))
        d = x[:, None] - self.nodes[None, :]
        hit = d == 0.0
        on_node = hit.any(axis=1)

        # generic points: l_j'(x) = l_j(x) * sum_{k != j} 1/(x - x_k)
        free = ~on_node
        if np.any(free):
            df = d[free]
            vals = self.values(x[free])
            inv = 1.0 / df
            s = inv.sum(axis=1)
            out[free] = vals * (s[:, None] - inv)

        # node hits: rows of the differentiation matrix
        if np.any(on_node):
            idx = hit[on_node].argmax(axis=1)
            out[on_node] = self._diff_matrix()[idx]
        return out

    def _diff_matrix(self):
        dm = getattr(self, "_dm", None)
        if dm is None:
            d = self.nodes[:, None] - self.nodes[None, :]
            np.fill_diagonal(d, 1.0)
            dm = (self.bary[None, :] / self.bary[:, None]) / d
            np.fill_diagonal(dm, 0.0)
            np.fill_diagonal(dm, -dm.sum(axis=1))
            self._dm = dm
        return dm


def tensor_quadrature(dim, n):
    """Tensor Gauss rule on [0,1]^dim: points (n**dim, dim), weights (n**dim,).

    Point ordering is lexicographic with the x index fastest, matching the
    local DoF ordering.
    """
    x1, w1 = gauss_points(n)
    grids = np.meshgrid(*([x1] * dim), indexing="ij")
    # reverse axes so x varies fastest in the flattened ordering
    pts = np.stack([g.transpose(*reversed(range(dim))).reshape(-1) for g in grids], axis=1)
    ws = reduce(np.multiply.outer, [w1] * dim).transpose(*reversed(range(dim))).reshape(-1)
    return pts, ws


def tensor_rows(mats):
    """Kron of per-axis matrices, ordered so axis 0 (x) is fastest.

    ``mats[a]`` maps the axis-a 1D coefficients; the result maps full tensor
    coefficient blocks with lexicographic (x fastest) index on rows and cols.
    """
    out = mats[-1]
    for m in reversed(mats[:-1]):
        out = np.kron(out, m)
    return out


@dataclass
class DGSpace:
    """Discontinuous Q_p space over a list of axis-aligned boxes.

    ``boxes_lo``/``boxes_hi`` hold one box per entity: mesh elements at level
    0, agglomerate bounding boxes on coarser levels.
    """

    dim: int
    degree: int
    boxes_lo: np.ndarray
    boxes_hi: np.ndarray
    level: int = 0

    def __post_init__(self):
        if self.degree < 1:
            raise SpaceError("polynomial degree must be >= 1")
        self.boxes_lo = np.atleast_2d(np.asarray(self.boxes_lo, dtype=float))
        self.boxes_hi = np.atleast_2d(np.asarray(self.boxes_hi, dtype=float))
        self.nodes1d = gauss_lobatto_points(self.degree + 1)
        self.basis1d = Lagrange1D(self.nodes1d)

    @property
    def entity_count(self):
        return self.boxes_lo.shape[0]

    @property
    def dofs_per_entity(self):
        return (self.degree + 1) ** self.dim

    @property
    def total_dofs(self):
        return self.entity_count * self.dofs_per_entity

    def entity_dofs(self, k):
        nb = self.dofs_per_entity
        return np.arange(k * nb, (k + 1) * nb)

    def reference_nodes(self):
        """Tensor support nodes on the reference box, shape (dofs, dim)."""
        grids = np.meshgrid(*([self.nodes1d] * self.dim), indexing="ij")
        return np.stack(
            [g.transpose(*reversed(range(self.dim))).reshape(-1) for g in grids], axis=1
        )

    def support_points(self, k):
        """Physical support nodes of entity k, shape (dofs, dim)."""
        ref = self.reference_nodes()
        return self.boxes_lo[k] + ref * (self.boxes_hi[k] - self.boxes_lo[k])

    def shape_values(self, points):
        """All basis values at reference points, shape (n_points, dofs)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        per_axis = [self.basis1d.values(pts[:, a]) for a in range(self.dim)]
        out = per_axis[0]
        for a in range(1, self.dim):
            # row-wise outer product keeps x fastest in the dof index
            out = (per_axis[a][:, :, None] * out[:, None, :]).reshape(pts.shape[0], -1)
        return out

    def shape_gradients(self, points, k=None):
        """Reference-box gradients (n_points, dofs, dim); physical if k given."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        vals = [self.basis1d.values(pts[:, a]) for a in range(self.dim)]
        ders = [self.basis1d.derivatives(pts[:, a]) for a in range(self.dim)]
        grads = []
        for comp in range(self.dim):
            out = ders[0] if comp == 0 else vals[0]
            for a in range(1, self.dim):
                fac = ders[a] if comp == a else vals[a]
                out = (fac[:, :, None] * out[:, None, :]).reshape(pts.shape[0], -1)
            grads.append(out)
        g = np.stack(grads, axis=2)
        if k is not None:
            g = g / (self.boxes_hi[k] - self.boxes_lo[k])[None, None, :]
        return g

    def shape_value(self, i, point):
        """Value of basis i at a reference point."""
        if not 0 <= i < self.dofs_per_entity:
            raise SpaceError(f"basis index {i} out of range")
        return float(self.shape_values(np.asarray(point)[None, :])[0, i])

    def shape_gradient(self, i, point, k=None):
        """Gradient of basis i at a reference point (physical if k given)."""
        if not 0 <= i < self.dofs_per_entity:
            raise SpaceError(f"basis index {i} out of range")
        return self.shape_gradients(np.asarray(point)[None, :], k=k)[0, i]

    def evaluate_at(self, k, physical_points, coeffs):
        """Evaluate the entity-k function with local coeffs at physical points."""
        pts = np.atleast_2d(np.asarray(physical_points, dtype=float))
        ref = (pts - self.boxes_lo[k]) / (self.boxes_hi[k] - self.boxes_lo[k])
        return self.shape_values(ref) @ np.asarray(coeffs, dtype=float)


def space_from_mesh(mesh, degree):
    """Level-0 space: Q_degree Lagrange on every mesh element."""
    return DGSpace(mesh.dim, degree, mesh.element_lo, mesh.element_hi, level=0)


def space_from_agglomerates(hierarchy, level, degree):
    """Coarse space on the bounding boxes of hierarchy level `level` (1-based
    solver level: level 1 is the finest agglomerated level)."""
    agg = hierarchy.levels[level - 1]
    return DGSpace(hierarchy.dim, degree, agg.boxes_lo, agg.boxes_hi, level=level)


def agglomerate_local_to_fine_eval(hierarchy, space_coarse, agg_id, fine_entity, ref_point,
                                   fine_space=None):
    """Coarse bounding-box basis values at a fine entity's reference point.

    The fine entity must belong to agglomerate ``agg_id`` of the coarse
    space's level.  ``fine_space`` defaults to the level-0 space geometry
    (mesh elements); pass the intermediate space when evaluating between
    agglomerated levels.
    """
    level = space_coarse.level
    agg = hierarchy.levels[level - 1]
    if level == 1:
        members = agg.members[agg_id]
        fine_lo = hierarchy.mesh.element_lo
        fine_hi = hierarchy.mesh.element_hi
    else:
        parent = hierarchy.levels[level - 2].parent
        members = np.nonzero(parent == agg_id)[0]
        fine_lo = hierarchy.levels[level - 2].boxes_lo
        fine_hi = hierarchy.levels[level - 2].boxes_hi
    if fine_space is not None:
        fine_lo, fine_hi = fine_space.boxes_lo, fine_space.boxes_hi
    if fine_entity not in members:
        raise SpaceError(f"entity {fine_entity} is not a member of agglomerate {agg_id}")
    ref = np.asarray(ref_point, dtype=float)
    phys = fine_lo[fine_entity] + ref * (fine_hi[fine_entity] - fine_lo[fine_entity])
    coarse_ref = (phys - space_coarse.boxes_lo[agg_id]) / (
        space_coarse.boxes_hi[agg_id] - space_coarse.boxes_lo[agg_id])
    return space_coarse.shape_values(coarse_ref[None, :])[0]
