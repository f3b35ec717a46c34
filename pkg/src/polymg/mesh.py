"""Axis-aligned quadrilateral/hexahedral meshes with derived face connectivity.

Local faces of an element are numbered (-x, +x, -y, +y, -z, +z), i.e. face
``f`` lies on axis ``f // 2`` and side ``f % 2``.  Element corners are stored
lexicographically (x fastest): corner ``c`` has offset bits
``(c & 1, (c >> 1) & 1, (c >> 2) & 1)``.

For every interior face the "plus" element is the one on the negative side of
the face, so the face is its ``+axis`` face and the plus-side outward normal
is ``+e_axis``; the minus-side normal is the exact negative.
"""

from dataclasses import dataclass

import numpy as np


class MeshError(ValueError):
    """Invalid mesh input or construction request."""


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box given by its lower and upper corners."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise MeshError("bounding box corners must be matching 1-d vectors")
        if np.any(hi < lo):
            raise MeshError("bounding box requires lo <= hi componentwise")

    @property
    def dim(self):
        return self.lo.size

    @property
    def extent(self):
        return self.hi - self.lo

    def volume(self):
        return float(np.prod(self.extent))

    def contains(self, points, tol=0.0):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all((pts >= self.lo - tol) & (pts <= self.hi + tol), axis=1)

    def union(self, other):
        return BoundingBox(np.minimum(self.lo, other.lo), np.maximum(self.hi, other.hi))


def local_face_axis_side(local_face):
    """Split a local face id into (axis, side) with side 0 = -axis, 1 = +axis."""
    return local_face // 2, local_face % 2


def _corner_bits(dim):
    c = np.arange(2**dim)
    return np.stack([(c >> a) & 1 for a in range(dim)], axis=1)


@dataclass
class Mesh:
    """Immutable axis-aligned box mesh.

    Attributes
    ----------
    dim : int
        Spatial dimension, 2 or 3.
    vertices : ndarray, shape (n_vertices, dim)
    elements : ndarray, shape (n_elements, 2**dim)
        Vertex indices in lexicographic corner order.
    interior_faces : ndarray, shape (n_interior, 4)
        Rows ``(elem_plus, elem_minus, local_face_plus, local_face_minus)``.
    boundary_faces : ndarray, shape (n_boundary, 2)
        Rows ``(elem, local_face)``.
    element_lo, element_hi : ndarray, shape (n_elements, dim)
        Per-element box corners (elements are validated to be axis aligned).
    """

    dim: int
    vertices: np.ndarray
    elements: np.ndarray
    interior_faces: np.ndarray
    boundary_faces: np.ndarray
    element_lo: np.ndarray
    element_hi: np.ndarray

    @property
    def n_elements(self):
        return self.elements.shape[0]

    @property
    def n_interior_faces(self):
        return self.interior_faces.shape[0]

    @property
    def n_boundary_faces(self):
        return self.boundary_faces.shape[0]

    def element_centers(self):
        return 0.5 * (self.element_lo + self.element_hi)


def _element_boxes(dim, vertices, elements):
    """Per-element lo/hi corners; raises unless elements are axis-aligned boxes."""
    coords = vertices[elements]  # (nE, 2**dim, dim)
    lo = coords.min(axis=1)
    hi = coords.max(axis=1)
    extent = hi - lo
    if np.any(extent <= 0.0):
        raise MeshError("degenerate element: zero extent along some axis")
    bits = _corner_bits(dim)  # (2**dim, dim)
    expected = lo[:, None, :] + bits[None, :, :] * extent[:, None, :]
    tol = 1e-12 * np.maximum(extent.max(), 1.0)
    if not np.allclose(coords, expected, rtol=0.0, atol=tol):
        raise MeshError("element vertices are not the corners of an axis-aligned box "
                        "in lexicographic order")
    return lo, hi


def _face_corner_sets(dim):
    """Local corner indices of each of the 2*dim faces."""
    bits = _corner_bits(dim)
    faces = []
    for f in range(2 * dim):
        axis, side = local_face_axis_side(f)
        faces.append(np.nonzero(bits[:, axis] == side)[0])
    return faces


def derive_faces(dim, elements):
    """Match element faces by shared vertex sets.

    Returns (interior_faces, boundary_faces) arrays.  Every face must be
    shared by exactly one or two elements; for shared faces the two local
    faces must be opposite sides of the same axis (conforming mesh).
    """
    face_corners = _face_corner_sets(dim)
    seen = {}
    for e in range(elements.shape[0]):
        ev = elements[e]
        for f in range(2 * dim):
            key = tuple(sorted(ev[face_corners[f]]))
            seen.setdefault(key, []).append((e, f))

    interior = []
    boundary = []
    for key, recs in seen.items():
        if len(recs) == 1:
            boundary.append(recs[0])
        elif len(recs) == 2:
            (e0, f0), (e1, f1) = recs
            a0, s0 = local_face_axis_side(f0)
            a1, s1 = local_face_axis_side(f1)
            if a0 != a1 or s0 == s1:
                raise MeshError(f"non-conforming face between elements {e0} and {e1}")
            if s0 == 1:
                interior.append((e0, e1, f0, f1))
            else:
                interior.append((e1, e0, f1, f0))
        else:
            raise MeshError("face shared by more than two elements")

    interior.sort(key=lambda r: (r[2] // 2, r[0]))
    boundary.sort()
    interior_faces = np.array(interior, dtype=np.int64).reshape(-1, 4)
    boundary_faces = np.array(boundary, dtype=np.int64).reshape(-1, 2)
    return interior_faces, boundary_faces


def _build(dim, vertices, elements):
    vertices = np.asarray(vertices, dtype=float)
    elements = np.asarray(elements, dtype=np.int64)
    if dim not in (2, 3):
        raise MeshError(f"dim must be 2 or 3, got {dim}")
    if vertices.ndim != 2 or vertices.shape[1] != dim:
        raise MeshError("vertices must have shape (n_vertices, dim)")
    if elements.ndim != 2 or elements.shape[1] != 2**dim:
        raise MeshError(f"elements must have {2**dim} vertices each")
    if elements.size and (elements.min() < 0 or elements.max() >= vertices.shape[0]):
        raise MeshError("element vertex index out of range")
    lo, hi = _element_boxes(dim, vertices, elements)
    interior, boundary = derive_faces(dim, elements)
    return Mesh(dim, vertices, elements, interior, boundary, lo, hi)


def generate_structured(dim, lo, hi, subdivisions):
    """Cartesian-product mesh of the box [lo, hi] with the given subdivisions.

    Parameters
    ----------
    dim : {2, 3}
    lo, hi : array_like, shape (dim,)
        Box corners, ``hi > lo`` componentwise.
    subdivisions : array_like of int, shape (dim,)
        Number of cells per axis, each >= 1.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    sub = np.asarray(subdivisions, dtype=np.int64)
    if dim not in (2, 3):
        raise MeshError(f"dim must be 2 or 3, got {dim}")
    if lo.shape != (dim,) or hi.shape != (dim,) or sub.shape != (dim,):
        raise MeshError("lo, hi and subdivisions must have length dim")
    if np.any(hi <= lo):
        raise MeshError("domain requires hi > lo componentwise")
    if np.any(sub < 1):
        raise MeshError("subdivisions must be >= 1 per axis")

    axes = [np.linspace(lo[a], hi[a], sub[a] + 1) for a in range(dim)]
    grids = np.meshgrid(*axes, indexing="ij")
    # vertex index = ix + (n_x+1)*iy (+ (n_x+1)*(n_y+1)*iz): x fastest
    vertices = np.stack([g.T.reshape(-1) if dim == 2 else g.transpose(2, 1, 0).reshape(-1)
                         for g in grids], axis=1)

    nv = sub + 1
    idx = [np.arange(sub[a]) for a in range(dim)]
    if dim == 2:
        iy, ix = np.meshgrid(idx[1], idx[0], indexing="ij")
        base = ix.reshape(-1) + nv[0] * iy.reshape(-1)
        offsets = np.array([0, 1, nv[0], nv[0] + 1])
    else:
        iz, iy, ix = np.meshgrid(idx[2], idx[1], idx[0], indexing="ij")
        base = ix.reshape(-1) + nv[0] * (iy.reshape(-1) + nv[1] * iz.reshape(-1))
        oxy = np.array([0, 1, nv[0], nv[0] + 1])
        offsets = np.concatenate([oxy, oxy + nv[0] * nv[1]])
    elements = base[:, None] + offsets[None, :]
    return _build(dim, vertices, elements)


def from_arrays(dim, vertices, elements):
    """Mesh from raw vertex/element arrays (faces derived)."""
    return _build(dim, vertices, elements)


def element_measure(mesh, k):
    """d-dimensional measure |K| of element k."""
    if not 0 <= k < mesh.n_elements:
        raise MeshError(f"element id {k} out of range")
    return float(np.prod(mesh.element_hi[k] - mesh.element_lo[k]))


def face_measure(mesh, f, boundary=False):
    """(d-1)-dimensional measure |F| of interior face f (or boundary face)."""
    faces = mesh.boundary_faces if boundary else mesh.interior_faces
    if not 0 <= f < faces.shape[0]:
        raise MeshError(f"face id {f} out of range")
    elem, lf = (faces[f, 0], faces[f, 1]) if boundary else (faces[f, 0], faces[f, 2])
    axis, _ = local_face_axis_side(lf)
    ext = mesh.element_hi[elem] - mesh.element_lo[elem]
    return float(np.prod(np.delete(ext, axis)))


def face_normal(mesh, f, boundary=False):
    """Outward unit normal seen from the plus element (interior) or the owner."""
    faces = mesh.boundary_faces if boundary else mesh.interior_faces
    if not 0 <= f < faces.shape[0]:
        raise MeshError(f"face id {f} out of range")
    lf = faces[f, 1] if boundary else faces[f, 2]
    axis, side = local_face_axis_side(lf)
    n = np.zeros(mesh.dim)
    n[axis] = 1.0 if side == 1 else -1.0
    return n


def element_mbr(mesh, k):
    """Minimal axis-aligned bounding box of element k."""
    if not 0 <= k < mesh.n_elements:
        raise MeshError(f"element id {k} out of range")
    return BoundingBox(mesh.element_lo[k].copy(), mesh.element_hi[k].copy())


def locate_elements(mesh, points, tol=1e-12):
    """Element id containing each point (lowest id on ties at element faces)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.full(pts.shape[0], -1, dtype=np.int64)
    for i, x in enumerate(pts):
        inside = np.all((mesh.element_lo <= x + tol) & (x - tol <= mesh.element_hi), axis=1)
        hits = np.nonzero(inside)[0]
        if hits.size == 0:
            raise MeshError(f"point {x} lies outside the mesh")
        out[i] = hits[0]
    return out


def write_mesh(mesh, path):
    """Plain-text format: `dim n_vertices n_elements`, vertex lines, element lines."""
    with open(path, "w") as fh:
        fh.write(f"{mesh.dim} {mesh.vertices.shape[0]} {mesh.n_elements}\n")
        for v in mesh.vertices:
            fh.write(" ".join(f"{x:.17g}" for x in v) + "\n")
        for e in mesh.elements:
            fh.write(" ".join(str(i) for i in e) + "\n")


def read_mesh(path):
    """Read the plain-text mesh format written by :func:`write_mesh`.

    Faces are derived, never stored.  Elements must be axis-aligned boxes with
    corners in lexicographic order.
    """
    with open(path) as fh:
        tokens = fh.read().split()
    if len(tokens) < 3:
        raise MeshError("truncated mesh file header")
    dim, n_vert, n_elem = int(tokens[0]), int(tokens[1]), int(tokens[2])
    if dim not in (2, 3):
        raise MeshError(f"unsupported dimension {dim} in mesh file")
    need = 3 + n_vert * dim + n_elem * 2**dim
    if len(tokens) != need:
        raise MeshError(f"mesh file has {len(tokens)} tokens, expected {need}")
    pos = 3
    vertices = np.array(tokens[pos:pos + n_vert * dim], dtype=float).reshape(n_vert, dim)
    pos += n_vert * dim
    elements = np.array(tokens[pos:], dtype=np.int64).reshape(n_elem, 2**dim)
    return _build(dim, vertices, elements)
