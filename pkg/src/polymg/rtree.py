"""R-tree spatial indexing of element bounding boxes and nested agglomeration.

Two construction modes are provided:

* ``pack`` (default): deterministic bottom-up sort-tile-recursive packing.
  Nodes are nearly full, so structured meshes coarsen by about ``M`` per
  level (ratio 4 in 2D with order (2, 4), ratio 8 in 3D with (4, 8)).
* ``insert``: sequential R*-style insertion (split axis chosen by minimum
  margin, distribution by minimum overlap; no forced reinsertion).

Tree levels count from the leaves upward: leaves sit on level 0 and the root
on level ``height - 1``.  Agglomerates at tree level ``l`` are the fine
elements below each level-``l`` node, extracted by recursive descent; the
groupings are nested across levels by construction.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .mesh import BoundingBox


class RTreeError(ValueError):
    """Invalid R-tree construction or query."""


@dataclass
class RTree:
    """Static R-tree over a fixed set of boxes (one per fine element)."""

    dim: int
    order: tuple
    node_lo: np.ndarray       # (n_nodes, dim)
    node_hi: np.ndarray
    children: list            # per node: node ids (internal) or element ids (leaf)
    is_leaf: np.ndarray       # bool per node
    level_of: np.ndarray      # leaf level = 0
    parent_of: np.ndarray     # -1 for the root
    root: int

    @property
    def n_nodes(self):
        return len(self.children)

    @property
    def height(self):
        """Number of node levels (leaves through root)."""
        return int(self.level_of[self.root]) + 1

    def nodes_at_level(self, l):
        """Node ids on tree level l, in ascending id order."""
        if not 0 <= l < self.height:
            raise RTreeError(f"level {l} out of range [0, {self.height})")
        return np.nonzero(self.level_of == l)[0]

    def node_box(self, n):
        return BoundingBox(self.node_lo[n].copy(), self.node_hi[n].copy())


def _as_box_arrays(boxes):
    if isinstance(boxes, np.ndarray):
        los, his = boxes[:, 0, :].astype(float), boxes[:, 1, :].astype(float)
    else:
        if len(boxes) == 0:
            raise RTreeError("need at least one box")
        los = np.array([b.lo for b in boxes], dtype=float)
        his = np.array([b.hi for b in boxes], dtype=float)
    if los.shape[0] == 0:
        raise RTreeError("need at least one box")
    return los, his


def _validate_order(order):
    m, M = int(order[0]), int(order[1])
    if M < 2 or m < 1 or m > math.ceil(M / 2):
        raise RTreeError(f"invalid order (m, M) = {(m, M)}: need 1 <= m <= ceil(M/2), M >= 2")
    return m, M


def build_rtree(boxes, order, method="pack"):
    """Build an R-tree over the given boxes.

    Parameters
    ----------
    boxes : sequence of BoundingBox or ndarray (n, 2, dim)
    order : (m, M)
        Node fill bounds, ``1 <= m <= ceil(M/2)``, ``M >= 2``.
    method : {"pack", "insert"}
        Deterministic STR packing (default) or sequential R*-style insertion.
    """
    m, M = _validate_order(order)
    los, his = _as_box_arrays(boxes)
    if method == "pack":
        return _build_packed(los, his, (m, M))
    if method == "insert":
        return _build_inserted(los, his, (m, M))
    raise RTreeError(f"unknown construction method {method!r}")


# ---------------------------------------------------------------------------
# sort-tile-recursive packing
# ---------------------------------------------------------------------------

def _even_chunks(n, q):
    """Split n items into q contiguous chunks differing in size by at most 1."""
    bounds = [(i * n) // q for i in range(q + 1)]
    return [(bounds[i], bounds[i + 1]) for i in range(q)]


def _tile(idx, centers, n_groups, axis, dim):
    """Recursively tile `idx` into n_groups contiguous spatial groups."""
    if n_groups <= 1:
        return [idx]
    keys = [idx]  # final tie-break: original ordering (ascending id)
    for a in reversed(range(dim)):
        col = centers[idx, (axis + a) % dim]
        keys.append(col)
    idx = idx[np.lexsort(keys)]
    if axis == dim - 1:
        return [idx[a:b] for a, b in _even_chunks(idx.size, n_groups)]
    slabs = int(math.ceil(n_groups ** (1.0 / (dim - axis))))
    per_slab = _even_chunks(n_groups, slabs)
    out = []
    pos = 0
    done_groups = 0
    for a, b in per_slab:
        g = b - a
        count = ((done_groups + g) * idx.size) // n_groups - pos
        out.extend(_tile(idx[pos:pos + count], centers, g, axis + 1, dim))
        pos += count
        done_groups += g
    return out


def _build_packed(los, his, order):
    dim = los.shape[1]
    M = order[1]
    n = los.shape[0]

    node_lo, node_hi, children, is_leaf, level, parent = [], [], [], [], [], []

    def add_node(lo, hi, kids, leaf, lvl):
        node_lo.append(lo)
        node_hi.append(hi)
        children.append(kids)
        is_leaf.append(leaf)
        level.append(lvl)
        parent.append(-1)
        return len(children) - 1

    item_lo, item_hi = los, his
    item_ids = np.arange(n)
    lvl = 0
    prev_nodes = None
    while True:
        centers = 0.5 * (item_lo + item_hi)
        n_groups = max(1, math.ceil(item_ids.size / M))
        groups = _tile(np.arange(item_ids.size), centers, n_groups, 0, dim)
        ids_this_level = []
        for g in groups:
            kids = item_ids[g]
            nid = add_node(item_lo[g].min(axis=0), item_hi[g].max(axis=0),
                           list(kids), leaf=(lvl == 0), lvl=lvl)
            if prev_nodes is not None:
                for c in kids:
                    parent[c] = nid
            ids_this_level.append(nid)
        prev_nodes = np.array(ids_this_level)
        if prev_nodes.size == 1:
            break
        item_lo = np.array([node_lo[i] for i in prev_nodes])
        item_hi = np.array([node_hi[i] for i in prev_nodes])
        item_ids = prev_nodes
        lvl += 1

    return RTree(dim, tuple(order), np.array(node_lo), np.array(node_hi),
                 children, np.array(is_leaf, dtype=bool), np.array(level),
                 np.array(parent), root=int(prev_nodes[0]))


# ---------------------------------------------------------------------------
# R*-style sequential insertion
# ---------------------------------------------------------------------------

def _area(lo, hi):
    return float(np.prod(np.maximum(hi - lo, 0.0)))


def _margin(lo, hi):
    return float(np.sum(np.maximum(hi - lo, 0.0)))


def _overlap(lo1, hi1, lo2, hi2):
    return _area(np.maximum(lo1, lo2), np.minimum(hi1, hi2))


class _MutableTree:
    """Construction-time node storage for sequential insertion."""

    def __init__(self, dim, order):
        self.dim = dim
        self.m, self.M = order
        self.lo = []
        self.hi = []
        self.children = []
        self.is_leaf = []
        self.root = None

    def new_node(self, leaf):
        self.lo.append(np.full(self.dim, np.inf))
        self.hi.append(np.full(self.dim, -np.inf))
        self.children.append([])
        self.is_leaf.append(leaf)
        return len(self.children) - 1

    def entry_box(self, node, child):
        if self.is_leaf[node]:
            return self._elem_lo[child], self._elem_hi[child]
        return self.lo[child], self.hi[child]

    def recompute_box(self, node):
        boxes = [self.entry_box(node, c) for c in self.children[node]]
        self.lo[node] = np.min([b[0] for b in boxes], axis=0)
        self.hi[node] = np.max([b[1] for b in boxes], axis=0)

    def choose_subtree(self, node, blo, bhi):
        kids = self.children[node]
        child_leaves = self.is_leaf[kids[0]]
        best = None
        for c in kids:
            clo, chi = self.lo[c], self.hi[c]
            elo, ehi = np.minimum(clo, blo), np.maximum(chi, bhi)
            area = _area(clo, chi)
            enlarge = _area(elo, ehi) - area
            if child_leaves:
                over0 = sum(_overlap(clo, chi, self.lo[s], self.hi[s])
                            for s in kids if s != c)
                over1 = sum(_overlap(elo, ehi, self.lo[s], self.hi[s])
                            for s in kids if s != c)
                key = (over1 - over0, enlarge, area, c)
            else:
                key = (enlarge, area, c)
            if best is None or key < best[0]:
                best = (key, c)
        return best[1]

    def split(self, node):
        """R* split: min-margin axis, then min-overlap distribution."""
        entries = list(self.children[node])
        boxes = [self.entry_box(node, c) for c in entries]
        los = np.array([b[0] for b in boxes])
        his = np.array([b[1] for b in boxes])
        m, total = self.m, len(entries)

        def distributions(axis):
            out = []
            for kind, key in ((0, los[:, axis]), (1, his[:, axis])):
                ordr = np.lexsort((np.arange(total), key))
                for k in range(m, total - m + 1):
                    out.append((kind, k, ordr))
            return out

        best_axis, best_axis_margin = None, None
        for axis in range(self.dim):
            margin_sum = 0.0
            for _, k, ordr in distributions(axis):
                g1, g2 = ordr[:k], ordr[k:]
                margin_sum += _margin(los[g1].min(0), his[g1].max(0))
                margin_sum += _margin(los[g2].min(0), his[g2].max(0))
            if best_axis is None or margin_sum < best_axis_margin:
                best_axis, best_axis_margin = axis, margin_sum

        best = None
        for kind, k, ordr in distributions(best_axis):
            g1, g2 = ordr[:k], ordr[k:]
            lo1, hi1 = los[g1].min(0), his[g1].max(0)
            lo2, hi2 = los[g2].min(0), his[g2].max(0)
            key = (_overlap(lo1, hi1, lo2, hi2), _area(lo1, hi1) + _area(lo2, hi2),
                   kind, k)
            if best is None or key < best[0]:
                best = (key, g1, g2)
        _, g1, g2 = best

        sib = self.new_node(self.is_leaf[node])
        self.children[node] = [entries[i] for i in g1]
        self.children[sib] = [entries[i] for i in g2]
        self.recompute_box(node)
        self.recompute_box(sib)
        return sib

    def insert(self, elem, blo, bhi):
        path = []
        node = self.root
        while not self.is_leaf[node]:
            path.append(node)
            node = self.choose_subtree(node, blo, bhi)
        self.children[node].append(elem)
        self.lo[node] = np.minimum(self.lo[node], blo)
        self.hi[node] = np.maximum(self.hi[node], bhi)
        for p in reversed(path):
            self.lo[p] = np.minimum(self.lo[p], blo)
            self.hi[p] = np.maximum(self.hi[p], bhi)

        # propagate splits upward
        while len(self.children[node]) > self.M:
            sib = self.split(node)
            if path:
                parent = path.pop()
                self.children[parent].append(sib)
                node = parent
            else:
                new_root = self.new_node(leaf=False)
                self.children[new_root] = [node, sib]
                self.recompute_box(new_root)
                self.root = new_root
                return


def _build_inserted(los, his, order):
    dim = los.shape[1]
    t = _MutableTree(dim, order)
    t._elem_lo, t._elem_hi = los, his
    t.root = t.new_node(leaf=True)
    for e in range(los.shape[0]):
        t.insert(e, los[e], his[e])

    # freeze: compute levels (leaves = 0) and parents
    n_nodes = len(t.children)
    level_of = np.full(n_nodes, -1)
    parent_of = np.full(n_nodes, -1)
    depth_of = np.full(n_nodes, -1)
    stack = [(t.root, 0)]
    height = 0
    while stack:
        node, depth = stack.pop()
        depth_of[node] = depth
        if t.is_leaf[node]:
            height = max(height, depth + 1)
        else:
            for c in t.children[node]:
                parent_of[c] = node
                stack.append((c, depth + 1))
    reachable = depth_of >= 0
    level_of[reachable] = (height - 1) - depth_of[reachable]
    return RTree(dim, tuple(order), np.array(t.lo), np.array(t.hi),
                 t.children, np.array(t.is_leaf, dtype=bool), level_of,
                 parent_of, root=t.root)


# ---------------------------------------------------------------------------
# agglomerate extraction (recursive leaf collection)
# ---------------------------------------------------------------------------

def extract_leafs(rtree, l, n):
    """All fine elements whose level-l ancestor is node n.

    Base case l = 0 returns the leaf's own entries; otherwise the children
    are visited recursively with l - 1.
    """
    if not 0 <= l < rtree.height:
        raise RTreeError(f"level {l} out of range [0, {rtree.height})")
    if rtree.level_of[n] != l:
        raise RTreeError(f"node {n} is not on level {l}")

    def rec(l, n):
        if l == 0:
            return list(rtree.children[n])
        out = []
        for ch in rtree.children[n]:
            out.extend(rec(l - 1, ch))
        return out

    return np.array(rec(l, n), dtype=np.int64)


def compute_agglomerates(rtree, l):
    """One element list per node on tree level l (disjoint cover of all
    elements), in ascending node-id order."""
    nodes = rtree.nodes_at_level(l)
    return [extract_leafs(rtree, l, int(n)) for n in nodes]


# ---------------------------------------------------------------------------
# nested hierarchy
# ---------------------------------------------------------------------------

@dataclass
class AggLevel:
    """One agglomerated level: member element lists and bounding boxes."""

    members: list                 # per agglomerate: sorted fine element ids
    boxes_lo: np.ndarray          # (n_agg, dim)
    boxes_hi: np.ndarray
    parent: np.ndarray = None     # agglomerate id on the next coarser level

    @property
    def n_agglomerates(self):
        return len(self.members)


@dataclass
class AgglomerationHierarchy:
    """Nested agglomerated levels on top of a fine mesh.

    ``levels[0]`` is the finest agglomerated level; the fine mesh itself is
    solver level 0 and ``levels[k]`` is solver level ``k + 1``.
    """

    mesh: object
    dim: int
    order: tuple
    levels: list
    requested_levels: int
    truncated: bool
    method: str = "pack"

    @property
    def n_levels(self):
        """Total solver levels including the fine mesh."""
        return len(self.levels) + 1

    def cardinalities(self):
        return [self.mesh.n_elements] + [lvl.n_agglomerates for lvl in self.levels]

    def coarsening_ratios(self):
        """Card(T_{l-1}) / Card(T_l) for consecutive levels."""
        card = self.cardinalities()
        return [card[i - 1] / card[i] for i in range(1, len(card))]

    def export_text(self, path):
        """One line per agglomerate: `level id parent_id n_members members...`."""
        with open(path, "w") as fh:
            for k, lvl in enumerate(self.levels):
                for a, mem in enumerate(lvl.members):
                    pid = int(lvl.parent[a]) if lvl.parent is not None else -1
                    ids = " ".join(str(int(e)) for e in mem)
                    fh.write(f"{k + 1} {a} {pid} {len(mem)} {ids}\n")


def default_order(dim):
    """(m, M) defaults: (2, 4) in 2D and (4, 8) in 3D, coarsening by ~2**dim."""
    return (2, 4) if dim == 2 else (4, 8)


def build_hierarchy(mesh, order=None, num_levels=2, method="pack"):
    """Build a nested agglomeration hierarchy with `num_levels` solver levels.

    Solver level 0 is the fine mesh; levels 1 .. num_levels-1 group elements
    by their R-tree ancestors on tree levels 0 .. num_levels-2.  If the tree
    is too shallow the hierarchy is truncated and flagged.
    """
    if num_levels < 2:
        raise RTreeError("hierarchy needs num_levels >= 2")
    if order is None:
        order = default_order(mesh.dim)
    boxes = np.stack([mesh.element_lo, mesh.element_hi], axis=1)
    tree = build_rtree(boxes, order, method=method)

    n_agg = num_levels - 1
    truncated = tree.height < n_agg
    n_agg = min(n_agg, tree.height)

    levels = []
    node_ids_prev = None
    for l in range(n_agg):
        nodes = tree.nodes_at_level(l)
        members = [np.sort(extract_leafs(tree, l, int(n))) for n in nodes]
        lo = tree.node_lo[nodes].copy()
        hi = tree.node_hi[nodes].copy()
        levels.append(AggLevel(members, lo, hi))
        if node_ids_prev is not None:
            pos = {int(n): i for i, n in enumerate(nodes)}
            parent = np.array([pos[int(tree.parent_of[n])] for n in node_ids_prev],
                              dtype=np.int64)
            levels[l - 1].parent = parent
        node_ids_prev = nodes

    return AgglomerationHierarchy(mesh, mesh.dim, tuple(order), levels,
                                  num_levels, truncated, method)
