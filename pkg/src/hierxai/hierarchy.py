"""Segmentation hierarchies: binary partition tree and hierarchical watershed.

A Hierarchy is a parent-array tree over the pixels of a grid graph: the
first n_leaves nodes are the pixels (row-major), internal nodes follow in
merge order, the root is last and is its own parent.  Altitudes are the
dissimilarity (or watershed attribute) levels at which children merge and
are non-decreasing along every leaf-to-root path.

The binary partition tree is the Kruskal merge tree of the edge-weighted
graph.  The hierarchical watershed re-weights the merge tree: merges where
both sides already contain a regional minimum are watershed merges and get
the minimum child attribute (area, or area x merge depth for volume) as
their new level; all other merges are flooding steps at level 0.  The final
tree is the canonicalized quasi-flat-zone hierarchy of the re-weighted
spanning tree, so its finest cut is exactly the basin partition.
"""

from __future__ import annotations

import dataclasses
import struct

import numpy as np

from .graph import WeightedPixelGraph
from .image import Mask

__all__ = [
    "Hierarchy",
    "build_bpt",
    "build_watershed",
    "filter_min_area",
    "node_mask",
    "cut_labels",
    "save_hierarchy",
    "load_hierarchy",
]

_MAGIC = b"HXT1"
_KINDS = ("bpt", "watershed_area", "watershed_volume")


class UnionFind:
    """Array-based union-find with path halving; no union by rank so the
    caller controls which root survives."""

    __slots__ = ("parent",)

    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        parent = self.parent
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union_into(self, child_root: int, new_root: int) -> None:
        self.parent[child_root] = new_root


@dataclasses.dataclass(frozen=True)
class Hierarchy:
    """Merging tree over grid pixels (see module docstring for layout)."""

    height: int
    width: int
    parent: np.ndarray    # int64, parent[root] == root
    altitude: np.ndarray  # float64, 0 at leaves
    area: np.ndarray      # int64 leaf counts
    kind: str
    sub_minimal: np.ndarray | None = None  # bool; True = below the min-area filter

    def __post_init__(self):
        parent = np.ascontiguousarray(self.parent, dtype=np.int64)
        altitude = np.ascontiguousarray(self.altitude, dtype=np.float64)
        area = np.ascontiguousarray(self.area, dtype=np.int64)
        n = len(parent)
        if not (len(altitude) == len(area) == n):
            raise ValueError("parent/altitude/area lengths differ")
        if self.kind not in _KINDS:
            raise ValueError(f"unknown hierarchy kind {self.kind!r}")
        sub = self.sub_minimal
        if sub is None:
            sub = np.zeros(n, dtype=bool)
        else:
            sub = np.ascontiguousarray(sub, dtype=bool)
            if len(sub) != n:
                raise ValueError("sub_minimal length mismatch")
        for name, arr in (("parent", parent), ("altitude", altitude),
                          ("area", area), ("sub_minimal", sub)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n_leaves(self) -> int:
        return self.height * self.width

    @property
    def n_nodes(self) -> int:
        return len(self.parent)

    @property
    def root(self) -> int:
        return self.n_nodes - 1

    def children(self) -> list[list[int]]:
        kids: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for node in range(self.n_nodes - 1):
            kids[self.parent[node]].append(node)
        return kids

    def validate(self) -> None:
        """Check the structural invariants; raises ValueError on violation."""
        n, n_leaves = self.n_nodes, self.n_leaves
        if self.parent[self.root] != self.root:
            raise ValueError("root must be its own parent")
        if np.any(self.parent[:-1] <= np.arange(n - 1)):
            raise ValueError("parent ids must be greater than child ids")
        if np.any(self.altitude[:n_leaves] != 0):
            raise ValueError("leaves must have altitude 0")
        if np.any(self.altitude[self.parent] < self.altitude):
            raise ValueError("altitude must be non-decreasing towards the root")
        if np.any(self.area[:n_leaves] != 1):
            raise ValueError("leaves must have area 1")
        sums = np.zeros(n, dtype=np.int64)
        counts = np.zeros(n, dtype=np.int64)
        np.add.at(sums, self.parent[:-1], self.area[:-1])
        np.add.at(counts, self.parent[:-1], 1)
        internal = np.arange(n) >= n_leaves
        if np.any(sums[internal] != self.area[internal]):
            raise ValueError("internal area must equal the sum of child areas")
        if np.any(counts[internal] < 2):
            raise ValueError("internal nodes need at least two children")
        if self.area[self.root] != n_leaves:
            raise ValueError("root area must cover every pixel")


def _kruskal_merge_tree(n: int, edges_u: np.ndarray, edges_v: np.ndarray,
                        weights: np.ndarray):
    """Kruskal merge tree: returns (parent, altitude, area, merge_edge_index).

    Edges are processed by ascending (weight, position in the given edge
    list); each union of two distinct components appends one internal node
    whose altitude is the edge weight.  merge_edge_index[i] is the position
    of the edge that created internal node n + i.
    """
    order = np.argsort(weights, kind="stable")
    total = 2 * n - 1
    parent = np.arange(total, dtype=np.int64)
    altitude = np.zeros(total, dtype=np.float64)
    area = np.ones(total, dtype=np.int64)
    merge_edge = np.empty(n - 1, dtype=np.int64)

    uf = UnionFind(n)
    comp_node = list(range(n))  # current tree node of each UF root
    nxt = n
    for ei in order:
        ru = uf.find(int(edges_u[ei]))
        rv = uf.find(int(edges_v[ei]))
        if ru == rv:
            continue
        nu, nv = comp_node[ru], comp_node[rv]
        parent[nu] = nxt
        parent[nv] = nxt
        altitude[nxt] = weights[ei]
        area[nxt] = area[nu] + area[nv]
        merge_edge[nxt - n] = ei
        uf.union_into(rv, ru)
        comp_node[ru] = nxt
        nxt += 1
        if nxt == total:
            break
    if nxt != total:
        raise ValueError("graph is not connected")
    return parent, altitude, area, merge_edge


def build_bpt(g: WeightedPixelGraph) -> Hierarchy:
    """Binary partition tree by Kruskal-style region merging.

    Ties between equal-weight edges are broken by the canonical edge order,
    which makes the tree bit-reproducible.
    """
    parent, altitude, area, _ = _kruskal_merge_tree(
        g.n_vertices, g.edges_u, g.edges_v, g.weights)
    return Hierarchy(g.height, g.width, parent, altitude, area, kind="bpt")


def _minimum_roots(parent: np.ndarray, altitude: np.ndarray, n_leaves: int) -> np.ndarray:
    """Flag the merge-tree nodes that are regional minima of the edge weights.

    A node is a minimum root when its whole subtree merged at a single level
    (a flat zone) and its parent merges strictly higher: exactly the maximal
    plateaus all of whose outgoing edges are heavier.
    """
    n = len(parent)
    # lowest internal altitude inside each subtree (inf where none yet)
    min_int = np.full(n, np.inf)
    for node in range(n_leaves, n):
        min_int[node] = min(min_int[node], altitude[node])
    for node in range(n - 1):
        p = parent[node]
        if min_int[node] < min_int[p]:
            min_int[p] = min_int[node]
    roots = np.zeros(n, dtype=bool)
    top = n - 1
    for node in range(n_leaves, n):
        flat = min_int[node] == altitude[node]
        strictly_below_parent = node == top or altitude[parent[node]] > altitude[node]
        roots[node] = flat and strictly_below_parent
    return roots


def build_watershed(g: WeightedPixelGraph, attr: str = "area") -> Hierarchy:
    """Hierarchical watershed of the graph, ordered by area or volume.

    See the module docstring for the construction; ``attr`` selects the
    re-weighting attribute.  The child volume at a merge is its area times
    the altitude gap between the merge and the child's own formation level.
    """
    if attr not in ("area", "volume"):
        raise ValueError(f"unknown watershed attribute {attr!r}")
    n = g.n_vertices
    parent, altitude, area, merge_edge = _kruskal_merge_tree(
        n, g.edges_u, g.edges_v, g.weights)
    minima = _minimum_roots(parent, altitude, n)

    n_min = np.zeros(len(parent), dtype=np.int64)
    n_min[minima] = 1
    for node in range(len(parent) - 1):
        n_min[parent[node]] += n_min[node]

    children: list[list[int]] = [[] for _ in range(len(parent))]
    for node in range(len(parent) - 1):
        children[parent[node]].append(node)

    saliency = np.empty(n - 1, dtype=np.float64)
    for node in range(n, len(parent)):
        c1, c2 = children[node]
        if n_min[c1] >= 1 and n_min[c2] >= 1:
            if attr == "area":
                value = min(area[c1], area[c2])
            else:
                depth1 = altitude[node] - altitude[c1]
                depth2 = altitude[node] - altitude[c2]
                value = min(area[c1] * depth1, area[c2] * depth2)
        else:
            value = 0.0
        saliency[node - n] = value

    # rebuild over the spanning-tree edges only, re-weighted by the
    # attribute saliency; ties fall back to the canonical edge order
    mst_order = np.argsort(merge_edge, kind="stable")
    mst_idx = merge_edge[mst_order]
    parent2, altitude2, area2, _ = _kruskal_merge_tree(
        n, g.edges_u[mst_idx], g.edges_v[mst_idx], saliency[mst_order])
    kind = "watershed_area" if attr == "area" else "watershed_volume"
    binary = Hierarchy(g.height, g.width, parent2, altitude2, area2, kind=kind)
    # canonicalize: internal nodes at the same level as their parent are the
    # same quasi-flat zone and collapse into it
    keep = np.ones(binary.n_nodes, dtype=bool)
    for node in range(binary.n_leaves, binary.n_nodes - 1):
        if binary.altitude[node] == binary.altitude[binary.parent[node]]:
            keep[node] = False
    return _contract(binary, keep)


def _contract(h: Hierarchy, keep: np.ndarray, sub_minimal: np.ndarray | None = None) -> Hierarchy:
    """Rebuild the hierarchy keeping only flagged nodes (leaves and root always
    survive); children of removed nodes re-attach to the nearest kept ancestor."""
    keep = keep.copy()
    keep[:h.n_leaves] = True
    keep[h.root] = True
    new_id = np.cumsum(keep) - 1
    # nearest kept ancestor, resolved top-down (parents have larger ids)
    hoisted = h.parent.copy()
    for node in range(h.n_nodes - 2, -1, -1):
        if not keep[hoisted[node]]:
            hoisted[node] = hoisted[hoisted[node]]
    n_new = int(keep.sum())
    parent = np.empty(n_new, dtype=np.int64)
    altitude = np.empty(n_new, dtype=np.float64)
    area = np.empty(n_new, dtype=np.int64)
    sub = np.zeros(n_new, dtype=bool)
    src = np.flatnonzero(keep)
    parent[:] = new_id[hoisted[src]]
    altitude[:] = h.altitude[src]
    area[:] = h.area[src]
    if sub_minimal is not None:
        sub[:] = sub_minimal[src]
    return Hierarchy(h.height, h.width, parent, altitude, area, kind=h.kind,
                     sub_minimal=sub)


def filter_min_area(h: Hierarchy, min_area: int) -> Hierarchy:
    """Contract internal nodes smaller than ``min_area`` into their parents.

    Leaves are kept for pixel addressing but flagged sub-minimal (as is any
    surviving node below the threshold, i.e. leaves when min_area > 1), so
    scoring can skip them while aggregation still sees full leaf paths.
    """
    if not (1 <= min_area <= h.n_leaves):
        raise ValueError(f"min_area must be in [1, {h.n_leaves}], got {min_area}")
    keep = h.area >= min_area
    sub = h.area < min_area
    return _contract(h, keep, sub_minimal=sub)


def node_mask(h: Hierarchy, node: int) -> Mask:
    """Mask of the pixels (subtree leaves) covered by ``node``."""
    if not (0 <= node < h.n_nodes):
        raise ValueError(f"invalid node id {node}")
    if node < h.n_leaves:
        bits = np.zeros(h.n_leaves, dtype=bool)
        bits[node] = True
    else:
        # descending sweep marks the whole subtree (child ids < parent ids)
        member = np.zeros(h.n_nodes, dtype=bool)
        member[node] = True
        for i in range(node - 1, -1, -1):
            if member[h.parent[i]]:
                member[i] = True
        bits = member[:h.n_leaves]
    return Mask(bits.reshape(h.height, h.width))


def cut_labels(h: Hierarchy, level: float) -> np.ndarray:
    """Partition of the pixels at a threshold: each leaf is labelled by its
    highest ancestor with altitude <= level.  Labels are node ids."""
    label = np.arange(h.n_nodes, dtype=np.int64)
    for node in range(h.n_nodes - 2, -1, -1):
        p = h.parent[node]
        if h.altitude[p] <= level:
            label[node] = label[p]
    return label[:h.n_leaves]


def save_hierarchy(path, h: Hierarchy) -> None:
    """Flat binary format: magic "HXT1", u8 kind, u32 n_nodes, u32 n_leaves,
    then parent u32[n], altitude f32[n], area u32[n], sub_minimal u8[n],
    all little-endian."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<BII", _KINDS.index(h.kind), h.n_nodes, h.n_leaves))
        fh.write(struct.pack("<II", h.height, h.width))
        fh.write(h.parent.astype("<u4").tobytes())
        fh.write(h.altitude.astype("<f4").tobytes())
        fh.write(h.area.astype("<u4").tobytes())
        fh.write(h.sub_minimal.astype(np.uint8).tobytes())


def load_hierarchy(path) -> Hierarchy:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a hierarchy file")
        kind_idx, n_nodes, n_leaves = struct.unpack("<BII", fh.read(9))
        height, width = struct.unpack("<II", fh.read(8))
        if height * width != n_leaves:
            raise ValueError(f"{path}: header is inconsistent")
        parent = np.frombuffer(fh.read(4 * n_nodes), dtype="<u4").astype(np.int64)
        altitude = np.frombuffer(fh.read(4 * n_nodes), dtype="<f4").astype(np.float64)
        area = np.frombuffer(fh.read(4 * n_nodes), dtype="<u4").astype(np.int64)
        sub = np.frombuffer(fh.read(n_nodes), dtype=np.uint8).astype(bool)
    return Hierarchy(height, width, parent, altitude, area,
                     kind=_KINDS[kind_idx], sub_minimal=sub)
