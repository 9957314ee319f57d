"""Importance extraction by shaping: max-tree persistence over the hierarchy.

The hierarchy T is viewed as an undirected graph G whose vertices are the
nodes of T, whose edges are the parent-child pairs, and whose vertex weights
are the occlusion attributes.  The max-tree of G is the tree of connected
components of all upper level sets {v : attr(v) >= level}.  A component is
born at each local maximum; when components merge, the branch with the
higher peak survives (elder rule) and the other branch's lifetime is its
persistence.  Summing per-vertex persistence from the root of T down to the
leaves yields the per-pixel score map.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .hierarchy import Hierarchy

__all__ = ["ShapeTree", "ScoreMap", "build_shape_tree", "persistence", "aggregate_scores"]


@dataclasses.dataclass(frozen=True)
class ShapeTree:
    """Max-tree of the node-weighted hierarchy graph.

    comp_level[k]      level (attribute value) of component k
    comp_parent[k]     enclosing component at the next lower level (root: self)
    vertex_map[v]      component where vertex v first appears (at level attr[v])
    comp_members[k]    vertex ids first appearing in component k
    """

    n_vertices: int
    comp_level: np.ndarray
    comp_parent: np.ndarray
    vertex_map: np.ndarray
    comp_members: tuple[tuple[int, ...], ...]

    @property
    def n_components(self) -> int:
        return len(self.comp_level)

    @property
    def root_component(self) -> int:
        return int(np.flatnonzero(self.comp_parent == np.arange(self.n_components))[0])

    def component_vertices(self, comp: int) -> list[int]:
        """All vertices contained in the component (its members plus the
        members of every higher component it encloses)."""
        kids: list[list[int]] = [[] for _ in range(self.n_components)]
        for k in range(self.n_components):
            if self.comp_parent[k] != k:
                kids[self.comp_parent[k]].append(k)
        out: list[int] = []
        stack = [comp]
        while stack:
            k = stack.pop()
            out.extend(self.comp_members[k])
            stack.extend(kids[k])
        return sorted(out)


@dataclasses.dataclass(frozen=True)
class ScoreMap:
    """Aggregated per-pixel importance plus the provenance of the run."""

    scores: np.ndarray  # float32, shape (H, W)
    hierarchy_kind: str = ""
    metric: str = ""
    min_area: int = 0

    def __post_init__(self):
        scores = np.ascontiguousarray(self.scores, dtype=np.float32)
        if scores.ndim != 2:
            raise ValueError(f"score map must be 2-d, got {scores.shape}")
        if np.any(scores < 0) or not np.all(np.isfinite(scores)):
            raise ValueError("scores must be finite and non-negative")
        scores.flags.writeable = False
        object.__setattr__(self, "scores", scores)

    @property
    def height(self) -> int:
        return self.scores.shape[0]

    @property
    def width(self) -> int:
        return self.scores.shape[1]


def _tree_adjacency(h: Hierarchy) -> list[list[int]]:
    adj: list[list[int]] = [[] for _ in range(h.n_nodes)]
    for node in range(h.n_nodes - 1):
        p = int(h.parent[node])
        adj[node].append(p)
        adj[p].append(node)
    return adj


def build_shape_tree(h: Hierarchy, attrs) -> ShapeTree:
    """Max-tree of the hierarchy graph weighted by per-node attributes.

    Vertices are processed by descending attribute (ties: lower id first);
    union-find grows the upper level sets.  Components with equal level
    along a parent chain are the same level-set component and collapse.
    """
    values = np.asarray(getattr(attrs, "values", attrs), dtype=np.float64)
    if len(values) != h.n_nodes:
        raise ValueError(f"attribute length {len(values)} != node count {h.n_nodes}")
    n = h.n_nodes
    adj = _tree_adjacency(h)
    order = sorted(range(n), key=lambda v: (-values[v], v))
    rank = np.empty(n, dtype=np.int64)
    for i, v in enumerate(order):
        rank[v] = i

    uf_parent = np.arange(n, dtype=np.int64)

    def find(x: int) -> int:
        while uf_parent[x] != x:
            uf_parent[x] = uf_parent[uf_parent[x]]
            x = int(uf_parent[x])
        return x

    tree_parent = np.arange(n, dtype=np.int64)  # per-vertex max-tree parent
    subtree_root = np.arange(n, dtype=np.int64)  # lowest vertex of each partial tree
    for v in order:
        for u in adj[v]:
            if rank[u] < rank[v]:
                ru, rv = find(u), find(v)
                if ru != rv:
                    tree_parent[subtree_root[ru]] = v
                    uf_parent[ru] = rv
                    subtree_root[rv] = v

    # canonical component of each vertex: climb while the level is equal
    canon = np.arange(n, dtype=np.int64)
    for v in order[::-1]:  # parents have lower rank, so resolve bottom-up
        p = int(tree_parent[v])
        if p != v and values[p] == values[v]:
            canon[v] = canon[p]
    canonical_ids = sorted(set(int(canon[v]) for v in range(n)),
                           key=lambda v: rank[v])
    comp_index = {v: k for k, v in enumerate(canonical_ids)}

    comp_level = np.array([values[v] for v in canonical_ids], dtype=np.float64)
    comp_parent = np.empty(len(canonical_ids), dtype=np.int64)
    members: list[list[int]] = [[] for _ in canonical_ids]
    for v in range(n):
        members[comp_index[int(canon[v])]].append(v)
    for k, v in enumerate(canonical_ids):
        p = int(tree_parent[v])
        comp_parent[k] = comp_index[int(canon[p])] if p != v else k
    vertex_map = np.array([comp_index[int(canon[v])] for v in range(n)], dtype=np.int64)
    return ShapeTree(n, comp_level, comp_parent, vertex_map,
                     tuple(tuple(m) for m in members))


def persistence(t: ShapeTree, member_rule: str = "first_appearance") -> np.ndarray:
    """Per-vertex persistence under the elder rule.

    Each leaf component of the max-tree is a local maximum and starts a
    branch.  Where branches meet, the one with the higher peak survives
    (ties: the peak containing the smaller vertex id is elder) and the
    others die at the meeting level.  The surviving branch dies at the root
    component's level.

    With the default member_rule "first_appearance" a vertex inherits the
    level of the component where it first appears minus the death level of
    that component's branch, so low-attribute connector vertices get about
    zero.  Rule "branch" instead gives every vertex the full lifetime (peak
    minus death) of its component's branch, for comparison studies.
    """
    if member_rule not in ("first_appearance", "branch"):
        raise ValueError(f"unknown member rule {member_rule!r}")
    n_comp = t.n_components
    kids: list[list[int]] = [[] for _ in range(n_comp)]
    root = t.root_component
    for k in range(n_comp):
        if k != root:
            kids[t.comp_parent[k]].append(k)

    # peak of the branch running through each component: (level, -min vertex id)
    peak_level = np.empty(n_comp, dtype=np.float64)
    peak_tag = np.empty(n_comp, dtype=np.int64)  # min vertex id at the peak
    death = np.empty(n_comp, dtype=np.float64)

    # children before parents: higher levels first
    for k in sorted(range(n_comp), key=lambda k: -t.comp_level[k]):
        if not kids[k]:
            peak_level[k] = t.comp_level[k]
            peak_tag[k] = min(t.comp_members[k])
        else:
            best = max(kids[k], key=lambda c: (peak_level[c], -peak_tag[c]))
            peak_level[k] = peak_level[best]
            peak_tag[k] = peak_tag[best]

    # branch deaths, parents before children: losers die at the meeting
    # level, the winner dies wherever the parent's branch dies, and the
    # branch that reaches the root dies at the root level
    for k in sorted(range(n_comp), key=lambda k: t.comp_level[k]):
        if k == root:
            death[k] = t.comp_level[root]
        if kids[k]:
            winner = max(kids[k], key=lambda c: (peak_level[c], -peak_tag[c]))
            for c in kids[k]:
                death[c] = death[k] if c == winner else t.comp_level[k]

    out = np.zeros(t.n_vertices, dtype=np.float64)
    for v in range(t.n_vertices):
        comp = int(t.vertex_map[v])
        if member_rule == "first_appearance":
            out[v] = t.comp_level[comp] - death[comp]
        else:
            out[v] = peak_level[comp] - death[comp]
    return out


def aggregate_scores(h: Hierarchy, pers) -> ScoreMap:
    """Root-to-leaf cumulative persistence: agg(v) = pers(v) + agg(parent)."""
    pers = np.asarray(pers, dtype=np.float64)
    if len(pers) != h.n_nodes:
        raise ValueError(f"persistence length {len(pers)} != node count {h.n_nodes}")
    agg = np.empty(h.n_nodes, dtype=np.float64)
    agg[h.root] = pers[h.root]
    for node in range(h.n_nodes - 2, -1, -1):
        agg[node] = pers[node] + agg[h.parent[node]]
    scores = agg[:h.n_leaves].reshape(h.height, h.width)
    return ScoreMap(scores.astype(np.float32), hierarchy_kind=h.kind)
