"""Rooted trees: BFS neighbourhoods of graphs and multi-type Galton-Watson samples.

Trees are stored as arrays in BFS order.  Node 0 is the root, a parent
always precedes its children, and the children of a node occupy a
contiguous index range, so bottom-up passes can be done level by level.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from ._rng import derive_rng
from .model import stationary_distribution

RANDOM_STATIONARY = "stationary"


@dataclass(frozen=True, eq=False)
class LocalTree:
    parent: np.ndarray  # -1 at the root
    depth: np.ndarray
    depth_cap: int
    boundary: np.ndarray  # bool mask of flow sinks
    node_ids: np.ndarray  # graph node for each tree node
    labels: Optional[np.ndarray] = None  # true community labels
    prior: Optional[np.ndarray] = None  # observed labels, -1 if none
    dropped_edges: int = 0

    @property
    def size(self) -> int:
        return len(self.parent)

    @property
    def root(self) -> int:
        return 0

    @property
    def n_children(self) -> np.ndarray:
        return np.bincount(self.parent[1:], minlength=self.size)

    @property
    def first_child(self) -> np.ndarray:
        counts = self.n_children
        # children are contiguous and ordered like their parents
        return np.concatenate([[1], 1 + np.cumsum(counts)[:-1]]).astype(np.int64)

    def children(self, v: int) -> np.ndarray:
        lo = self.first_child[v]
        return np.arange(lo, lo + self.n_children[v])

    def levels(self) -> list:
        """Index ranges ``[start, stop)`` of each depth level, root first."""
        edges = np.searchsorted(self.depth, np.arange(self.depth.max() + 2))
        return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]

    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.n_children == 0)

    def with_prior(self, prior) -> "LocalTree":
        return replace(self, prior=np.asarray(prior, dtype=np.int64))

    def with_labels(self, labels) -> "LocalTree":
        return replace(self, labels=np.asarray(labels, dtype=np.int64))

    def with_boundary(self, boundary) -> "LocalTree":
        return replace(self, boundary=np.asarray(boundary, dtype=bool))

    def to_text(self) -> str:
        lines = []
        kids = self.first_child, self.n_children
        stack = [0]
        while stack:
            v = stack.pop()
            tag = f"{self.node_ids[v]}"
            if self.labels is not None:
                tag += f" label={self.labels[v]}"
            if self.prior is not None and self.prior[v] >= 0:
                tag += f" prior={self.prior[v]}"
            if self.boundary[v]:
                tag += " *"
            lines.append("  " * int(self.depth[v]) + tag)
            lo, cnt = kids[0][v], kids[1][v]
            stack.extend(range(lo + cnt - 1, lo - 1, -1))
        return "\n".join(lines)

    def to_dot(self) -> str:
        out = ["digraph tree {"]
        for v in range(self.size):
            shape = "doublecircle" if self.boundary[v] else "circle"
            out.append(f'  {v} [label="{self.node_ids[v]}", shape={shape}];')
        for v in range(1, self.size):
            out.append(f"  {self.parent[v]} -> {v};")
        out.append("}")
        return "\n".join(out)


def cap_boundary(depth, depth_cap, n_children=None, all_leaves=False):
    """Boundary mask: nodes at the depth cap, plus shallow leaves if requested."""
    mask = depth == depth_cap
    if all_leaves and n_children is not None:
        mask |= (n_children == 0) & (depth > 0)
    mask[0] = False
    return mask


def _finish(parent, depth, node_ids, depth_cap, boundary_mode, **kw):
    parent = np.asarray(parent, dtype=np.int64)
    depth = np.asarray(depth, dtype=np.int64)
    n_children = np.bincount(parent[1:], minlength=len(parent))
    boundary = cap_boundary(depth, depth_cap, n_children, boundary_mode == "all-leaves")
    return LocalTree(parent, depth, int(depth_cap), boundary, np.asarray(node_ids), **kw)


def extract_tree(graph, root: int, depth: int, prior=None, boundary: str = "cap") -> LocalTree:
    """BFS tree of radius ``depth`` around ``root``.

    A node joins the tree the first time it is reached; when several nodes of
    the same level reach it, the one with the lowest node id becomes its
    parent.  Edges that would close a cycle are dropped and counted in
    ``dropped_edges`` (edges among nodes at the cap itself are not examined).
    ``prior`` is an optional per-graph-node label array copied onto the tree.
    """
    adj = graph.adjacency_lists()
    order = [root]
    parent = [-1]
    depths = [0]
    pos = {root: 0}
    frontier = [0]
    dropped = 0.0
    for d in range(depth):
        owner = {}
        for t in sorted(frontier, key=lambda t: order[t]):
            u = order[t]
            pu = order[parent[t]] if parent[t] >= 0 else -1
            for v in adj[u]:
                if v == pu:
                    continue
                if v in pos or v in owner:
                    # counted from both sides when the other end is scanned too
                    scanned = depths[pos[v]] < depth if v in pos else d + 1 < depth
                    dropped += 0.5 if scanned else 1.0
                else:
                    owner[v] = t
        if not owner:
            break
        kids = {}
        for v, t in owner.items():
            kids.setdefault(t, []).append(v)
        nxt = []
        for t in frontier:
            for v in sorted(kids.get(t, ())):
                pos[v] = len(order)
                nxt.append(len(order))
                order.append(v)
                parent.append(t)
                depths.append(d + 1)
        frontier = nxt
    ids = np.asarray(order, dtype=np.int64)
    kw = {}
    if graph.truth is not None:
        kw["labels"] = graph.truth[ids]
    if prior is not None:
        kw["prior"] = np.asarray(prior)[ids]
    return _finish(parent, depths, ids, depth, boundary, dropped_edges=int(round(dropped)), **kw)


def _root_label(root_label, K, rng):
    if isinstance(root_label, str):
        if root_label != RANDOM_STATIONARY:
            raise ValueError(f"unknown root label option {root_label!r}")
        pi = stationary_distribution(K)
        return int(rng.choice(len(pi), p=pi))
    return int(root_label)


def sample_gw_forest(M, root_labels, depth: int, rng):
    """Grow one Poisson multi-type GW tree per entry of ``root_labels``.

    Returns ``(parent, depth, labels, tree_of)`` for the whole forest in
    level order; roots occupy the first ``len(root_labels)`` slots and have
    parent -1.  Children of a node are contiguous, grouped by type.
    """
    M = np.asarray(M, dtype=float)
    k = M.shape[0]
    labels = [np.asarray(root_labels, dtype=np.int64)]
    parents = [np.full(len(labels[0]), -1, dtype=np.int64)]
    offset = 0
    for _ in range(depth):
        cur = labels[-1]
        if cur.size == 0:
            break
        counts = rng.poisson(M[cur])  # (n_level, k)
        per_node = counts.sum(axis=1)
        types = np.repeat(np.tile(np.arange(k), len(cur)), counts.ravel())
        par = np.repeat(np.arange(len(cur)) + offset, per_node)
        offset += len(cur)
        labels.append(types)
        parents.append(par)
    lab = np.concatenate(labels)
    par = np.concatenate(parents)
    dep = np.concatenate([np.full(len(x), d, dtype=np.int64) for d, x in enumerate(labels)])
    tree_of = np.empty(len(lab), dtype=np.int64)
    nroots = len(labels[0])
    tree_of[:nroots] = np.arange(nroots)
    # parents precede children, so one vectorised pass per level suffices
    start = nroots
    for x in labels[1:]:
        stop = start + len(x)
        tree_of[start:stop] = tree_of[par[start:stop]]
        start = stop
    return par, dep, lab, tree_of


def sample_gw_tree(M, root_label, depth: int, seed: int) -> LocalTree:
    """Poisson multi-type Galton-Watson tree grown to ``depth`` generations.

    A node of type ``i`` has Poisson(``M[i, j]``) children of type ``j``,
    independently over ``j``.  ``root_label`` may be ``"stationary"`` to draw
    the root type from the stationary law of ``K = diag(M 1)^-1 M``.
    """
    M = np.asarray(M, dtype=float)
    rng = derive_rng(seed, 0x6A7)
    if isinstance(root_label, str):
        K = M / np.where(M.sum(1) > 0, M.sum(1), 1.0)[:, None]
        root_label = _root_label(root_label, K, rng)
    par, dep, lab, _ = sample_gw_forest(M, [root_label], depth, rng)
    return _finish(par, dep, np.arange(len(par)), depth, "cap", labels=lab)


def _draw_children(K_cum, parent_labels, rng):
    u = rng.random(parent_labels.shape)
    k = K_cum.shape[1]
    return np.minimum((u[..., None] > K_cum[parent_labels]).sum(axis=-1), k - 1)


def broadcast_batch(tree: LocalTree, K, root_labels, rng) -> np.ndarray:
    """Broadcast labels down a fixed tree once per root label.

    Returns an int array of shape ``(len(root_labels), tree.size)``.
    """
    K_cum = np.cumsum(np.asarray(K, dtype=float), axis=1)
    root_labels = np.asarray(root_labels, dtype=np.int64)
    out = np.empty((len(root_labels), tree.size), dtype=np.int64)
    out[:, 0] = root_labels
    for lo, hi in tree.levels()[1:]:
        out[:, lo:hi] = _draw_children(K_cum, out[:, tree.parent[lo:hi]], rng)
    return out


def broadcast_labels(tree: LocalTree, K, root_label, seed: int) -> LocalTree:
    """Assign labels top-down on a fixed tree by the Markov rule ``K``."""
    rng = derive_rng(seed, 0xB0AD)
    root_label = _root_label(root_label, K, rng)
    return tree.with_labels(broadcast_batch(tree, K, [root_label], rng)[0])


def coupling_radius(n: int, p0: float) -> int:
    """Depth up to which SBM neighbourhoods couple to the GW tree w.h.p."""
    return int(math.floor(math.log(n) / (4 * math.log(2 * n * p0 + 2 * math.log(n)))))


def tree_from_parents(parent, depth_cap=None, boundary: str = "cap", labels=None, prior=None) -> LocalTree:
    """Lay out an arbitrary rooted tree (``parent[0] == -1``) in BFS order.

    Children keep their original relative order.  ``depth_cap`` defaults to
    the tree height.  ``node_ids`` maps back to the input indices.
    """
    parent = np.asarray(parent, dtype=np.int64)
    n = len(parent)
    if n == 0 or parent[0] != -1 or np.any(parent[1:] < 0) or np.any(parent[1:] >= n):
        raise ValueError("parent must describe a tree rooted at node 0")
    kids = [[] for _ in range(n)]
    for v in range(1, n):
        kids[parent[v]].append(v)
    order, new_parent, depth = [0], [-1], [0]
    pos = {0: 0}
    i = 0
    while i < len(order):
        u = order[i]
        for v in kids[u]:
            pos[v] = len(order)
            order.append(v)
            new_parent.append(i)
            depth.append(depth[i] + 1)
        i += 1
    if len(order) != n:
        raise ValueError("parent array contains a cycle or unreachable nodes")
    ids = np.asarray(order, dtype=np.int64)
    cap = max(depth) if depth_cap is None else int(depth_cap)
    kw = {}
    if labels is not None:
        kw["labels"] = np.asarray(labels, dtype=np.int64)[ids]
    if prior is not None:
        kw["prior"] = np.asarray(prior, dtype=np.int64)[ids]
    return _finish(new_parent, depth, ids, cap, boundary, **kw)


def regular_tree(b: int, depth: int) -> LocalTree:
    """Complete ``b``-ary tree of the given depth."""
    sizes = [b**d for d in range(depth + 1)]
    parent = [-1]
    start = 0
    for d in range(1, depth + 1):
        parent.extend(np.repeat(np.arange(start, start + sizes[d - 1]), b).tolist())
        start += sizes[d - 1]
    dep = np.repeat(np.arange(depth + 1), sizes)
    return _finish(parent, dep, np.arange(len(parent)), depth, "cap")


def random_tree(size: int, rng, max_children: int = 4, depth_cap=None, boundary: str = "all-leaves") -> LocalTree:
    """Random recursive tree: each new node attaches to a uniformly chosen earlier node with room."""
    parent = [-1]
    n_kids = [0]
    for v in range(1, size):
        open_ = [u for u in range(v) if n_kids[u] < max_children]
        p = open_[int(rng.integers(len(open_)))]
        parent.append(p)
        n_kids[p] += 1
        n_kids.append(0)
    return tree_from_parents(parent, depth_cap, boundary)
