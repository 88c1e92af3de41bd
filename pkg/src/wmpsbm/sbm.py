"""Graph container, SBM sampler, side information and dataset loaders."""
from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from ._rng import derive_rng
from .errors import InvalidParams, ParseError, UnknownNode
from .model import SbmParams


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected simple graph in CSR form with sorted neighbour lists.

    Nodes are ``0..n-1``; ``node_ids`` keeps the identifiers used in the
    source file (or ``0..n-1`` for sampled graphs).
    """

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    truth: Optional[np.ndarray] = None
    node_ids: Optional[np.ndarray] = None
    _adj: list = field(default=None, repr=False, compare=False)

    @classmethod
    def from_edges(cls, n, edges, truth=None, node_ids=None) -> "Graph":
        """Build from an ``(m, 2)`` edge array; drops loops and duplicates, ignores direction."""
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= n):
            raise InvalidParams("edge endpoint out of range")
        e = e[e[:, 0] != e[:, 1]]
        both = np.concatenate([e, e[:, ::-1]])
        keys = np.unique(both[:, 0] * n + both[:, 1])
        rows, cols = keys // n, keys % n
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
        if truth is not None:
            truth = np.asarray(truth, dtype=np.int64)
        if node_ids is None:
            node_ids = np.arange(n)
        return cls(n, indptr, cols.astype(np.int64), truth, np.asarray(node_ids))

    @property
    def n_edges(self) -> int:
        return len(self.indices) // 2

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def edges(self) -> np.ndarray:
        """Each undirected edge once, as ``(u, v)`` with ``u < v``."""
        rows = np.repeat(np.arange(self.n), self.degrees())
        keep = rows < self.indices
        return np.column_stack([rows[keep], self.indices[keep]])

    def adjacency_lists(self) -> list:
        """Neighbour lists as plain Python lists (cached; used by BFS)."""
        if self._adj is None:
            flat = self.indices.tolist()
            ptr = self.indptr.tolist()
            object.__setattr__(self, "_adj", [flat[ptr[v]:ptr[v + 1]] for v in range(self.n)])
        return self._adj

    def to_sparse(self) -> csr_matrix:
        data = np.ones(len(self.indices))
        return csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))

    def with_truth(self, truth) -> "Graph":
        return Graph(self.n, self.indptr, self.indices, np.asarray(truth, dtype=np.int64), self.node_ids)

    def subgraph(self, nodes) -> "Graph":
        """Induced subgraph on ``nodes`` (sorted), relabelled ``0..len(nodes)-1``."""
        nodes = np.unique(np.asarray(nodes, dtype=np.int64))
        remap = np.full(self.n, -1, dtype=np.int64)
        remap[nodes] = np.arange(len(nodes))
        e = self.edges()
        e = remap[e]
        e = e[(e >= 0).all(axis=1)]
        truth = None if self.truth is None else self.truth[nodes]
        return Graph.from_edges(len(nodes), e, truth, self.node_ids[nodes])


# -- side information ---------------------------------------------------------

@dataclass(frozen=True)
class SideInfoMode:
    kind: str  # "noisy" or "partial"
    delta: float

    def __post_init__(self):
        if self.kind not in ("noisy", "partial"):
            raise InvalidParams(f"unknown side-information mode {self.kind!r}")
        if not 0 < self.delta < 1:
            raise InvalidParams("delta must lie in (0, 1)")

    @classmethod
    def noisy(cls, delta: float) -> "SideInfoMode":
        return cls("noisy", delta)

    @classmethod
    def partial(cls, delta: float) -> "SideInfoMode":
        return cls("partial", delta)

    def agreement(self, k: int) -> float:
        """Probability that a (possibly coin-flipped) prior label equals the truth."""
        return self.delta + (1 - self.delta) / k


@dataclass(frozen=True)
class SideInfo:
    mode: SideInfoMode
    prior: np.ndarray  # -1 where no label is available
    seed: int

    @property
    def revealed(self) -> np.ndarray:
        return self.prior >= 0


def make_side_info(truth, mode: SideInfoMode, k: int, seed: int) -> SideInfo:
    truth = np.asarray(truth, dtype=np.int64)
    if k < 2:
        raise InvalidParams("side information needs k >= 2")
    rng = derive_rng(seed, 0x51DE)
    u = rng.random(truth.shape)
    if mode.kind == "noisy":
        keep = u < mode.agreement(k)
        wrong = (truth + rng.integers(1, k, size=truth.shape)) % k
        prior = np.where(keep, truth, wrong)
    else:
        prior = np.where(u < mode.delta, truth, -1)
    prior.setflags(write=False)
    return SideInfo(mode, prior, int(seed))


# -- SBM sampling ---------------------------------------------------------------

def _triangle_pairs(p, s):
    """Decode row-major indices over pairs ``i < j < s`` into ``(i, j)``."""
    p = np.asarray(p, dtype=np.int64)
    b = 2 * s - 1
    i = np.floor((b - np.sqrt(np.maximum(b * b - 8.0 * p, 0.0))) / 2).astype(np.int64)
    start = lambda r: r * (2 * s - r - 1) // 2  # noqa: E731
    for _ in range(3):
        i = np.where(start(i) > p, i - 1, i)
        i = np.where(start(i + 1) <= p, i + 1, i)
    j = p - start(i) + i + 1
    return i, j


def sample_graph(params: SbmParams, seed: int) -> Graph:
    """Draw a graph from the SBM; labels are assigned by block fill.

    Each block pair gets its own random stream keyed by the pair, so the
    result does not depend on the order blocks are visited.  Within a block
    the edge count is binomial and the edge positions are a uniform subset,
    which is equivalent to independent Bernoulli draws per pair.
    """
    offsets = np.concatenate([[0], np.cumsum(params.N)])
    chunks = []
    for a in range(params.k):
        for b in range(a, params.k):
            p = float(params.Q[a, b])
            sa, sb = int(params.N[a]), int(params.N[b])
            pairs = sa * (sa - 1) // 2 if a == b else sa * sb
            if p <= 0 or pairs == 0:
                continue
            rng = derive_rng(seed, a, b)
            m = int(rng.binomial(pairs, p))
            idx = np.sort(rng.choice(pairs, size=m, replace=False))
            if a == b:
                i, j = _triangle_pairs(idx, sa)
            else:
                i, j = idx // sb, idx % sb
            chunks.append(np.column_stack([i + offsets[a], j + offsets[b]]))
    edges = np.concatenate(chunks) if chunks else np.empty((0, 2), dtype=np.int64)
    return Graph.from_edges(params.n, edges, params.labels())


# -- loaders ----------------------------------------------------------------------

def _from_id_pairs(pairs, extra_ids=()) -> Graph:
    ids = np.unique(np.concatenate([np.asarray(pairs, dtype=np.int64).ravel(),
                                    np.asarray(list(extra_ids), dtype=np.int64)]))
    e = np.searchsorted(ids, np.asarray(pairs, dtype=np.int64).reshape(-1, 2))
    return Graph.from_edges(len(ids), e, node_ids=ids)


def load_edge_list(path) -> Graph:
    """Whitespace-separated integer pairs; ``#`` starts a comment."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) < 2:
                raise ParseError(f"expected two node ids, got {line!r}", lineno)
            try:
                pairs.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise ParseError(f"non-integer node id in {line!r}", lineno) from None
    return _from_id_pairs(np.array(pairs, dtype=np.int64).reshape(-1, 2))


_GML_TOKEN = re.compile(r'\s*(?:(\[)|(\])|"([^"]*)"|([^\s\[\]"]+))')


def _gml_tokens(text):
    pos, line = 0, 1
    while pos < len(text):
        m = _GML_TOKEN.match(text, pos)
        if not m or m.end() == pos:
            if text[pos:].strip():
                raise ParseError(f"unexpected character {text[pos]!r}", line)
            return
        line += text.count("\n", pos, m.end())
        pos = m.end()
        if m.group(1):
            yield "[", line
        elif m.group(2):
            yield "]", line
        elif m.group(3) is not None:
            yield ("str", m.group(3)), line
        else:
            yield ("atom", m.group(4)), line


def _gml_parse(text):
    """Parse GML into nested lists of ``(key, value)`` pairs."""
    stack = [[]]
    key = None
    for tok, line in _gml_tokens(text):
        if tok == "[":
            if key is None:
                raise ParseError("list without a key", line)
            new = []
            stack[-1].append((key, new))
            stack.append(new)
            key = None
        elif tok == "]":
            if key is not None or len(stack) == 1:
                raise ParseError("unbalanced ']'", line)
            stack.pop()
        elif key is None:
            if tok[0] != "atom":
                raise ParseError(f"expected a key, got string {tok[1]!r}", line)
            key = tok[1]
        else:
            stack[-1].append((key, tok[1]))
            key = None
    if len(stack) != 1 or key is not None:
        raise ParseError("unexpected end of file")
    return stack[0]


def load_gml(path) -> Graph:
    """Minimal GML reader: node ``id``/``value`` and edge ``source``/``target``.

    If every node carries a ``value``, the distinct values (sorted) become the
    truth labels ``0..k-1``.
    """
    items = _gml_parse(Path(path).read_text(encoding="utf-8", errors="replace"))
    graphs = [v for k, v in items if k == "graph" and isinstance(v, list)]
    if not graphs:
        raise ParseError("no graph block")
    ids, values, pairs = [], {}, []
    for key, body in graphs[0]:
        if not isinstance(body, list):
            continue
        attrs = dict((k, v) for k, v in body if not isinstance(v, list))
        try:
            if key == "node":
                nid = int(attrs["id"])
                ids.append(nid)
                if "value" in attrs:
                    values[nid] = attrs["value"]
            elif key == "edge":
                pairs.append((int(attrs["source"]), int(attrs["target"])))
        except (KeyError, ValueError) as exc:
            raise ParseError(f"bad {key} block: {exc}") from None
    g = _from_id_pairs(np.array(pairs, dtype=np.int64).reshape(-1, 2), ids)
    if ids and len(values) == len(ids):
        vals = [values[int(i)] for i in g.node_ids]
        levels = sorted(set(vals), key=lambda s: (float(s) if _is_number(s) else float("inf"), s))
        g = g.with_truth([levels.index(v) for v in vals])
    return g


def _is_number(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def attach_labels(graph: Graph, path) -> Graph:
    """Attach truth labels from a ``node,label`` CSV (header row optional)."""
    lookup = {int(nid): i for i, nid in enumerate(graph.node_ids)}
    truth = np.full(graph.n, -1, dtype=np.int64)
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            if len(row) < 2:
                raise ParseError("expected node,label", lineno)
            try:
                node, label = int(row[0]), int(row[1])
            except ValueError:
                if lineno == 1:
                    continue  # header
                raise ParseError(f"non-integer field in {row!r}", lineno) from None
            if node not in lookup:
                raise UnknownNode(f"line {lineno}: node {node} is not in the graph")
            truth[lookup[node]] = label
    return graph.with_truth(truth)


def restrict_to_largest_component(graph: Graph) -> Graph:
    _, comp = connected_components(graph.to_sparse(), directed=False)
    sizes = np.bincount(comp)
    # ties go to the component holding the smallest node index
    best = comp[np.flatnonzero(sizes[comp] == sizes.max())[0]]
    return graph.subgraph(np.flatnonzero(comp == best))


def write_edge_list(graph: Graph, path) -> None:
    ids = graph.node_ids
    with open(path, "w", encoding="utf-8") as fh:
        for u, v in graph.edges():
            fh.write(f"{ids[u]} {ids[v]}\n")


def write_labels(graph: Graph, labels, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node", "label"])
        for nid, lab in zip(graph.node_ids, labels):
            w.writerow([int(nid), int(lab)])
