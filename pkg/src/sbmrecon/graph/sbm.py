"""Sparse block-model graphs, their text formats and breadth-first balls."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .. import rng as rngmod
from ..errors import ProbabilityOverflow
from ..tree import BroadcastTree, TreeParams


@dataclass(frozen=True, eq=False)
class SbmInstance:
    """Undirected simple graph in CSR form plus the planted labels."""

    n: int
    q: int
    indptr: np.ndarray
    indices: np.ndarray
    truth: np.ndarray
    seed: Optional[int] = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for name in ("indptr", "indices", "truth"):
            a = np.ascontiguousarray(getattr(self, name), dtype=np.int64)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    def adj(self, v):
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    @property
    def degrees(self):
        return np.diff(self.indptr)

    @property
    def n_edges(self):
        return int(self.indices.size // 2)

    def edges(self):
        """``(m, 2)`` array of edges ``u < v`` in lexicographic order."""
        src = np.repeat(np.arange(self.n), self.degrees)
        keep = src < self.indices
        return np.stack([src[keep], self.indices[keep]], axis=1)

    def matrix(self):
        """Adjacency as a ``scipy.sparse.csr_matrix`` (cached)."""
        A = self._cache.get("A")
        if A is None:
            from scipy.sparse import csr_matrix

            data = np.ones(self.indices.size)
            A = csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))
            self._cache["A"] = A
        return A

    # -- text formats ------------------------------------------------------
    def to_edge_list(self):
        lines = [f"{self.n} {self.q}"]
        lines += [f"{u} {v}" for u, v in self.edges()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_edge_list(cls, text, truth=None, seed=None):
        rows = [line.split() for line in text.splitlines() if line.strip()]
        n, q = int(rows[0][0]), int(rows[0][1])
        e = np.array([[int(a), int(b)] for a, b in rows[1:]], dtype=np.int64).reshape(-1, 2)
        if truth is None:
            truth = np.zeros(n, dtype=np.int64)
        return from_edges(n, q, e, truth, seed)


def labels_to_text(labels):
    return "".join(f"{int(x)}\n" for x in labels)


def labels_from_text(text):
    return np.array([int(x) for x in text.split()], dtype=np.int64)


def from_edges(n, q, edges, truth, seed=None):
    """Build an instance from an edge array; duplicates and self-loops are dropped."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    edges = edges[edges[:, 0] != edges[:, 1]]
    u = np.concatenate([edges[:, 0], edges[:, 1]])
    v = np.concatenate([edges[:, 1], edges[:, 0]])
    key = np.unique(u * n + v)
    u, v = key // n, key % n
    indptr = np.concatenate(([0], np.cumsum(np.bincount(u, minlength=n))))
    return SbmInstance(n=n, q=q, indptr=indptr, indices=v, truth=truth, seed=seed)


def _skip_positions(rng, p, total):
    """Sorted positions in ``[0, total)`` kept independently with probability ``p``."""
    if p <= 0 or total <= 0:
        return np.zeros(0, dtype=np.int64)
    if p >= 1:
        return np.arange(total, dtype=np.int64)
    mean = total * p
    chunk = int(mean + 6 * math.sqrt(mean) + 16)
    parts = []
    last = -1
    while True:
        gaps = rng.geometric(p, size=chunk)
        pos = last + np.cumsum(gaps)
        parts.append(pos[pos < total])
        if pos[-1] >= total:
            break
        last = int(pos[-1])
    return np.concatenate(parts)


def _triangle_pairs(idx):
    """Map ``idx`` enumerating pairs ``i < j`` (ordered by ``j``) to ``(i, j)``."""
    j = np.floor((1 + np.sqrt(1 + 8 * idx.astype(float))) / 2).astype(np.int64)
    # correct float rounding either way
    j -= (j * (j - 1) // 2) > idx
    j += ((j + 1) * j // 2) <= idx
    i = idx - j * (j - 1) // 2
    return i, j


def sample_sbm(spec, seed) -> SbmInstance:
    """Sample a block-model graph with ``Pr(edge) = Q_scaled[a, b] / n``.

    Edges of each block pair are generated by geometric skipping over the
    candidate pairs, so the cost is proportional to the number of edges.
    """
    n, q = spec.n, spec.q
    Q = np.asarray(spec.Q_scaled, dtype=float)
    if np.any(Q / n > 1):
        raise ProbabilityOverflow(f"Q_scaled / n exceeds 1 for n={n}")
    g = rngmod.stream(seed, "sbm")
    cum = np.cumsum(spec.pi)
    truth = np.minimum(np.searchsorted(cum, g.random(n), side="right"), q - 1)
    members = [np.flatnonzero(truth == c) for c in range(q)]
    us, vs = [], []
    for a in range(q):
        for b in range(a, q):
            p = Q[a, b] / n
            ma, mb = members[a], members[b]
            if a == b:
                total = ma.size * (ma.size - 1) // 2
                pos = _skip_positions(g, p, total)
                i, j = _triangle_pairs(pos)
                us.append(ma[i])
                vs.append(ma[j])
            else:
                pos = _skip_positions(g, p, ma.size * mb.size)
                us.append(ma[pos // mb.size])
                vs.append(mb[pos % mb.size])
    e = np.stack([np.concatenate(us), np.concatenate(vs)], axis=1) if us else np.zeros((0, 2))
    return from_edges(n, q, e, truth, seed)


@dataclass(frozen=True, eq=False)
class Ball:
    """Breadth-first ball; ``members`` are in BFS order with children grouped by parent."""

    center: int
    radius: int
    members: np.ndarray
    dist: np.ndarray
    parent_pos: np.ndarray
    n_edges: int

    @property
    def boundary(self):
        """Members at distance exactly ``radius``; empty for the radius-0 ball."""
        if self.radius == 0:
            return self.members[:0]
        return self.members[self.dist == self.radius]

    @property
    def is_tree_like(self):
        return self.n_edges == self.members.size - 1

    def inner(self, r):
        """Members within distance ``r`` of the centre."""
        return self.members[self.dist <= r]

    def as_tree(self, pi, P, d, sigma, tau=None):
        """The BFS tree of the ball as a single ``BroadcastTree``.

        Edges that close cycles are dropped; each vertex keeps only the edge
        to the vertex that discovered it.  ``sigma``/``tau`` are indexed by
        vertex and read at the members.
        """
        m = self.members.size
        nch = np.bincount(self.parent_pos[1:], minlength=m) if m > 1 else np.zeros(1, np.int64)
        offsets = np.searchsorted(self.dist, np.arange(self.radius + 2), side="left")
        return BroadcastTree(
            parent=self.parent_pos,
            depth=self.dist,
            sigma=np.asarray(sigma)[self.members],
            n_children=nch,
            level_offsets=offsets,
            params=TreeParams(pi=np.asarray(pi, float), P=np.asarray(P, float), d=float(d),
                              max_depth=self.radius),
            tau=None if tau is None else np.asarray(tau)[self.members],
        )


def _gather(g: SbmInstance, frontier):
    starts = g.indptr[frontier]
    lens = g.indptr[frontier + 1] - starts
    total = int(lens.sum())
    if total == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    owner = np.repeat(np.arange(frontier.size), lens)
    offs = np.arange(total) - np.repeat(np.cumsum(lens) - lens, lens)
    return g.indices[starts[owner] + offs], owner


def ball(g: SbmInstance, v, R) -> Ball:
    """Ball of radius ``R`` around ``v`` with exact BFS distances."""
    if R < 0:
        raise ValueError("radius must be nonnegative")
    members = [np.array([v], dtype=np.int64)]
    parents = [np.array([-1], dtype=np.int64)]
    visited = np.zeros(g.n, dtype=bool)
    visited[v] = True
    base = 0
    frontier = members[0]
    for _ in range(R):
        nb, owner = _gather(g, frontier)
        fresh = ~visited[nb]
        nb, owner = nb[fresh], owner[fresh]
        if nb.size == 0:
            break
        # first discovery wins: owners are in BFS order, so sort by (owner, vertex)
        order = np.lexsort((nb, owner))
        nb, owner = nb[order], owner[order]
        _, first = np.unique(nb, return_index=True)
        first.sort()
        nb, owner = nb[first], owner[first]
        visited[nb] = True
        parents.append(base + owner)
        members.append(nb)
        base += frontier.size
        frontier = nb
    mem = np.concatenate(members)
    dist = np.concatenate([np.full(a.size, k, dtype=np.int64) for k, a in enumerate(members)])
    # induced edges: each counted from both endpoints
    nb, _ = _gather(g, mem)
    n_edges = int(visited[nb].sum() // 2)
    return Ball(center=int(v), radius=int(R), members=mem, dist=dist,
                parent_pos=np.concatenate(parents), n_edges=n_edges)
