"""Poisson Galton-Watson broadcast trees.

A :class:`BroadcastTree` stores a *forest* of independent trees in one flat
arena so that Monte Carlo drivers can process many trees with array
operations.  Nodes are kept in global breadth-first order:

* the roots are nodes ``0 .. n_trees-1``;
* all nodes of depth ``k`` occupy ``level_offsets[k]:level_offsets[k+1]``;
* the children of a node are contiguous and appear in parent order, so the
  first child of node ``i`` is ``n_trees + sum(n_children[:i])``.

A single tree is simply a forest with ``n_trees == 1`` whose root is node 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import rng as rngmod
from .errors import DepthExceeded, EmptyCollection, InvalidRange, OutOfRange
from .model import as_noise
from .stats import mean_se, variance_bootstrap


@dataclass(frozen=True)
class TreeParams:
    pi: np.ndarray
    P: np.ndarray
    d: float
    max_depth: int = 0
    seed: Optional[int] = None

    @property
    def q(self):
        return len(self.pi)


def broadcast_params(model_or_pi, P=None, d=None):
    """Normalize ``Model`` or ``(pi, P, d)`` into ``(pi, P, d)`` arrays."""
    if P is None:
        m = model_or_pi
        return np.asarray(m.pi, float), np.asarray(m.P, float), float(m.d)
    return np.asarray(model_or_pi, float), np.asarray(P, float), float(d)


def _ro(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class BroadcastTree:
    parent: np.ndarray
    depth: np.ndarray
    sigma: np.ndarray
    n_children: np.ndarray
    level_offsets: np.ndarray
    params: TreeParams
    tau: Optional[np.ndarray] = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "parent", _ro(self.parent, np.int64))
        object.__setattr__(self, "depth", _ro(self.depth, np.int64))
        object.__setattr__(self, "sigma", _ro(self.sigma, np.int64))
        object.__setattr__(self, "n_children", _ro(self.n_children, np.int64))
        object.__setattr__(self, "level_offsets", _ro(self.level_offsets, np.int64))
        if self.tau is not None:
            tau = _ro(self.tau, np.int64)
            if tau.shape != self.sigma.shape:
                raise ValueError("tau must be given for every node or for none")
            object.__setattr__(self, "tau", tau)

    # -- structure -------------------------------------------------------
    @property
    def n_nodes(self):
        return self.parent.shape[0]

    @property
    def n_trees(self):
        return int(self.level_offsets[1])

    @property
    def q(self):
        return self.params.q

    @property
    def max_depth(self):
        return self.level_offsets.shape[0] - 2

    def level(self, k):
        """Node indices at depth ``k`` (empty past the sampled depth)."""
        if k < 0 or k > self.max_depth:
            return np.arange(0)
        return np.arange(self.level_offsets[k], self.level_offsets[k + 1])

    @property
    def levels(self):
        return [self.level(k) for k in range(self.max_depth + 1)]

    @property
    def first_child(self):
        fc = self._cache.get("first_child")
        if fc is None:
            fc = self.n_trees + np.concatenate(([0], np.cumsum(self.n_children)[:-1]))
            self._cache["first_child"] = fc
        return fc

    @property
    def tree_id(self):
        tid = self._cache.get("tree_id")
        if tid is None:
            tid = np.empty(self.n_nodes, dtype=np.int64)
            tid[: self.n_trees] = np.arange(self.n_trees)
            # parents precede children, so one pass in level order suffices
            for k in range(1, self.max_depth + 1):
                lv = self.level(k)
                tid[lv] = tid[self.parent[lv]]
            self._cache["tree_id"] = tid
        return tid

    def ancestors(self, nodes, target_depth):
        """Ancestor at ``target_depth`` of each node in ``nodes`` (all same depth)."""
        nodes = np.asarray(nodes, dtype=np.int64)
        if nodes.size == 0:
            return nodes
        steps = int(self.depth[nodes[0]]) - target_depth
        if steps < 0:
            raise InvalidRange("target depth is below the nodes' depth")
        for _ in range(steps):
            nodes = self.parent[nodes]
        return nodes

    def level_sizes(self):
        """``(n_trees, max_depth + 1)`` matrix of per-tree level sizes."""
        out = np.zeros((self.n_trees, self.max_depth + 1), dtype=np.int64)
        tid = self.tree_id
        for k in range(self.max_depth + 1):
            out[:, k] = np.bincount(tid[self.level(k)], minlength=self.n_trees)
        return out

    def root_labels(self):
        return self.sigma[: self.n_trees]

    def tree(self, t):
        """Extract tree ``t`` of the forest as a single-tree ``BroadcastTree``."""
        keep = np.flatnonzero(self.tree_id == t)
        return self._select(keep)

    def select(self, trees):
        """Sub-forest of the given tree indices (kept in the given order)."""
        trees = np.asarray(trees, dtype=np.int64)
        rank = np.full(self.n_trees, -1, dtype=np.int64)
        rank[trees] = np.arange(trees.size)
        r = rank[self.tree_id]
        keep = np.flatnonzero(r >= 0)
        order = np.lexsort((keep, r[keep], self.depth[keep]))
        return self._select(keep[order])

    def _select(self, keep):
        # keep must list a union of whole trees in a valid BFS order
        remap = np.full(self.n_nodes, -1, dtype=np.int64)
        remap[keep] = np.arange(keep.size)
        par = self.parent[keep]
        newpar = np.where(par >= 0, remap[np.maximum(par, 0)], -1)
        depth = self.depth[keep]
        offsets = np.searchsorted(depth, np.arange(self.max_depth + 2), side="left")
        return BroadcastTree(
            parent=newpar,
            depth=depth,
            sigma=self.sigma[keep],
            n_children=self.n_children[keep],
            level_offsets=offsets,
            params=self.params,
            tau=None if self.tau is None else self.tau[keep],
        )

    # -- construction ----------------------------------------------------
    @classmethod
    def from_parents(cls, parent, sigma, params, tau=None, max_depth=None):
        """Build a single tree from an arbitrary parent array (root has parent -1).

        Nodes are renumbered into breadth-first order (children in the order
        they appear in ``parent``), so BFS-ordered input keeps its numbering.
        """
        parent = np.asarray(parent, dtype=np.int64)
        sigma = np.asarray(sigma, dtype=np.int64)
        n = parent.size
        if sigma.shape != (n,) or (tau is not None and np.shape(tau) != (n,)):
            raise ValueError("sigma and tau must have one entry per node")
        roots = np.flatnonzero(parent < 0)
        if roots.size != 1:
            raise ValueError("exactly one root (parent -1) is required")
        children = [[] for _ in range(n)]
        for v in range(n):
            if parent[v] >= 0:
                children[parent[v]].append(v)
        order = [int(roots[0])]
        depth_old = np.zeros(n, dtype=np.int64)
        head = 0
        while head < len(order):
            u = order[head]
            head += 1
            for c in children[u]:
                depth_old[c] = depth_old[u] + 1
                order.append(c)
        if len(order) != n:
            raise ValueError("parent array does not describe a single connected tree")
        order = np.asarray(order)
        new = np.empty(n, dtype=np.int64)
        new[order] = np.arange(n)
        par = np.where(parent[order] >= 0, new[np.maximum(parent[order], 0)], -1)
        depth = depth_old[order]
        md = int(depth.max()) if max_depth is None else int(max_depth)
        if depth.max() > md:
            raise ValueError("tree deeper than max_depth")
        nch = np.bincount(par[1:], minlength=n) if n > 1 else np.zeros(1, np.int64)
        offsets = np.searchsorted(depth, np.arange(md + 2), side="left")
        if not isinstance(params, TreeParams):
            pi, P, d = broadcast_params(*params) if isinstance(params, tuple) else broadcast_params(params)
            params = TreeParams(pi=pi, P=P, d=d, max_depth=md)
        else:
            params = replace(params, max_depth=md)
        return cls(
            parent=par,
            depth=depth,
            sigma=sigma[order],
            n_children=nch,
            level_offsets=offsets,
            params=params,
            tau=None if tau is None else np.asarray(tau)[order],
        )

    # -- serialization -----------------------------------------------------
    def to_jsonl(self):
        tid = self.tree_id
        lines = []
        for i in range(self.n_nodes):
            rec = {
                "index": i,
                "parent": int(self.parent[i]),
                "depth": int(self.depth[i]),
                "sigma": int(self.sigma[i]),
                "tau": None if self.tau is None else int(self.tau[i]),
            }
            if self.n_trees > 1:
                rec["tree"] = int(tid[i])
            lines.append(json.dumps(rec))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text, params):
        recs = [json.loads(line) for line in text.splitlines() if line.strip()]
        recs.sort(key=lambda r: r["index"])
        parent = np.array([r["parent"] for r in recs], dtype=np.int64)
        depth = np.array([r["depth"] for r in recs], dtype=np.int64)
        sigma = np.array([r["sigma"] for r in recs], dtype=np.int64)
        taus = [r.get("tau") for r in recs]
        tau = None if any(t is None for t in taus) else np.array(taus, dtype=np.int64)
        n = parent.size
        n_roots = int(np.sum(parent < 0))
        nch = np.bincount(parent[parent >= 0], minlength=n)
        md = params.max_depth if isinstance(params, TreeParams) else int(depth.max())
        md = max(md, int(depth.max()))
        offsets = np.searchsorted(depth, np.arange(md + 2), side="left")
        if offsets[1] != n_roots:
            raise ValueError("records are not in breadth-first order")
        return cls(parent, depth, sigma, nch, offsets, params, tau)

    def same_as(self, other):
        """Structural and label equality (the determinism contract)."""
        def eq(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and bool(np.array_equal(a, b))

        return (
            eq(self.parent, other.parent)
            and eq(self.sigma, other.sigma)
            and eq(self.tau, other.tau)
            and eq(self.level_offsets, other.level_offsets)
        )


def stack_forests(forests):
    """Concatenate forests into one, preserving tree order."""
    forests = list(forests)
    if not forests:
        raise EmptyCollection("no forests to stack")
    md = max(f.max_depth for f in forests)
    has_tau = [f.tau is not None for f in forests]
    if any(has_tau) and not all(has_tau):
        raise ValueError("cannot stack forests with and without noisy labels")
    parent, depth, sigma, nch, tau = [], [], [], [], []
    # new index of each forest's nodes, level by level
    new_index = [np.empty(f.n_nodes, dtype=np.int64) for f in forests]
    pos = 0
    for k in range(md + 1):
        for f, ni in zip(forests, new_index):
            lv = f.level(k)
            ni[lv] = np.arange(pos, pos + lv.size)
            pos += lv.size
    offsets = [0]
    for k in range(md + 1):
        for f, ni in zip(forests, new_index):
            lv = f.level(k)
            p = f.parent[lv]
            parent.append(np.where(p >= 0, ni[np.maximum(p, 0)], -1))
            depth.append(f.depth[lv])
            sigma.append(f.sigma[lv])
            nch.append(f.n_children[lv])
            if f.tau is not None:
                tau.append(f.tau[lv])
        offsets.append(offsets[-1] + sum(f.level(k).size for f in forests))
    offsets.append(offsets[-1])
    p0 = forests[0].params
    return BroadcastTree(
        parent=np.concatenate(parent),
        depth=np.concatenate(depth),
        sigma=np.concatenate(sigma),
        n_children=np.concatenate(nch),
        level_offsets=np.array(offsets[: md + 2]),
        params=replace(p0, max_depth=md),
        tau=np.concatenate(tau) if tau else None,
    )


def _draw_labels(rng, cum, rows):
    u = rng.random(rows.shape[0])
    lab = np.zeros(rows.shape[0], dtype=np.int64)
    for c in range(cum.shape[1] - 1):
        lab += u >= cum[rows, c]
    return lab


def sample_forest(params, max_depth, n_trees, seed, root_label=None, rng=None):
    """Sample ``n_trees`` independent broadcast trees to depth ``max_depth``.

    ``params`` is a ``Model`` or a ``(pi, P, d)`` tuple.  With ``root_label``
    set, every root is given that label instead of a draw from ``pi``.
    """
    pi, P, d = broadcast_params(*params) if isinstance(params, tuple) else broadcast_params(params)
    if max_depth < 0:
        raise InvalidRange("max_depth must be nonnegative")
    if rng is None:
        rng = rngmod.stream(seed, "tree")
    q = len(pi)
    cumP = np.cumsum(P, axis=1)
    if root_label is None:
        roots = _draw_labels(rng, np.cumsum(pi)[None, :], np.zeros(n_trees, dtype=np.int64))
    else:
        if not 0 <= root_label < q:
            raise OutOfRange(f"root label {root_label} not in [0, {q})")
        roots = np.full(n_trees, root_label, dtype=np.int64)

    parents = [np.full(n_trees, -1, dtype=np.int64)]
    sigmas = [roots]
    counts = []
    offsets = [0, n_trees]
    for k in range(max_depth):
        cur = sigmas[-1]
        nk = rng.poisson(d, size=cur.shape[0]).astype(np.int64)
        counts.append(nk)
        par = np.repeat(np.arange(offsets[-2], offsets[-1]), nk)
        parents.append(par)
        sigmas.append(_draw_labels(rng, cumP, cur[par - offsets[-2]]))
        offsets.append(offsets[-1] + par.shape[0])
    counts.append(np.zeros(sigmas[-1].shape[0], dtype=np.int64))
    sigma = np.concatenate(sigmas)
    depth = np.repeat(np.arange(max_depth + 1), np.diff(offsets))
    return BroadcastTree(
        parent=np.concatenate(parents),
        depth=depth,
        sigma=sigma,
        n_children=np.concatenate(counts),
        level_offsets=np.array(offsets),
        params=TreeParams(pi=pi, P=P, d=d, max_depth=int(max_depth), seed=seed),
    )


def sample_tree(params, max_depth, seed, root_label=None):
    """A single broadcast tree, fully determined by ``seed``."""
    return sample_forest(params, max_depth, 1, seed, root_label=root_label)


def apply_noise(tree: BroadcastTree, delta, seed, rng=None):
    """Copy of ``tree`` with ``tau`` drawn from row ``Delta[sigma]`` at every node."""
    D = as_noise(delta).Delta
    if rng is None:
        rng = rngmod.stream(seed, "noise")
    tau = _draw_labels(rng, np.cumsum(D, axis=1), tree.sigma)
    return replace(tree, tau=tau, _cache=dict(tree._cache))


@dataclass(frozen=True)
class LevelSummary:
    k: int
    mean: float
    variance: float
    se_mean: float
    se_variance: float
    n_trees: int


def level_statistics(trees, k, seed=0, n_boot=200):
    """Mean and unbiased variance of ``|L_k|`` over a forest or list of forests.

    ``se_variance`` is a bootstrap standard error (0 when all sizes agree).
    """
    if isinstance(trees, BroadcastTree):
        trees = [trees]
    trees = list(trees)
    if not trees or sum(t.n_trees for t in trees) == 0:
        raise EmptyCollection("no trees supplied")
    sizes = []
    for t in trees:
        if k > t.max_depth:
            raise DepthExceeded(f"level {k} beyond sampled depth {t.max_depth}")
        sizes.append(np.bincount(t.tree_id[t.level(k)], minlength=t.n_trees))
    sizes = np.concatenate(sizes).astype(float)
    m, se = mean_se(sizes)
    if sizes.size < 2:
        return LevelSummary(k, m, 0.0, 0.0, 0.0, 1)
    var, se_var = variance_bootstrap(sizes, rngmod.stream(seed, "bootstrap", k), n_boot)
    return LevelSummary(k, m, var, se, se_var, sizes.size)


def count_leaf_paths(tree: BroadcastTree, ell, k, ordered=True):
    """Per-tree number of depth-``k`` leaf pairs at tree distance ``2 ell``.

    Two depth-``k`` nodes are at distance ``2 ell`` exactly when they share
    their depth-``(k-ell)`` ancestor but not their depth-``(k-ell+1)`` one.
    Grouping by each ancestor gives ``sum A^2 - sum B^2`` ordered pairs.
    Ordered pairs are counted by default, which is the convention whose mean
    is ``d^(k+ell)``; ``ordered=False`` halves it.
    """
    if ell < 1 or ell > k:
        raise InvalidRange(f"need 1 <= ell <= k, got ell={ell}, k={k}")
    if k > tree.max_depth:
        raise DepthExceeded(f"level {k} beyond sampled depth {tree.max_depth}")
    leaves = tree.level(k)
    tid = tree.tree_id
    out = np.zeros(tree.n_trees, dtype=np.int64)
    if leaves.size == 0:
        return out
    anc_top = tree.ancestors(leaves, k - ell)
    anc_low = tree.ancestors(leaves, k - ell + 1)
    for anc, sign in ((anc_top, 1), (anc_low, -1)):
        ids, cnt = np.unique(anc, return_counts=True)
        out += sign * np.bincount(tid[ids], weights=cnt.astype(float) ** 2,
                                  minlength=tree.n_trees).astype(np.int64)
    return out if ordered else out // 2


def one_hot(label, q):
    """Indicator vector of ``label`` (0-based) in ``R^q``."""
    if not isinstance(label, (int, np.integer)) or not 0 <= label < q:
        raise OutOfRange(f"label {label!r} not in [0, {q})")
    v = np.zeros(q)
    v[label] = 1.0
    return v
