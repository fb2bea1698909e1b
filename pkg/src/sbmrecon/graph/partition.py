"""Initial spectral partitioner, label alignment and overlap accuracy."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.cluster import KMeans

from .. import rng as rngmod
from .sbm import SbmInstance

EXHAUSTIVE_MAX_Q = 8


@dataclass(frozen=True, eq=False)
class Partition:
    """Community assignment; ``-1`` marks vertices left out of the call."""

    labels: np.ndarray
    source: str
    q: int
    diagnostics: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        a = np.array(self.labels, dtype=np.int64)
        a.setflags(write=False)
        object.__setattr__(self, "labels", a)
        if np.any(a >= self.q) or np.any(a < -1):
            raise ValueError("labels must lie in [0, q) (or -1 for excluded vertices)")

    @property
    def n(self):
        return self.labels.size

    def permuted(self, perm):
        perm = np.asarray(perm, dtype=np.int64)
        lab = np.where(self.labels >= 0, perm[np.maximum(self.labels, 0)], -1)
        return Partition(lab, self.source, self.q, self.diagnostics)


@dataclass(frozen=True)
class Embedding:
    """Leading adjacency subspace and k-means centroids, reused as a warm start."""

    vectors: np.ndarray
    centroids: np.ndarray


def _subspace(A, keep, V, n_iter):
    """Block power iteration on ``D_keep A D_keep`` followed by Rayleigh-Ritz."""
    for _ in range(n_iter):
        W = keep[:, None] * (A @ (keep[:, None] * V))
        V, _ = np.linalg.qr(W)
    W = keep[:, None] * (A @ (keep[:, None] * V))
    H = V.T @ W
    theta, Y = np.linalg.eigh(0.5 * (H + H.T))
    order = np.argsort(-np.abs(theta), kind="stable")
    return V @ Y[:, order], theta[order]


def _rebalance(labels, dist, target):
    """Move lowest-margin vertices out of over-full clusters until sizes hit ``target``."""
    labels = labels.copy()
    q = dist.shape[1]
    sizes = np.bincount(labels, minlength=q)
    if np.all(sizes <= target):
        return labels
    own = dist[np.arange(labels.size), labels]
    cost = dist - own[:, None]
    over = sizes > target
    cand_v, cand_c = np.nonzero(over[labels][:, None] & ~over[None, :])
    order = np.argsort(cost[cand_v, cand_c], kind="stable")
    moved = np.zeros(labels.size, dtype=bool)
    for t in order:
        v, c = cand_v[t], cand_c[t]
        src = labels[v]
        if moved[v] or sizes[src] <= target[src] or sizes[c] >= target[c]:
            continue
        labels[v] = c
        sizes[src] -= 1
        sizes[c] += 1
        moved[v] = True
        if np.all(sizes <= target):
            break
    return labels


def _targets(pi, m):
    t = np.floor(np.asarray(pi) * m).astype(np.int64)
    rem = m - t.sum()
    frac = np.asarray(pi) * m - t
    t[np.argsort(-frac, kind="stable")[:rem]] += 1
    return t


def black_box_partition(g: SbmInstance, q, seed, pi=None, exclude=None, warm: Embedding = None,
                        n_iter=60, warm_iter=8, n_init=20, rebalance=True):
    """Spectral stand-in for the initial partitioner.

    Leading ``q`` eigenvectors of the adjacency matrix (restricted to the
    vertices not in ``exclude``) are found by block power iteration, their
    rows are clustered by k-means, clusters are matched to communities by
    size, and the lowest-margin vertices are moved until community sizes
    follow ``pi``.  With ``warm`` the iteration and k-means restart from a
    previous call's subspace and centroids.  ``diagnostics['embedding']``
    holds the warm-start state of this call.
    """
    n = g.n
    pi = np.full(q, 1.0 / q) if pi is None else np.asarray(pi, float)
    keep = np.ones(n)
    if exclude is not None:
        keep[np.asarray(exclude, dtype=np.int64)] = 0.0
    kept = keep > 0
    A = g.matrix()
    if warm is None:
        V0 = rngmod.stream(seed, "blackbox-start").standard_normal((n, q))
        V, _ = _subspace(A, keep, np.linalg.qr(V0)[0], n_iter)
        km = KMeans(n_clusters=q, n_init=n_init,
                    random_state=rngmod.child_seed(seed, "kmeans") % (2**32))
    else:
        V, _ = _subspace(A, keep, warm.vectors, warm_iter)
        # keep the orientation of the previous subspace so centroids still apply
        s = np.sign(np.sum(V * warm.vectors, axis=0))
        V = V * np.where(s == 0, 1.0, s)[None, :]
        km = KMeans(n_clusters=q, init=warm.centroids, n_init=1)
    X = V[kept] * np.sqrt(n)
    km.fit(X)
    lab = km.labels_
    dist = ((X[:, None, :] - km.cluster_centers_[None, :, :]) ** 2).sum(axis=2)
    # largest cluster -> most likely community
    sizes = np.bincount(lab, minlength=q)
    cl_order = np.argsort(-sizes, kind="stable")
    com_order = np.argsort(-pi, kind="stable")
    relabel = np.empty(q, dtype=np.int64)
    relabel[cl_order] = com_order
    lab = relabel[lab]
    dist = dist[:, np.argsort(relabel)]
    centroids = km.cluster_centers_
    if rebalance:
        lab = _rebalance(lab, dist, _targets(pi, lab.size))
    labels = np.full(n, -1, dtype=np.int64)
    labels[kept] = lab
    emb = Embedding(vectors=V, centroids=centroids)
    return Partition(labels, "black-box", q, {"embedding": emb})


def confusion(reference, candidate, q, restrict_to=None):
    """``C[a, b]`` = vertices with candidate label ``a`` and reference label ``b``."""
    ref = np.asarray(getattr(reference, "labels", reference))
    cand = np.asarray(getattr(candidate, "labels", candidate))
    mask = (ref >= 0) & (cand >= 0)
    if restrict_to is not None:
        r = np.zeros(ref.size, dtype=bool)
        r[np.asarray(restrict_to, dtype=np.int64)] = True
        mask &= r
    C = np.zeros((q, q), dtype=np.int64)
    np.add.at(C, (cand[mask], ref[mask]), 1)
    return C


def best_permutation(C, method=None):
    """Permutation ``perm`` maximizing ``sum_a C[a, perm[a]]``.

    Exhaustive search (lexicographically first optimum) up to
    ``EXHAUSTIVE_MAX_Q`` labels, Hungarian assignment beyond.
    """
    q = C.shape[0]
    if method is None:
        method = "exhaustive" if q <= EXHAUSTIVE_MAX_Q else "hungarian"
    if method == "hungarian":
        rows, cols = linear_sum_assignment(C, maximize=True)
        perm = np.empty(q, dtype=np.int64)
        perm[rows] = cols
        return perm
    best, best_val = None, None
    idx = np.arange(q)
    for p in itertools.permutations(range(q)):
        val = C[idx, p].sum()
        if best_val is None or val > best_val:
            best, best_val = p, val
    return np.array(best, dtype=np.int64)


def align_partitions(reference, candidate, restrict_to=None, method=None):
    """Permutation mapping candidate labels onto the reference (``perm[candidate]``)."""
    q = reference.q
    return best_permutation(confusion(reference, candidate, q, restrict_to), method)


def overlap_accuracy(est, truth):
    """Fraction of vertices labelled correctly under the best relabelling of ``est``."""
    q = max(est.q, truth.q)
    perm = best_permutation(confusion(truth.labels, est.labels, q))
    lab = est.labels
    mapped = np.where(lab >= 0, perm[np.maximum(lab, 0)], -1)
    return float(np.mean(mapped == truth.labels))
