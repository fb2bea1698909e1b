"""Noise-matrix estimation and black-box amplification by local belief propagation."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .. import rng as rngmod
from ..errors import (
    ConfigInvalid,
    DegenerateLeafPrior,
    DegenerateRadius,
    MissingCommunityRepresentative,
    RadiusTooSmall,
    SingularP,
)
from ..estimators import bp_posterior_noisy_batch
from ..model import DET_FLOOR, NoiseMatrix, check_conditions
from .partition import Partition, align_partitions, black_box_partition
from .sbm import SbmInstance, ball


def coupling_radius(n, Q_scaled):
    """``floor(log n / (10 log(2 max Q_scaled)))`` with intensities at degree scale."""
    if n < 2:
        raise ValueError("n must be at least 2")
    mx = float(np.max(Q_scaled))
    if mx <= 0.5:
        raise DegenerateRadius(f"max Q_scaled = {mx} <= 1/2 makes the radius undefined")
    R = math.floor(math.log(n) / (10.0 * math.log(2.0 * mx)))
    if R < 1:
        raise DegenerateRadius(f"radius formula gives {R} < 1 for n={n}; pass R explicitly")
    return R


def project_simplex(v):
    """Euclidean projection of each row of ``v`` onto the probability simplex."""
    v = np.atleast_2d(np.asarray(v, dtype=float))
    u = -np.sort(-v, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    ind = np.arange(1, v.shape[1] + 1)
    cond = u - css / ind > 0
    rho = v.shape[1] - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(v.shape[0]), rho] / (rho + 1)
    return np.maximum(v - theta[:, None], 0.0)


def degree_target(n):
    """Degree ``(1/4) log n / log log n`` sought for representatives."""
    return 0.25 * math.log(n) / math.log(math.log(n))


@dataclass(frozen=True)
class NoiseEstimationConfig:
    seed: int = 0
    U: Optional[np.ndarray] = None
    n_candidates: Optional[int] = None


def draw_U(n, seed):
    """Random vertex subset of size ``floor(sqrt(n))``, sorted."""
    size = int(math.isqrt(n))
    return np.sort(rngmod.stream(seed, "U").choice(n, size=size, replace=False))


def estimate_noise_matrix(g: SbmInstance, blackbox: Partition, t, pi, cfg=None):
    """Estimate ``Delta`` from neighbour-label frequencies of high-degree vertices.

    Among the highest-degree vertices of ``U`` (the ``ceil(3 q)`` largest
    degrees), each is assigned a community by majority vote of its
    neighbours' black-box labels when its degree reaches the target degree,
    otherwise by its own black-box label.  ``F[i, j]`` is the fraction of
    neighbours with label ``j`` pooled over the vertices of community ``i``;
    since ``F = P Delta`` the estimate is ``P^{-1} F`` projected row-wise
    onto the simplex.
    """
    cfg = cfg or NoiseEstimationConfig()
    P = np.asarray(t.P, dtype=float)
    q = P.shape[0]
    if abs(np.linalg.det(P)) <= DET_FLOOR:
        raise SingularP("P is singular; the noise matrix cannot be recovered")
    U = draw_U(g.n, cfg.seed) if cfg.U is None else np.asarray(cfg.U, dtype=np.int64)
    lab = blackbox.labels
    deg = g.degrees
    U = U[lab[U] >= 0]
    n_cand = cfg.n_candidates or int(math.ceil(3 * q))
    order = np.lexsort((U, -deg[U]))
    cand = U[order[:n_cand]]
    target = degree_target(g.n)
    F = np.zeros((q, q))
    for v in cand:
        nl = lab[g.adj(v)]
        nl = nl[nl >= 0]
        if nl.size == 0:
            continue
        counts = np.bincount(nl, minlength=q)
        if deg[v] >= target:
            best = np.flatnonzero(counts == counts.max())
            com = int(lab[v]) if lab[v] in best else int(best[0])
        else:
            com = int(lab[v])
        F[com] += counts
    present = F.sum(axis=1) > 0
    if not np.all(present):
        raise MissingCommunityRepresentative(
            f"no representative for communities {np.flatnonzero(~present).tolist()}",
            fallback=NoiseMatrix.identity(q),
            missing=np.flatnonzero(~present).tolist(),
        )
    F = F / F.sum(axis=1, keepdims=True)
    D = project_simplex(np.linalg.solve(P, F))
    D = D / D.sum(axis=1, keepdims=True)
    return NoiseMatrix(D)


@dataclass(frozen=True)
class Algorithm1Config:
    R: Optional[int] = None
    seed: int = 0
    approx_blackbox: bool = False
    strict: bool = False
    vertices: Optional[np.ndarray] = None
    partitioner: Optional[Callable] = None


def _smooth(D, eps=1e-6):
    q = D.shape[0]
    return NoiseMatrix((1 - eps) * D + eps / q)


def _local_posterior(g, b, labels, pi, P, d, D):
    """Noisy posterior of the ball centre from the labels on its boundary."""
    tau = np.where(labels >= 0, labels, 0)
    tree = b.as_tree(pi, P, d, sigma=g.truth, tau=tau)
    try:
        return bp_posterior_noisy_batch(tree, b.radius, D)[0]
    except DegenerateLeafPrior:
        return bp_posterior_noisy_batch(tree, b.radius, _smooth(D.Delta))[0]


def reconstruct_algorithm1(g: SbmInstance, spec, t, s, cfg: Algorithm1Config = None):
    """Amplify a black-box partition by belief propagation on local balls.

    For every vertex ``v`` outside a random set ``U`` of ``floor(sqrt n)``
    vertices: partition the graph with the ball ``B(v, R-1)`` removed, align
    that partition to a global reference, estimate the noise matrix, run the
    noisy recursion inward from the labels on the sphere of radius ``R`` and
    label ``v`` by the posterior argmax.  Vertices of ``U`` get uniform random
    labels.  ``cfg.approx_blackbox`` reuses the global partition and one noise
    estimate for every vertex.  ``cfg.vertices`` restricts the per-vertex work
    to a subset (other vertices keep their reference label).  ``cfg.partitioner``
    replaces the spectral black box; it is called like ``black_box_partition``.
    """
    cfg = cfg or Algorithm1Config()
    q, pi, P, d = spec.q, spec.pi, t.P, t.d
    report = check_conditions(spec, t, s)
    if not report.all_ok:
        msg = f"model conditions fail: {report.as_dict()}"
        if cfg.strict:
            raise ConfigInvalid(msg)
        warnings.warn(msg, stacklevel=2)
    R = coupling_radius(g.n, spec.Q_scaled) if cfg.R is None else int(cfg.R)
    if R < 1:
        raise RadiusTooSmall(f"effective radius {R} < 1")
    U = draw_U(g.n, cfg.seed)
    part_fn = cfg.partitioner or black_box_partition
    ref = part_fn(g, q, rngmod.child_seed(cfg.seed, "reference"), pi=pi)
    emb = ref.diagnostics.get("embedding")
    ne_cfg = NoiseEstimationConfig(seed=cfg.seed, U=U)
    n_fallback = 0

    def noise_for(part):
        nonlocal n_fallback
        try:
            return estimate_noise_matrix(g, part, t, pi, ne_cfg)
        except MissingCommunityRepresentative as e:
            warnings.warn(str(e), stacklevel=3)
            n_fallback += 1
            return e.fallback

    global_D = noise_for(ref) if cfg.approx_blackbox else None
    in_U = np.zeros(g.n, dtype=bool)
    in_U[U] = True
    out = ref.labels.copy()
    todo = np.arange(g.n) if cfg.vertices is None else np.asarray(cfg.vertices, dtype=np.int64)
    todo = todo[~in_U[todo]]
    tree_like = np.zeros(todo.size, dtype=bool)
    deltas = []
    for idx, v in enumerate(todo):
        b = ball(g, int(v), R)
        tree_like[idx] = b.is_tree_like
        if cfg.approx_blackbox:
            labels, D = ref.labels, global_D
        else:
            part = part_fn(g, q, rngmod.child_seed(cfg.seed, "vertex", int(v)),
                           pi=pi, exclude=b.inner(R - 1), warm=emb)
            perm = align_partitions(ref, part)
            part = part.permuted(perm)
            labels = part.labels
            D = noise_for(part)
            deltas.append(D.Delta)
        post = _local_posterior(g, b, labels, pi, P, d, D)
        out[v] = int(np.argmax(post))
    out[U] = rngmod.stream(cfg.seed, "U-labels").integers(0, q, size=U.size)
    diag = {
        "R": R,
        "U": U,
        "reference": ref,
        "vertices": todo,
        "tree_like": tree_like,
        "noise_fallbacks": n_fallback,
        "delta_global": None if global_D is None else global_D.Delta,
        "delta_mean": np.mean(deltas, axis=0) if deltas else None,
    }
    return Partition(out, "algorithm1", q, diag)
