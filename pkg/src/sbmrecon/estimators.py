"""Root-label estimators on broadcast trees and their Monte Carlo drivers.

All estimators work on a whole forest at once and return one row per tree.
Posterior vectors are rows of a ``(n_trees, q)`` array.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import rng as rngmod
from .errors import (
    DegenerateLeafPrior,
    DepthExceeded,
    InvalidRange,
    MissingNoisyLabels,
    TooLarge,
    ZeroMass,
)
from .model import Spectrum, as_noise
from .stats import mean_se
from .tree import BroadcastTree, apply_noise, broadcast_params, sample_forest

BRUTE_FORCE_LIMIT = 10**7
CENTER_FLOOR = 1e-6
NODE_BUDGET = 2_000_000


@dataclass(frozen=True)
class EstimatorOutcome:
    """Per-tree guesses.  ``fallback`` marks trees decided by the prior alone."""

    guess: np.ndarray
    score_vector: np.ndarray
    method: str
    fallback: np.ndarray

    @property
    def method_tags(self):
        return np.where(self.fallback, self.method + "+prior-fallback", self.method)


# ---------------------------------------------------------------- recursion
def upward_pass(tree: BroadcastTree, m, leaf_X, keep_levels=False):
    """Run the Bayes recursion from depth ``m`` up to the roots.

    ``leaf_X`` holds one row per depth-``m`` node.  Each child message
    ``(P D_pi^{-1} X_j)`` is divided by its largest entry before the
    product; the recursion is invariant to such per-child scalings.
    Returns the root rows, or the list of rows per level when ``keep_levels``.
    """
    pi = tree.params.pi
    A = (tree.params.P / pi[None, :]).T
    q = pi.shape[0]
    X = np.asarray(leaf_X, dtype=float)
    out = [X]
    fc = tree.first_child
    for k in range(m - 1, -1, -1):
        lv = tree.level(k)
        base = tree.level_offsets[k + 1]
        msg = X @ A
        msg /= msg.max(axis=1, keepdims=True)
        prod = np.ones((lv.size, q))
        nch = tree.n_children[lv]
        has = nch > 0
        if np.any(has):
            starts = fc[lv[has]] - base
            prod[has] = np.multiply.reduceat(msg, starts, axis=0)
        f = prod * pi[None, :]
        z = f.sum(axis=1, keepdims=True)
        if np.any(z == 0):
            raise ZeroMass("posterior mass underflowed to zero (zero entries in P?)")
        X = f / z
        out.append(X)
    if keep_levels:
        return out[::-1]
    return X


def noisy_leaf_prior(pi, Delta, tau):
    """Rows ``pi_i Delta[i, tau] / sum_k pi_k Delta[k, tau]``."""
    f = pi[None, :] * Delta[:, tau].T
    z = f.sum(axis=1, keepdims=True)
    if np.any(z == 0):
        raise DegenerateLeafPrior("a noisy label has zero probability under pi and Delta")
    return f / z


def _one_hot_rows(labels, q):
    X = np.zeros((labels.shape[0], q))
    X[np.arange(labels.shape[0]), labels] = 1.0
    return X


def _check_depth(tree, m):
    if m < 0 or m > tree.max_depth:
        raise DepthExceeded(f"depth {m} outside sampled range 0..{tree.max_depth}")


def _squeeze(tree, X):
    return X[0] if tree.n_trees == 1 else X


def bp_posterior_batch(tree: BroadcastTree, m):
    """``(n_trees, q)`` exact posteriors of the root labels given depth-``m`` labels."""
    _check_depth(tree, m)
    leaf = _one_hot_rows(tree.sigma[tree.level(m)], tree.q)
    return upward_pass(tree, m, leaf)


def bp_posterior_noisy_batch(tree: BroadcastTree, m, delta):
    """``(n_trees, q)`` root posteriors given noisy depth-``m`` labels."""
    _check_depth(tree, m)
    if tree.tau is None:
        raise MissingNoisyLabels("tree has no noisy labels")
    D = as_noise(delta).Delta
    leaf = noisy_leaf_prior(tree.params.pi, D, tree.tau[tree.level(m)])
    return upward_pass(tree, m, leaf)


def bp_posterior(tree: BroadcastTree, m):
    """Root posterior; a length-``q`` vector for a single tree, else one row per tree."""
    return _squeeze(tree, bp_posterior_batch(tree, m))


def bp_posterior_noisy(tree: BroadcastTree, m, delta):
    return _squeeze(tree, bp_posterior_noisy_batch(tree, m, delta))


# ---------------------------------------------------------------- oracle
def exact_posterior_bruteforce(tree: BroadcastTree, m, noisy=False, delta_opt=None):
    """Root posterior of a single tree by summing over every hidden labelling.

    Every labelling of the nodes above depth ``m`` is enumerated.  A depth-``m``
    node contributes ``P[parent, sigma]``, or ``sum_x P[parent, x] Delta[x, tau]``
    when ``noisy``.
    """
    if tree.n_trees != 1:
        return np.stack([exact_posterior_bruteforce(tree.tree(t), m, noisy, delta_opt)
                         for t in range(tree.n_trees)])
    _check_depth(tree, m)
    pi, P = tree.params.pi, tree.params.P
    q = pi.shape[0]
    if noisy:
        if tree.tau is None:
            raise MissingNoisyLabels("tree has no noisy labels")
        D = as_noise(delta_opt).Delta
        leaf = P @ D
    n_obs = int(tree.level_offsets[m + 1])
    n_free = int(tree.level_offsets[m])
    if q ** n_free > BRUTE_FORCE_LIMIT:
        raise TooLarge(f"{q}^{n_free} labellings exceed the enumeration guard")
    if n_free == 0:
        post = pi * D[:, tree.tau[0]] if noisy else np.eye(q)[tree.sigma[0]]
        z = post.sum()
        if z == 0:
            raise ZeroMass("observed labels have zero probability")
        return post / z
    # depth-m nodes only enter through a vector on their parent's label
    vec = np.ones((n_free, q))
    for v in range(n_free, n_obs):
        vec[tree.parent[v]] *= leaf[:, tree.tau[v]] if noisy else P[:, tree.sigma[v]]
    # joint weight of every labelling as a dense tensor, one axis per hidden node;
    # each new axis sits right after its parent's so the broadcast inner loop is long
    w = pi * vec[0]
    order = [0]
    for v in range(1, n_free):
        i = order.index(int(tree.parent[v]))
        a = q**i
        w = w.reshape(a, q, 1, -1) * (P * vec[v][None, :]).reshape(1, q, q, 1)
        order.insert(i + 1, v)
    post = w.reshape(q, -1).sum(axis=1)
    z = post.sum()
    if z == 0:
        raise ZeroMass("observed labels have zero probability")
    return post / z


# ---------------------------------------------------------------- weighted sums
def _level_labels(tree, k, noisy):
    if noisy:
        if tree.tau is None:
            raise MissingNoisyLabels("tree has no noisy labels")
        return tree.tau[tree.level(k)]
    return tree.sigma[tree.level(k)]


def noisy_weights(xi, delta):
    """``(Delta^T)^{-1} xi``; raises ``SingularNoise`` for a singular ``Delta``."""
    return as_noise(delta).inverse_transpose() @ np.asarray(xi, dtype=float)


def weighted_sum(tree: BroadcastTree, k, xi, noisy=False, delta_opt=None):
    """Per-tree ``sum_{j in L_k} w(label_j)`` with ``w = xi`` or ``(Delta^T)^{-1} xi``.

    ``xi`` may be a vector or a ``(q, r)`` matrix of weight columns, giving
    an ``(n_trees, r)`` result.
    """
    _check_depth(tree, k)
    xi = np.asarray(xi, dtype=float)
    w = noisy_weights(xi, delta_opt) if noisy else xi
    labels = _level_labels(tree, k, noisy)
    tid = tree.tree_id[tree.level(k)]
    if w.ndim == 1:
        out = np.bincount(tid, weights=w[labels], minlength=tree.n_trees)
    else:
        out = np.stack([np.bincount(tid, weights=w[labels, c], minlength=tree.n_trees)
                        for c in range(w.shape[1])], axis=1)
    return _squeeze(tree, out) if w.ndim == 1 else out


def _majority_scores(S, spectrum: Spectrum, k, d):
    """Squared normalized distances of sums ``S`` (rows) to each root label's centre.

    Column ``c`` of ``S`` is the sum weighted by eigenvector ``c + 1``.
    """
    lam = spectrum.eigenvalues[1:]
    xi = spectrum.eigenvectors[:, 1:]
    scale = lam**k * d**k
    keep = np.abs(scale) >= CENTER_FLOOR * d**k
    q = xi.shape[0]
    if not np.any(keep):
        return np.zeros((S.shape[0], q))
    centers = scale[keep][None, :] * xi[:, keep]          # (q, r)
    z = (S[:, keep][:, None, :] - centers[None, :, :]) / scale[keep][None, None, :]
    return np.sum(z * z, axis=2)


def majority_classify(tree: BroadcastTree, spectrum: Spectrum, k, noisy=False, delta_opt=None):
    """Guess each root by the eigenvector-weighted sums over depth ``k``.

    The guess is the label whose expected centre ``lambda_i^k d^k xi_i(l)``
    is nearest in normalized distance (ties go to the smaller label).
    Trees whose level ``k`` is empty fall back to ``argmax pi``.
    """
    if k < 1:
        raise InvalidRange("majority needs k >= 1")
    d = tree.params.d
    S = weighted_sum(tree, k, spectrum.eigenvectors[:, 1:], noisy, delta_opt)
    scores = _majority_scores(S, spectrum, k, d)
    guess = np.argmin(scores, axis=1)
    sizes = np.bincount(tree.tree_id[tree.level(k)], minlength=tree.n_trees)
    empty = sizes == 0
    guess[empty] = int(np.argmax(tree.params.pi))
    return EstimatorOutcome(guess=guess, score_vector=scores,
                            method="noisy-majority" if noisy else "weighted-majority",
                            fallback=empty)


def iterated_majority_classify(tree: BroadcastTree, spectrum: Spectrum, k, noisy=False,
                               delta_opt=None, sample=False, seed=0):
    """Guess each child of the root from its own subtree, then match the histogram.

    Each depth-1 node with descendants at depth ``k`` is classified by the
    weighted majority rule with depth ``k-1``; children whose subtree dies out
    before depth ``k`` carry no information and are skipped.  With ``sample``
    the child label is instead drawn from the child's exact posterior.  The root
    guess is ``argmin_i ||N - D P_i||_1`` where ``N`` is the histogram of child
    guesses and ``D`` the number of classified children.
    """
    if k < 2:
        raise InvalidRange("iterated majority needs k >= 2")
    _check_depth(tree, k)
    P, pi, d = tree.params.P, tree.params.pi, tree.params.d
    q = pi.shape[0]
    T = tree.n_trees
    lv1 = tree.level(1)
    leaves = tree.level(k)
    anc = tree.ancestors(leaves, 1) - tree.level_offsets[1]
    live = np.bincount(anc, minlength=lv1.size) > 0
    if sample:
        if noisy:
            leaf = noisy_leaf_prior(pi, as_noise(delta_opt).Delta, tree.tau[leaves])
        else:
            leaf = _one_hot_rows(tree.sigma[leaves], q)
        X1 = upward_pass(tree, k, leaf, keep_levels=True)[1]
        u = rngmod.stream(seed, "iterated-sample").random(lv1.size)
        child_guess = np.minimum((u[:, None] >= np.cumsum(X1, axis=1)).sum(axis=1), q - 1)
    else:
        labels = _level_labels(tree, k, noisy)
        xi = spectrum.eigenvectors[:, 1:]
        w = noisy_weights(xi, delta_opt) if noisy else xi
        S = np.stack([np.bincount(anc, weights=w[labels, c], minlength=lv1.size)
                      for c in range(q - 1)], axis=1)
        child_guess = np.argmin(_majority_scores(S, spectrum, k - 1, d), axis=1)
    root_of_child = tree.parent[lv1]
    N = np.zeros((T, q))
    np.add.at(N, (root_of_child[live], child_guess[live]), 1.0)
    D = N.sum(axis=1)
    scores = np.abs(N[:, None, :] - D[:, None, None] * P[None, :, :]).sum(axis=2)
    guess = np.argmin(scores, axis=1)
    empty = D == 0
    guess[empty] = int(np.argmax(pi))
    return EstimatorOutcome(guess=guess, score_vector=scores, method="iterated-majority",
                            fallback=empty)


# ---------------------------------------------------------------- Monte Carlo
def batch_size(d, depth, budget=NODE_BUDGET):
    """Trees per batch so a batch holds roughly ``budget`` nodes."""
    expected = sum(float(d) ** j for j in range(depth + 1))
    return max(1, int(budget // max(expected, 1.0)))


def iter_forests(params, depth, trials, seed, tag, delta=None, root_label=None, budget=NODE_BUDGET):
    """Yield forests totalling ``trials`` trees from per-batch seed streams."""
    pi, P, d = broadcast_params(*params) if isinstance(params, tuple) else broadcast_params(params)
    bs = batch_size(d, depth, budget)
    done = 0
    b = 0
    while done < trials:
        n = min(bs, trials - done)
        g = rngmod.stream(seed, tag, b)
        f = sample_forest((pi, P, d), depth, n, seed, root_label=root_label, rng=g)
        if delta is not None:
            f = apply_noise(f, delta, seed, rng=g)
        yield f
        done += n
        b += 1


@dataclass(frozen=True)
class EmEstimate:
    m: int
    trials: int
    max_posterior: float
    se_max_posterior: float
    correct_rate: float
    se_correct_rate: float
    noisy_max_posterior: Optional[float] = None
    se_noisy_max_posterior: Optional[float] = None
    noisy_correct_rate: Optional[float] = None
    se_noisy_correct_rate: Optional[float] = None

    @property
    def estimate(self):
        return self.max_posterior, self.se_max_posterior

    @property
    def noisy_estimate(self):
        return self.noisy_max_posterior, self.se_noisy_max_posterior


def posterior_pairs(params, delta, m, trials, seed, tag="posterior-pairs"):
    """Root labels and the exact and noisy root posteriors on shared trees.

    Returns ``(sigma_root, X, X_noisy)``; ``X_noisy`` is ``None`` without ``delta``.
    """
    sig, Xs, Xt = [], [], []
    for f in iter_forests(params, m, trials, seed, tag, delta=delta):
        sig.append(f.root_labels())
        Xs.append(bp_posterior_batch(f, m))
        if delta is not None:
            Xt.append(bp_posterior_noisy_batch(f, m, delta))
    sigma = np.concatenate(sig)
    X = np.concatenate(Xs)
    return sigma, X, (np.concatenate(Xt) if delta is not None else None)


def estimate_E_m(params, m, trials, seed, delta=None):
    """Monte Carlo ``E_m = E max_i X(i)``, also as the rate of correct argmax guesses.

    With ``delta`` the noisy counterpart is computed on the same trees.
    """
    if trials < 100:
        raise InvalidRange("estimate_E_m needs at least 100 trials")
    sigma, X, Xt = posterior_pairs(params, delta, m, trials, seed, tag="E_m")
    mp, smp = mean_se(X.max(axis=1))
    cr, scr = mean_se(np.argmax(X, axis=1) == sigma)
    extra = {}
    if Xt is not None:
        nmp, snmp = mean_se(Xt.max(axis=1))
        ncr, sncr = mean_se(np.argmax(Xt, axis=1) == sigma)
        extra = dict(noisy_max_posterior=nmp, se_noisy_max_posterior=snmp,
                     noisy_correct_rate=ncr, se_noisy_correct_rate=sncr)
    return EmEstimate(m, int(trials), mp, smp, cr, scr, **extra)


@dataclass(frozen=True)
class ErrorMatrix:
    """``E[i, j]`` estimates ``E[X(j) - X_noisy(j) | sigma_root = i]``."""

    E: np.ndarray
    epsilon: float
    n: int
    trials: int
    se: np.ndarray
    counts: np.ndarray

    @property
    def epsilon_index(self):
        return np.unravel_index(int(np.argmax(np.abs(self.E))), self.E.shape)

    @property
    def epsilon_se(self):
        return float(self.se[self.epsilon_index])


def error_matrix_from_pairs(sigma, X, Xt, n):
    q = X.shape[1]
    diff = X - Xt
    E = np.zeros((q, q))
    se = np.zeros((q, q))
    counts = np.bincount(sigma, minlength=q)
    for i in range(q):
        rows = diff[sigma == i]
        for j in range(q):
            if rows.shape[0]:
                E[i, j], se[i, j] = mean_se(rows[:, j])
    return ErrorMatrix(E=E, epsilon=float(np.abs(E).max()), n=int(n), trials=int(sigma.size),
                       se=se, counts=counts)


def error_matrix_mc(params, delta, n, trials, seed):
    """Monte Carlo error matrix between exact and noisy root posteriors at depth ``n``."""
    if trials < 1000:
        raise InvalidRange("error_matrix_mc needs at least 1000 trials")
    sigma, X, Xt = posterior_pairs(params, delta, n, trials, seed, tag="error-matrix")
    return error_matrix_from_pairs(sigma, X, Xt, n)


@dataclass(frozen=True)
class IdentityCheck:
    name: str
    i: int
    j: int
    estimate: float
    target: float
    se: float

    @property
    def passed(self):
        return abs(self.estimate - self.target) <= 4.0 * self.se + 1e-12


def noisy_identity_checks(sigma, X, Xt, pi):
    """Monte Carlo checks of three exact identities linking ``X`` and ``X_noisy``.

    Each check compares two expectations through the per-sample difference
    of their integrands, so ``se`` is the standard error of that paired
    difference.  The target is the sample mean of the right-hand integrand,
    e.g. ``mean(D(i) 1[sigma = i])`` which estimates ``pi_i E[i, i]``.
    With ``D = X - X_noisy``:

    * ``diagonal``:  ``E[D(i)^2] = pi_i E[D(i) | sigma = i]``
    * ``covariance``: ``E[D(i) D(j)] = pi_j E[D(i) | sigma = j]``
    * ``martingale``: ``E[D(i)^2] = E[X(i)^2 - X_noisy(i)^2]``
    """
    q = X.shape[1]
    D = X - Xt
    ind = sigma[:, None] == np.arange(q)[None, :]
    out = []
    for i in range(q):
        lhs = D[:, i] ** 2
        rhs = D[:, i] * ind[:, i]
        _, se = mean_se(lhs - rhs)
        out.append(IdentityCheck("diagonal", i, i, float(lhs.mean()), float(rhs.mean()), se))
        mart = X[:, i] ** 2 - Xt[:, i] ** 2
        _, se = mean_se(lhs - mart)
        out.append(IdentityCheck("martingale", i, i, float(lhs.mean()), float(mart.mean()), se))
        for j in range(q):
            if j == i:
                continue
            lhs2 = D[:, i] * D[:, j]
            rhs2 = D[:, i] * ind[:, j]
            _, se = mean_se(lhs2 - rhs2)
            out.append(IdentityCheck("covariance", i, j, float(lhs2.mean()),
                                     float(rhs2.mean()), se))
    return out
