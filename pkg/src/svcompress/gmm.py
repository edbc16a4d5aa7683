"""Diagonal-covariance GMM (UBM) training, frame posteriors and
Baum-Welch sufficient statistics."""

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from sklearn.cluster import kmeans_plusplus

from .errors import ComponentCollapse, DimensionMismatch, EmptyCorpus

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)
KMEANS_SUBSAMPLE = 100_000
_CHUNK = 65_536


@dataclass(frozen=True)
class FeatureMatrix:
    frames: np.ndarray
    utterance_id: str
    speaker_id: str = ""

    def __post_init__(self):
        x = np.asarray(self.frames, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 1:
            raise DimensionMismatch(f"{self.utterance_id}: frames must be a non-empty T x F matrix")
        if not np.all(np.isfinite(x)):
            raise ValueError(f"{self.utterance_id}: non-finite feature values")
        object.__setattr__(self, "frames", x)

    @property
    def n_frames(self):
        return self.frames.shape[0]

    @property
    def dim(self):
        return self.frames.shape[1]


@dataclass(frozen=True)
class DiagonalGmm:
    """GMM with diagonal covariances; immutable once built.

    ``weights`` has shape (C,), ``means`` and ``variances`` (C, F).
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        mu = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        var = np.atleast_2d(np.asarray(self.variances, dtype=np.float64))
        if w.ndim != 1 or mu.shape != var.shape or mu.shape[0] != w.shape[0]:
            raise DimensionMismatch("weights (C,), means (C, F) and variances (C, F) disagree")
        if np.any(var <= 0):
            raise ValueError("variances must be positive")
        if abs(w.sum() - 1.0) > 1e-10:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        for name, a in (("weights", w), ("means", mu), ("variances", var)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def n_components(self):
        return self.weights.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def supervector_dim(self):
        return self.means.size

    @cached_property
    def _precisions(self):
        return 1.0 / self.variances

    @cached_property
    def _log_consts(self):
        # log w_c - 1/2 (F log 2pi + log|S_c| + mu_c' S_c^-1 mu_c)
        return (np.log(self.weights)
                - 0.5 * (self.dim * LOG_2PI
                         + np.log(self.variances).sum(axis=1)
                         + (self.means ** 2 * self._precisions).sum(axis=1)))

    def log_joint(self, X):
        """Per-frame ``log w_c + log N(x_t; mu_c, S_c)``, shape (T, C)."""
        X = np.atleast_2d(X)
        if X.shape[1] != self.dim:
            raise DimensionMismatch(f"feature dim {X.shape[1]} != GMM dim {self.dim}")
        quad = (X ** 2) @ self._precisions.T - 2.0 * X @ (self.means * self._precisions).T
        return self._log_consts - 0.5 * quad

    def posteriors(self, X):
        """Return (posteriors (T, C), per-frame log-likelihood (T,))."""
        lj = self.log_joint(X)
        top = lj.max(axis=1, keepdims=True)
        p = np.exp(lj - top)
        s = p.sum(axis=1, keepdims=True)
        p /= s
        return p, (top + np.log(s))[:, 0]

    def log_likelihood(self, X):
        total = 0.0
        for start in range(0, X.shape[0], _CHUNK):
            total += self.posteriors(X[start:start + _CHUNK])[1].sum()
        return total


@dataclass
class SufficientStats:
    n: np.ndarray
    f: np.ndarray
    utterance_id: str = ""

    @property
    def n_frames(self):
        return float(self.n.sum())

    def __add__(self, other):
        return SufficientStats(self.n + other.n, self.f + other.f, self.utterance_id)


def frame_posteriors(gmm, x):
    """Posterior component probabilities p(c|x) for a single frame."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    return gmm.posteriors(x)[0][0]


def accumulate_stats(gmm, utt):
    """Zeroth- and first-order statistics of one utterance against ``gmm``."""
    frames = utt.frames if isinstance(utt, FeatureMatrix) else np.atleast_2d(np.asarray(utt, float))
    if frames.shape[1] != gmm.dim:
        raise DimensionMismatch(f"utterance dim {frames.shape[1]} != GMM dim {gmm.dim}")
    post, _ = gmm.posteriors(frames)
    uid = utt.utterance_id if isinstance(utt, FeatureMatrix) else ""
    return SufficientStats(post.sum(axis=0), post.T @ frames, uid)


@dataclass
class StatsSet:
    """Statistics of a whole corpus stacked into arrays.

    ``n`` is (U, C); ``f`` is (U, C, F) and holds raw (uncentered) sums.
    """

    n: np.ndarray
    f: np.ndarray
    utterance_ids: list = field(default_factory=list)
    speaker_ids: list = field(default_factory=list)

    def __len__(self):
        return self.n.shape[0]

    def __getitem__(self, i):
        return SufficientStats(self.n[i], self.f[i], self.utterance_ids[i] if self.utterance_ids else "")

    def subset(self, index):
        index = np.asarray(index)
        return StatsSet(self.n[index], self.f[index],
                        [self.utterance_ids[i] for i in index] if self.utterance_ids else [],
                        [self.speaker_ids[i] for i in index] if self.speaker_ids else [])

    def centered_f(self, gmm):
        """First-order stats centered on the UBM means, f_c - n_c mu_c."""
        return self.f - self.n[:, :, None] * gmm.means[None]


def accumulate_corpus(gmm, corpus, threads=1):
    """Stats for every utterance, in corpus order.

    Utterances are processed independently, so the result does not depend on
    ``threads``.
    """
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            stats = list(pool.map(lambda u: accumulate_stats(gmm, u), corpus))
    else:
        stats = [accumulate_stats(gmm, u) for u in corpus]
    return StatsSet(np.stack([s.n for s in stats]), np.stack([s.f for s in stats]),
                    [u.utterance_id for u in corpus], [u.speaker_id for u in corpus])


def variance_floor(X):
    return np.maximum(1e-4, 1e-3 * X.var(axis=0))


def _pool_frames(corpus):
    if len(corpus) == 0:
        raise EmptyCorpus("no utterances to train on")
    frames = [u.frames if isinstance(u, FeatureMatrix) else np.atleast_2d(u) for u in corpus]
    dims = {f.shape[1] for f in frames}
    if len(dims) != 1:
        raise DimensionMismatch(f"inconsistent feature dimensions {sorted(dims)}")
    return np.concatenate(frames, axis=0)


def _em_accumulate(gmm, X):
    C, F = gmm.n_components, gmm.dim
    N = np.zeros(C)
    S1 = np.zeros((C, F))
    S2 = np.zeros((C, F))
    ll = 0.0
    for start in range(0, X.shape[0], _CHUNK):
        x = X[start:start + _CHUNK]
        post, frame_ll = gmm.posteriors(x)
        ll += frame_ll.sum()
        N += post.sum(axis=0)
        S1 += post.T @ x
        S2 += post.T @ (x ** 2)
    return N, S1, S2, ll


def _initial_gmm(X, C, floor, rng):
    if X.shape[0] > KMEANS_SUBSAMPLE:
        X = X[np.sort(rng.choice(X.shape[0], KMEANS_SUBSAMPLE, replace=False))]
    centers, _ = kmeans_plusplus(X, C, random_state=int(rng.integers(2**31 - 1)))
    d2 = ((X ** 2).sum(1)[:, None] - 2 * X @ centers.T + (centers ** 2).sum(1)[None])
    label = d2.argmin(axis=1)
    counts = np.bincount(label, minlength=C).astype(float)
    weights = (counts + 1.0) / (counts.sum() + C)
    variances = np.empty_like(centers)
    global_var = X.var(axis=0)
    for c in range(C):
        members = X[label == c]
        variances[c] = members.var(axis=0) if len(members) > 1 else global_var
    return DiagonalGmm(weights / weights.sum(), centers, np.maximum(variances, floor))


def train_ubm(corpus, C, iterations=10, seed=0, return_history=False):
    """Train a diagonal-covariance UBM by EM on pooled frames.

    Initialization is seeded k-means++ on a subsample of at most 100k
    frames.  A component whose occupancy drops below one frame triggers a
    :class:`ComponentCollapse` warning and is re-spread by splitting the
    most populated component.

    With ``return_history`` the corpus log-likelihood before each M-step
    and after the last one is returned as a second value.
    """
    X = _pool_frames(corpus)
    if X.shape[0] < 10 * C:
        raise ValueError(f"{X.shape[0]} frames is fewer than 10 x C = {10 * C}")
    rng = np.random.default_rng(seed)
    floor = variance_floor(X)
    if C == 1:
        gmm = DiagonalGmm(np.ones(1), X.mean(axis=0, keepdims=True),
                          np.maximum(X.var(axis=0, keepdims=True), floor))
    else:
        gmm = _initial_gmm(X, C, floor, rng)
    history = []
    for it in range(iterations):
        N, S1, S2, ll = _em_accumulate(gmm, X)
        history.append(ll)
        logger.debug("ubm iteration %d: loglik %.6f", it, ll)
        collapsed = np.flatnonzero(N < 1.0)
        Nsafe = np.maximum(N, np.finfo(float).tiny)
        means = S1 / Nsafe[:, None]
        variances = np.maximum(S2 / Nsafe[:, None] - means ** 2, floor)
        weights = N / N.sum()
        if collapsed.size:
            warnings.warn(f"UBM components {collapsed.tolist()} collapsed at iteration {it}; re-spreading",
                          ComponentCollapse, stacklevel=2)
            for c in collapsed:
                donor = int(np.argmax(weights))
                offset = np.sqrt(variances[donor]) * 0.2 * rng.standard_normal(X.shape[1])
                means[c] = means[donor] + offset
                means[donor] = means[donor] - offset
                variances[c] = variances[donor]
                weights[c] = weights[donor] = 0.5 * weights[donor]
        gmm = DiagonalGmm(weights / weights.sum(), means, variances)
    if return_history:
        history.append(_em_accumulate(gmm, X)[3])
        return gmm, history
    return gmm
