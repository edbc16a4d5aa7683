"""I-vector post-processing and simplified (two-covariance) PLDA."""

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigh, solve_triangular

from .errors import DegenerateCovariance, DegenerateInput, RankTooLarge, SingleSpeaker

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class PostProcessor:
    """Center, whiten, then length-normalize.

    ``whitener`` is the inverse of the lower Cholesky factor L of the
    training covariance (cov = L L'), so whitened training vectors have
    identity sample covariance.
    """

    mean: np.ndarray
    whitener: np.ndarray

    def whiten(self, X):
        return (np.atleast_2d(X) - self.mean) @ self.whitener.T

    def transform(self, X):
        single = np.ndim(X) == 1
        Z = self.whiten(X)
        norms = np.linalg.norm(Z, axis=1, keepdims=True)
        zero = norms[:, 0] == 0
        if zero.any():
            warnings.warn(f"{int(zero.sum())} input(s) equal the training mean; returning zero vectors",
                          DegenerateInput, stacklevel=2)
        Z = np.divide(Z, norms, out=np.zeros_like(Z), where=norms > 0)
        return Z[0] if single else Z


def fit_postprocessor(X):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    U, d = X.shape
    mean = X.mean(axis=0)
    cov = np.cov(X, rowvar=False, bias=True).reshape(d, d)
    if U < d + 1 or np.linalg.matrix_rank(cov) < d:
        warnings.warn("i-vector covariance is rank deficient; adding ridge 1e-6*I",
                      DegenerateCovariance, stacklevel=2)
        cov = cov + 1e-6 * np.eye(d)
    L = np.linalg.cholesky(cov)
    return PostProcessor(mean, solve_triangular(L, np.eye(d), lower=True))


def apply(pp, iv):
    return pp.transform(iv)


# --------------------------------------------------------------------------
# PLDA


@dataclass
class PldaModel:
    """x = mean + Phi y + e, y ~ N(0, I_q), e ~ N(0, W).

    ``between`` = Phi Phi' (rank <= q) and ``within`` = W.
    """

    mean: np.ndarray
    phi: np.ndarray
    within: np.ndarray
    loglik_history: list = field(default_factory=list)

    @property
    def rank(self):
        return self.phi.shape[1]

    @property
    def between(self):
        return self.phi @ self.phi.T

    def __post_init__(self):
        self._prepare()

    def _prepare(self):
        B = self.between
        T = B + self.within
        d = T.shape[0]
        Tinv = np.linalg.inv(T)
        Tinv = 0.5 * (Tinv + Tinv.T)
        # inverse of [[T, B], [B, T]] has blocks [[A, G], [G, A]]
        A = np.linalg.inv(T - B @ Tinv @ B)
        A = 0.5 * (A + A.T)
        G = -Tinv @ B @ A
        G = 0.5 * (G + G.T)
        self._Qm = Tinv - A
        self._Pm = -G
        joint = np.block([[T, B], [B, T]])
        _, logdet_same = np.linalg.slogdet(joint)
        _, logdet_t = np.linalg.slogdet(T)
        self._const = -0.5 * logdet_same + logdet_t
        self._d = d


def _speaker_groups(labels):
    labels = np.asarray(labels)
    speakers, index = np.unique(labels, return_inverse=True)
    return speakers, index


def _plda_loglik(X, index, n_spk, phi, W):
    """Exact training log-likelihood with each speaker's factor integrated out."""
    N, d = X.shape
    q = phi.shape[1]
    Wc = cho_factor(W, lower=True)
    logdet_w = 2.0 * np.log(np.diag(Wc[0])).sum()
    WiX = cho_solve(Wc, X.T).T
    WiPhi = cho_solve(Wc, phi)
    G = phi.T @ WiPhi
    sums = np.zeros((n_spk, d))
    np.add.at(sums, index, X)
    counts = np.bincount(index, minlength=n_spk)
    total = -0.5 * (N * d * LOG_2PI + N * logdet_w + (X * WiX).sum())
    for s in range(n_spk):
        P = np.eye(q) + counts[s] * G
        Pc = cho_factor(P, lower=True)
        b = WiPhi.T @ sums[s]
        total += -np.log(np.diag(Pc[0])).sum() + 0.5 * b @ cho_solve(Pc, b)
    return total


def plda_train(X, labels, q=None, iterations=10, seed=0):
    """EM for the two-covariance PLDA model with rank-``q`` speaker subspace.

    Initialization: Phi from the top-``q`` eigenpairs of the speaker-mean
    scatter (plus a small seeded perturbation), W from the within-speaker
    scatter.  The global mean is held fixed, which keeps each EM step exact.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    N, d = X.shape
    q = d if q is None else q
    if q > d:
        raise RankTooLarge(f"PLDA rank q={q} exceeds i-vector dimension d={d}")
    speakers, index = _speaker_groups(labels)
    S = speakers.size
    if S < 2:
        raise SingleSpeaker("PLDA needs at least two speakers")
    counts = np.bincount(index, minlength=S)
    if counts.max() < 2:
        raise ValueError("PLDA needs at least one speaker with two or more utterances")
    mean = X.mean(axis=0)
    Xc = X - mean
    sums = np.zeros((S, d))
    np.add.at(sums, index, Xc)
    spk_means = sums / counts[:, None]
    between = (spk_means * counts[:, None]).T @ spk_means / N
    resid = Xc - spk_means[index]
    within = resid.T @ resid / N + 1e-6 * np.eye(d)
    evals, evecs = eigh(between)
    order = np.argsort(evals)[::-1][:q]
    rng = np.random.default_rng(seed)
    phi = evecs[:, order] * np.sqrt(np.maximum(evals[order], 1e-6))
    phi = phi + 1e-3 * np.sqrt(np.trace(between) / d) * rng.standard_normal(phi.shape)
    S_total = Xc.T @ Xc
    history = [_plda_loglik(Xc, index, S, phi, within)]
    for it in range(iterations):
        Wc = cho_factor(within, lower=True)
        WiPhi = cho_solve(Wc, phi)
        G = phi.T @ WiPhi
        Ey = np.empty((S, q))
        Eyy = np.zeros((q, q))
        for s in range(S):
            P = np.eye(q) + counts[s] * G
            cov = np.linalg.inv(P)
            Ey[s] = cov @ (WiPhi.T @ sums[s])
            Eyy += counts[s] * (cov + np.outer(Ey[s], Ey[s]))
        R = sums.T @ Ey
        phi = np.linalg.solve(Eyy, R.T).T
        within = (S_total - phi @ R.T) / N
        within = 0.5 * (within + within.T)
        history.append(_plda_loglik(Xc, index, S, phi, within))
        logger.debug("plda iteration %d: loglik %.6f", it, history[-1])
    return PldaModel(mean, phi, within, history)


def plda_score(model, enroll, test):
    """Log-likelihood ratio same-speaker vs different-speaker.

    Accepts single vectors or paired rows (N, d); per trial the cost is two
    matrix-vector products with precomputed blocks.
    """
    e = np.atleast_2d(enroll) - model.mean
    t = np.atleast_2d(test) - model.mean
    Qe = e @ model._Qm
    Qt = t @ model._Qm
    s = 0.5 * (Qe * e).sum(1) + 0.5 * (Qt * t).sum(1) + (e @ model._Pm * t).sum(1) + model._const
    return s[0] if np.ndim(enroll) == 1 else s


def plda_score_matrix(model, enroll, test):
    """All-pairs scores, shape (len(enroll), len(test))."""
    e = np.atleast_2d(enroll) - model.mean
    t = np.atleast_2d(test) - model.mean
    qe = 0.5 * ((e @ model._Qm) * e).sum(1)
    qt = 0.5 * ((t @ model._Qm) * t).sum(1)
    return qe[:, None] + qt[None, :] + (e @ model._Pm) @ t.T + model._const
