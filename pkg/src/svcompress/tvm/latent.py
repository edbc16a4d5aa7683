"""Supervector compression models: PCA, PPCA, FA, and the supervised
PPLS / SPPCA variants.

All EM-trained models share one loop parameterized by the noise model
(isotropic or diagonal) and by an optional supervision block.  Inputs are
centered supervectors as rows of a (U, h) matrix.
"""

import logging
import warnings

import numpy as np

from ..errors import (MissingSupervision, PsiCollapse, RankDeficient, RhoCollapse,
                      SigmaCollapse, SpeakerWithNoUtterances)
from ..supervector import SupervectorSet, map_adapt_matrix
from .linalg import right_solve, spd_inverse, spd_logdet
from .models import (FaModel, IVectorPosterior, PcaModel, PpcaModel, SupervisedModel,
                     SupervisionTargets, TrainingLog, TvmConfig)

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)
VARIANCE_CLAMP = 1e-12
PSI_FLOOR = 1e-10


def _matrix(data):
    if isinstance(data, SupervectorSet):
        return data.matrix
    return np.atleast_2d(np.asarray(data, dtype=np.float64))


def init_loadings(rng, rows, d):
    return rng.standard_normal((rows, d)) / np.sqrt(d)


# --------------------------------------------------------------------------
# PCA


def pca_train(data, d):
    """Top-``d`` right singular vectors of the centered training matrix.

    Column signs are fixed so that each column's largest-magnitude entry is
    positive.
    """
    M = _matrix(data)
    mean = data.mean if isinstance(data, SupervectorSet) else M.mean(axis=0)
    if not (isinstance(data, SupervectorSet) and data.centered):
        M = M - M.mean(axis=0)
    _, s, vt = np.linalg.svd(M, full_matrices=False)
    tol = s.max(initial=0.0) * max(M.shape) * np.finfo(float).eps
    rank = int((s > tol).sum())
    if rank < d:
        warnings.warn(f"only {rank} non-zero singular values, requested d={d}", RankDeficient, stacklevel=2)
        d = rank
    V = vt[:d].T.copy()
    flip = np.sign(V[np.abs(V).argmax(axis=0), np.arange(d)])
    V *= np.where(flip == 0, 1.0, flip)
    return PcaModel(V, np.asarray(mean, dtype=np.float64), s[:d].copy(), TvmConfig(d=max(d, 1), method="pca"))


def pca_extract(model, m, centered=False):
    """Project ``m`` on the principal axes; ``m`` is uncentered unless
    ``centered`` is set."""
    m = np.asarray(m, dtype=np.float64)
    return (m if centered else m - model.mean) @ model.V


# --------------------------------------------------------------------------
# extraction


def ppca_extract(model, m):
    """Posterior of the latent factor given centered supervector(s) ``m``.

    The covariance is computed once per model and shared by all inputs.
    """
    sigma = model.posterior_cov
    mu = model.projection(np.asarray(m, dtype=np.float64)) @ sigma
    return IVectorPosterior(mu, sigma)


fa_extract = ppca_extract


def ppls_extract_trainside(model, m, y):
    """Training-time posterior using both the supervector and its target."""
    if y is None:
        raise MissingSupervision("training-side extraction needs a supervision target")
    sigma = model.trainside_cov
    m = np.asarray(m, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    lin = model.projection(m) + (model.beta / model.rho2) * (y @ model.Q)
    return IVectorPosterior(lin @ sigma, sigma)


def ppls_extract_testside(model, m):
    """Test-time extraction in PPCA form with the supervised-trained V, sigma^2."""
    return ppca_extract(model, m)


def predict_targets(model, m):
    """Mean of p(y | m) under the joint model, Q V' (VV' + sigma^2 I)^{-1} m.

    The h x h inverse is applied through the Woodbury identity.
    """
    m = np.asarray(m, dtype=np.float64)
    s2 = model.sigma2
    inner = np.eye(model.d) + (model.V.T @ model.V) / s2
    vtm = m @ model.V
    cinv_m = m / s2 - (np.linalg.solve(inner, vtm.T).T @ model.V.T) / s2 ** 2
    return (cinv_m @ model.V) @ model.Q.T


def ppls_extract_label_prediction(model, m):
    """Test-time extraction that first predicts the missing target and then
    applies the training-side posterior."""
    return ppls_extract_trainside(model, m, predict_targets(model, m))


# --------------------------------------------------------------------------
# likelihood


def marginal_loglik(model, data):
    """Sum of log N(m(u); 0, VV' + D) over the rows of ``data``.

    D is sigma^2 I (PPCA, PPLS, SPPCA) or diag(psi) (FA).  Evaluated with the
    d x d Woodbury/determinant identities.
    """
    M = _matrix(data)
    U, h = M.shape
    D = np.broadcast_to(np.asarray(model.noise if hasattr(model, "noise") else model.sigma2, float), (h,))
    Vs = model.V / D[:, None]
    P = np.eye(model.d) + model.V.T @ Vs
    proj = M @ Vs
    quad = (M ** 2 / D).sum() - (proj * np.linalg.solve(P, proj.T).T).sum()
    logdet = np.log(D).sum() + spd_logdet(P)
    return -0.5 * (U * h * LOG_2PI + U * logdet + quad)


ppca_marginal_loglik = marginal_loglik


# --------------------------------------------------------------------------
# EM training


def _fit(X, config, diagonal=False, Y=None, callback=None):
    U, h = X.shape
    d = config.d
    if U < d:
        raise ValueError(f"need at least d={d} training supervectors, got {U}")
    if d > h:
        raise ValueError(f"d={d} must not exceed the supervector dimension {h}")
    rng = np.random.default_rng(config.seed)
    V = init_loadings(rng, h, d)
    supervised = Y is not None
    beta = config.beta if supervised else 0.0
    if supervised:
        k = Y.shape[1]
        Q = init_loadings(rng, k, d)
        rho2 = 1.0
        ysq = float((Y ** 2).sum())
    sigma2 = 1.0
    psi = np.ones(h)
    colsq = (X ** 2).sum(axis=0)
    sumsq = float(colsq.sum())
    log = TrainingLog()
    eye = np.eye(d)

    def model():
        if supervised:
            return SupervisedModel(V, Q, sigma2, rho2, beta, np.zeros(k), config.method, config, log)
        if diagonal:
            return FaModel(V, psi.copy(), config, log)
        return PpcaModel(V, sigma2, config, log)

    for it in range(config.iterations):
        # E-step
        if diagonal:
            Vs = V / psi[:, None]
            P = eye + V.T @ Vs
            proj = X @ Vs
        else:
            P = eye + (V.T @ V) / sigma2
            proj = (X @ V) / sigma2
        if supervised:
            w = beta / rho2
            P = P + w * (Q.T @ Q)
            proj = proj + w * (Y @ Q)
        Sigma, ridged = spd_inverse(P)
        log.ridge_count += ridged
        mu = proj @ Sigma
        log.objectives.append(_objective(X, Y, proj, mu, P, sigma2, psi if diagonal else None,
                                         rho2 if supervised else None, beta, sumsq))
        Esum = mu.T @ mu
        if config.max_principle == 1:
            Esum = Esum + U * Sigma
        # M-step
        V, ridged = right_solve(X.T @ mu, Esum)
        log.ridge_count += ridged
        if supervised:
            Q, ridged = right_solve(Y.T @ mu, Esum)
            log.ridge_count += ridged
        if diagonal:
            psi = (colsq - ((V @ Esum) * V).sum(axis=1)) / U
            low = psi < PSI_FLOOR
            if low.any():
                warnings.warn(f"{int(low.sum())} noise variances floored at {PSI_FLOOR}", PsiCollapse,
                              stacklevel=3)
                log.clamp_count += 1
                psi = np.maximum(psi, PSI_FLOOR)
        else:
            sigma2 = (sumsq - np.trace(Esum @ (V.T @ V))) / (h * U)
            if sigma2 < VARIANCE_CLAMP:
                warnings.warn(f"sigma^2 fell to {sigma2:.3g}; clamping (d likely too large)",
                              SigmaCollapse, stacklevel=3)
                log.clamp_count += 1
                sigma2 = VARIANCE_CLAMP
        if supervised:
            rho2 = (ysq - np.trace(Esum @ (Q.T @ Q))) / (k * U)
            if rho2 < VARIANCE_CLAMP:
                warnings.warn(f"rho^2 fell to {rho2:.3g}; clamping", RhoCollapse, stacklevel=3)
                log.clamp_count += 1
                rho2 = VARIANCE_CLAMP
        logger.debug("%s iteration %d: objective %.6f", config.method, it, log.objectives[-1])
        if callback is not None:
            callback(it, model())
    final = model()
    log.objectives.append(_final_objective(final, X, Y))
    return final


def _objective(X, Y, proj, mu, P, sigma2, psi, rho2, beta, sumsq):
    """Marginal log-likelihood at the parameters used in the current E-step.

    Supervised models with beta > 0 score the joint (m, y) data with target
    noise rho^2 / beta; with beta = 0 only the supervectors are scored.
    """
    U, h = X.shape
    if psi is None:
        quad = sumsq / sigma2
        logdet = h * np.log(sigma2)
    else:
        quad = ((X ** 2) / psi).sum()
        logdet = np.log(psi).sum()
    dims = h
    if rho2 is not None and beta > 0:
        k = Y.shape[1]
        quad += beta * (Y ** 2).sum() / rho2
        logdet += k * np.log(rho2 / beta)
        dims += k
    quad -= (proj * mu).sum()
    logdet += spd_logdet(P)
    return float(-0.5 * (U * dims * LOG_2PI + U * logdet + quad))


def _final_objective(model, X, Y):
    if isinstance(model, SupervisedModel) and model.beta > 0:
        noise = np.concatenate([np.full(X.shape[1], model.sigma2),
                                np.full(Y.shape[1], model.rho2 / model.beta)])
        joint = FaModel(np.vstack([model.V, model.Q]), noise)
        return float(marginal_loglik(joint, np.hstack([X, Y])))
    return float(marginal_loglik(model, X))


def ppca_train(data, config, callback=None):
    """EM for PPCA from random V and sigma^2 = 1.

    ``callback(iteration, model)`` is invoked after every M-step.
    """
    return _fit(_matrix(data), config, callback=callback)


def fa_train(data, config, callback=None):
    """EM for factor analysis (diagonal noise Psi) from random V and Psi = I."""
    return _fit(_matrix(data), config, diagonal=True, callback=callback)


def _supervised_train(data, targets, config, method, callback):
    X = _matrix(data)
    if targets is None:
        raise MissingSupervision(f"{method} training needs supervision targets")
    Y = np.atleast_2d(targets.values)
    if Y.shape[0] != X.shape[0]:
        raise ValueError(f"{Y.shape[0]} targets for {X.shape[0]} supervectors")
    cfg = config if config.method == method else TvmConfig(**{**config.to_dict(), "method": method})
    model = _fit(X, cfg, Y=Y, callback=callback)
    object.__setattr__(model, "target_mean", np.asarray(targets.mean, dtype=np.float64))
    return model


def ppls_train(data, targets, config, callback=None):
    """Probabilistic partial least squares with one-hot speaker targets."""
    return _supervised_train(data, targets, config, "ppls", callback)


def sppca_train(data, targets, config, callback=None):
    """Supervised PPCA with speaker-dependent supervector targets."""
    return _supervised_train(data, targets, config, "sppca", callback)


# --------------------------------------------------------------------------
# supervision targets


def _speaker_index(speaker_ids, speakers):
    speaker_ids = list(speaker_ids)
    if speakers is None:
        speakers = sorted(set(speaker_ids))
    speakers = list(speakers)
    lookup = {s: i for i, s in enumerate(speakers)}
    missing = set(speaker_ids) - set(lookup)
    if missing:
        raise ValueError(f"utterances reference unknown speakers {sorted(missing)[:5]}")
    index = np.array([lookup[s] for s in speaker_ids])
    empty = [s for i, s in enumerate(speakers) if not np.any(index == i)]
    if empty:
        raise SpeakerWithNoUtterances(f"speakers without utterances: {empty[:5]}")
    return index, speakers


def one_hot_targets(speaker_ids, speakers=None):
    """Centered one-hot label targets for PPLS."""
    index, speakers = _speaker_index(speaker_ids, speakers)
    Y = np.zeros((index.size, len(speakers)))
    Y[np.arange(index.size), index] = 1.0
    mean = Y.mean(axis=0)
    return SupervisionTargets(Y - mean, mean, "labels", speakers)


def speaker_supervector_targets(ubm, stats, r, speaker_ids=None, speakers=None):
    """Centered speaker-dependent supervector targets for SPPCA.

    Each speaker's supervector is MAP-adapted from statistics pooled over
    all of that speaker's utterances; utterance u receives its speaker's
    supervector.
    """
    speaker_ids = stats.speaker_ids if speaker_ids is None else speaker_ids
    index, speakers = _speaker_index(speaker_ids, speakers)
    S = len(speakers)
    n = np.zeros((S, stats.n.shape[1]))
    f = np.zeros((S,) + stats.f.shape[1:])
    np.add.at(n, index, stats.n)
    np.add.at(f, index, stats.f)
    Y = map_adapt_matrix(ubm, n, f, r)[index]
    mean = Y.mean(axis=0)
    return SupervisionTargets(Y - mean, mean, "supervectors", speakers)
