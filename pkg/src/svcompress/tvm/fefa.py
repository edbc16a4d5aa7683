"""Front-end factor analysis: i-vector extraction and total-variability
training directly from Baum-Welch statistics.

Posterior covariances depend on each utterance's occupancies, so every
utterance needs its own d x d factorization.  Training therefore works on
chunks of utterances with stacked (batched) Cholesky factorizations.
"""

import logging
import warnings

import numpy as np

from ..errors import DimensionMismatch, RidgeApplied, SingularAccumulator, SingularPrecision
from .latent import init_loadings
from .linalg import RIDGE, spd_solve
from .models import FefaModel, IVectorPosterior, TrainingLog

logger = logging.getLogger(__name__)

CHUNK = 256
ACCUMULATOR_RIDGE = 1e-8


def _component_blocks(V, ubm):
    """V_c' Sigma_c^{-1} V_c for every component, shape (C, d, d), and
    Sigma^{-1} V laid out as (h, d)."""
    C, F = ubm.means.shape
    d = V.shape[1]
    prec = (1.0 / ubm.variances).reshape(-1)
    SV = V * prec[:, None]
    blocks = np.matmul(V.reshape(C, F, d).transpose(0, 2, 1), SV.reshape(C, F, d))
    return blocks, SV


def _check(V, ubm):
    if V.shape[0] != ubm.supervector_dim:
        raise DimensionMismatch(f"V has {V.shape[0]} rows, UBM supervector dim is {ubm.supervector_dim}")


def fefa_extract(stats, V, ubm):
    """Posterior of the i-vector for one utterance's statistics.

    Sigma(u) = (I + sum_c n_c V_c' S_c^-1 V_c)^-1 and
    mu(u) = Sigma(u) sum_c V_c' S_c^-1 (f_c - n_c mu_c).
    """
    _check(V, ubm)
    blocks, SV = _component_blocks(V, ubm)
    d = V.shape[1]
    P = np.eye(d) + np.tensordot(stats.n, blocks, axes=1)
    centered = (stats.f - stats.n[:, None] * ubm.means).reshape(-1)
    b = centered @ SV
    sol, _ = spd_solve(P, np.column_stack([b, np.eye(d)]))
    sigma = 0.5 * (sol[:, 1:] + sol[:, 1:].T)
    return IVectorPosterior(sol[:, 0], sigma)


def _batched_cholesky(P):
    try:
        return np.linalg.cholesky(P), 0
    except np.linalg.LinAlgError:
        pass
    L = np.empty_like(P)
    ridged = 0
    eye = np.eye(P.shape[-1])
    for i, Pi in enumerate(P):
        try:
            L[i] = np.linalg.cholesky(Pi)
        except np.linalg.LinAlgError:
            warnings.warn("FEFA precision not positive definite; adding ridge", RidgeApplied, stacklevel=3)
            ridged += 1
            try:
                L[i] = np.linalg.cholesky(Pi + RIDGE * max(1.0, np.abs(np.diag(Pi)).max()) * eye)
            except np.linalg.LinAlgError as exc:
                raise SingularPrecision(f"utterance {i} precision is not positive definite") from exc
    return L, ridged


def fefa_posteriors(n, f_centered, V, ubm, blocks=None, SV=None):
    """Batched posteriors for stacked statistics.

    ``n`` is (U, C); ``f_centered`` is (U, h) or (U, C, F) first-order stats
    already centered on the UBM means.  Returns
    ``(mu, sigma, logdet_P, b, ridge_count)`` with array shapes (U, d),
    (U, d, d), (U,), (U, d).
    """
    if blocks is None:
        blocks, SV = _component_blocks(V, ubm)
    U = n.shape[0]
    d = V.shape[1]
    P = (n @ blocks.reshape(blocks.shape[0], -1)).reshape(U, d, d)
    P[:, np.arange(d), np.arange(d)] += 1.0
    b = f_centered.reshape(U, -1) @ SV
    L, ridged = _batched_cholesky(P)
    Linv = np.linalg.inv(L)
    sigma = np.matmul(Linv.transpose(0, 2, 1), Linv)
    mu = np.matmul(sigma, b[:, :, None])[:, :, 0]
    logdet = 2.0 * np.log(np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)
    return mu, sigma, logdet, b, ridged


def fefa_extract_batch(stats, model_or_V, ubm=None, chunk=CHUNK):
    """I-vectors (posterior means) for a :class:`~svcompress.gmm.StatsSet`."""
    if isinstance(model_or_V, FefaModel):
        V, ubm = model_or_V.V, model_or_V.ubm
    else:
        V = model_or_V
    _check(V, ubm)
    blocks, SV = _component_blocks(V, ubm)
    out = np.empty((len(stats), V.shape[1]))
    for start in range(0, len(stats), chunk):
        sl = slice(start, start + chunk)
        fc = stats.f[sl] - stats.n[sl][:, :, None] * ubm.means[None]
        out[sl] = fefa_posteriors(stats.n[sl], fc, V, ubm, blocks, SV)[0]
    return out


def fefa_train(stats, ubm, config, callback=None, chunk=CHUNK):
    """Iterative training of the total variability matrix from statistics.

    Each iteration computes Sigma(u), mu(u) and E[ww'](u) for all utterances
    with V fixed, then sets, per component,
    V_c = (sum_u f~_c(u) mu(u)') (sum_u n_c(u) E[ww'](u))^{-1}
    where f~_c are first-order statistics centered on the UBM mean.  Under
    principle 1, E[ww'] = Sigma(u) + mu mu'; under principle 2, mu mu'.

    ``log.objectives[k]`` holds sum_u (b(u)' mu(u) - log|P(u)|) / 2, the
    statistics log-likelihood up to a V-independent constant, for the
    parameters in force after ``k`` iterations.
    """
    n_all = stats.n
    U, C = n_all.shape
    F = ubm.dim
    d = config.d
    h = C * F
    if C != ubm.n_components:
        raise DimensionMismatch(f"stats have {C} components, UBM has {ubm.n_components}")
    if U < d:
        raise ValueError(f"need at least d={d} utterances, got {U}")
    if d > h:
        raise ValueError(f"d={d} must not exceed the supervector dimension {h}")
    f_all = stats.f.reshape(U, h) - (n_all[:, :, None] * ubm.means[None]).reshape(U, h)
    rng = np.random.default_rng(config.seed)
    V = init_loadings(rng, h, d)
    log = TrainingLog()
    occupancy = n_all.sum(axis=0)
    dead = occupancy <= 0
    if dead.any():
        warnings.warn(f"components {np.flatnonzero(dead).tolist()} have zero occupancy; "
                      f"adding ridge {ACCUMULATOR_RIDGE}*I to their accumulators",
                      SingularAccumulator, stacklevel=2)

    for it in range(config.iterations):
        blocks, SV = _component_blocks(V, ubm)
        acc_e = np.zeros((C, d * d))
        acc_f = np.zeros((h, d))
        objective = 0.0
        for start in range(0, U, chunk):
            sl = slice(start, start + chunk)
            n = n_all[sl]
            fc = f_all[sl]
            mu, sigma, logdet, b, ridged = fefa_posteriors(n, fc, V, ubm, blocks, SV)
            log.ridge_count += ridged
            objective += 0.5 * ((b * mu).sum() - logdet.sum())
            E = mu[:, :, None] * mu[:, None, :]
            if config.max_principle == 1:
                E += sigma
            acc_e += n.T @ E.reshape(len(mu), -1)
            acc_f += fc.T @ mu
        log.objectives.append(float(objective))
        acc_e = acc_e.reshape(C, d, d)
        if dead.any():
            acc_e[dead] += ACCUMULATOR_RIDGE * np.eye(d)
        V = _solve_components(acc_f.reshape(C, F, d), acc_e, log).reshape(h, d)
        logger.debug("fefa iteration %d: objective %.6f", it, objective)
        if callback is not None:
            callback(it, FefaModel(V, ubm, config, log))
    model = FefaModel(V, ubm, config, log)
    log.objectives.append(fefa_objective(model, stats, chunk))
    return model


def _solve_components(acc_f, acc_e, log):
    """V_c = acc_f[c] @ inv(acc_e[c]) for every component."""
    try:
        L = np.linalg.cholesky(acc_e)
    except np.linalg.LinAlgError:
        out = np.empty_like(acc_f)
        for c in range(acc_e.shape[0]):
            x, ridged = spd_solve(acc_e[c], acc_f[c].T)
            log.ridge_count += ridged
            out[c] = x.T
        return out
    # A^{-1} B' = L'^{-1} L^{-1} B'
    Linv = np.linalg.inv(L)
    return np.matmul(np.matmul(acc_f, Linv.transpose(0, 2, 1)), Linv)


def fefa_objective(model, stats, chunk=CHUNK):
    V, ubm = model.V, model.ubm
    blocks, SV = _component_blocks(V, ubm)
    total = 0.0
    for start in range(0, len(stats), chunk):
        sl = slice(start, start + chunk)
        fc = stats.f[sl] - stats.n[sl][:, :, None] * ubm.means[None]
        mu, _, logdet, b, _ = fefa_posteriors(stats.n[sl], fc, V, ubm, blocks, SV)
        total += 0.5 * ((b * mu).sum() - logdet.sum())
    return float(total)
