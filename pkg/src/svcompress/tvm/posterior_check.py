"""Pointwise numerical check of the PPCA latent posterior against Bayes' rule."""

import numpy as np
from scipy.stats import multivariate_normal

from .latent import marginal_loglik, ppca_extract
from .models import PpcaModel

LOG_2PI = np.log(2.0 * np.pi)


def random_ppca_model(rng, h=20, d=3):
    V = rng.standard_normal((h, d)) * rng.uniform(0.3, 2.0)
    return PpcaModel(V, float(rng.uniform(0.1, 2.0)))


def _log_isotropic(x, mean, var):
    r = x - mean
    return -0.5 * (r.size * (LOG_2PI + np.log(var)) + r @ r / var)


def verify_posterior_appendix(model, trials=100, seed=0):
    """Compare log p(w|m) from the closed-form posterior with
    log p(w) + log p(m|w) - log p(m) on random (w, m) pairs.

    Returns a dict with the largest absolute discrepancy and the per-trial
    values.
    """
    rng = np.random.default_rng(seed)
    h, d = model.V.shape
    post_cov = model.posterior_cov
    gaps = []
    for _ in range(trials):
        w = rng.standard_normal(d)
        m = model.V @ w + np.sqrt(model.sigma2) * rng.standard_normal(h)
        w_eval = w + rng.standard_normal(d)
        post = ppca_extract(model, m)
        lhs = multivariate_normal.logpdf(w_eval, post.mu, post_cov)
        rhs = (_log_isotropic(w_eval, 0.0, 1.0)
               + _log_isotropic(m, model.V @ w_eval, model.sigma2)
               - marginal_loglik(model, m[None]))
        gaps.append(abs(lhs - rhs))
    gaps = np.asarray(gaps)
    return {"trials": trials, "h": h, "d": d,
            "max_discrepancy": float(gaps.max(initial=0.0)), "discrepancies": gaps.tolist()}


def verify_random_models(n_models=100, h=20, d=3, seed=0):
    """Run one trial on each of ``n_models`` freshly drawn PPCA models."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(n_models):
        model = random_ppca_model(rng, h, d)
        worst = max(worst, verify_posterior_appendix(model, trials=1, seed=seed + i)["max_discrepancy"])
    return {"models": n_models, "h": h, "d": d, "max_discrepancy": worst}
