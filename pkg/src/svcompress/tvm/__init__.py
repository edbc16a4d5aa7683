"""Total-variability models: training and i-vector extraction."""

import numpy as np

from .fefa import fefa_extract, fefa_extract_batch, fefa_posteriors, fefa_train
from .latent import (fa_extract, fa_train, marginal_loglik, one_hot_targets, pca_extract,
                     pca_train, ppca_extract, ppca_marginal_loglik, ppca_train,
                     ppls_extract_label_prediction, ppls_extract_testside,
                     ppls_extract_trainside, ppls_train, predict_targets,
                     speaker_supervector_targets, sppca_train)
from .models import (METHODS, FaModel, FefaModel, IVectorPosterior, PcaModel, PpcaModel,
                     SupervisedModel, SupervisionTargets, TrainingLog, TvmConfig)
from .posterior_check import verify_posterior_appendix, verify_random_models

__all__ = [
    "METHODS", "TvmConfig", "TrainingLog", "IVectorPosterior", "SupervisionTargets",
    "FefaModel", "PcaModel", "PpcaModel", "FaModel", "SupervisedModel",
    "fefa_extract", "fefa_extract_batch", "fefa_posteriors", "fefa_train",
    "pca_train", "pca_extract", "ppca_train", "ppca_extract", "fa_train", "fa_extract",
    "ppls_train", "sppca_train", "ppls_extract_trainside", "ppls_extract_testside",
    "ppls_extract_label_prediction", "predict_targets", "marginal_loglik",
    "ppca_marginal_loglik", "one_hot_targets", "speaker_supervector_targets",
    "verify_posterior_appendix", "verify_random_models", "train", "extract",
]


def train(config, supervectors=None, stats=None, ubm=None, targets=None, callback=None):
    """Train the model named by ``config.method``.

    FEFA needs ``stats`` and ``ubm``; the supervector methods need a centered
    ``supervectors`` set; PPLS and SPPCA also need ``targets``.
    """
    method = config.method
    if method == "fefa":
        return fefa_train(stats, ubm, config, callback=callback)
    if method == "pca":
        model = pca_train(supervectors, config.d)
        return model
    if method == "ppca":
        return ppca_train(supervectors, config, callback=callback)
    if method == "fa":
        return fa_train(supervectors, config, callback=callback)
    if method == "ppls":
        return ppls_train(supervectors, targets, config, callback=callback)
    if method == "sppca":
        return sppca_train(supervectors, targets, config, callback=callback)
    raise ValueError(f"unknown method {method!r}")


def extract(model, centered=None, stats=None):
    """I-vectors for a batch: centered supervectors (U, h) for supervector
    models, or a StatsSet for FEFA.  Supervised models use the test-side
    (PPCA-form) extraction."""
    if isinstance(model, FefaModel):
        return fefa_extract_batch(stats, model)
    if isinstance(model, PcaModel):
        return pca_extract(model, centered, centered=True)
    return ppca_extract(model, np.atleast_2d(centered)).mu
