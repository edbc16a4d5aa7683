"""Relevance-MAP adaptation of UBM means and supervector centering."""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, EmptySet, NegativeRelevanceFactor


@dataclass
class Supervector:
    """Component-major concatenation of adapted means; component c occupies
    ``values[c*F:(c+1)*F]``."""

    values: np.ndarray
    utterance_id: str = ""


@dataclass
class SupervectorSet:
    matrix: np.ndarray
    mean: np.ndarray
    centered: bool = True
    utterance_ids: list = field(default_factory=list)

    def __len__(self):
        return self.matrix.shape[0]

    @property
    def dim(self):
        return self.matrix.shape[1]


def relevance_weights(n, r):
    """alpha_c = n_c / (n_c + r); zero where n_c = 0 (including r = 0)."""
    if r < 0:
        raise NegativeRelevanceFactor(f"relevance factor must be >= 0, got {r}")
    n = np.asarray(n, dtype=np.float64)
    denom = n + r
    return np.divide(n, denom, out=np.zeros_like(n), where=denom > 0)


def map_adapt_matrix(ubm, n, f, r):
    """Vectorized MAP adaptation for stacked statistics.

    ``n`` is (U, C) and ``f`` is (U, C, F) raw first-order sums; returns the
    (U, C*F) matrix of supervectors.
    """
    n = np.atleast_2d(n)
    f = f.reshape(n.shape[0], *ubm.means.shape)
    if n.shape[1] != ubm.n_components:
        raise DimensionMismatch(f"stats have {n.shape[1]} components, UBM has {ubm.n_components}")
    alpha = relevance_weights(n, r)
    first_moment = np.divide(f, n[:, :, None], out=np.zeros_like(f), where=n[:, :, None] > 0)
    adapted = alpha[:, :, None] * first_moment + (1.0 - alpha[:, :, None]) * ubm.means[None]
    return adapted.reshape(n.shape[0], -1)


def map_adapt(ubm, stats, r):
    """Adapt UBM means towards one utterance's data.

    mu_hat_c = alpha_c * (f_c / n_c) + (1 - alpha_c) * mu_c. Components with
    n_c = 0 keep the UBM mean.
    """
    if stats.f.shape != ubm.means.shape:
        raise DimensionMismatch(f"stats shape {stats.f.shape} != UBM means shape {ubm.means.shape}")
    values = map_adapt_matrix(ubm, stats.n[None], stats.f[None], r)[0]
    return Supervector(values, stats.utterance_id)


def center_set(supervectors):
    """Center a training set on its own column means.

    Accepts a sequence of :class:`Supervector` or a (U, h) array.
    """
    if isinstance(supervectors, np.ndarray):
        M = np.atleast_2d(supervectors).astype(np.float64)
        ids = []
    else:
        supervectors = list(supervectors)
        if not supervectors:
            raise EmptySet("cannot center an empty supervector set")
        M = np.stack([s.values for s in supervectors])
        ids = [s.utterance_id for s in supervectors]
    if M.shape[0] == 0:
        raise EmptySet("cannot center an empty supervector set")
    mean = M.mean(axis=0)
    return SupervectorSet(M - mean, mean, True, ids)


def apply_centering(mean, sv):
    if isinstance(sv, Supervector):
        return Supervector(sv.values - mean, sv.utterance_id)
    return np.asarray(sv) - mean


def apply_centering_inverse(mean, sv):
    if isinstance(sv, Supervector):
        return Supervector(sv.values + mean, sv.utterance_id)
    return np.asarray(sv) + mean
