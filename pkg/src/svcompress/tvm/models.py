"""Configuration, parameter containers and posterior types for the
total-variability models."""

from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np

METHODS = ("fefa", "pca", "ppca", "fa", "ppls", "sppca")


@dataclass(frozen=True)
class TvmConfig:
    d: int
    method: str = "ppca"
    iterations: int = 5
    max_principle: int = 1
    seed: int = 0
    beta: float = 1.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.max_principle not in (1, 2):
            raise ValueError("max_principle must be 1 or 2")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainingLog:
    """Per-iteration audit trail.

    ``objectives[k]`` is the training objective under the parameters in force
    after ``k`` iterations (``objectives[0]`` is the initialization).
    """

    objectives: list = field(default_factory=list)
    ridge_count: int = 0
    clamp_count: int = 0

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class IVectorPosterior:
    """Posterior N(mu, sigma) of the latent factor.

    ``mu`` is (d,) for one input or (U, d) for a batch.  ``sigma`` is (d, d)
    when shared by all utterances and (U, d, d) for batched FEFA.
    """

    mu: np.ndarray
    sigma: np.ndarray


class _Shared:
    """Caches the utterance-independent posterior of a supervector model."""

    @cached_property
    def posterior_cov(self):
        from .linalg import spd_inverse
        sigma, _ = spd_inverse(self.precision())
        sigma.setflags(write=False)
        return sigma


@dataclass(frozen=True)
class FefaModel:
    V: np.ndarray
    ubm: object
    config: TvmConfig = None
    log: TrainingLog = None
    method = "fefa"

    @property
    def d(self):
        return self.V.shape[1]


@dataclass(frozen=True)
class PcaModel:
    V: np.ndarray
    mean: np.ndarray
    singular_values: np.ndarray = None
    config: TvmConfig = None
    log: TrainingLog = None
    method = "pca"

    @property
    def d(self):
        return self.V.shape[1]


@dataclass(frozen=True)
class PpcaModel(_Shared):
    V: np.ndarray
    sigma2: float
    config: TvmConfig = None
    log: TrainingLog = None
    method = "ppca"

    @property
    def d(self):
        return self.V.shape[1]

    @property
    def noise(self):
        return np.full(self.V.shape[0], self.sigma2)

    def precision(self):
        d = self.V.shape[1]
        return np.eye(d) + (self.V.T @ self.V) / self.sigma2

    def projection(self, M):
        return (M @ self.V) / self.sigma2


@dataclass(frozen=True)
class FaModel(_Shared):
    V: np.ndarray
    psi: np.ndarray
    config: TvmConfig = None
    log: TrainingLog = None
    method = "fa"

    @property
    def d(self):
        return self.V.shape[1]

    @property
    def noise(self):
        return self.psi

    def precision(self):
        d = self.V.shape[1]
        return np.eye(d) + self.V.T @ (self.V / self.psi[:, None])

    def projection(self, M):
        return M @ (self.V / self.psi[:, None])


@dataclass(frozen=True)
class SupervisedModel(_Shared):
    """PPLS (one-hot label targets) or SPPCA (speaker supervector targets).

    ``target_mean`` is the training mean used to center targets; ``Q`` is
    (k, d) with k = number of speakers (PPLS) or h (SPPCA).
    """

    V: np.ndarray
    Q: np.ndarray
    sigma2: float
    rho2: float
    beta: float
    target_mean: np.ndarray
    method: str = "ppls"
    config: TvmConfig = None
    log: TrainingLog = None

    @property
    def d(self):
        return self.V.shape[1]

    def precision(self):
        """Precision of the supervector-only (test-side) posterior."""
        d = self.V.shape[1]
        return np.eye(d) + (self.V.T @ self.V) / self.sigma2

    def projection(self, M):
        return (M @ self.V) / self.sigma2

    @cached_property
    def trainside_cov(self):
        from .linalg import spd_inverse
        sigma, _ = spd_inverse(self.precision() + (self.beta / self.rho2) * (self.Q.T @ self.Q))
        sigma.setflags(write=False)
        return sigma

    def as_ppca(self):
        return PpcaModel(self.V, self.sigma2)


PplsModel = SupervisedModel
SppcaModel = SupervisedModel


@dataclass
class SupervisionTargets:
    """Centered per-utterance supervision targets.

    ``values`` is (U, k); ``mean`` the training target mean; ``kind`` is
    ``"labels"`` (one-hot, PPLS) or ``"supervectors"`` (SPPCA).
    """

    values: np.ndarray
    mean: np.ndarray
    kind: str = "labels"
    speakers: list = field(default_factory=list)

    @property
    def dim(self):
        return self.values.shape[1]
