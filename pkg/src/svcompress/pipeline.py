"""End-to-end experiment configuration and in-memory orchestration.

:class:`Experiment` caches the expensive front-end (synthetic corpus, UBM,
statistics) so that several TVM methods, relevance factors or iteration
counts can be compared on identical data.
"""

import logging
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from threadpoolctl import threadpool_limits

from . import backend, metrics, tvm
from .errors import ConfigInconsistent
from .gmm import accumulate_corpus, train_ubm
from .supervector import center_set, map_adapt_matrix
from .synth import SynthConfig, generate, make_trials
from .tvm import TvmConfig

logger = logging.getLogger(__name__)

SUPERVISED = ("ppls", "sppca")


@dataclass
class PipelineConfig:
    """Stage parameters for the whole pipeline.

    Defaults scale down a 1024-component / 400-dim i-vector / 200-dim PLDA
    system to desk size: 32 components, 40-dim i-vectors, 20-dim PLDA.
    ``seed`` is the master seed propagated to every stochastic stage.
    """

    synth: SynthConfig = field(default_factory=SynthConfig)
    ubm_components: int = 32
    ubm_iterations: int = 10
    relevance_factor: float = 1.0
    method: str = "ppca"
    d: int = 40
    iterations: int = 5
    max_principle: int = 1
    beta: float = 1.0
    plda_rank: int = 0
    plda_iterations: int = 10
    n_target: int = 5000
    n_nontarget: int = 5000
    seed: int = 0
    reproducible: bool = True
    threads: int = 1

    @property
    def supervector_dim(self):
        return self.ubm_components * self.synth.F

    @property
    def effective_plda_rank(self):
        return self.plda_rank or max(1, self.d // 2)

    def tvm_config(self):
        return TvmConfig(d=self.d, method=self.method, iterations=self.iterations,
                         max_principle=self.max_principle, seed=self.seed, beta=self.beta)

    def validate(self, stage="config"):
        if self.d >= self.supervector_dim:
            raise ConfigInconsistent(stage, "d", f"d={self.d} must be < h={self.supervector_dim}")
        if self.effective_plda_rank > self.d:
            raise ConfigInconsistent(stage, "plda_rank", f"q={self.effective_plda_rank} exceeds d={self.d}")
        if self.relevance_factor < 0:
            raise ConfigInconsistent(stage, "relevance_factor", "must be >= 0")
        if self.method not in tvm.METHODS:
            raise ConfigInconsistent(stage, "method", f"unknown method {self.method!r}")
        if self.max_principle not in (1, 2):
            raise ConfigInconsistent(stage, "max_principle", "must be 1 or 2")
        if self.iterations < 1:
            raise ConfigInconsistent(stage, "iterations", "must be >= 1")
        if self.beta < 0:
            raise ConfigInconsistent(stage, "beta", "must be >= 0")
        if self.threads < 1:
            raise ConfigInconsistent(stage, "threads", "must be >= 1")
        return self

    def with_seed(self, seed):
        return replace(self, seed=seed, synth=replace(self.synth, seed=seed))

    def to_dict(self):
        out = asdict(self)
        out["schema_version"] = 1
        return out

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data.pop("schema_version", None)
        synth = SynthConfig(**data.pop("synth", {}))
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigInconsistent("config", sorted(unknown)[0], "unknown configuration key")
        return cls(synth=synth, **data)


@contextmanager
def blas_threads(cfg):
    """Pin BLAS threads; the reproducible flag forces a single thread so that
    reductions happen in a fixed order."""
    with threadpool_limits(1 if cfg.reproducible else cfg.threads):
        yield


class Experiment:
    """One synthetic corpus plus its UBM and statistics, reused across runs."""

    def __init__(self, cfg):
        self.cfg = cfg.validate()
        self._sv_cache = {}
        with blas_threads(cfg):
            self.train_utts, self.eval_utts, self.truth = generate(cfg.synth)
            self.ubm = train_ubm(self.train_utts, cfg.ubm_components, cfg.ubm_iterations, seed=cfg.seed)
            self.train_stats = accumulate_corpus(self.ubm, self.train_utts, cfg.threads)
            self.eval_stats = accumulate_corpus(self.ubm, self.eval_utts, cfg.threads)
        self.trials = make_trials(self.truth, cfg.n_target, cfg.n_nontarget, seed=cfg.seed)
        self.train_speakers = list(self.train_stats.speaker_ids)

    def supervectors(self, r):
        if r not in self._sv_cache:
            train = center_set(map_adapt_matrix(self.ubm, self.train_stats.n, self.train_stats.f, r))
            evalm = map_adapt_matrix(self.ubm, self.eval_stats.n, self.eval_stats.f, r) - train.mean
            self._sv_cache[r] = (train, evalm)
        return self._sv_cache[r]

    def targets(self, method, r):
        if method == "ppls":
            return tvm.one_hot_targets(self.train_speakers)
        return tvm.speaker_supervector_targets(self.ubm, self.train_stats, r)

    def train_tvm(self, **overrides):
        cfg = replace(self.cfg, **overrides).validate("train-tvm")
        tcfg = cfg.tvm_config()
        r = cfg.relevance_factor
        with blas_threads(cfg):
            if tcfg.method == "fefa":
                return tvm.train(tcfg, stats=self.train_stats, ubm=self.ubm)
            train_sv, _ = self.supervectors(r)
            targets = self.targets(tcfg.method, r) if tcfg.method in SUPERVISED else None
            return tvm.train(tcfg, supervectors=train_sv, targets=targets)

    def ivectors(self, model, r=None):
        r = self.cfg.relevance_factor if r is None else r
        if isinstance(model, tvm.FefaModel):
            return tvm.extract(model, stats=self.train_stats), tvm.extract(model, stats=self.eval_stats)
        train_sv, eval_c = self.supervectors(r)
        return tvm.extract(model, train_sv.matrix), tvm.extract(model, eval_c)

    def evaluate(self, model, r=None):
        """Back-end training and trial scoring for one trained TVM.

        Returns ``(metrics_dict, scores, labels)``.
        """
        cfg = self.cfg
        with blas_threads(cfg):
            train_iv, eval_iv = self.ivectors(model, r)
            pp = backend.fit_postprocessor(train_iv)
            train_pp = pp.transform(train_iv)
            plda = backend.plda_train(train_pp, self.train_speakers, cfg.effective_plda_rank,
                                      cfg.plda_iterations, seed=cfg.seed)
            eval_pp = pp.transform(eval_iv)
            scores, labels = score_trials(plda, eval_pp, self.eval_stats.utterance_ids, self.trials)
        summary = metrics.summarize(scores, labels)
        return summary, scores, labels

    def run(self, **overrides):
        """Train with ``overrides`` applied to the config and evaluate."""
        model = self.train_tvm(**overrides)
        r = overrides.get("relevance_factor", self.cfg.relevance_factor)
        summary, _, _ = self.evaluate(model, r)
        summary["objectives"] = list(model.log.objectives) if getattr(model, "log", None) else []
        return summary


def score_trials(plda, ivectors, utterance_ids, trials):
    index = {u: i for i, u in enumerate(utterance_ids)}
    e = np.array([index[t.enroll] for t in trials])
    t = np.array([index[t.test] for t in trials])
    scores = backend.plda_score(plda, ivectors[e], ivectors[t])
    labels = np.array([tr.target for tr in trials])
    return scores, labels


def method_grid(methods=("fefa", "ppca", "fa", "ppls"), principles=(1, 2)):
    return [(m, p) for m in methods for p in principles]
