"""Wall-clock benchmark of TVM training.

Statistics and supervectors are prepared up front; the timers bracket only
the training iterations.  Per-iteration times come from the training
callback, so the final objective evaluation after the loop is excluded.
"""

import logging
import platform
import time
from dataclasses import asdict, dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from . import tvm
from .gmm import accumulate_corpus
from .supervector import center_set, map_adapt_matrix
from .synth import SynthConfig, generate

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BenchmarkConfig:
    U: int = 2000
    C: int = 256
    F: int = 20
    d: int = 100
    iterations: int = 5
    repetitions: int = 3
    max_principle: int = 1
    relevance_factor: float = 1.0
    seed: int = 0
    t_min: int = 200
    t_max: int = 400
    threads: int = 1
    fefa_threads: int = 1


@dataclass
class BenchmarkData:
    stats: object
    ubm: object
    supervectors: object
    targets: dict


def prepare(cfg):
    """Synthesize U utterances against a C-component generator GMM and
    compute statistics and centered supervectors (untimed)."""
    utts_per_speaker = 10
    n_speakers = -(-cfg.U // utts_per_speaker)
    synth = SynthConfig(n_speakers=n_speakers, utts_per_speaker=utts_per_speaker, eval_speakers=0,
                        t_min=cfg.t_min, t_max=cfg.t_max, F=cfg.F, C_true=cfg.C,
                        d_true=min(10, cfg.d), seed=cfg.seed)
    train, _, truth = generate(synth)
    train = train[:cfg.U]
    ubm = truth.ubm
    with threadpool_limits(cfg.threads):
        stats = accumulate_corpus(ubm, train)
    svs = center_set(map_adapt_matrix(ubm, stats.n, stats.f, cfg.relevance_factor))
    targets = {"ppls": tvm.one_hot_targets(stats.speaker_ids),
               "sppca": tvm.speaker_supervector_targets(ubm, stats, cfg.relevance_factor)}
    return BenchmarkData(stats, ubm, svs, targets)


def _time_once(method, cfg, data):
    tcfg = tvm.TvmConfig(d=cfg.d, method=method, iterations=cfg.iterations,
                         max_principle=cfg.max_principle, seed=cfg.seed)
    stamps = []
    start = time.perf_counter()
    model = tvm.train(tcfg, supervectors=data.supervectors, stats=data.stats, ubm=data.ubm,
                      targets=data.targets.get(method),
                      callback=lambda it, m: stamps.append(time.perf_counter()))
    end = time.perf_counter()
    if not stamps:  # non-iterative (PCA)
        stamps = [end]
    ticks = np.diff(np.concatenate([[start], stamps]))
    objectives = list(model.log.objectives) if model.log else []
    return ticks, objectives


def benchmark(methods, cfg=None, data=None):
    """Time TVM training for each method; returns a JSON-ready report."""
    cfg = cfg or BenchmarkConfig()
    data = data or prepare(cfg)
    U, h = data.supervectors.matrix.shape
    report = {"dimensions": {"U": U, "C": cfg.C, "F": cfg.F, "d": cfg.d, "h": h},
              "iterations": cfg.iterations, "repetitions": cfg.repetitions,
              "max_principle": cfg.max_principle, "machine": platform.machine(),
              "methods": []}
    for method in methods:
        threads = cfg.fefa_threads if method == "fefa" else cfg.threads
        runs = []
        with threadpool_limits(threads):
            for rep in range(cfg.repetitions):
                ticks, objectives = _time_once(method, cfg, data)
                runs.append(ticks)
                logger.info("%s repetition %d: %.3f s", method, rep, ticks.sum())
        runs = np.array(runs)
        entry = {"method": method, "threads": threads,
                 "per_iteration_seconds": np.median(runs, axis=0).tolist(),
                 "median_per_iteration_seconds": float(np.median(runs)),
                 "median_total_seconds": float(np.median(runs.sum(axis=1))),
                 "objectives": objectives}
        report["methods"].append(entry)
    by = {m["method"]: m for m in report["methods"]}
    if "fefa" in by:
        base = by["fefa"]["median_per_iteration_seconds"]
        report["speedup_vs_fefa"] = {m: base / e["median_per_iteration_seconds"]
                                     for m, e in by.items() if m != "fefa"}
    report["config"] = asdict(cfg)
    return report
