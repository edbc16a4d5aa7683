"""On-disk pipeline stages.

Layout under the work directory::

    config.json                       resolved configuration
    corpus/{train,eval}.svmc          frames, utterance and speaker ids
    corpus/truth.svmc, trials.txt     generator ground truth, trial list
    corpus/manifest.json              speaker map, trial list, truth path
    ubm.svmc
    stats/{train,eval}.svmc
    supervectors/{train,eval}.svmc    centered with the training mean
    tvm/<tag>.svmc                    tag = <method>-p<principle>
    ivectors/<tag>-{train,eval}.svmc
    backend/<tag>.svmc                post-processor and PLDA
    scores/<tag>.txt                  "enroll test score label"
    det/<tag>.csv, figures/det.png
    metrics.json                      keyed by method, then principle
    manifests/<stage>[-<tag>].json    input hashes + config per stage run

Every stage is a deterministic function of its inputs and the config.
"""

import logging
import os
from pathlib import Path

import numpy as np

from . import backend, metrics, persist, tvm
from .errors import MissingUpstream
from .gmm import accumulate_corpus, train_ubm
from .io import file_sha256, read_json, write_json
from .pipeline import blas_threads
from .supervector import SupervectorSet, center_set, map_adapt_matrix
from .synth import generate, make_trials, read_trials, write_trials

logger = logging.getLogger(__name__)

STAGES = ("synth", "train-ubm", "stats", "supervectors", "train-tvm", "extract",
          "train-backend", "score", "evaluate")


class Workdir:
    def __init__(self, root):
        self.root = Path(root)

    def __truediv__(self, other):
        return self.root / other

    def tag(self, cfg):
        return f"{cfg.method}-p{cfg.max_principle}"

    def need(self, stage, *paths):
        for p in paths:
            if not Path(p).exists():
                raise MissingUpstream(stage, p)

    def out(self, rel):
        p = self.root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        return p


def _manifest(wd, stage, cfg, inputs, outputs, suffix=""):
    rel = lambda p: os.path.relpath(p, wd.root)
    entry = {"stage": stage, "config": cfg.to_dict(),
             "inputs": {rel(p): file_sha256(p) for p in inputs},
             "outputs": {rel(p): file_sha256(p) for p in outputs}}
    write_json(wd.out(f"manifests/{stage}{suffix}.json"), entry)
    return entry


def stage_synth(wd, cfg):
    train, evaluation, truth = generate(cfg.synth)
    trials = make_trials(truth, cfg.n_target, cfg.n_nontarget, seed=cfg.seed)
    outs = [wd.out("corpus/train.svmc"), wd.out("corpus/eval.svmc"), wd.out("corpus/truth.svmc"),
            wd.out("corpus/trials.txt")]
    persist.save_corpus(outs[0], train)
    persist.save_corpus(outs[1], evaluation)
    persist.save_truth(outs[2], truth)
    write_trials(outs[3], trials)
    speaker_map = {}
    for u in train + evaluation:
        speaker_map.setdefault(u.speaker_id, []).append(u.utterance_id)
    write_json(wd.out("corpus/manifest.json"),
               {"speakers": speaker_map, "train_speakers": truth.train_speakers,
                "eval_speakers": truth.eval_speakers, "trials": "trials.txt", "truth": "truth.svmc",
                "n_target": cfg.n_target, "n_nontarget": cfg.n_nontarget})
    outs.append(wd / "corpus/manifest.json")
    return _manifest(wd, "synth", cfg, [], outs)


def stage_train_ubm(wd, cfg):
    src = wd / "corpus/train.svmc"
    wd.need("train-ubm", src)
    corpus = persist.load_corpus(src)
    ubm, history = train_ubm(corpus, cfg.ubm_components, cfg.ubm_iterations, seed=cfg.seed,
                             return_history=True)
    out = wd.out("ubm.svmc")
    persist.save_gmm(out, ubm, {"loglik_history": history})
    return _manifest(wd, "train-ubm", cfg, [src], [out])


def stage_stats(wd, cfg):
    ubm_path = wd / "ubm.svmc"
    srcs = [wd / "corpus/train.svmc", wd / "corpus/eval.svmc"]
    wd.need("stats", ubm_path, *srcs)
    ubm = persist.load_gmm(ubm_path)
    outs = []
    for split, src in zip(("train", "eval"), srcs):
        stats = accumulate_corpus(ubm, persist.load_corpus(src), cfg.threads)
        out = wd.out(f"stats/{split}.svmc")
        persist.save_stats(out, stats)
        outs.append(out)
    return _manifest(wd, "stats", cfg, [ubm_path, *srcs], outs)


def stage_supervectors(wd, cfg):
    ubm_path = wd / "ubm.svmc"
    srcs = [wd / "stats/train.svmc", wd / "stats/eval.svmc"]
    wd.need("supervectors", ubm_path, *srcs)
    ubm = persist.load_gmm(ubm_path)
    r = cfg.relevance_factor
    train_stats, eval_stats = (persist.load_stats(p) for p in srcs)
    train = center_set(map_adapt_matrix(ubm, train_stats.n, train_stats.f, r))
    train.utterance_ids = train_stats.utterance_ids
    evalm = map_adapt_matrix(ubm, eval_stats.n, eval_stats.f, r) - train.mean
    evalset = SupervectorSet(evalm, train.mean, True, eval_stats.utterance_ids)
    outs = [wd.out("supervectors/train.svmc"), wd.out("supervectors/eval.svmc")]
    persist.save_supervectors(outs[0], train, train_stats.speaker_ids, {"relevance_factor": r})
    persist.save_supervectors(outs[1], evalset, eval_stats.speaker_ids, {"relevance_factor": r})
    return _manifest(wd, "supervectors", cfg, [ubm_path, *srcs], outs)


def stage_train_tvm(wd, cfg):
    cfg.validate("train-tvm")
    tcfg = cfg.tvm_config()
    tag = wd.tag(cfg)
    out = wd.out(f"tvm/{tag}.svmc")
    if tcfg.method == "fefa":
        inputs = [wd / "ubm.svmc", wd / "stats/train.svmc"]
        wd.need("train-tvm", *inputs)
        model = tvm.train(tcfg, stats=persist.load_stats(inputs[1]), ubm=persist.load_gmm(inputs[0]))
    else:
        inputs = [wd / "supervectors/train.svmc"]
        wd.need("train-tvm", *inputs)
        svset, meta = persist.load_supervectors(inputs[0])
        targets = None
        if tcfg.method == "ppls":
            targets = tvm.one_hot_targets(meta["speaker_ids"])
        elif tcfg.method == "sppca":
            inputs += [wd / "ubm.svmc", wd / "stats/train.svmc"]
            wd.need("train-tvm", *inputs)
            targets = tvm.speaker_supervector_targets(persist.load_gmm(inputs[1]), persist.load_stats(inputs[2]),
                                                      meta["relevance_factor"])
        model = tvm.train(tcfg, supervectors=svset, targets=targets)
    persist.save_model(out, model)
    return _manifest(wd, "train-tvm", cfg, inputs, [out], f"-{tag}")


def stage_extract(wd, cfg):
    tag = wd.tag(cfg)
    model_path = wd / f"tvm/{tag}.svmc"
    wd.need("extract", model_path)
    model = persist.load_model(model_path)
    inputs = [model_path]
    outs = []
    for split in ("train", "eval"):
        if cfg.method == "fefa":
            src = wd / f"stats/{split}.svmc"
            wd.need("extract", src)
            stats = persist.load_stats(src)
            iv = tvm.extract(model, stats=stats)
            uids, spk = stats.utterance_ids, stats.speaker_ids
        else:
            src = wd / f"supervectors/{split}.svmc"
            wd.need("extract", src)
            svset, meta = persist.load_supervectors(src)
            iv = tvm.extract(model, svset.matrix)
            uids, spk = svset.utterance_ids, meta["speaker_ids"]
        out = wd.out(f"ivectors/{tag}-{split}.svmc")
        persist.save_ivectors(out, iv, uids, spk)
        inputs.append(src)
        outs.append(out)
    return _manifest(wd, "extract", cfg, inputs, outs, f"-{tag}")


def stage_train_backend(wd, cfg):
    tag = wd.tag(cfg)
    src = wd / f"ivectors/{tag}-train.svmc"
    wd.need("train-backend", src)
    iv, _, spk = persist.load_ivectors(src)
    pp = backend.fit_postprocessor(iv)
    plda = backend.plda_train(pp.transform(iv), spk, cfg.effective_plda_rank, cfg.plda_iterations, seed=cfg.seed)
    out = wd.out(f"backend/{tag}.svmc")
    persist.save_backend(out, pp, plda)
    return _manifest(wd, "train-backend", cfg, [src], [out], f"-{tag}")


def stage_score(wd, cfg):
    tag = wd.tag(cfg)
    inputs = [wd / f"backend/{tag}.svmc", wd / f"ivectors/{tag}-eval.svmc", wd / "corpus/trials.txt"]
    wd.need("score", *inputs)
    pp, plda = persist.load_backend(inputs[0])
    iv, uids, _ = persist.load_ivectors(inputs[1])
    trials = read_trials(inputs[2])
    index = {u: i for i, u in enumerate(uids)}
    e = np.array([index[t.enroll] for t in trials])
    t = np.array([index[t.test] for t in trials])
    ivp = pp.transform(iv)
    scores = backend.plda_score(plda, ivp[e], ivp[t])
    out = wd.out(f"scores/{tag}.txt")
    with open(out, "w") as fh:
        for tr, s in zip(trials, scores):
            fh.write(f"{tr.enroll} {tr.test} {float(s)!r} {'target' if tr.target else 'nontarget'}\n")
    return _manifest(wd, "score", cfg, inputs, [out], f"-{tag}")


def read_scores(path):
    scores, labels = [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if len(parts) < 4:
                continue
            scores.append(float(parts[2]))
            labels.append(parts[3] == "target")
    return np.array(scores), np.array(labels)


def stage_evaluate(wd, cfg):
    from .plotting import plot_det
    tag = wd.tag(cfg)
    src = wd / f"scores/{tag}.txt"
    wd.need("evaluate", src)
    scores, labels = read_scores(src)
    trials = metrics.TrialSet(scores, labels)
    summary = metrics.summarize(trials)
    curve = metrics.det_curve(trials)
    det_path = wd.out(f"det/{tag}.csv")
    metrics.write_det_csv(det_path, curve)
    metrics_path = wd / "metrics.json"
    report = read_json(metrics_path) if metrics_path.exists() else {}
    report.setdefault(cfg.method, {})[str(cfg.max_principle)] = summary
    write_json(metrics_path, report)
    curves = {}
    for p in sorted((wd / "det").glob("*.csv")):
        curves[p.stem] = metrics.read_det_csv(p)
    plot_det(curves, wd.out("figures/det.png"))
    return _manifest(wd, "evaluate", cfg, [src], [det_path, metrics_path], f"-{tag}")


_RUNNERS = {
    "synth": stage_synth, "train-ubm": stage_train_ubm, "stats": stage_stats,
    "supervectors": stage_supervectors, "train-tvm": stage_train_tvm, "extract": stage_extract,
    "train-backend": stage_train_backend, "score": stage_score, "evaluate": stage_evaluate,
}


def run_stage(name, cfg, workdir):
    """Run one named stage against ``workdir``; returns its manifest."""
    if name not in _RUNNERS:
        raise ValueError(f"unknown stage {name!r}; expected one of {STAGES}")
    wd = Workdir(workdir)
    wd.root.mkdir(parents=True, exist_ok=True)
    cfg.validate(name)
    write_json(wd / "config.json", cfg.to_dict())
    with blas_threads(cfg):
        logger.info("running stage %s in %s", name, wd.root)
        return _RUNNERS[name](wd, cfg)


def run_all(cfg, workdir, stages=STAGES):
    return [run_stage(s, cfg, workdir) for s in stages]
