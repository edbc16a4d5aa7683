"""Save/load of pipeline artifacts in the SVMC container format."""

import numpy as np

from . import backend
from .errors import FormatError
from .gmm import DiagonalGmm, FeatureMatrix, StatsSet
from .io import read_container, write_container
from .supervector import SupervectorSet
from .synth import SynthTruth
from .tvm import FaModel, FefaModel, PcaModel, PpcaModel, SupervisedModel, TrainingLog, TvmConfig


def _kind(meta, expected, path):
    if meta.get("kind") != expected:
        raise FormatError(f"{path}: expected a '{expected}' container, found '{meta.get('kind')}'")


def save_corpus(path, utterances):
    offsets = np.cumsum([0] + [u.n_frames for u in utterances])
    frames = np.concatenate([u.frames for u in utterances]) if utterances else np.zeros((0, 0))
    write_container(path, {"frames": frames, "offsets": offsets.astype(float)},
                    {"kind": "corpus", "utterance_ids": [u.utterance_id for u in utterances],
                     "speaker_ids": [u.speaker_id for u in utterances]})


def load_corpus(path):
    arrays, meta = read_container(path)
    _kind(meta, "corpus", path)
    off = arrays["offsets"].astype(np.int64)
    frames = arrays["frames"]
    return [FeatureMatrix(frames[off[i]:off[i + 1]], uid, spk)
            for i, (uid, spk) in enumerate(zip(meta["utterance_ids"], meta["speaker_ids"]))]


def _gmm_arrays(gmm, prefix=""):
    return {f"{prefix}weights": gmm.weights, f"{prefix}means": gmm.means, f"{prefix}variances": gmm.variances}


def _gmm_from(arrays, prefix=""):
    return DiagonalGmm(arrays[f"{prefix}weights"], arrays[f"{prefix}means"], arrays[f"{prefix}variances"])


def save_gmm(path, gmm, meta=None):
    write_container(path, _gmm_arrays(gmm), {"kind": "gmm", **(meta or {})})


def load_gmm(path):
    arrays, meta = read_container(path)
    _kind(meta, "gmm", path)
    return _gmm_from(arrays)


def save_truth(path, truth):
    speakers = sorted(truth.speaker_factors)
    write_container(path, {"V": truth.V, "factors": np.stack([truth.speaker_factors[s] for s in speakers]),
                           **_gmm_arrays(truth.ubm, "ubm_")},
                    {"kind": "truth", "speakers": speakers, "train_speakers": truth.train_speakers,
                     "eval_speakers": truth.eval_speakers, "utt_speaker": truth.utt_speaker})


def load_truth(path):
    arrays, meta = read_container(path)
    _kind(meta, "truth", path)
    factors = dict(zip(meta["speakers"], arrays["factors"]))
    return SynthTruth(arrays["V"], factors, _gmm_from(arrays, "ubm_"), meta["train_speakers"],
                      meta["eval_speakers"], meta["utt_speaker"])


def save_stats(path, stats):
    write_container(path, {"n": stats.n, "f": stats.f},
                    {"kind": "stats", "utterance_ids": stats.utterance_ids, "speaker_ids": stats.speaker_ids})


def load_stats(path):
    arrays, meta = read_container(path)
    _kind(meta, "stats", path)
    return StatsSet(arrays["n"], arrays["f"], meta["utterance_ids"], meta["speaker_ids"])


def save_supervectors(path, svset, speaker_ids=(), meta=None):
    write_container(path, {"matrix": svset.matrix, "mean": svset.mean},
                    {"kind": "supervectors", "centered": svset.centered, "utterance_ids": svset.utterance_ids,
                     "speaker_ids": list(speaker_ids), **(meta or {})})


def load_supervectors(path):
    arrays, meta = read_container(path)
    _kind(meta, "supervectors", path)
    return SupervectorSet(arrays["matrix"], arrays["mean"], meta["centered"], meta["utterance_ids"]), meta


def save_model(path, model, meta=None):
    """Write any TVM with its method tag, dimensions, config and training log."""
    arrays = {"V": model.V}
    if isinstance(model, FefaModel):
        arrays.update(_gmm_arrays(model.ubm, "ubm_"))
    elif isinstance(model, PcaModel):
        arrays["mean"] = model.mean
        arrays["singular_values"] = model.singular_values
    elif isinstance(model, PpcaModel):
        arrays["sigma2"] = np.array([model.sigma2])
    elif isinstance(model, FaModel):
        arrays["psi"] = model.psi
    elif isinstance(model, SupervisedModel):
        arrays.update(Q=model.Q, sigma2=np.array([model.sigma2]), rho2=np.array([model.rho2]),
                      beta=np.array([model.beta]), target_mean=model.target_mean)
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    log = model.log or TrainingLog()
    header = {"kind": "tvm", "method": model.method, "h": int(model.V.shape[0]), "d": int(model.V.shape[1]),
              "config": model.config.to_dict() if model.config else None, "log": log.to_dict(), **(meta or {})}
    write_container(path, arrays, header)


def load_model(path):
    arrays, meta = read_container(path)
    _kind(meta, "tvm", path)
    cfg = TvmConfig(**meta["config"]) if meta.get("config") else None
    log = TrainingLog(**meta["log"])
    method = meta["method"]
    V = arrays["V"]
    if method == "fefa":
        return FefaModel(V, _gmm_from(arrays, "ubm_"), cfg, log)
    if method == "pca":
        return PcaModel(V, arrays["mean"], arrays["singular_values"], cfg, log)
    if method == "ppca":
        return PpcaModel(V, float(arrays["sigma2"][0]), cfg, log)
    if method == "fa":
        return FaModel(V, arrays["psi"], cfg, log)
    return SupervisedModel(V, arrays["Q"], float(arrays["sigma2"][0]), float(arrays["rho2"][0]),
                           float(arrays["beta"][0]), arrays["target_mean"], method, cfg, log)


def save_ivectors(path, ivectors, utterance_ids, speaker_ids):
    write_container(path, {"ivectors": ivectors},
                    {"kind": "ivectors", "utterance_ids": list(utterance_ids), "speaker_ids": list(speaker_ids)})


def load_ivectors(path):
    arrays, meta = read_container(path)
    _kind(meta, "ivectors", path)
    return arrays["ivectors"], meta["utterance_ids"], meta["speaker_ids"]


def save_backend(path, pp, plda):
    write_container(path, {"pp_mean": pp.mean, "pp_whitener": pp.whitener, "plda_mean": plda.mean,
                           "plda_phi": plda.phi, "plda_within": plda.within},
                    {"kind": "backend", "plda_loglik": plda.loglik_history})


def load_backend(path):
    arrays, meta = read_container(path)
    _kind(meta, "backend", path)
    pp = backend.PostProcessor(arrays["pp_mean"], arrays["pp_whitener"])
    plda = backend.PldaModel(arrays["plda_mean"], arrays["plda_phi"], arrays["plda_within"],
                             meta["plda_loglik"])
    return pp, plda
