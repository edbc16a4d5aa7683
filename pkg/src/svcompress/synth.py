"""Synthetic corpora with known ground truth.

Supervectors of the generator follow a linear-Gaussian model: utterance u of
speaker s shifts the base GMM means by ``V* w*_s`` (speaker) plus an
isotropic per-utterance channel offset, and frames are drawn from the
shifted mixture.  Training and evaluation speakers are disjoint.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InsufficientUtterances
from .gmm import DiagonalGmm, FeatureMatrix


@dataclass(frozen=True)
class SynthConfig:
    n_speakers: int = 200
    utts_per_speaker: int = 20
    eval_speakers: int = 40
    t_min: int = 200
    t_max: int = 400
    F: int = 20
    C_true: int = 32
    d_true: int = 10
    speaker_scale: float = 1.0
    channel_scale: float = 0.5
    noise_scale: float = 1.0
    mean_spread: float = 4.0
    seed: int = 0

    def __post_init__(self):
        for name in ("n_speakers", "utts_per_speaker", "t_min", "t_max", "F", "C_true", "d_true"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.eval_speakers < 0:
            raise ValueError("eval_speakers must be >= 0")
        if self.t_min > self.t_max:
            raise ValueError("t_min must not exceed t_max")
        if self.speaker_scale < 0 or self.channel_scale < 0 or self.noise_scale <= 0:
            raise ValueError("scales must be non-negative (noise_scale positive)")

    def to_dict(self):
        return asdict(self)


@dataclass
class SynthTruth:
    V: np.ndarray
    speaker_factors: dict
    ubm: DiagonalGmm
    train_speakers: list
    eval_speakers: list
    utt_speaker: dict = field(default_factory=dict)


@dataclass
class Trial:
    enroll: str
    test: str
    target: bool


def _utterance_rng(seed, index):
    return np.random.default_rng([seed, 1, index])


def _true_model(cfg, rng):
    C, F = cfg.C_true, cfg.F
    means = rng.standard_normal((C, F)) * cfg.mean_spread
    variances = rng.uniform(0.5, 1.5, size=(C, F))
    weights = rng.dirichlet(np.full(C, 20.0))
    h = C * F
    # unit-norm columns: each latent coordinate moves the supervector by one unit
    V = rng.standard_normal((h, cfg.d_true))
    V /= np.linalg.norm(V, axis=0)
    return DiagonalGmm(weights, means, variances), V


def generate(cfg):
    """Return ``(train_corpus, eval_corpus, truth)``; deterministic in ``cfg.seed``.

    Every utterance draws from its own generator seeded by (seed, index), so
    the output does not depend on generation order.
    """
    rng = np.random.default_rng([cfg.seed, 0])
    ubm, V = _true_model(cfg, rng)
    n_total = cfg.n_speakers + cfg.eval_speakers
    speakers = [f"spk{i:04d}" for i in range(n_total)]
    factors = {s: cfg.speaker_scale * rng.standard_normal(cfg.d_true) for s in speakers}
    C, F = ubm.means.shape
    std = np.sqrt(ubm.variances) * cfg.noise_scale
    cum_w = np.cumsum(ubm.weights)
    train, evaluation, utt_speaker = [], [], {}
    index = 0
    for si, spk in enumerate(speakers):
        spk_offset = (V @ factors[spk]).reshape(C, F)
        for j in range(cfg.utts_per_speaker):
            r = _utterance_rng(cfg.seed, index)
            T = int(r.integers(cfg.t_min, cfg.t_max + 1))
            shift = ubm.means + spk_offset + cfg.channel_scale * r.standard_normal((C, F))
            comp = np.minimum(np.searchsorted(cum_w, r.random(T), side="right"), C - 1)
            frames = shift[comp] + std[comp] * r.standard_normal((T, F))
            uid = f"{spk}-u{j:03d}"
            utt = FeatureMatrix(frames, uid, spk)
            (train if si < cfg.n_speakers else evaluation).append(utt)
            utt_speaker[uid] = spk
            index += 1
    truth = SynthTruth(V, factors, ubm, speakers[:cfg.n_speakers], speakers[cfg.n_speakers:], utt_speaker)
    return train, evaluation, truth


def make_trials(utterances, n_target, n_nontarget, seed=0):
    """Sample distinct (enroll, test) pairs among ``utterances``.

    ``utterances`` is a :class:`SynthTruth` (its evaluation speakers are
    used), or a sequence of FeatureMatrix or (utterance_id, speaker_id)
    pairs.  No utterance is paired with itself and no unordered pair appears
    twice.
    """
    if isinstance(utterances, SynthTruth):
        keep = set(utterances.eval_speakers or utterances.train_speakers)
        utterances = [(u, s) for u, s in utterances.utt_speaker.items() if s in keep]
    pairs = [(u.utterance_id, u.speaker_id) if isinstance(u, FeatureMatrix) else tuple(u) for u in utterances]
    ids = np.array([p[0] for p in pairs])
    spk = np.array([p[1] for p in pairs])
    U = len(pairs)
    iu, ju = np.triu_indices(U, k=1)
    same = spk[iu] == spk[ju]
    tar_idx = np.flatnonzero(same)
    non_idx = np.flatnonzero(~same)
    if tar_idx.size < n_target or non_idx.size < n_nontarget:
        raise InsufficientUtterances(
            f"requested {n_target}/{n_nontarget} target/non-target trials, "
            f"only {tar_idx.size}/{non_idx.size} distinct pairs available")
    rng = np.random.default_rng(seed)
    chosen_t = np.sort(rng.choice(tar_idx, n_target, replace=False))
    chosen_n = np.sort(rng.choice(non_idx, n_nontarget, replace=False))
    trials = [Trial(ids[iu[k]], ids[ju[k]], True) for k in chosen_t]
    trials += [Trial(ids[iu[k]], ids[ju[k]], False) for k in chosen_n]
    return trials


def write_trials(path, trials):
    with open(path, "w") as fh:
        for t in trials:
            fh.write(f"{t.enroll} {t.test} {'target' if t.target else 'nontarget'}\n")


def read_trials(path):
    trials = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                e, t, lab = line.split()[:3]
                trials.append(Trial(e, t, lab == "target"))
    return trials


def sample_latent_supervectors(cfg, n, noise_std, seed=None):
    """Draw ``n`` supervectors directly from the linear-Gaussian model
    ``m = V* w + noise_std * e`` with ``w ~ N(0, speaker_scale^2 I)``.

    Uses the same V* as :func:`generate` for this config, skipping the frame
    level.  Returns ``(X, V, W)`` with X of shape (n, C_true*F).
    """
    _, V = _true_model(cfg, np.random.default_rng([cfg.seed, 0]))
    rng = np.random.default_rng([cfg.seed if seed is None else seed, 2])
    W = cfg.speaker_scale * rng.standard_normal((n, cfg.d_true))
    X = W @ V.T + noise_std * rng.standard_normal((n, V.shape[0]))
    return X, V, W
