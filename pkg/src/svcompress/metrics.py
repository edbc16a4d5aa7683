"""Verification metrics: EER, minimum DCF, DET curves and EER confidence
intervals.

Threshold convention: a trial is accepted when ``score >= threshold``.
Operating points are taken at every distinct score plus +inf, so the
curve runs from (P_miss=0, P_fa=1) to (P_miss=1, P_fa=0).
"""

import csv
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import DegenerateRate, OneClassOnly

SRE10_C_MISS = 0.001
SRE10_C_FA = 0.999


@dataclass
class TrialSet:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).ravel()
        self.labels = np.asarray(self.labels, dtype=bool).ravel()
        if self.scores.shape != self.labels.shape or self.scores.size < 1:
            raise ValueError("scores and labels must be non-empty and of equal length")

    @classmethod
    def from_tar_non(cls, targets, nontargets):
        targets = np.asarray(targets, dtype=np.float64).ravel()
        nontargets = np.asarray(nontargets, dtype=np.float64).ravel()
        return cls(np.concatenate([targets, nontargets]),
                   np.concatenate([np.ones(targets.size, bool), np.zeros(nontargets.size, bool)]))

    @property
    def n_target(self):
        return int(self.labels.sum())

    @property
    def n_nontarget(self):
        return int((~self.labels).sum())


@dataclass
class DetCurve:
    thresholds: np.ndarray
    p_miss: np.ndarray
    p_fa: np.ndarray

    @property
    def probit_p_miss(self):
        return norm.ppf(self.p_miss)

    @property
    def probit_p_fa(self):
        return norm.ppf(self.p_fa)

    def __len__(self):
        return self.thresholds.size


def _as_trials(trials, labels=None):
    if labels is not None:
        trials = TrialSet(trials, labels)
    if trials.n_target == 0 or trials.n_nontarget == 0:
        raise OneClassOnly(f"{trials.n_target} target / {trials.n_nontarget} non-target trials")
    return trials


def det_curve(trials, labels=None):
    """Miss and false-alarm rates at every distinct threshold."""
    trials = _as_trials(trials, labels)
    order = np.argsort(trials.scores, kind="mergesort")
    s = trials.scores[order]
    lab = trials.labels[order]
    thresholds, first = np.unique(s, return_index=True)
    # targets strictly below threshold t are misses; nontargets at or above are false alarms
    tar_below = np.concatenate([[0], np.cumsum(lab)])[first]
    non_below = np.concatenate([[0], np.cumsum(~lab)])[first]
    n_tar, n_non = trials.n_target, trials.n_nontarget
    p_miss = np.append(tar_below / n_tar, 1.0)
    p_fa = np.append((n_non - non_below) / n_non, 0.0)
    return DetCurve(np.append(thresholds, np.inf), p_miss, p_fa)


def eer_from_curve(p_miss, p_fa):
    """Linear interpolation at the crossing of the (p_miss, p_fa) staircase."""
    diff = p_miss - p_fa
    k = int(np.flatnonzero(diff <= 0)[-1])
    if diff[k] == 0 or k + 1 == diff.size:
        return float(p_miss[k])
    dm = p_miss[k + 1] - p_miss[k]
    df = p_fa[k + 1] - p_fa[k]
    s = (p_fa[k] - p_miss[k]) / (dm - df)
    return float(p_miss[k] + s * dm)


def eer(trials, labels=None):
    curve = det_curve(trials, labels)
    return eer_from_curve(curve.p_miss, curve.p_fa)


def min_dcf(trials, labels=None, c_miss=SRE10_C_MISS, c_fa=SRE10_C_FA):
    """Minimum of c_miss * P_miss + c_fa * P_fa over all thresholds.

    Unnormalized; reports multiply by 100 to express it in percent.
    """
    curve = det_curve(trials, labels)
    return float((c_miss * curve.p_miss + c_fa * curve.p_fa).min())


def eer_confidence_interval(rate, n_trials, confidence=0.95):
    """Half-width of the normal-approximation interval around an EER."""
    if not 0.0 < rate < 1.0:
        raise DegenerateRate(f"EER must lie strictly in (0, 1), got {rate}")
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    z = norm.ppf(0.5 + confidence / 2.0)
    return float(z * np.sqrt(rate * (1.0 - rate) / n_trials))


def write_det_csv(path, curve):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "p_miss", "p_fa", "probit_p_miss", "probit_p_fa"])
        for row in zip(curve.thresholds, curve.p_miss, curve.p_fa, curve.probit_p_miss, curve.probit_p_fa):
            w.writerow([repr(float(v)) for v in row])


def read_det_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return DetCurve(np.array([float(r["threshold"]) for r in rows]),
                    np.array([float(r["p_miss"]) for r in rows]),
                    np.array([float(r["p_fa"]) for r in rows]))


def summarize(trials, labels=None):
    """EER and minDCF (both in percent) plus the 95% EER half-width."""
    trials = _as_trials(trials, labels)
    rate = eer(trials)
    n = trials.scores.size
    ci = eer_confidence_interval(rate, n) if 0.0 < rate < 1.0 else 0.0
    return {"eer": 100.0 * rate, "min_dcf": 100.0 * min_dcf(trials), "eer_ci95": 100.0 * ci,
            "n_target": trials.n_target, "n_nontarget": trials.n_nontarget}
