"""Non-DL comparison classifiers over summary-statistic feature vectors.

Both baselines plug into the cross-validation harness through the same
model-spec contract as the network, so fold plans, metrics and reports are
shared. Features are generic sequence statistics computed from the raw
(un-normalized) channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gaze_vtnet.preprocess import ChannelStats, Datapoint
from gaze_vtnet.gazedata import CHANNELS

SACCADE_SPEED_THRESHOLD = 0.02  # normalized units per sample

FEATURE_NAMES: tuple[str, ...] = (
    *(f"mean_{c}" for c in CHANNELS),
    *(f"std_{c}" for c in CHANNELS),
    *(f"min_{c}" for c in CHANNELS),
    *(f"max_{c}" for c in CHANNELS),
    "path_length",
    "saccade_count",
    "seq_len",
)


def extract_features(dp: Datapoint, saccade_threshold: float = SACCADE_SPEED_THRESHOLD) -> np.ndarray:
    """27-vector of per-channel stats, gaze path length, saccade count, length.

    Path length is the summed Euclidean (gx, gy) step; a saccade is a step
    faster than ``saccade_threshold``. Both are 0 for single-sample sequences.
    """
    seq = dp.seq
    if seq.shape[0] >= 2:
        steps = np.linalg.norm(np.diff(seq[:, :2], axis=0), axis=1)
        path_length = float(steps.sum())
        saccades = float(np.count_nonzero(steps > saccade_threshold))
    else:
        path_length = 0.0
        saccades = 0.0
    return np.concatenate(
        [
            seq.mean(axis=0),
            seq.std(axis=0),
            seq.min(axis=0),
            seq.max(axis=0),
            [path_length, saccades, float(seq.shape[0])],
        ]
    )


def feature_matrix(dps: list[Datapoint]) -> tuple[np.ndarray, np.ndarray]:
    feats = np.stack([extract_features(dp) for dp in dps])
    labels = np.array([1 if dp.label == "patient" else 0 for dp in dps], dtype=np.intp)
    return feats, labels


def dump_features_csv(dps: list[Datapoint], path) -> None:
    """One row per datapoint, for external analysis; byte-stable for fixed input."""
    lines = ["user_id,task,label,split_index," + ",".join(FEATURE_NAMES)]
    for dp in sorted(dps, key=lambda d: (d.user_id, d.task, d.split_index)):
        values = ",".join(repr(float(v)) for v in extract_features(dp))
        lines.append(f"{dp.user_id},{dp.task},{dp.label},{dp.split_index},{values}")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


# -------------------------------------------------------- Gaussian naive Bayes

VARIANCE_FLOOR = 1e-9


@dataclass
class GnbModel:
    means: np.ndarray      # 2 x D
    variances: np.ndarray  # 2 x D, floored
    log_priors: np.ndarray


def gnb_fit(features: np.ndarray, labels: np.ndarray) -> GnbModel:
    labels = np.asarray(labels)
    if len(set(labels.tolist())) < 2:
        raise ValueError("both classes required to fit")
    means = np.stack([features[labels == c].mean(axis=0) for c in (0, 1)])
    variances = np.stack([features[labels == c].var(axis=0) for c in (0, 1)])
    variances = np.maximum(variances, VARIANCE_FLOOR)
    counts = np.array([(labels == c).sum() for c in (0, 1)], dtype=np.float64)
    return GnbModel(means=means, variances=variances, log_priors=np.log(counts / counts.sum()))


def gnb_predict(model: GnbModel, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(predicted class, patient probability) per row; accepts one row or many."""
    single = features.ndim == 1
    x = np.atleast_2d(features)[:, None, :]  # N x 1 x D
    log_lik = -0.5 * (
        np.log(2.0 * np.pi * model.variances) + (x - model.means) ** 2 / model.variances
    ).sum(axis=2)
    log_post = log_lik + model.log_priors
    log_post -= log_post.max(axis=1, keepdims=True)
    post = np.exp(log_post)
    post /= post.sum(axis=1, keepdims=True)
    p_patient = post[:, 1]
    classes = (p_patient > 0.5).astype(np.intp)
    if single:
        return classes[0], float(p_patient[0])
    return classes, p_patient


# ---------------------------------------------------------- logistic regression


@dataclass
class LogRegModel:
    weights: np.ndarray
    bias: float
    n_iters: int


def logreg_fit(
    features: np.ndarray,
    labels: np.ndarray,
    l2: float = 1e-3,
    tol: float = 1e-6,
    max_iters: int = 10_000,
) -> LogRegModel:
    """Full-batch gradient descent on the L2-regularized log-loss.

    Features must already be z-scored with training statistics. The step size
    is 1/L with L an upper bound on the loss curvature, so the loss is
    nonincreasing; iteration stops at gradient norm < ``tol``.
    """
    labels = np.asarray(labels, dtype=np.float64)
    if len(set(labels.tolist())) < 2:
        raise ValueError("both classes required to fit")
    n, d = features.shape
    lipschitz = 0.25 * float((features * features).sum()) / n + l2
    step = 1.0 / max(lipschitz, 1e-12)
    w = np.zeros(d)
    b = 0.0
    it = 0
    for it in range(1, max_iters + 1):
        p = _sigmoid(features @ w + b)
        err = (p - labels) / n
        gw = features.T @ err + l2 * w
        gb = float(err.sum())
        if np.sqrt((gw * gw).sum() + gb * gb) < tol:
            break
        w -= step * gw
        b -= step * gb
    return LogRegModel(weights=w, bias=b, n_iters=it)


def logreg_loss(model: LogRegModel, features: np.ndarray, labels: np.ndarray, l2: float = 1e-3) -> float:
    z = features @ model.weights + model.bias
    labels = np.asarray(labels, dtype=np.float64)
    # log(1 + exp(-|z|)) form avoids overflow
    nll = np.logaddexp(0.0, -z) * labels + np.logaddexp(0.0, z) * (1.0 - labels)
    return float(nll.mean() + 0.5 * l2 * (model.weights**2).sum())


def logreg_predict(model: LogRegModel, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    single = features.ndim == 1
    x = np.atleast_2d(features)
    p_patient = _sigmoid(x @ model.weights + model.bias)
    classes = (p_patient > 0.5).astype(np.intp)
    if single:
        return classes[0], float(p_patient[0])
    return classes, p_patient


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# ----------------------------------------------------- harness model contract


@dataclass
class FittedGnb:
    model: GnbModel


class GnbSpec:
    name = "gnb"

    def fit(self, train_dps: list[Datapoint], stats: ChannelStats, seed: int) -> FittedGnb:
        feats, labels = feature_matrix(train_dps)
        return FittedGnb(gnb_fit(feats, labels))

    def score(self, fitted: FittedGnb, dp: Datapoint) -> float:
        _, p = gnb_predict(fitted.model, extract_features(dp))
        return p

    def score_batch(self, fitted: FittedGnb, dps: list[Datapoint]) -> np.ndarray:
        feats, _ = feature_matrix(dps)
        _, p = gnb_predict(fitted.model, feats)
        return p


@dataclass
class FittedLogReg:
    model: LogRegModel
    feat_mean: np.ndarray
    feat_std: np.ndarray


class LogRegSpec:
    name = "logreg"

    def __init__(self, l2: float = 1e-3):
        self.l2 = l2

    def _zscore(self, feats: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
        return (feats - mean) / np.where(std < 1e-8, 1.0, std)

    def fit(self, train_dps: list[Datapoint], stats: ChannelStats, seed: int) -> FittedLogReg:
        feats, labels = feature_matrix(train_dps)
        mean, std = feats.mean(axis=0), feats.std(axis=0)
        model = logreg_fit(self._zscore(feats, mean, std), labels, l2=self.l2)
        return FittedLogReg(model=model, feat_mean=mean, feat_std=std)

    def score(self, fitted: FittedLogReg, dp: Datapoint) -> float:
        _, p = logreg_predict(
            fitted.model, self._zscore(extract_features(dp), fitted.feat_mean, fitted.feat_std)
        )
        return p

    def score_batch(self, fitted: FittedLogReg, dps: list[Datapoint]) -> np.ndarray:
        feats, _ = feature_matrix(dps)
        _, p = logreg_predict(fitted.model, self._zscore(feats, fitted.feat_mean, fitted.feat_std))
        return p
