"""Gaussian neural-net policy: forward pass, sampling and regression training.

The action distribution factorizes per dimension: mean from a one-hidden-
layer net (softplus hidden units, linear output) over the featurized
optimization history, variance a learned per-dimension constant. Training
minimizes the precision-weighted squared error to target actions plus the
variance terms of the Gaussian KL surrogate, optionally penalizing policy
entropy to push toward deterministic actions. Gradients are hand-derived;
the optimizer is full-batch adaptive moment estimation.
"""

import json
from dataclasses import dataclass, replace

import numpy as np

from .util import sigmoid, softplus  # noqa: F401  (softplus is part of the API)

DEFAULT_HIDDEN = 50
LOG_VAR_MIN = -40.0
LOG_VAR_MAX = 4.0


@dataclass(frozen=True)
class PolicyParams:
    w1: np.ndarray       # (hidden, feature_len)
    b1: np.ndarray       # (hidden,)
    w2: np.ndarray       # (action_dim, hidden)
    b2: np.ndarray       # (action_dim,)
    log_var: np.ndarray  # (action_dim,)

    @property
    def feature_len(self):
        return self.w1.shape[1]

    @property
    def action_dim(self):
        return self.w2.shape[0]


def init_policy(feature_len, action_dim, rng, hidden=DEFAULT_HIDDEN,
                init_log_var=np.log(0.01), feature_stats=None):
    """Random weights uniform in +-1/sqrt(fan_in); no magnitude regularization.

    `feature_stats` (mean, std per input dim) folds input standardization
    into the first layer at initialization: w1 <- w1 / std,
    b1 <- b1 - w1 @ (mean / std). The returned parameters operate on raw
    features; the standardization only preconditions training.
    """
    s1 = 1.0 / np.sqrt(feature_len)
    s2 = 1.0 / np.sqrt(hidden)
    w1 = rng.uniform(-s1, s1, size=(hidden, feature_len))
    b1 = rng.uniform(-s1, s1, size=hidden)
    if feature_stats is not None:
        mean, std = feature_stats
        std = np.maximum(np.asarray(std, dtype=float), 1e-8)
        w1 = w1 / std
        b1 = b1 - w1 @ np.asarray(mean, dtype=float)
    return PolicyParams(
        w1=w1,
        b1=b1,
        w2=rng.uniform(-s2, s2, size=(action_dim, hidden)),
        b2=rng.uniform(-s2, s2, size=action_dim),
        log_var=np.full(action_dim, float(init_log_var)),
    )


def forward_mean(params, feats):
    """Mean action for one feature vector (1-D) or a batch (2-D)."""
    feats = np.asarray(feats, dtype=float)
    single = feats.ndim == 1
    batch = feats[None, :] if single else feats
    if batch.shape[1] != params.feature_len:
        raise ValueError(
            f"feature length {batch.shape[1]} != expected {params.feature_len}")
    hidden = softplus(batch @ params.w1.T + params.b1)
    mean = hidden @ params.w2.T + params.b2
    return mean[0] if single else mean


def sample_action(params, feat, rng):
    """Mean plus independent per-dimension Gaussian noise."""
    mean = forward_mean(params, feat)
    std = np.exp(0.5 * np.clip(params.log_var, LOG_VAR_MIN, LOG_VAR_MAX))
    return mean + std * rng.standard_normal(params.action_dim)


def _validate_precisions(precisions):
    sym_err = np.max(np.abs(precisions - np.swapaxes(precisions, -1, -2)))
    if sym_err > 1e-8:
        raise ValueError("target precisions must be symmetric")
    eigs = np.linalg.eigvalsh(precisions)
    if eigs.min() < -1e-8:
        raise ValueError("target precisions must be positive semi-definite")


def supervised_loss(params, feats, target_means, target_precisions,
                    entropy_coeff=0.0, validate=True):
    loss, _ = _loss_and_grads(params, feats, target_means, target_precisions,
                              entropy_coeff, want_grads=False, validate=validate)
    return loss


def _loss_and_grads(params, feats, target_means, target_precisions,
                    entropy_coeff, want_grads=True, validate=False):
    """Batch loss and hand-derived parameter gradients.

    Loss per element i with residual r_i = mean(feat_i) - target_i,
    precision P_i and Sigma = diag(exp(log_var)):
        0.5 r_i' P_i r_i + 0.5 tr(P_i Sigma) - 0.5 log|Sigma|
    averaged over the batch, plus entropy_coeff * 0.5 * sum(log_var).
    There is deliberately no weight-decay term.
    """
    feats = np.asarray(feats, dtype=float)
    target_means = np.asarray(target_means, dtype=float)
    precisions = np.asarray(target_precisions, dtype=float)
    if validate:
        _validate_precisions(precisions)
    n = feats.shape[0]

    z = feats @ params.w1.T + params.b1
    hidden = softplus(z)
    mean = hidden @ params.w2.T + params.b2
    resid = mean - target_means

    pr = np.einsum("nij,nj->ni", precisions, resid)
    mahal = 0.5 * np.mean(np.sum(resid * pr, axis=1))
    var = np.exp(np.clip(params.log_var, LOG_VAR_MIN, LOG_VAR_MAX))
    p_diag = np.einsum("nii->ni", precisions)
    mean_p_diag = p_diag.mean(axis=0)
    trace_term = 0.5 * float(mean_p_diag @ var)
    logdet_term = -0.5 * float(np.sum(params.log_var))
    entropy_term = entropy_coeff * 0.5 * float(np.sum(params.log_var))
    loss = float(mahal) + trace_term + logdet_term + entropy_term
    if not want_grads:
        return loss, None

    # d(mahal)/d(mean_i) = sym(P_i) r_i / n ; precisions are symmetric already
    dmean = pr / n
    dw2 = dmean.T @ hidden
    db2 = dmean.sum(axis=0)
    dhidden = dmean @ params.w2
    dz = dhidden * sigmoid(z)
    dw1 = dz.T @ feats
    db1 = dz.sum(axis=0)
    dlog_var = 0.5 * mean_p_diag * var - 0.5 + 0.5 * entropy_coeff
    grads = {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2,
             "log_var": dlog_var}
    return loss, grads


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 200
    entropy_coeff: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def train_policy(params, feats, target_means, target_precisions, cfg=TrainConfig()):
    """Full-batch adaptive-moment descent on the supervised loss.

    Returns (best_params, info). The returned parameters never have a
    higher batch loss than the ones passed in; if the loss goes non-finite
    the run aborts and the best parameters seen so far are returned with
    info["diverged"] set.
    """
    feats = np.asarray(feats, dtype=float)
    if feats.shape[0] == 0:
        raise ValueError("training batch is empty")
    _validate_precisions(np.asarray(target_precisions, dtype=float))

    names = ("w1", "b1", "w2", "b2", "log_var")
    current = {n: np.array(getattr(params, n), dtype=float) for n in names}
    m = {n: np.zeros_like(v) for n, v in current.items()}
    v = {n: np.zeros_like(val) for n, val in current.items()}

    def as_params(values):
        return PolicyParams(**{n: values[n].copy() for n in names})

    entry_loss = supervised_loss(params, feats, target_means, target_precisions,
                                 cfg.entropy_coeff, validate=False)
    best_loss, best = entry_loss, {n: val.copy() for n, val in current.items()}
    losses = [entry_loss]
    diverged = False

    for epoch in range(1, cfg.epochs + 1):
        loss, grads = _loss_and_grads(as_params(current), feats, target_means,
                                      target_precisions, cfg.entropy_coeff)
        if not np.isfinite(loss):
            diverged = True
            break
        for n in names:
            g = grads[n]
            m[n] = cfg.beta1 * m[n] + (1 - cfg.beta1) * g
            v[n] = cfg.beta2 * v[n] + (1 - cfg.beta2) * g * g
            m_hat = m[n] / (1 - cfg.beta1 ** epoch)
            v_hat = v[n] / (1 - cfg.beta2 ** epoch)
            current[n] = current[n] - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
        current["log_var"] = np.clip(current["log_var"], LOG_VAR_MIN, LOG_VAR_MAX)
        loss_after = supervised_loss(as_params(current), feats, target_means,
                                     target_precisions, cfg.entropy_coeff,
                                     validate=False)
        losses.append(loss_after)
        if np.isfinite(loss_after) and loss_after < best_loss:
            best_loss, best = loss_after, {n: val.copy() for n, val in current.items()}

    info = {"entry_loss": entry_loss, "best_loss": best_loss,
            "losses": losses, "diverged": diverged}
    return as_params(best), info


def save_policy(params, path, metadata=None):
    rec = {
        "feature_len": params.feature_len,
        "param_dim": params.action_dim,
        "W1": params.w1.tolist(),
        "b1": params.b1.tolist(),
        "W2": params.w2.tolist(),
        "b2": params.b2.tolist(),
        "log_var": params.log_var.tolist(),
        "metadata": metadata or {},
    }
    with open(path, "w") as fh:
        json.dump(rec, fh, sort_keys=True)
        fh.write("\n")


def load_policy(path):
    with open(path) as fh:
        rec = json.load(fh)
    params = PolicyParams(
        w1=np.asarray(rec["W1"], dtype=float),
        b1=np.asarray(rec["b1"], dtype=float),
        w2=np.asarray(rec["W2"], dtype=float),
        b2=np.asarray(rec["b2"], dtype=float),
        log_var=np.asarray(rec["log_var"], dtype=float),
    )
    return params, rec.get("metadata", {})
