"""Randomized objective families for optimizer training and benchmarking.

Three families of small machine-learning loss surfaces: l2-regularized
logistic regression (convex), robust linear regression under the
Geman-McClure estimator (non-convex, bounded) and a tiny two-layer ReLU
classifier with cross-entropy loss (non-convex, multiple optima). Each
generated instance realizes a random dataset, so every instance is a
distinct concrete function over a fixed small parameter space.

Parameter vectors are flat float arrays. Layouts:
  logistic / robustreg : [w (d), b]                          -> d + 1
  neuralnet            : [vec(W) row-major, b, vec(U), c]    -> h*d + h + p*h + p
"""

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .util import sigmoid, softplus

LOGISTIC = "logistic"
ROBUST_REG = "robustreg"
NEURAL_NET = "neuralnet"
FAMILIES = (LOGISTIC, ROBUST_REG, NEURAL_NET)

DEFAULT_LAMBDA = 0.0005
DEFAULT_C_SHAPE = 1.0
DEFAULT_NOISE_STD = 0.1
MEAN_RANGE = 3.0  # Gaussian means drawn uniform in [-MEAN_RANGE, MEAN_RANGE]^d
COV_JITTER = 0.1  # random covariances built as A A^T + COV_JITTER * I

NN_DIM = 2
NN_HIDDEN = 2
NN_CLASSES = 2


@dataclass(frozen=True)
class ObjectiveInstance:
    """A realized objective: family tag plus the dataset that defines it."""

    family: str
    features: np.ndarray  # (n_samples, d)
    labels: np.ndarray    # (n_samples,)
    lam: float
    c_shape: float
    param_dim: int
    seed: int | None = None

    def value(self, x):
        return value(self, x)

    def gradient(self, x):
        return gradient(self, x)

    def hessian(self, x):
        return hessian(self, x)


def _freeze(arr):
    arr.setflags(write=False)
    return arr


def _random_gaussian_sample(rng, d, n):
    """n points from a Gaussian with random mean and random full covariance."""
    mean = rng.uniform(-MEAN_RANGE, MEAN_RANGE, size=d)
    a = rng.standard_normal((d, d))
    cov = a @ a.T + COV_JITTER * np.eye(d)
    return rng.multivariate_normal(mean, cov, size=n)


def gen_logistic(seed, d=3, n_per_class=50, lam=DEFAULT_LAMBDA):
    """Random binary classification dataset: one Gaussian blob per class."""
    rng = np.random.default_rng(seed)
    x0 = _random_gaussian_sample(rng, d, n_per_class)
    x1 = _random_gaussian_sample(rng, d, n_per_class)
    features = np.vstack([x0, x1])
    labels = np.concatenate([np.zeros(n_per_class), np.ones(n_per_class)])
    return ObjectiveInstance(
        family=LOGISTIC,
        features=_freeze(features),
        labels=_freeze(labels),
        lam=lam,
        c_shape=0.0,
        param_dim=d + 1,
        seed=seed,
    )


def gen_robustreg(seed, d=3, n_gaussians=4, n_per_gaussian=25,
                  c_shape=DEFAULT_C_SHAPE, noise_std=DEFAULT_NOISE_STD):
    """Random regression dataset: per-cluster affine labels plus Gaussian noise.

    Each cluster has a random mean and identity covariance; all its labels
    come from the same random projection vector and bias, perturbed with
    i.i.d. noise of scale `noise_std` (0 gives exactly affine labels).
    """
    rng = np.random.default_rng(seed)
    blocks, targets = [], []
    for _ in range(n_gaussians):
        mean = rng.uniform(-MEAN_RANGE, MEAN_RANGE, size=d)
        pts = mean + rng.standard_normal((n_per_gaussian, d))
        v = rng.standard_normal(d)
        b0 = rng.standard_normal()
        noise = noise_std * rng.standard_normal(n_per_gaussian)
        blocks.append(pts)
        targets.append(pts @ v + b0 + noise)
    return ObjectiveInstance(
        family=ROBUST_REG,
        features=_freeze(np.vstack(blocks)),
        labels=_freeze(np.concatenate(targets)),
        lam=0.0,
        c_shape=c_shape,
        param_dim=d + 1,
        seed=seed,
    )


def gen_nn(seed, d=NN_DIM, h=NN_HIDDEN, p=NN_CLASSES, n_gaussians=4,
           n_per_gaussian=25, lam=DEFAULT_LAMBDA, max_label_draws=100):
    """Random classification dataset for the two-layer ReLU net objective.

    Four Gaussian clusters with random means and covariances; each cluster
    gets a uniform random class label. Labels are redrawn (points kept)
    until both classes appear; after `max_label_draws` failures one
    cluster's label is flipped outright.
    """
    if p != 2:
        raise ValueError("label generation assumes two classes")
    rng = np.random.default_rng(seed)
    blocks = [_random_gaussian_sample(rng, d, n_per_gaussian)
              for _ in range(n_gaussians)]
    for _ in range(max_label_draws):
        cluster_labels = rng.integers(0, 2, size=n_gaussians)
        if len(set(cluster_labels.tolist())) > 1:
            break
    else:
        cluster_labels[0] = 1 - cluster_labels[0]
    labels = np.repeat(cluster_labels, n_per_gaussian)
    return ObjectiveInstance(
        family=NEURAL_NET,
        features=_freeze(np.vstack(blocks)),
        labels=_freeze(labels.astype(np.int64)),
        lam=lam,
        c_shape=0.0,
        param_dim=h * d + h + p * h + p,
        seed=seed,
    )


def _check_dim(inst, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (inst.param_dim,):
        raise ValueError(
            f"parameter vector has shape {x.shape}, expected ({inst.param_dim},)")
    return x


def _split_linear(inst, x):
    d = inst.features.shape[1]
    return x[:d], x[d]


def unpack_nn(x, d=NN_DIM, h=NN_HIDDEN, p=NN_CLASSES):
    """Split a flat parameter vector into (W, b, U, c) for the net objective."""
    i = 0
    w = x[i:i + h * d].reshape(h, d); i += h * d
    b = x[i:i + h]; i += h
    u = x[i:i + p * h].reshape(p, h); i += p * h
    c = x[i:i + p]
    return w, b, u, c


def pack_nn(w, b, u, c):
    return np.concatenate([w.ravel(), b, u.ravel(), c])


def value(inst, x):
    """Objective value at x. Mean loss over the dataset plus any regularizer."""
    x = _check_dim(inst, x)
    if inst.family == LOGISTIC:
        w, b = _split_linear(inst, x)
        z = inst.features @ w + b
        y = inst.labels
        # y*log(sigma) + (1-y)*log(1-sigma) written with softplus for stability
        loss = np.mean(y * softplus(-z) + (1.0 - y) * softplus(z))
        return loss + 0.5 * inst.lam * (w @ w)
    if inst.family == ROBUST_REG:
        w, b = _split_linear(inst, x)
        r = inst.labels - inst.features @ w - b
        c2 = inst.c_shape ** 2
        return float(np.mean(r * r / (c2 + r * r)))
    if inst.family == NEURAL_NET:
        w, b, u, c = unpack_nn(x)
        z1 = inst.features @ w.T + b
        act = np.maximum(z1, 0.0)
        logits = act @ u.T + c
        lse = logsumexp(logits, axis=1)
        picked = logits[np.arange(len(inst.labels)), inst.labels]
        ce = np.mean(lse - picked)
        return ce + 0.5 * inst.lam * (np.sum(w * w) + np.sum(u * u))
    raise ValueError(f"unknown family {inst.family!r}")


def gradient(inst, x):
    """Analytic gradient of `value`; ReLU uses subgradient 0 at kinks."""
    x = _check_dim(inst, x)
    n = inst.features.shape[0]
    if inst.family == LOGISTIC:
        w, b = _split_linear(inst, x)
        z = inst.features @ w + b
        resid = sigmoid(z) - inst.labels
        gw = inst.features.T @ resid / n + inst.lam * w
        gb = np.mean(resid)
        return np.concatenate([gw, [gb]])
    if inst.family == ROBUST_REG:
        w, b = _split_linear(inst, x)
        r = inst.labels - inst.features @ w - b
        c2 = inst.c_shape ** 2
        drho = 2.0 * c2 * r / (c2 + r * r) ** 2
        gw = -inst.features.T @ drho / n
        gb = -np.mean(drho)
        return np.concatenate([gw, [gb]])
    if inst.family == NEURAL_NET:
        w, b, u, c = unpack_nn(x)
        z1 = inst.features @ w.T + b
        act = np.maximum(z1, 0.0)
        logits = act @ u.T + c
        q = np.exp(logits - logsumexp(logits, axis=1, keepdims=True))
        q[np.arange(n), inst.labels] -= 1.0
        q /= n
        gu = q.T @ act + inst.lam * u
        gc = q.sum(axis=0)
        dact = q @ u
        dz1 = dact * (z1 > 0)
        gw = dz1.T @ inst.features + inst.lam * w
        gb = dz1.sum(axis=0)
        return pack_nn(gw, gb, gu, gc)
    raise ValueError(f"unknown family {inst.family!r}")


def hessian(inst, x):
    """Hessian (or PSD Gauss-Newton surrogate) of `value` at x.

    Logistic: exact Hessian (PSD since the loss is convex). Neural net:
    Gauss-Newton matrix of the cross-entropy plus the exact regularizer
    curvature (PSD by construction). Robust regression: central-difference
    Hessian of the analytic gradient; indefinite in general, callers that
    need PSD must floor the spectrum themselves.
    """
    x = _check_dim(inst, x)
    n = inst.features.shape[0]
    if inst.family == LOGISTIC:
        w, b = _split_linear(inst, x)
        z = inst.features @ w + b
        p = sigmoid(z)
        s = p * (1.0 - p)
        xt = np.hstack([inst.features, np.ones((n, 1))])
        h = (xt * s[:, None]).T @ xt / n
        h[np.diag_indices_from(h)] += np.r_[np.full(len(w), inst.lam), 0.0]
        return h
    if inst.family == ROBUST_REG:
        return finite_diff_hessian(inst, x)
    if inst.family == NEURAL_NET:
        return _nn_gauss_newton(inst, x)
    raise ValueError(f"unknown family {inst.family!r}")


def _nn_gauss_newton(inst, x):
    w, b, u, c = unpack_nn(x)
    h, d = w.shape
    p = u.shape[0]
    dim = len(x)
    n = inst.features.shape[0]
    z1 = inst.features @ w.T + b
    act = np.maximum(z1, 0.0)
    logits = act @ u.T + c
    q = np.exp(logits - logsumexp(logits, axis=1, keepdims=True))
    total = np.zeros((dim, dim))
    for i in range(n):
        mask = (z1[i] > 0).astype(float)
        jac = np.zeros((p, dim))
        for k in range(p):
            jw = (u[k] * mask)[:, None] * inst.features[i][None, :]
            jac[k, :h * d] = jw.ravel()
            jac[k, h * d:h * d + h] = u[k] * mask
            ju = np.zeros((p, h))
            ju[k] = act[i]
            jac[k, h * d + h:h * d + h + p * h] = ju.ravel()
            jac[k, h * d + h + p * h + k] = 1.0
        s = np.diag(q[i]) - np.outer(q[i], q[i])
        total += jac.T @ s @ jac
    total /= n
    reg = np.r_[np.full(h * d, inst.lam), np.zeros(h),
                np.full(p * h, inst.lam), np.zeros(p)]
    total[np.diag_indices_from(total)] += reg
    return total


def finite_diff_gradient(inst, x, eps=1e-6):
    """Central-difference gradient, the independent oracle for `gradient`."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for j in range(len(x)):
        step = np.zeros_like(x)
        step[j] = eps
        g[j] = (value(inst, x + step) - value(inst, x - step)) / (2.0 * eps)
    return g


def finite_diff_hessian(inst, x, eps=1e-5):
    """Central differences of the analytic gradient, symmetrized."""
    x = np.asarray(x, dtype=float)
    dim = len(x)
    h = np.zeros((dim, dim))
    for j in range(dim):
        step = np.zeros(dim)
        step[j] = eps
        h[:, j] = (gradient(inst, x + step) - gradient(inst, x - step)) / (2.0 * eps)
    return 0.5 * (h + h.T)


def instance_record(inst):
    """Plain dict form of an instance, the on-disk interchange format."""
    return {
        "family": inst.family,
        "seed": inst.seed,
        "features": [row.tolist() for row in inst.features],
        "labels": inst.labels.tolist(),
        "lambda": inst.lam,
        "c_shape": inst.c_shape,
    }


def instance_from_record(rec):
    family = rec["family"]
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    features = np.asarray(rec["features"], dtype=float)
    if family == NEURAL_NET:
        labels = np.asarray(rec["labels"], dtype=np.int64)
        param_dim = NN_HIDDEN * NN_DIM + NN_HIDDEN + NN_CLASSES * NN_HIDDEN + NN_CLASSES
    else:
        labels = np.asarray(rec["labels"], dtype=float)
        param_dim = features.shape[1] + 1
    return ObjectiveInstance(
        family=family,
        features=_freeze(features),
        labels=_freeze(labels),
        lam=float(rec["lambda"]),
        c_shape=float(rec["c_shape"]),
        param_dim=param_dim,
        seed=rec.get("seed"),
    )


def save_instance(inst, path, extra=None):
    rec = instance_record(inst)
    if extra:
        rec.update(extra)
    with open(path, "w") as f:
        json.dump(rec, f, sort_keys=True)
        f.write("\n")


def load_instance(path):
    with open(path) as f:
        return instance_from_record(json.load(f))


GENERATORS = {LOGISTIC: gen_logistic, ROBUST_REG: gen_robustreg, NEURAL_NET: gen_nn}
