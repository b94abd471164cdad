import numpy as np
import pytest

from optlearn import policy as pol
from optlearn.util import softplus


def small_policy(rng, feature_len=6, action_dim=3, hidden=8):
    return pol.init_policy(feature_len, action_dim, rng, hidden=hidden)


def test_softplus_values():
    assert np.isclose(softplus(0.0), np.log(2.0), atol=1e-15)
    assert np.isclose(softplus(100.0), 100.0, atol=1e-12)
    assert np.isclose(softplus(-20.0), np.log1p(np.exp(-20.0)), rtol=1e-12)
    assert np.isfinite(softplus(1e4))


def test_zero_params_give_zero_mean():
    p = pol.PolicyParams(w1=np.zeros((5, 4)), b1=np.zeros(5),
                         w2=np.zeros((2, 5)), b2=np.zeros(2),
                         log_var=np.zeros(2))
    assert np.allclose(pol.forward_mean(p, np.random.default_rng(0).standard_normal(4)), 0.0)


def test_constant_head():
    head = np.array([1.5, -2.0])
    p = pol.PolicyParams(w1=np.ones((5, 4)), b1=np.zeros(5),
                         w2=np.zeros((2, 5)), b2=head, log_var=np.zeros(2))
    for _ in range(3):
        feat = np.random.default_rng(1).standard_normal(4)
        assert np.allclose(pol.forward_mean(p, feat), head)


def test_forward_dimension_check():
    p = small_policy(np.random.default_rng(2))
    with pytest.raises(ValueError):
        pol.forward_mean(p, np.zeros(7))


def test_forward_batch_matches_single(rng):
    p = small_policy(rng)
    feats = rng.standard_normal((10, 6))
    batch = pol.forward_mean(p, feats)
    for i in range(10):
        assert np.allclose(batch[i], pol.forward_mean(p, feats[i]))


def test_mean_scales_with_output_layer(rng):
    p = small_policy(rng)
    feat = rng.standard_normal(6)
    scaled = pol.PolicyParams(w1=p.w1, b1=p.b1, w2=3.0 * p.w2, b2=3.0 * p.b2,
                              log_var=p.log_var)
    assert np.allclose(pol.forward_mean(scaled, feat), 3.0 * pol.forward_mean(p, feat))


def test_sampling_floored_variance_is_deterministic(rng):
    p = small_policy(rng)
    p = pol.PolicyParams(p.w1, p.b1, p.w2, p.b2, np.full(3, -80.0))  # floored to -40
    feat = rng.standard_normal(6)
    a = pol.sample_action(p, feat, np.random.default_rng(0))
    assert np.allclose(a, pol.forward_mean(p, feat), atol=1e-8)


def test_sampling_reproducible_and_mean_correct(rng):
    p = small_policy(rng)
    feat = rng.standard_normal(6)
    a1 = pol.sample_action(p, feat, np.random.default_rng(7))
    a2 = pol.sample_action(p, feat, np.random.default_rng(7))
    assert np.array_equal(a1, a2)

    draws = np.stack([pol.sample_action(p, feat, np.random.default_rng(i))
                      for i in range(100_000)])
    mean = pol.forward_mean(p, feat)
    std = np.exp(0.5 * p.log_var)
    tol = 4.0 * std / np.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - mean) <= tol)


def test_supervised_loss_zero_residual(rng):
    p = small_policy(rng)
    feats = rng.standard_normal((4, 6))
    targets = pol.forward_mean(p, feats)
    precisions = np.stack([np.eye(3)] * 4)
    loss = pol.supervised_loss(p, feats, targets, precisions)
    # only the variance terms remain
    var = np.exp(p.log_var)
    expected = 0.5 * var.sum() - 0.5 * p.log_var.sum()
    assert np.isclose(loss, expected, atol=1e-12)


def test_supervised_loss_identity_precision_is_half_sq_error(rng):
    p = small_policy(rng)
    feats = rng.standard_normal((5, 6))
    targets = rng.standard_normal((5, 3))
    precisions = np.stack([np.eye(3)] * 5)
    loss = pol.supervised_loss(p, feats, targets, precisions)
    resid = pol.forward_mean(p, feats) - targets
    var = np.exp(p.log_var)
    expected = (0.5 * np.mean(np.sum(resid ** 2, axis=1))
                + 0.5 * var.sum() - 0.5 * p.log_var.sum())
    assert np.isclose(loss, expected, rtol=1e-12)


def test_supervised_loss_rejects_bad_precisions(rng):
    p = small_policy(rng)
    feats = rng.standard_normal((2, 6))
    targets = rng.standard_normal((2, 3))
    asym = np.stack([np.array([[1.0, 0.5, 0], [0, 1, 0], [0, 0, 1.0]])] * 2)
    with pytest.raises(ValueError):
        pol.supervised_loss(p, feats, targets, asym)
    neg = np.stack([-np.eye(3)] * 2)
    with pytest.raises(ValueError):
        pol.supervised_loss(p, feats, targets, neg)


def test_no_weight_decay_in_loss(rng):
    """Two nets computing the same function but with different weight
    magnitudes must have identical loss: W2 = 0 makes the output depend
    only on b2 regardless of W1's scale."""
    feats = np.random.default_rng(0).standard_normal((6, 4))
    targets = np.random.default_rng(1).standard_normal((6, 2))
    precisions = np.stack([np.eye(2)] * 6)
    base = pol.PolicyParams(w1=np.ones((5, 4)), b1=np.zeros(5),
                            w2=np.zeros((2, 5)), b2=np.array([0.3, -0.1]),
                            log_var=np.zeros(2))
    big = pol.PolicyParams(w1=100.0 * base.w1, b1=base.b1, w2=base.w2,
                           b2=base.b2, log_var=base.log_var)
    l1 = pol.supervised_loss(base, feats, targets, precisions)
    l2 = pol.supervised_loss(big, feats, targets, precisions)
    assert l1 == l2


def finite_diff_param_grads(params, feats, targets, precisions, coeff, eps=1e-6):
    grads = {}
    for name in ("w1", "b1", "w2", "b2", "log_var"):
        arr = np.array(getattr(params, name), dtype=float)
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            for sign in (1, -1):
                shifted = arr.copy()
                shifted[idx] += sign * eps
                p = pol.PolicyParams(**{n: (shifted if n == name else np.array(getattr(params, n)))
                                        for n in ("w1", "b1", "w2", "b2", "log_var")})
                val = pol.supervised_loss(p, feats, targets, precisions, coeff)
                g[idx] += sign * val / (2 * eps)
            it.iternext()
        grads[name] = g
    return grads


def test_gradients_match_finite_differences(rng):
    p = small_policy(rng, feature_len=5, action_dim=2, hidden=4)
    feats = rng.standard_normal((6, 5))
    targets = rng.standard_normal((6, 2))
    raw = rng.standard_normal((6, 2, 2))
    precisions = np.einsum("nij,nkj->nik", raw, raw) + 0.5 * np.eye(2)
    coeff = 0.1
    _, ana = pol._loss_and_grads(p, feats, targets, precisions, coeff)
    num = finite_diff_param_grads(p, feats, targets, precisions, coeff)
    for name in ana:
        denom = max(np.linalg.norm(num[name]), 1e-12)
        rel = np.linalg.norm(ana[name] - num[name]) / denom
        assert rel < 1e-5, f"{name}: rel error {rel}"


def test_train_fixed_point(rng):
    p = small_policy(rng)
    feats = rng.standard_normal((8, 6))
    targets = pol.forward_mean(p, feats)
    # match the variance terms' stationary point too: exp(v) = 1/Pbar_dd
    precisions = np.stack([np.eye(3)] * 8)
    p = pol.PolicyParams(p.w1, p.b1, p.w2, p.b2, np.zeros(3))
    trained, info = pol.train_policy(p, feats, targets, precisions,
                                     pol.TrainConfig(epochs=50))
    assert info["best_loss"] <= info["entry_loss"] + 1e-12
    assert np.isclose(info["best_loss"], info["entry_loss"], atol=1e-6)


def test_train_overfits_single_pair(rng):
    p = small_policy(rng)
    feats = rng.standard_normal((1, 6))
    target = rng.standard_normal((1, 3))
    precisions = np.stack([np.eye(3)])
    cfg = pol.TrainConfig(learning_rate=1e-2, epochs=3000)
    trained, info = pol.train_policy(p, feats, target, precisions, cfg)
    resid = pol.forward_mean(trained, feats[0]) - target[0]
    assert 0.5 * resid @ resid < 1e-6
    assert info["best_loss"] <= info["entry_loss"]


def test_entropy_coefficient_shrinks_variance(rng):
    p = small_policy(rng)
    feats = rng.standard_normal((16, 6))
    targets = rng.standard_normal((16, 3))
    precisions = np.stack([np.eye(3)] * 16)
    free, _ = pol.train_policy(p, feats, targets, precisions,
                               pol.TrainConfig(epochs=800, entropy_coeff=0.0,
                                               learning_rate=1e-2))
    pinned, _ = pol.train_policy(p, feats, targets, precisions,
                                 pol.TrainConfig(epochs=800, entropy_coeff=0.9,
                                                 learning_rate=1e-2))
    assert np.all(free.log_var > pinned.log_var)


def test_train_rejects_empty_batch(rng):
    p = small_policy(rng)
    with pytest.raises(ValueError):
        pol.train_policy(p, np.zeros((0, 6)), np.zeros((0, 3)),
                         np.zeros((0, 3, 3)))


def test_policy_roundtrip(tmp_path, rng):
    p = small_policy(rng)
    path = tmp_path / "policy.json"
    pol.save_policy(p, path, metadata={"gps_iteration": 3, "entropy_coeff": 0.01})
    back, meta = pol.load_policy(path)
    for name in ("w1", "b1", "w2", "b2", "log_var"):
        assert np.array_equal(getattr(back, name), getattr(p, name))
    assert meta["gps_iteration"] == 3
