import numpy as np
import pytest

from imgnb.neural import avg_pool, grad_wrt_params, pooled_length, sgd_step
from imgnb.user_estimators import UserEstimatorBank, auto_pool_step

D1, D2 = 3, 2


def make_bank(m=4, seed=0, **kw):
    return UserEstimatorBank(m, D1 + D2, np.random.default_rng(seed), hidden=5, **kw)


def zero(bank):
    for net in (bank.exploit, bank.explore):
        net.set_flat(np.zeros_like(net.get_flat()))


def arm_ctx(seed=1):
    rng = np.random.default_rng(seed)
    return rng.random(D1), rng.random(D2)


def user_net(bank, u, which="exploit"):
    from imgnb.neural import EstimatorNet
    src = getattr(bank, which)
    return EstimatorNet(src.layer_dims, weights=[w[u].copy() for w in src.weights])


def test_shapes_and_explore_dim():
    bank = make_bank(m=3, n_layers=3)
    n_params = (D1 + D2) * 5 + 5 * 5 + 5
    assert bank.exploit.n_params == n_params
    assert bank.explore_dim == pooled_length(n_params, bank.pool_step) <= 64
    arm, ctx = arm_ctx()
    assert bank.pooled_gradients(np.concatenate([arm, ctx])[None])[0].shape == (1, bank.explore_dim)
    assert bank.estimate_probs(arm, ctx).shape == (3,)


def test_auto_pool_step():
    assert auto_pool_step(64) == 1
    assert auto_pool_step(65) == 2
    assert auto_pool_step(1000) == 16


def test_zero_nets_give_zero_estimates():
    bank = make_bank()
    zero(bank)
    arm, ctx = arm_ctx()
    np.testing.assert_array_equal(bank.estimate_probs(arm, ctx), 0.0)
    np.testing.assert_array_equal(bank.estimate_gains(arm, ctx), 0.0)


def test_estimates_match_single_networks():
    bank = make_bank()
    arm, ctx = arm_ctx()
    x = np.concatenate([arm, ctx])
    probs, gains = bank.estimate_probs(arm, ctx), bank.estimate_gains(arm, ctx)
    for u in range(bank.m_users):
        h1 = user_net(bank, u)
        assert probs[u] == pytest.approx(np.clip(h1.forward(x)[0], 0, 1), rel=1e-13)
        g = avg_pool(grad_wrt_params(h1, x), bank.pool_step)
        assert gains[u] == pytest.approx(user_net(bank, u, "explore").forward(g)[0],
                                         rel=1e-12, abs=1e-15)


def test_probs_are_clipped():
    bank = make_bank(m=6)
    for w in bank.exploit.weights:
        w *= 30
    arm, ctx = arm_ctx()
    p = bank.estimate_probs(np.stack([arm, 1 - arm]), ctx)
    assert np.all((p >= 0) & (p <= 1))
    assert np.any(p == 1.0) or np.any(p == 0.0)


def test_macro_clip_uses_cluster_size():
    bank = make_bank(m=2, upper=[1.0, 5.0])
    raw = np.array([[7.0], [7.0]])
    np.testing.assert_array_equal(bank.clipped(raw), [[1.0], [5.0]])


def test_user_independence():
    bank = make_bank()
    arm, ctx = arm_ctx()
    before = bank.estimate_probs(arm, ctx)
    bank.exploit.weights[0][2] += 1.0
    after = bank.estimate_probs(arm, ctx)
    np.testing.assert_array_equal(np.delete(after, 2), np.delete(before, 2))


def test_gains_follow_exploit_parameters():
    bank = make_bank(m=1)
    arm, ctx = arm_ctx()
    x = np.concatenate([arm, ctx])
    g_before = bank.pooled_gradients(x[None])[0, 0]
    gains_before = bank.estimate_gains(arm, ctx)
    h1 = user_net(bank, 0)
    sgd_step(h1, x, [1.0], lr=0.1)
    for W, new in zip(bank.exploit.weights, h1.weights):
        W[0] = new
    g_after = bank.pooled_gradients(x[None])[0, 0]
    np.testing.assert_allclose(g_after, avg_pool(grad_wrt_params(h1, x), bank.pool_step))
    assert not np.allclose(g_before, g_after)
    assert bank.estimate_gains(arm, ctx)[0] != gains_before[0]


def test_heavy_training_reaches_label():
    bank = make_bank(m=2, seed=3)
    arm, ctx = arm_ctx()
    for _ in range(60):
        bank.train(arm[None], ctx, [[1.0, 0.0]])
    p = bank.estimate_probs(arm, ctx)
    assert p[0] >= 0.9
    assert p[1] <= 0.1


def test_zero_labels_on_zero_nets_are_a_fixed_point():
    bank = make_bank()
    zero(bank)
    arm, ctx = arm_ctx()
    loss1, loss2 = bank.train(np.stack([arm, arm + 1]), ctx, np.zeros((2, 4)))
    np.testing.assert_array_equal(loss1, 0.0)
    np.testing.assert_array_equal(loss2, 0.0)
    np.testing.assert_array_equal(bank.exploit.get_flat(), 0.0)
    np.testing.assert_array_equal(bank.explore.get_flat(), 0.0)


def test_exploit_loss_decreases_on_repeated_round():
    bank = UserEstimatorBank(1, D1 + D2, np.random.default_rng(5), hidden=16)
    arm, ctx = arm_ctx(2)
    losses = [bank.train(arm[None], ctx, [[1.0]])[0][0] for _ in range(5)]
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_explore_targets_use_pre_update_estimates():
    bank = make_bank(m=3)
    arm, ctx = arm_ctx()
    x = np.concatenate([arm, ctx])
    labels = np.array([[1.0, 0.0, 1.0]])
    expected = labels - bank.raw_probs(x[None]).T
    grads = bank.pooled_gradients(x[None])
    bank.train(arm[None], ctx, labels)
    np.testing.assert_array_equal(bank.last_explore_targets_, expected)
    Gq, Yq = bank._explore_buf.stacked()
    np.testing.assert_array_equal(Gq[0], grads[:, 0, :])
    np.testing.assert_array_equal(Yq[0], expected[0])


def test_training_user_does_not_touch_others():
    bank = make_bank(m=3)
    arm, ctx = arm_ctx()
    W_before = [w[1].copy() for w in bank.exploit.weights]
    # user 1 sees its current output as the label: zero gradient
    x = np.concatenate([arm, ctx])
    current = bank.raw_probs(x[None])[:, 0]
    labels = np.array([[5.0, current[1], -3.0]])
    bank.train(arm[None], ctx, labels)
    for w, b in zip(bank.exploit.weights, W_before):
        np.testing.assert_array_equal(w[1], b)


def test_dimension_errors():
    bank = make_bank()
    with pytest.raises(ValueError):
        bank.estimate_probs(np.ones(D1 + 1), np.ones(D2))
