import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scialign import preference as P

finite_rewards = st.floats(min_value=-50.0, max_value=50.0,
                           allow_nan=False, allow_infinity=False)


def test_reward_identical_unit_vectors():
    u = np.array([1.0, 0.0, 0.0])
    assert P.reward(u, u, 1.0) == pytest.approx(1.0)


def test_reward_orthogonal():
    assert P.reward(np.array([1.0, 0, 0]), np.array([0, 1.0, 0]), 1.0) == pytest.approx(0.0)


def test_reward_temperature_scaling():
    u = np.array([1.0, 0.0])
    v = np.array([0.5, math.sqrt(3) / 2])  # cosine 0.5
    assert P.reward(u, v, 2.0) == pytest.approx(1.0)


def test_reward_zero_norm_rejected():
    with pytest.raises(ValueError):
        P.reward(np.zeros(3), np.ones(3), 1.0)


def test_preference_symmetry_and_sigma1():
    assert P.preference(2.0, 2.0) == 0.5
    assert P.preference(1.0, 0.0) == pytest.approx(0.7310585786300049, abs=1e-12)


@given(finite_rewards, finite_rewards, st.floats(min_value=-30, max_value=30,
                                                 allow_nan=False))
def test_preference_shift_invariance(a, b, shift):
    assert P.preference(a + shift, b + shift) == pytest.approx(P.preference(a, b), abs=1e-12)


@given(finite_rewards, finite_rewards)
def test_preference_complement(a, b):
    assert P.preference(a, b) + P.preference(b, a) == pytest.approx(1.0, abs=1e-12)


def test_preference_extreme_rewards_stable():
    # temperature-scaled rewards can reach +-100; naive exponentials overflow
    assert 0.0 < P.preference(100.0, -100.0) <= 1.0
    assert P.preference(-100.0, 100.0) >= 0.0


def test_bt_equals_two_class_softmax():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        r_w, r_l = rng.normal(scale=5, size=2)
        naive = math.exp(r_w) / (math.exp(r_w) + math.exp(r_l))
        assert abs(P.bt_probability(r_w, r_l) - naive) <= 1e-12


def test_bt_equals_preference_exactly():
    rng = np.random.default_rng(1)
    for _ in range(100):
        r_w, r_l = rng.normal(scale=3, size=2)
        assert P.bt_probability(r_w, r_l) == P.preference(r_w, r_l)


def test_kl_to_onehot_values():
    assert P.kl_to_onehot(0, [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-12)
    assert P.kl_to_onehot(0, [1 - 1e-9, 1e-9]) == pytest.approx(0.0, abs=1e-8)
    assert P.kl_to_onehot(1, [0.25, 0.75]) == pytest.approx(-math.log(0.75), abs=1e-12)


def test_kl_to_onehot_is_cross_entropy():
    rng = np.random.default_rng(2)
    for _ in range(100):
        p = float(rng.uniform(1e-6, 1 - 1e-6))
        assert P.kl_to_onehot(0, [p, 1 - p]) == pytest.approx(-math.log(p), abs=1e-12)


def test_kl_to_onehot_clamps_boundary():
    assert np.isfinite(P.kl_to_onehot(0, [0.0, 1.0]))
    assert P.kl_to_onehot(0, [1.0, 0.0]) == pytest.approx(0.0, abs=1e-9)


def _random_embeddings(rng, d=8):
    return {k: rng.normal(size=d) for k in ("x_i", "x_e", "x_s", "y_e", "y_s")}


def test_ipa_loss_equal_rewards_is_ln2():
    # same image twice makes both rewards equal
    x = np.array([1.0, 2.0, 3.0])
    y = np.array([0.5, -1.0, 2.0])
    assert P.ipa_loss(x, y, y, 7.0) == pytest.approx(math.log(2), abs=1e-12)


def test_ipa_loss_saturates():
    x = np.array([1.0, 0.0])
    assert P.ipa_loss(x, x, -x, 50.0) == pytest.approx(0.0, abs=1e-8)


def test_ipa_loss_monotone_in_margin():
    # increasing the explicit-image reward strictly decreases the loss
    x_i = np.array([1.0, 0.0])
    y_s = np.array([0.0, 1.0])
    angles = np.linspace(1.2, 0.1, 8)
    losses = [P.ipa_loss(x_i, np.array([math.cos(a), math.sin(a)]), y_s, 5.0)
              for a in angles]
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_ipa_matches_kl_preference_composition():
    rng = np.random.default_rng(3)
    for _ in range(20):
        e = _random_embeddings(rng)
        r_e = P.reward(e["x_i"], e["y_e"], 4.0)
        r_s = P.reward(e["x_i"], e["y_s"], 4.0)
        composed = P.kl_to_onehot(0, [P.preference(r_e, r_s), P.preference(r_s, r_e)])
        assert P.ipa_loss(e["x_i"], e["y_e"], e["y_s"], 4.0) == pytest.approx(composed, abs=1e-9)


def test_iee_symmetric_rewards():
    x = np.array([1.0, 0.0])
    pos, neg = P.iee_loss(x, x, x, x, 3.0)
    assert pos == pytest.approx(math.log(2), abs=1e-12)
    assert neg == pytest.approx(math.log(2), abs=1e-12)


def test_iee_swap_images_swaps_saturation():
    x_e = np.array([1.0, 0.0])
    x_s = np.array([0.0, 1.0])
    pos, neg = P.iee_loss(x_e, x_s, x_e, x_s, 20.0)
    pos_sw, neg_sw = P.iee_loss(x_e, x_s, x_s, x_e, 20.0)
    assert pos < 0.01 and neg < 0.01
    assert pos_sw > 1.0 and neg_sw > 1.0


def test_total_loss_lambda_zero_is_ipa_exactly():
    rng = np.random.default_rng(4)
    e = _random_embeddings(rng)
    terms = P.total_loss(e["x_i"], e["x_e"], e["x_s"], e["y_e"], e["y_s"], 5.0, 0.0)
    assert terms.total == terms.ipa
    assert terms.total == P.ipa_loss(e["x_i"], e["y_e"], e["y_s"], 5.0)


def test_total_loss_default_weighting():
    rng = np.random.default_rng(5)
    e = _random_embeddings(rng)
    terms = P.total_loss(e["x_i"], e["x_e"], e["x_s"], e["y_e"], e["y_s"], 5.0, 0.25)
    assert terms.total == pytest.approx(terms.ipa + 0.25 * (terms.iee_pos + terms.iee_neg))


@pytest.mark.parametrize("lam", [0.0, 0.1, 0.25, 0.5, 0.75])
def test_total_loss_sweep_grid(lam):
    rng = np.random.default_rng(6)
    e = _random_embeddings(rng)
    terms = P.total_loss(e["x_i"], e["x_e"], e["x_s"], e["y_e"], e["y_s"], 2.0, lam)
    assert terms.lambda_weight == lam and np.isfinite(terms.total)


def test_total_loss_rejects_negative_lambda():
    rng = np.random.default_rng(7)
    e = _random_embeddings(rng)
    with pytest.raises(ValueError):
        P.total_loss(e["x_i"], e["x_e"], e["x_s"], e["y_e"], e["y_s"], 2.0, -0.1)


@pytest.mark.parametrize("lam,temp", [(0.0, 1.0), (0.25, 10.0), (0.75, 3.0)])
def test_loss_gradients_match_finite_differences(lam, temp):
    rng = np.random.default_rng(8)
    e = _random_embeddings(rng)
    _, grads = P.total_loss_with_grads(e["x_i"], e["x_e"], e["x_s"],
                                       e["y_e"], e["y_s"], temp, lam)
    h = 1e-6

    def loss_at(embs, t):
        return P.total_loss(embs["x_i"], embs["x_e"], embs["x_s"],
                            embs["y_e"], embs["y_s"], t, lam).total

    for key in e:
        for i in range(len(e[key])):
            up = {k: v.copy() for k, v in e.items()}
            dn = {k: v.copy() for k, v in e.items()}
            up[key][i] += h
            dn[key][i] -= h
            fd = (loss_at(up, temp) - loss_at(dn, temp)) / (2 * h)
            assert abs(fd - grads[key][i]) <= 1e-4 * max(abs(fd), abs(grads[key][i]), 1e-6)
    fd_t = (loss_at(e, temp + h) - loss_at(e, temp - h)) / (2 * h)
    assert abs(fd_t - grads["temperature"]) <= 1e-4 * max(abs(fd_t), 1e-6)
