from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gradcheck import max_relative_error
from cemrm.reward_model import (
    MLP, ModelDivergedError, ReplayBuffer, RewardModel, RewardModelConfig, forward, init_mlp,
    loss_and_grad, predict, sample_batch, train_step,
)


def linear(w, b=0.0) -> MLP:
    w = np.atleast_1d(np.asarray(w, dtype=np.float64))
    return MLP([w[None, :]], [np.array([b])], "tanh")


def test_zero_network_predicts_zero():
    net = init_mlp(5, (4, 4), rng=0)
    for p in net.params():
        p[...] = 0.0
    assert np.all(forward(net, np.random.default_rng(1).normal(size=(7, 5))) == 0.0)


def test_linear_prediction_example():
    assert predict(linear([1.0, 2.0], 0.5), np.array([1.0, 1.0])) == 3.5


def test_predict_is_deterministic():
    net = init_mlp(3, rng=2)
    x = np.array([0.1, -0.4, 0.9])
    assert predict(net, x) == predict(net, x)


def test_predict_rejects_wrong_dimension():
    with pytest.raises(ValueError):
        predict(init_mlp(3, rng=0), np.zeros(4))


def test_train_step_hand_gradient():
    new, loss = train_step(linear([0.0]), np.array([[1.0]]), np.array([2.0]), 0.1)
    assert loss == 4.0
    # the bias gets the same gradient, so check the weight
    assert new.weights[0][0, 0] == pytest.approx(0.4, abs=1e-12)


def test_train_step_fixed_point():
    net = init_mlp(3, (5,), rng=3)
    x = np.random.default_rng(4).normal(size=(6, 3))
    y = forward(net, x)
    new, loss = train_step(net, x, y, 0.1)
    assert loss == 0.0
    for a, b in zip(net.params(), new.params()):
        assert np.array_equal(a, b)


def test_train_step_rejects_empty_batch():
    with pytest.raises(ValueError):
        train_step(linear([1.0]), np.empty((0, 1)), np.empty(0), 0.1)


def test_non_finite_loss_is_a_hard_failure():
    with pytest.raises(ModelDivergedError):
        train_step(linear([1.0]), np.array([[1.0]]), np.array([np.inf]), 0.1)


@pytest.mark.parametrize("activation", ["tanh", "relu"])
def test_gradient_matches_finite_differences(activation):
    for seed in range(3):
        assert max_relative_error(seed, activation=activation) < 1e-4


@given(st.integers(0, 2**31))
def test_loss_non_increasing_on_linear_model(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, size=(10, 3))
    y = rng.uniform(-1, 1, size=10)
    net = MLP([rng.normal(size=(1, 3))], [rng.normal(size=1)], "tanh")
    prev = np.inf
    for _ in range(20):
        net, loss = train_step(net, x, y, 0.01)
        assert loss <= prev + 1e-12
        prev = loss


def test_sample_batch_needs_strictly_more_than_batch():
    buf = ReplayBuffer()
    for i in range(10):
        buf.add([float(i)], float(i))
    assert sample_batch(buf, 10, 0) is None
    buf.add([10.0], 10.0)
    x, y = sample_batch(buf, 10, 0)
    assert len(set(y.tolist())) == 10
    assert np.array_equal(sample_batch(buf, 10, 5)[1], sample_batch(buf, 10, 5)[1])


def test_buffer_fifo_and_audit_count():
    buf = ReplayBuffer(capacity=3)
    for i in range(5):
        buf.add([i], i)
    assert len(buf) == 3 and buf.n_added == 5
    assert buf.arrays()[1].tolist() == [2.0, 3.0, 4.0]


def test_buffer_feasible_filter_and_round_trip():
    buf = ReplayBuffer()
    buf.add([0.0], 0.0, feasible=False)
    buf.add([1.0], 2.0)
    assert buf.arrays(feasible_only=True)[1].tolist() == [2.0]
    again = ReplayBuffer.from_dict(json.loads(json.dumps(buf.to_dict())))
    assert again.to_dict() == buf.to_dict()


def test_buffer_rejects_non_finite_reward():
    with pytest.raises(ValueError):
        ReplayBuffer().add([0.0], float("nan"))


def test_reward_model_learns_a_quadratic():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, size=(200, 2))
    y = -np.sum(x**2, axis=1)
    buf = ReplayBuffer()
    for a, r in zip(x, y):
        buf.add(a, r)
    model = RewardModel(2, RewardModelConfig(hidden=(16,), optimizer="adam", learning_rate=1e-2,
                                             batch_size=32, input_features="quadratic"), rng=1)
    model.update_stats(buf)
    first = None
    for step in range(400):
        bx, by = sample_batch(buf, 32, [7, step])
        loss = model.fit_batch(bx, by)
        first = loss if first is None else first
    assert loss < 0.1 * first
    assert model.predict([[0.0, 0.0]])[0] > model.predict([[0.9, 0.9]])[0]


def test_model_checkpoint_is_bit_exact():
    model = RewardModel(3, RewardModelConfig(hidden=(4,), optimizer="adam"), rng=0)
    model.fit_batch(np.ones((2, 3)), [1.0, 2.0])
    blob = json.loads(json.dumps(model.to_dict()))
    other = RewardModel(3, RewardModelConfig(hidden=(4,), optimizer="adam"), rng=9)
    other.load_state(blob)
    x = np.random.default_rng(2).normal(size=(5, 3))
    assert np.array_equal(model.predict(x), other.predict(x))
    assert model.fit_batch(x, np.zeros(5)) == other.fit_batch(x, np.zeros(5))
