import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from selfbody.approximator import (FeedforwardNet, FormatError, Optimizer, TrainConfig, TrainingDiverged,
                                   VersionError, load, save, train_minibatch)
from selfbody.kinematics import DimensionError


def test_dead_network_outputs_bias():
    net = FeedforwardNet(3, 5, 2).zero()
    net.b2[:] = [1.5, -2.0]
    assert np.array_equal(net.forward(np.array([4.0, -1.0, 9.0])), [1.5, -2.0])


def test_hand_evaluated_unit_net():
    net = FeedforwardNet(1, 1, 1).zero()
    net.W2[:] = 2.0
    assert net.forward(np.array([7.0]))[0] == 1.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_forward_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    net = FeedforwardNet(4, 7, 3, seed=seed)
    net.b1[:] = rng.normal(size=7)
    net.b2[:] = rng.normal(size=3)
    x = rng.normal(size=4)
    h = 1.0 / (1.0 + np.exp(-(net.W1 @ x + net.b1)))
    assert np.max(np.abs(net.forward(x) - (net.W2 @ h + net.b2))) < 1e-12


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        FeedforwardNet(3, 4, 2).forward(np.zeros(2))


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    net = FeedforwardNet(3, 4, 2, seed=2)
    net.b1[:] = rng.normal(size=4)
    net.b2[:] = rng.normal(size=2)
    X, Y = rng.normal(size=(6, 3)), rng.normal(size=(6, 2))
    _, grads = net.loss_and_gradients(X, Y)
    eps = 1e-6
    worst = 0.0
    for p, g in zip(net.params, grads):
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + eps
            up = net.loss(X, Y)
            p[idx] = old - eps
            down = net.loss(X, Y)
            p[idx] = old
            fd = (up - down) / (2 * eps)
            worst = max(worst, abs(fd - g[idx]) / max(abs(fd), abs(g[idx]), 1e-8))
    assert worst < 1e-5


def test_zero_residual_leaves_parameters():
    net = FeedforwardNet(2, 3, 1, seed=0)
    x = np.array([0.3, -0.2])
    y = net.forward(x)
    before = net.get_state()
    loss = train_minibatch(net, [(x, y)], TrainConfig(learning_rate=0.1, epochs=5))
    assert loss == 0.0
    assert all(np.array_equal(a, b) for a, b in zip(before, net.get_state()))


def test_linear_fit_converges():
    x = np.linspace(-1, 1, 21)[:, None]
    y = 3 * x
    net = FeedforwardNet(1, 4, 1, seed=0)
    cfg = TrainConfig(learning_rate=0.1, optimizer="momentum", epochs=1)
    opt = Optimizer(net, cfg)
    losses = [train_minibatch(net, (x, y), cfg, opt) for _ in range(500)]
    windows = np.array(losses).reshape(50, 10).mean(axis=1)
    assert np.all(np.diff(windows) < 0)
    assert losses[-1] < 1e-3


def test_divergence_rolls_back():
    net = FeedforwardNet(1, 4, 1, seed=0)
    before = net.get_state()
    x = np.array([[1.0]])
    with pytest.raises(TrainingDiverged), np.errstate(over="ignore", invalid="ignore"):
        train_minibatch(net, (x, np.array([[1e200]])), TrainConfig(learning_rate=1e10, epochs=3))
    assert all(np.array_equal(a, b) for a, b in zip(before, net.get_state()))


def test_empty_batch_rejected():
    with pytest.raises(ValueError):
        train_minibatch(FeedforwardNet(1, 2, 1), [], TrainConfig())


def test_training_is_deterministic():
    rng = np.random.default_rng(0)
    X, Y = rng.normal(size=(10, 3)), rng.normal(size=(10, 2))
    nets = []
    for _ in range(2):
        net = FeedforwardNet(3, 6, 2, seed=4)
        for _ in range(20):
            train_minibatch(net, (X, Y), TrainConfig(0.05, "adam", epochs=3))
        nets.append(save(net))
    assert nets[0] == nets[1]


def test_round_trip_is_bitwise():
    net = FeedforwardNet(3, 6, 2, seed=9)
    x = np.random.default_rng(0).normal(size=(5, 3))
    other = load(save(net))
    assert other.forward(x).tobytes() == net.forward(x).tobytes()
    assert save(other) == save(net)


def test_truncated_stream():
    data = save(FeedforwardNet(3, 6, 2))
    for cut in (0, 3, 10, len(data) - 1):
        with pytest.raises(FormatError):
            load(data[:cut])


def test_version_mismatch():
    data = bytearray(save(FeedforwardNet(3, 6, 2)))
    data[4] = 99
    with pytest.raises(VersionError):
        load(bytes(data))


def test_bad_config():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(optimizer="lbfgs")
