import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hemorom.errors import BundleError, NumericalError
from hemorom.nn import (
    Network,
    Normalizer,
    OutflowRegressor,
    gradient_check,
    init_network,
    load_model,
    save_model,
    softplus,
    split_indices,
    train,
)


def _single_neuron(w, beta):
    return Network([np.array([[w]]), np.array([[1.0]])], [np.array([beta]), np.array([0.0])])


def test_softplus_values():
    assert _single_neuron(0.0, 0.0).forward(np.array([[5.0]]))[0, 0] == pytest.approx(np.log(2), rel=1e-15)
    assert _single_neuron(1.0, 0.0).forward(np.array([[1.0]]))[0, 0] == pytest.approx(1.313262, abs=5e-7)
    assert softplus(800.0) == 800.0 and softplus(-800.0) == 0.0


def test_zero_final_layer_outputs_bias(rng):
    net = init_network([1, 6, 6, 2], seed=3)
    net.weights[-1][...] = 0.0
    net.biases[-1][...] = [1.5, -0.25]
    out = net.forward(rng.normal(size=(7, 1)))
    assert np.all(out == [1.5, -0.25])


def test_layer_shape_validation():
    with pytest.raises(ValueError):
        Network([np.zeros((3, 1)), np.zeros((1, 2))], [np.zeros(3), np.zeros(1)])
    with pytest.raises(ValueError):
        Network([np.zeros((3, 1))], [np.zeros(2)])
    with pytest.raises(ValueError):
        init_network([1])


def test_gradient_check_random_softplus_net(rng):
    net = init_network([1, 8, 8, 1], seed=1)
    x, y = rng.normal(size=(10, 1)), rng.normal(size=(10, 1))
    assert gradient_check(net, x, y) < 1e-6


def test_gradient_check_linear_net(rng):
    net = init_network([1, 4, 1], seed=2, activation="identity")
    x, y = rng.normal(size=(6, 1)), rng.normal(size=(6, 1))
    assert gradient_check(net, x, y, eps=1e-3) < 1e-9


def test_zero_parameter_net_gradients_defined(rng):
    net = init_network([1, 5, 1], seed=0)
    net.set_flat(np.zeros_like(net.get_flat()))
    _, gw, gb = net.loss_and_grads(rng.normal(size=(4, 1)), np.ones((4, 1)))
    assert all(np.all(np.isfinite(g)) for g in gw + gb)
    assert gradient_check(net, rng.normal(size=(4, 1)), np.ones((4, 1))) < 1e-6


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_gradient_check_property(seed):
    r = np.random.default_rng(seed)
    sizes = [1] + list(r.integers(1, 6, size=r.integers(1, 3))) + [int(r.integers(1, 3))]
    net = init_network(sizes, seed=seed)
    x, y = r.normal(size=(5, 1)), r.normal(size=(5, sizes[-1]))
    assert gradient_check(net, x, y) < 1e-6


def _constant_run(epochs=5000):
    t = np.linspace(0.02, 1.0, 50)
    x = Normalizer.fit(t).transform(t)
    return train(init_network([1, 8, 1], seed=0), x, np.full((50, 1), 0.7), epochs, 1e-2)


def test_constant_target_loss_is_non_increasing():
    res = _constant_run()
    assert np.all(np.diff(res.train_loss) <= 1e-12)
    assert res.train_loss[-1] < 1e-3 * res.train_loss[0]


@pytest.mark.xfail(strict=True, reason="plain gradient descent on the hidden layer converges too "
                   "slowly to reach this level within the stated budget")
def test_constant_target_reaches_tight_loss():
    assert _constant_run().train_loss[-1] < 1e-8


def test_training_deterministic(rng):
    t = np.linspace(0, 1, 20)
    y = np.sin(3 * t)
    a = OutflowRegressor(neurons=8, epochs=200, seed=4).fit(t, y)
    b = OutflowRegressor(neurons=8, epochs=200, seed=4).fit(t, y)
    assert np.array_equal(a.train_loss_, b.train_loss_)
    assert np.array_equal(a.test_loss_, b.test_loss_)
    assert np.array_equal(a.predict(t), b.predict(t))


def test_nan_loss_aborts_with_epoch():
    net = init_network([1, 4, 1], seed=0)
    x = np.linspace(-1, 1, 5)[:, None]
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(NumericalError, match="epoch"):
        train(net, x, 1e200 * np.ones((5, 1)), 50, 1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_normalizer_round_trip(seed):
    r = np.random.default_rng(seed)
    x = r.normal(size=(12, 3)) * r.uniform(1e-3, 1e3, size=3) + r.uniform(-1e3, 1e3, size=3)
    n = Normalizer.fit(x)
    back = n.inverse(n.transform(x))
    assert np.allclose(back, x, rtol=1e-12, atol=1e-12 * np.max(np.abs(x)))
    z = Normalizer.fit(np.full(5, 2.0))
    assert np.all(z.transform(np.full(5, 2.0)) == 0)


def test_split_deterministic_and_keeps_ends():
    t = np.linspace(0.02, 1.0, 50)
    tr1, te1 = split_indices(t, 0.8, 7)
    tr2, te2 = split_indices(t, 0.8, 7)
    assert np.array_equal(tr1, tr2) and np.array_equal(te1, te2)
    assert len(tr1) == 40 and len(te1) == 10
    assert {0, 49} <= set(tr1.tolist())
    assert not set(tr1) & set(te1)
    with pytest.raises(ValueError):
        split_indices(t, 1.0, 0)


def test_prediction_at_training_time_within_loss_envelope():
    t = np.linspace(0, 1, 30)
    y = 2.0 + np.sin(2 * t)
    reg = OutflowRegressor(neurons=16, epochs=3000, seed=0).fit(t, y)
    k = reg.train_idx_[3]
    envelope = np.sqrt(reg.train_loss_[0, -1] * len(reg.train_idx_)) * reg.y_norm_[0].scale[0]
    assert abs(reg.predict([t[k]])[0, 0] - y[k]) <= envelope


def test_multi_output_shape_and_per_outlet():
    t = np.linspace(0, 1, 20)
    y = np.column_stack([t, t**2, np.cos(t)])
    reg = OutflowRegressor(neurons=6, epochs=50).fit(t, y)
    assert reg.predict(np.array([0.3, 0.4])).shape == (2, 3)
    split = OutflowRegressor(neurons=6, epochs=50, per_outlet=True).fit(t, y)
    assert len(split.nets_) == 3 and split.predict([0.5]).shape == (1, 3)
    assert split.extrapolating(np.array([-0.1, 0.5, 1.2])).tolist() == [True, False, True]


def test_fit_validation():
    with pytest.raises(ValueError):
        OutflowRegressor().fit([0.0, 1.0, 2.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        OutflowRegressor().fit([0.0, np.nan], [1.0, 2.0])


def test_save_load_round_trip(tmp_path):
    t = np.linspace(0, 1, 15)
    y = np.column_stack([np.sin(t), t])
    for per in (False, True):
        reg = OutflowRegressor(neurons=5, epochs=40, per_outlet=per).fit(t, y)
        path = tmp_path / f"nn_{per}.txt"
        save_model(reg, path)
        back = load_model(path)
        assert np.array_equal(back.predict(t), reg.predict(t))
        assert back.get_params() == reg.get_params()
        save_model(back, tmp_path / "again.txt")
        assert (tmp_path / "again.txt").read_bytes() == path.read_bytes()


def test_load_rejects_bad_files(tmp_path):
    with pytest.raises(BundleError):
        load_model(tmp_path / "missing.txt")
    bad = tmp_path / "bad.txt"
    bad.write_text("ROMNN v2\n")
    with pytest.raises(BundleError):
        load_model(bad)
