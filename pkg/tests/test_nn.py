"""Network machinery: spec validation, gradients, Adam, determinism."""

import numpy as np
import pytest

from pdv4.errors import InputError, NumericalError
from pdv4.nn import (
    Adam,
    MlpSpec,
    check_finite,
    default_mlp_spec,
    forward,
    init_layers,
    rmse_and_gradients,
)
from pdv4.rng import master_stream, split


def tiny_spec() -> MlpSpec:
    return MlpSpec(sizes=(14, 8, 1), activations=("tanh", "linear"))


def test_default_spec_architecture():
    spec = default_mlp_spec()
    assert spec.sizes == (14, 448, 64, 224, 416, 128, 1)
    assert spec.activations == ("tanh", "tanh", "relu", "tanh", "relu", "linear")


def test_spec_validation():
    with pytest.raises(InputError):
        MlpSpec(sizes=(13, 8, 1), activations=("tanh", "linear"))
    with pytest.raises(InputError):
        MlpSpec(sizes=(14, 8, 2), activations=("tanh", "linear"))
    with pytest.raises(InputError):
        MlpSpec(sizes=(14, 8, 1), activations=("tanh", "relu"))
    with pytest.raises(InputError):
        MlpSpec(sizes=(14, 8, 1), activations=("sigmoid", "linear"))
    with pytest.raises(InputError):
        MlpSpec(sizes=(14, 1), activations=("linear", "linear"))


def test_init_is_deterministic_and_bounded():
    spec = tiny_spec()
    w1, b1 = init_layers(spec, master_stream(5))
    w2, b2 = init_layers(spec, master_stream(5))
    for a, b in zip(w1, w2):
        assert np.array_equal(a, b)
    assert all(np.all(b == 0) for b in b1)
    assert np.all(np.abs(w1[0]) <= 1.0 / np.sqrt(14))
    assert np.all(np.abs(w1[1]) <= 1.0 / np.sqrt(8))
    del b2


def test_forward_shape_and_input_check():
    spec = tiny_spec()
    w, b = init_layers(spec, master_stream(1))
    x = master_stream(2).gaussians(5 * 14).reshape(5, 14)
    out = forward(spec, w, b, x)
    assert out.shape == (5,)
    with pytest.raises(InputError):
        forward(spec, w, b, x[:, :13])


def test_gradient_check_against_central_differences():
    # backprop on the tiny net must match finite differences everywhere
    spec = tiny_spec()
    stream = master_stream(42)
    weights, biases = init_layers(spec, split(stream, 0))
    x = split(stream, 1).gaussians(100 * 14).reshape(100, 14)
    y = split(stream, 2).gaussians(100) * 2.0 + 20.0

    loss, gw, gb = rmse_and_gradients(spec, weights, biases, x, y)
    assert loss > 0

    def loss_at() -> float:
        resid = forward(spec, weights, biases, x) - y
        return float(np.sqrt(np.mean(resid * resid)))

    h = 1e-6
    worst = 0.0
    for tensors, grads in ((weights, gw), (biases, gb)):
        for arr, grad in zip(tensors, grads):
            flat = arr.reshape(-1)
            gflat = grad.reshape(-1)
            for j in range(flat.size):
                keep = flat[j]
                flat[j] = keep + h
                up = loss_at()
                flat[j] = keep - h
                down = loss_at()
                flat[j] = keep
                numeric = (up - down) / (2.0 * h)
                denom = max(1e-8, abs(numeric) + abs(gflat[j]))
                worst = max(worst, abs(numeric - gflat[j]) / denom)
    assert worst < 1e-4


def test_zero_residual_gives_zero_gradients():
    spec = tiny_spec()
    w, b = init_layers(spec, master_stream(3))
    x = master_stream(4).gaussians(6 * 14).reshape(6, 14)
    y = forward(spec, w, b, x)
    loss, gw, gb = rmse_and_gradients(spec, w, b, x, y)
    assert loss == 0.0
    assert all(np.all(g == 0) for g in gw)
    assert all(np.all(g == 0) for g in gb)


def test_adam_fits_constant_target():
    spec = tiny_spec()
    w, b = init_layers(spec, master_stream(7))
    x = master_stream(8).gaussians(64 * 14).reshape(64, 14)
    y = np.full(64, 5.0)
    adam = Adam(w, b, lr=0.05)
    for _ in range(400):
        loss, gw, gb = rmse_and_gradients(spec, w, b, x, y)
        adam.step(w, b, gw, gb)
    assert loss < 0.05
    with pytest.raises(InputError):
        Adam(w, b, lr=0.0)


def test_check_finite_raises():
    spec = tiny_spec()
    w, b = init_layers(spec, master_stream(9))
    w[0][0, 0] = np.nan
    with pytest.raises(NumericalError):
        check_finite(w, b, "test")
