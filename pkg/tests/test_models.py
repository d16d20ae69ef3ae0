import json

import mpmath
import numpy as np
import pytest

from adaptalign.adapters import (
    AdapterModel,
    MapperModel,
    adapter_forward,
    gelu,
    gelu_grad,
    gradients,
    load_model,
    loss_and_gradients,
    mapper_forward,
    model_to_dict,
    mse_loss,
    save_model,
)
from adaptalign.errors import ShapeError
from adaptalign.synth import make_rng

from gradcheck import KINDS, worst_error


def _mp_gelu(x):
    mpmath.mp.dps = 40
    x = mpmath.mpf(x)
    return float(x * (1 + mpmath.erf(x / mpmath.sqrt(2))) / 2)


def test_gelu_examples():
    assert gelu(0.0) == 0.0
    assert abs(gelu(10.0) - 10.0) <= 1e-9
    assert abs(gelu(1.0) - 0.8413447) <= 1e-6
    assert abs(gelu(1.0) - _mp_gelu(1.0)) <= 1e-15


def test_gelu_matches_high_precision_erf():
    for x in np.linspace(-8, 8, 161):
        assert abs(gelu(x) - _mp_gelu(x)) <= 1e-12 * max(1.0, abs(x))


def test_gelu_grad_finite_difference():
    x = np.linspace(-5, 5, 41)
    num = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6
    np.testing.assert_allclose(gelu_grad(x), num, atol=1e-8)


def test_adapter_forward_examples():
    X = np.random.default_rng(0).standard_normal((5, 3))
    ident = AdapterModel("linear", np.eye(3), np.zeros(3))
    np.testing.assert_array_equal(adapter_forward(ident, X), X)
    relu = AdapterModel("linear_relu", np.eye(3), -100.0 * np.ones(3))
    np.testing.assert_array_equal(adapter_forward(relu, np.abs(X)), np.zeros((5, 3)))
    g = AdapterModel("linear_gelu", np.eye(1), np.zeros(1))
    assert abs(adapter_forward(g, [[1.0]])[0, 0] - 0.8413447) <= 1e-6
    two = AdapterModel("two_layer_linear", np.ones((2, 3)), np.ones(2), np.ones((4, 2)), np.zeros(4))
    np.testing.assert_allclose(adapter_forward(two, X), (X @ np.ones((3, 2)) + 1) @ np.ones((2, 4)))
    with pytest.raises(ShapeError):
        adapter_forward(ident, np.ones((2, 4)))


def test_adapter_layer_invariants():
    with pytest.raises(ValueError):
        AdapterModel("linear", np.eye(2), np.zeros(2), np.eye(2), np.zeros(2))
    with pytest.raises(ValueError):
        AdapterModel("two_layer_linear", np.eye(2), np.zeros(2))
    with pytest.raises(ValueError):
        AdapterModel("conv", np.eye(2), np.zeros(2))


def test_mapper_forward_examples():
    Z = np.random.default_rng(1).standard_normal((4, 3))
    zero = MapperModel(np.zeros((5, 3)), np.zeros(5), np.zeros((3, 5)), np.zeros(3), residual=False)
    np.testing.assert_array_equal(mapper_forward(zero, Z), np.zeros((4, 3)))
    res = MapperModel(np.zeros((5, 3)), np.zeros(5), np.zeros((3, 5)), np.zeros(3), residual=True)
    np.testing.assert_array_equal(mapper_forward(res, Z), Z)
    with pytest.raises(ShapeError):
        MapperModel(np.zeros((5, 3)), np.zeros(5), np.zeros((2, 5)), np.zeros(2), residual=True)
    with pytest.raises(ShapeError):
        mapper_forward(zero, np.ones((2, 4)))


def test_mapper_forward_hand_composed():
    rng = make_rng(np.random.SeedSequence(3))
    m = MapperModel.init(2, 3, 2, rng)
    m = m.with_params({"b_h": np.array([0.1, -0.2, 0.3]), "b_o": np.array([0.5, -0.5])})
    Z = np.array([[0.3, -1.2], [2.0, 0.7]])
    expected = np.empty_like(Z)
    for i, z in enumerate(Z):
        h = np.array([_mp_gelu(v) for v in m.W_h @ z + m.b_h])
        expected[i] = m.W_o @ h + m.b_o + z
    assert m.residual
    assert np.abs(mapper_forward(m, Z) - expected).max() <= 1e-12


def test_init_is_uniform_fan_in_with_zero_biases():
    a = AdapterModel.init("linear_gelu", 50, 20, make_rng(np.random.SeedSequence(0)))
    assert np.abs(a.W1).max() <= 1 / np.sqrt(50)
    assert np.all(a.b1 == 0)
    m = MapperModel.init(20, 30, 10, make_rng(np.random.SeedSequence(0)))
    assert np.abs(m.W_h).max() <= 1 / np.sqrt(20) and np.abs(m.W_o).max() <= 1 / np.sqrt(30)
    assert not m.residual


def test_mse_loss_examples():
    T = np.arange(6.0).reshape(2, 3)
    assert mse_loss(T, T) == 0.0
    assert mse_loss(T + 1, T) == 1.0
    assert mse_loss([[0.0, 0.0]], [[3.0, 4.0]]) == 12.5
    with pytest.raises(ShapeError):
        mse_loss(np.ones((2, 2)), np.ones((2, 3)))


def test_gradients_zero_at_exact_fit():
    rng = make_rng(np.random.SeedSequence(4))
    a = AdapterModel.init("linear_gelu", 3, 2, rng)
    m = MapperModel.init(2, 4, 2, rng)
    X = rng.standard_normal((6, 3))
    grads = gradients(a, m, X, mapper_forward(m, adapter_forward(a, X)), adapter_forward(a, X)[:3], 1.0, [0, 1, 2])
    for g in grads.values():
        assert np.all(g == 0)


def test_gradient_one_dimensional_hand_case():
    a = AdapterModel("linear", np.array([[1.0]]), np.zeros(1))
    _, g = loss_and_gradients(a, None, [[2.0]], [[4.0]])
    assert g["adapter.W1"][0, 0] == -8.0


@pytest.mark.parametrize("kind", KINDS)
def test_gradients_match_finite_differences(kind):
    errs = [worst_error(kind, seed) for seed in range(20)]
    assert max(errs) <= 1e-5, errs


@pytest.mark.parametrize("kind", KINDS)
def test_gradients_without_mapper(kind):
    assert max(worst_error(kind, 100 + seed, with_mapper=False) for seed in range(5)) <= 1e-5


def test_lambda3_zero_drops_adapter_term():
    rng = make_rng(np.random.SeedSequence(5))
    a = AdapterModel.init("linear_gelu", 3, 2, rng)
    m = MapperModel.init(2, 4, 2, rng)
    X, T = rng.standard_normal((5, 3)), rng.standard_normal((5, 2))
    loss0, g0 = loss_and_gradients(a, m, X, T, rng.standard_normal((2, 2)), 0.0, [1, 3])
    loss1, g1 = loss_and_gradients(a, m, X, T)
    assert loss0.total == loss1.total
    for k in g1:
        np.testing.assert_array_equal(g0[k], g1[k])


@pytest.mark.parametrize("kind", KINDS)
def test_model_file_roundtrip(tmp_path, kind):
    rng = make_rng(np.random.SeedSequence(6))
    a = AdapterModel.init(kind, 5, 3, rng, hidden_dim=4)
    a = a.with_params({"b1": rng.standard_normal(a.b1.shape)})
    save_model(a, tmp_path / "a.json")
    back = load_model(tmp_path / "a.json")
    assert back.kind == kind
    for k, v in a.params().items():
        assert back.params()[k].tobytes() == v.tobytes()
    m = MapperModel.init(3, 6, 3, rng)
    save_model(m, tmp_path / "m.json")
    mb = load_model(tmp_path / "m.json")
    assert mb.residual and all(mb.params()[k].tobytes() == v.tobytes() for k, v in m.params().items())
    d = json.loads((tmp_path / "m.json").read_text())
    assert d["kind"] == "mapper" and d == model_to_dict(m)
