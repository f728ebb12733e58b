import numpy as np
import pytest

from rose.autograd import RngStream, ShapeError
from rose.model import ModelSpec, ParamSet, forward, init_params, logits, predict


def naive_logits(params, spec, X):
    """Row-by-row, unit-by-unit reference forward pass."""
    out = np.zeros((len(X), spec.classes))
    for r, x in enumerate(X):
        h = list(x)
        for i in range(len(spec.hidden_dims)):
            W, b = params[f"layer{i}.weight"], params[f"layer{i}.bias"]
            pre = [sum(h[k] * W[k, j] for k in range(len(h))) + b[j] for j in range(W.shape[1])]
            h = [np.tanh(v) if spec.activation == "tanh" else max(v, 0.0) for v in pre]
        W, b = params["out.weight"], params["out.bias"]
        out[r] = [sum(h[k] * W[k, c] for k in range(len(h))) + b[c] for c in range(spec.classes)]
    return out


@pytest.mark.parametrize("activation", ["tanh", "relu"])
def test_logits_match_naive_loop(activation):
    spec = ModelSpec(input_dim=4, hidden_dims=(5, 3), classes=3, activation=activation)
    params = init_params(spec, 2)
    params["layer0.bias"] += 0.1
    X = np.random.default_rng(0).normal(size=(6, 4))
    np.testing.assert_allclose(logits(params, spec, X), naive_logits(params, spec, X), rtol=1e-12, atol=1e-14)


def test_tape_forward_without_dropout_equals_eval_path():
    spec = ModelSpec(input_dim=3, hidden_dims=(4,))
    params = init_params(spec, 1)
    X = np.random.default_rng(1).normal(size=(5, 3))
    z, _ = forward(params, spec, X)
    np.testing.assert_array_equal(z.value, logits(params, spec, X))
    z0, _ = forward(params, spec, X, RngStream(0, 1), dropout_rate=0.0)
    np.testing.assert_array_equal(z0.value, logits(params, spec, X))


def test_dropout_forward_is_deterministic_per_stream():
    spec = ModelSpec(input_dim=3, hidden_dims=(16,), dropout_rate=0.5)
    params = init_params(spec, 1)
    X = np.ones((4, 3))
    a = forward(params, spec, X, RngStream(3, 2, 0))[0].value
    b = forward(params, spec, X, RngStream(3, 2, 0))[0].value
    c = forward(params, spec, X, RngStream(3, 2, 1))[0].value
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_init_layout_and_bounds():
    spec = ModelSpec(input_dim=9, hidden_dims=(16, 4), classes=2)
    params = init_params(spec, 0)
    assert list(params) == ["layer0.weight", "layer0.bias", "layer1.weight", "layer1.bias", "out.weight", "out.bias"]
    assert params["layer0.weight"].shape == (9, 16)
    assert np.abs(params["layer0.weight"]).max() <= 1 / 3
    assert not params["out.bias"].any()
    assert params.size == 9 * 16 + 16 + 16 * 4 + 4 + 4 * 2 + 2
    np.testing.assert_array_equal(init_params(spec, 0).flat(), params.flat())


def test_predict_ties_go_to_lower_class():
    spec = ModelSpec(input_dim=2, hidden_dims=(3,), classes=3)
    params = ParamSet((k, np.zeros(s)) for k, s in spec.layer_shapes())
    np.testing.assert_array_equal(predict(params, spec, np.ones((2, 2))), [0, 0])


def test_paramset_copy_is_deep():
    params = init_params(ModelSpec(input_dim=2), 0)
    clone = params.copy()
    clone["out.bias"][0] = 5.0
    assert params["out.bias"][0] == 0.0
    assert params.same_structure(clone)


@pytest.mark.parametrize("kw", [
    dict(input_dim=0), dict(input_dim=2, hidden_dims=()), dict(input_dim=2, classes=1),
    dict(input_dim=2, activation="gelu"), dict(input_dim=2, dropout_rate=1.0),
    dict(input_dim=2, dropout_sites="everywhere"),
])
def test_invalid_specs(kw):
    with pytest.raises(ValueError):
        ModelSpec(**kw)


def test_wrong_input_width():
    spec = ModelSpec(input_dim=3)
    with pytest.raises(ShapeError):
        logits(init_params(spec), spec, np.ones((2, 4)))
