import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import matthews_corrcoef

from rose.model import ModelSpec, init_params, predict
from rose.optimizer import StepReport
from rose.probe import (
    ProbeTaskSpec,
    dropout_inconsistency_ratio,
    generate_probe_task,
    mcc,
    parse_perturbation,
    perturb,
    perturbation_eval,
    surface_baseline,
    surface_only_params,
    window_inconsistency,
    xor_labels,
)

bits = st.lists(st.integers(0, 1), min_size=1, max_size=80)


@pytest.mark.filterwarnings("ignore:A single label")
@settings(max_examples=300, deadline=None)
@given(bits, bits)
def test_mcc_matches_sklearn(a, b):
    n = min(len(a), len(b))
    assert mcc(a[:n], b[:n]) == pytest.approx(matthews_corrcoef(b[:n], a[:n]), abs=1e-12)


def test_mcc_extremes():
    assert mcc([1, 0, 1], [1, 0, 1]) == 1.0
    assert mcc([0, 1, 0], [1, 0, 1]) == -1.0
    assert mcc([1, 1, 1], [1, 0, 1]) == 0.0


@pytest.mark.parametrize("kind", ["indicator", "magnitude"])
def test_task_structure(kind):
    train, test = generate_probe_task(ProbeTaskSpec(surface_kind=kind, seed=3))
    assert train.y.sum() * 2 == len(train) and test.y.sum() * 2 == len(test)
    assert train.surface_agreement == 1.0
    assert abs(test.surface_agreement - 0.5) < 0.05
    np.testing.assert_array_equal(xor_labels(train.X), train.y)
    np.testing.assert_array_equal(xor_labels(test.X), test.y)


def test_indicator_cue_sign_encodes_flag():
    train, _ = generate_probe_task(ProbeTaskSpec(seed=0))
    np.testing.assert_array_equal((train.X[:, -1] > 0).astype(int), train.surface)


def test_magnitude_cue_inflates_norm():
    train, _ = generate_probe_task(ProbeTaskSpec(surface_kind="magnitude", seed=0))
    norms = np.linalg.norm(train.X, axis=1)
    assert norms[train.surface == 1].mean() > 1.5 * norms[train.surface == 0].mean()


def test_tasks_are_reproducible_and_seed_dependent():
    a, _ = generate_probe_task(ProbeTaskSpec(seed=1))
    b, _ = generate_probe_task(ProbeTaskSpec(seed=1))
    c, _ = generate_probe_task(ProbeTaskSpec(seed=2))
    np.testing.assert_array_equal(a.X, b.X)
    assert not np.array_equal(a.X, c.X)


def test_gaussian_zero_is_identity():
    _, test = generate_probe_task(ProbeTaskSpec(seed=0))
    np.testing.assert_array_equal(perturb(test, "gaussian", 0.0).X, test.X)


@pytest.mark.parametrize("kind", ["indicator", "magnitude"])
def test_surface_flip_is_an_involution(kind):
    _, test = generate_probe_task(ProbeTaskSpec(surface_kind=kind, seed=0))
    twice = perturb(perturb(test, "surface_flip"), "surface_flip")
    np.testing.assert_allclose(twice.X, test.X, rtol=1e-15)
    np.testing.assert_array_equal(twice.surface, test.surface)


def test_surface_only_model_inverts_under_flip():
    _, test = generate_probe_task(ProbeTaskSpec(seed=0))
    spec = ModelSpec(input_dim=test.X.shape[1], hidden_dims=(4, 3))
    params = surface_only_params(spec)
    np.testing.assert_array_equal(predict(params, spec, test.X), test.surface)
    clean = float(np.mean(predict(params, spec, test.X) == test.y))
    assert perturbation_eval(params, spec, test, "surface_flip") == pytest.approx(1 - clean, abs=1e-12)


def test_surface_blind_model_is_invariant_to_flip():
    _, test = generate_probe_task(ProbeTaskSpec(seed=0))
    spec = ModelSpec(input_dim=test.X.shape[1])
    params = init_params(spec, 0)
    params["layer0.weight"][-1, :] = 0.0
    clean = float(np.mean(predict(params, spec, test.X) == test.y))
    assert perturbation_eval(params, spec, test, "surface_flip") == clean


@pytest.mark.parametrize("kind", ["indicator", "magnitude"])
def test_surface_baseline_has_no_core_signal(kind):
    row = surface_baseline(ProbeTaskSpec(surface_kind=kind, seed=1))
    # the indicator separates the ambiguous split exactly; the norm only approximately
    assert row["train_acc"] == 1.0 if kind == "indicator" else row["train_acc"] > 0.75
    assert abs(row["mcc"]) < 0.1
    if kind == "indicator":
        assert row["surface_flip_acc"] == pytest.approx(1 - row["clean_acc"], abs=1e-12)


def test_parse_perturbation():
    assert parse_perturbation("gaussian:0.25") == ("gaussian", 0.25)
    assert parse_perturbation("surface_flip") == ("surface_flip", 0.0)
    for bad in ("gaussian", "gaussian:-1", "blur:1"):
        with pytest.raises(ValueError):
            parse_perturbation(bad)


def test_inconsistency_ratio():
    spec = ModelSpec(input_dim=3, hidden_dims=(16,), dropout_rate=0.5)
    params = init_params(spec, 0)
    X = np.random.default_rng(0).normal(size=(64, 3))
    ratio = dropout_inconsistency_ratio(params, spec, [X, X], seed=0)
    assert 0 <= ratio <= 100
    assert ratio == dropout_inconsistency_ratio(params, spec, [X, X], seed=0)
    with pytest.raises(ValueError):
        dropout_inconsistency_ratio(params, ModelSpec(input_dim=3, dropout_rate=0.0), [X], seed=0)


def test_window_inconsistency_is_batch_weighted():
    history = [StepReport(step=1, loss_sce=0, inconsistency=0.5, batch_size=30),
               StepReport(step=2, loss_sce=0, inconsistency=0.0, batch_size=10),
               StepReport(step=3, loss_sce=0, inconsistency=1.0, batch_size=10)]
    assert window_inconsistency(history, 1, 2) == pytest.approx(100 * 15 / 40)
    with pytest.raises(ValueError):
        window_inconsistency(history, 5, 9)
