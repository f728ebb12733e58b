import numpy as np
import pytest
from sklearn.base import clone

from rose.estimator import RoseClassifier, batch_order
from rose.model import init_params
from rose.probe import ProbeTaskSpec, generate_probe_task


@pytest.fixture(scope="module")
def data():
    train, test = generate_probe_task(ProbeTaskSpec(seed=0, train_size=128, test_size=64))
    return train, test


def test_get_params_and_clone():
    est = RoseClassifier(strategy="second", c_h_second=0.3, epochs=2)
    params = est.get_params()
    assert params["strategy"] == "second" and params["c_h_second"] == 0.3
    twin = clone(est)
    assert twin.get_params() == params and twin is not est


def test_fit_predict_shapes(data):
    train, test = data
    est = RoseClassifier(epochs=2, random_state=1).fit(train.X, train.y)
    assert est.predict(test.X).shape == (64,)
    proba = est.predict_proba(test.X)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert len(est.history_) == 2 * 4 and est.state_.t == 8
    assert est.n_features_in_ == train.X.shape[1]


def test_string_labels_round_trip(data):
    train, _ = data
    y = np.where(train.y == 1, "yes", "no")
    est = RoseClassifier(mode="vanilla", epochs=1).fit(train.X, y)
    assert list(est.classes_) == ["no", "yes"]
    assert set(est.predict(train.X)) <= {"no", "yes"}
    assert np.isfinite(est.loss(train.X, y))
    with pytest.raises(ValueError):
        est.loss(train.X[:2], ["no", "maybe"])


def test_zero_epochs_returns_initialization(data):
    train, _ = data
    est = RoseClassifier(mode="vanilla", epochs=0, random_state=5).fit(train.X, train.y)
    expected = init_params(est.model_spec_, 5)
    np.testing.assert_array_equal(est.params_.flat(), expected.flat())


def test_fit_is_deterministic(data):
    train, _ = data
    a = RoseClassifier(epochs=2, random_state=3).fit(train.X, train.y)
    b = RoseClassifier(epochs=2, random_state=3).fit(train.X, train.y)
    np.testing.assert_array_equal(a.params_.flat(), b.params_.flat())


def test_warm_start_from_init(data):
    train, _ = data
    base = RoseClassifier(mode="vanilla", epochs=1).fit(train.X, train.y)
    est = RoseClassifier(mode="vanilla", epochs=0).fit(train.X, train.y, init=base.params_)
    np.testing.assert_array_equal(est.params_.flat(), base.params_.flat())
    with pytest.raises(ValueError):
        RoseClassifier(hidden_dims=(4,), epochs=0).fit(train.X, train.y, init=base.params_)


@pytest.mark.parametrize("mode", ["rdrop", "rdrop_rose"])
def test_rdrop_modes_run(data, mode):
    train, _ = data
    est = RoseClassifier(mode=mode, epochs=1).fit(train.X, train.y)
    assert all(r.loss_kl is not None for r in est.history_)


@pytest.mark.parametrize("kw", [dict(mode="sgd"), dict(batch_size=0), dict(rdrop_weight=-1.0),
                                dict(random_state=None)])
def test_invalid_hyperparameters(data, kw):
    train, _ = data
    with pytest.raises(ValueError):
        RoseClassifier(**kw).fit(train.X, train.y)


def test_single_class_rejected():
    with pytest.raises(ValueError):
        RoseClassifier().fit(np.ones((4, 2)), np.zeros(4))


def test_from_params_predicts_like_original(data):
    train, test = data
    est = RoseClassifier(epochs=1).fit(train.X, train.y)
    twin = RoseClassifier.from_params(est.params_, est.model_spec_, classes=est.classes_)
    np.testing.assert_array_equal(twin.predict(test.X), est.predict(test.X))


def test_batch_order_is_a_permutation():
    order = batch_order(10, 0, 3)
    assert sorted(order) == list(range(10))
    assert not np.array_equal(order, batch_order(10, 0, 4))
