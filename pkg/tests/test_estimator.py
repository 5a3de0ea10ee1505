import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from mmen.data import make_rotated_moons_pair
from mmen.estimator import MMENClassifier

PARAMS = dict(epochs=3, pretrain_epochs=5, batch_size=32, lr=3e-3, generator_hidden=(16,), feature_dim=8,
              head_hidden=(8,))


@pytest.fixture(scope="module")
def data():
    pair = make_rotated_moons_pair(120, 0.1, 30.0, seed=1)
    return pair.source.features, pair.source.labels, pair.target.features, pair.diagnostic_target_labels()


@pytest.fixture(scope="module")
def fitted(data):
    xs, ys, xt, _ = data
    labels = np.array(["left", "right"])[ys]
    return MMENClassifier(**PARAMS).fit(xs, labels, X_target=xt)


def test_params_round_trip():
    est = MMENClassifier(lam=0.3, k=2)
    assert est.get_params()["lam"] == 0.3
    twin = clone(est.set_params(epochs=7))
    assert twin.get_params()["epochs"] == 7 and twin.get_params()["k"] == 2


def test_string_labels_and_shapes(fitted, data):
    xs, _, xt, _ = data
    assert list(fitted.classes_) == ["left", "right"]
    assert set(fitted.predict(xt)) <= {"left", "right"}
    proba = fitted.predict_proba(xt)
    assert proba.shape == (len(xt), 2)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-12)
    assert fitted.transform(xs).shape == (len(xs), 8)
    assert fitted.n_features_in_ == 2


def test_predictions_come_from_classifier_head(fitted, data):
    _, _, xt, yt = data
    expected = fitted.classes_[fitted.bundle_.logits(xt, "classifier").argmax(axis=1)]
    np.testing.assert_array_equal(fitted.predict(xt), expected)
    assert fitted.score(xt, fitted.classes_[yt]) == np.mean(expected == fitted.classes_[yt])
    # Target labels never reach the trainer, so the log has no target accuracy.
    assert np.isnan(fitted.history_.final.acc_c)


def test_source_is_learned(fitted, data):
    xs, ys, _, _ = data
    assert fitted.score(xs, fitted.classes_[ys]) > 0.85


def test_unfitted_raises():
    with pytest.raises(NotFittedError):
        MMENClassifier().predict(np.zeros((1, 2)))
    with pytest.raises(NotFittedError):
        MMENClassifier().transform(np.zeros((1, 2)))


def test_target_required_unless_source_only(data):
    xs, ys, _, _ = data
    with pytest.raises(ValueError, match="X_target"):
        MMENClassifier(**PARAMS).fit(xs, ys)
    MMENClassifier(variant="source_only", **PARAMS).fit(xs, ys)


def test_input_validation(fitted, data):
    xs, ys, xt, _ = data
    with pytest.raises(ValueError):
        fitted.predict(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        MMENClassifier(**PARAMS).fit(xs, ys, X_target=np.zeros((4, 3)))
    with pytest.raises(ValueError):
        MMENClassifier(**PARAMS).fit(xs, np.zeros(len(xs)), X_target=xt)
    with pytest.raises(ValueError):
        MMENClassifier(**PARAMS).fit(xs, np.linspace(0, 1, len(xs)), X_target=xt)


def test_g_plus_d_predicts_with_discriminator(data):
    xs, ys, xt, _ = data
    est = MMENClassifier(variant="g_plus_d", **PARAMS).fit(xs, ys, X_target=xt)
    np.testing.assert_array_equal(est.decision_function(xt), est.bundle_.logits(xt, "discriminator"))
