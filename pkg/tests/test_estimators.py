import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from brelu_mpc.estimators import BitSelector, PatchPlanner, SecureClassifier
from brelu_mpc.nn import forward, gen_toy_model


@pytest.fixture(scope="module")
def data():
    model = gen_toy_model(0)
    return model, np.random.default_rng(0).normal(size=(10, *model.input_shape))


def test_planner_fit_and_params(data):
    model, X = data
    est = PatchPlanner(model, budget_frac=0.2).fit(X)
    assert est.drelu_count_ <= est.budget_ == int(0.2 * model.full_drelu_count())
    assert est.transform(X).shape == (10, 10)
    assert est.predict(X).shape == (10,)
    c = clone(est)
    assert c.get_params()["budget_frac"] == 0.2 and not hasattr(c, "plan_")


def test_planner_validation(data):
    model, X = data
    with pytest.raises(TypeError):
        PatchPlanner().fit(X)
    with pytest.raises(ValueError):
        PatchPlanner(model, budget_frac=1.5).fit(X)
    with pytest.raises(ValueError):
        PatchPlanner(model).fit(X[:, :2])
    with pytest.raises(NotFittedError):
        PatchPlanner(model).transform(X)


def test_bit_selector():
    X = np.random.default_rng(1).integers(0, 2**16, 200_000)
    sel = BitSelector(target_error=3.5e-4).fit(X)
    assert sel.config_.k_lsb == 5 and sel.error_ <= 3.5e-4
    assert set(np.unique(sel.transform(X[:100]))) <= {0, 1}
    assert clone(sel).get_params()["target_error"] == 3.5e-4


def test_secure_classifier_matches_plain(data):
    model, X = data
    clf = SecureClassifier(model, frac_bits=16).fit()
    pred = clf.predict(X[:4])
    assert np.array_equal(pred, np.argmax(forward(model, X[:4], "fixed"), axis=1))
    assert clf.last_drelu_count_ == 4 * model.full_drelu_count()
    assert clf.score(X[:4], pred) == 1.0


def test_secure_classifier_label_mismatch(data):
    model, _ = data
    with pytest.raises(ValueError):
        SecureClassifier(model).fit(y=[0, 1])
