import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from horncore.estimator import GnConvTransformer, HorNetClassifier
from horncore.harness.data import synthetic_shapes


@pytest.fixture(scope="module")
def data():
    x, y = synthetic_shapes(120, 16, num_classes=3, seed=0)
    return x, np.array(["disc", "square", "triangle"])[y]


def test_params_and_clone():
    clf = HorNetClassifier(steps=5, lr=1e-3)
    assert clf.get_params()["steps"] == 5
    c2 = clone(clf).set_params(steps=7)
    assert c2.steps == 7 and clf.steps == 5


def test_fit_predict_string_labels(data):
    x, y = data
    clf = HorNetClassifier(preset="micro-iso", steps=60, batch_size=32, lr=3e-3).fit(x, y)
    pred = clf.predict(x)
    assert set(pred) <= set(clf.classes_) and pred.shape == (120,)
    proba = clf.predict_proba(x)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-6)
    assert clf.score(x, y) > 0.6
    assert clf.loss_curve_[-1] < clf.loss_curve_[0]


def test_fit_is_deterministic(data):
    x, y = data
    a = HorNetClassifier(steps=3, random_state=1).fit(x, y).predict_proba(x)
    b = HorNetClassifier(steps=3, random_state=1).fit(x, y).predict_proba(x)
    np.testing.assert_array_equal(a, b)


def test_input_validation(data):
    x, y = data
    with pytest.raises(NotFittedError):
        HorNetClassifier().predict(x)
    with pytest.raises(ValueError):
        HorNetClassifier(steps=1).fit(x, y[:10])
    with pytest.raises(ValueError):
        HorNetClassifier(steps=1).fit(x, np.zeros(len(x)))
    clf = HorNetClassifier(steps=1).fit(x, y)
    with pytest.raises(ValueError):
        clf.predict(x[:, :, :8, :8])
    bad = x.copy()
    bad[0, 0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        clf.predict(bad)


def test_grayscale_3d_input():
    x, y = synthetic_shapes(40, 16, num_classes=2, channels=1, seed=0)
    clf = HorNetClassifier(steps=2).fit(x[:, 0], y)
    assert clf.predict(x[:, 0]).shape == (40,)


def test_gnconv_transformer(rng):
    x = rng.standard_normal((3, 8, 6, 6))
    t = GnConvTransformer(order=3, mixer_kind="dwconv3")
    out = t.fit_transform(x)
    assert out.shape == x.shape
    np.testing.assert_array_equal(out, clone(t).fit(x).transform(x))
    with pytest.raises(ValueError):
        GnConvTransformer(order=4).fit(rng.standard_normal((1, 6, 4, 4)))
