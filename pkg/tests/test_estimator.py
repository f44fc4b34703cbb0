import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from tunet.data import generate_samples
from tunet.estimator import TUNetClassifier


def toy_arrays(n=12, side=16, n_classes=3, seed=0):
    samples = generate_samples(n, n_classes=n_classes, side=side, seed=seed)
    X = np.stack([s.image for s in samples])
    y = np.zeros((n, n_classes), dtype=np.float32)
    for i, s in enumerate(samples):
        for c in s.labels:
            y[i, c] = 1.0
    return X, y


@pytest.fixture(scope="module")
def fitted():
    X, y = toy_arrays()
    clf = TUNetClassifier(levels=2, base_width=4, max_epochs=2, batch_size=4,
                          patience=10, augment=False, seed=0)
    return clf.fit(X, y), X, y


class TestFit:
    def test_learns_shapes_from_data(self, fitted):
        clf, X, y = fitted
        assert clf.side_ == 16
        assert clf.n_classes_ == 3
        assert clf.thresholds_.shape == (3,)
        assert len(clf.log_) >= 1

    def test_predict_proba_contract(self, fitted):
        clf, X, y = fitted
        probs = clf.predict_proba(X)
        assert probs.shape == (12, 3)
        assert np.all((probs > 0) & (probs < 1))

    def test_predict_is_thresholded_proba(self, fitted):
        clf, X, y = fitted
        probs = clf.predict_proba(X)
        pred = clf.predict(X)
        assert pred.shape == (12, 3)
        assert set(np.unique(pred)) <= {0.0, 1.0}
        assert np.array_equal(pred, (probs >= clf.thresholds_).astype(np.float32))

    def test_predict_masks_contract(self, fitted):
        clf, X, y = fitted
        masks = clf.predict_masks(X[:3])
        assert masks.shape == (3, 3, 16, 16)
        assert set(np.unique(masks)) <= {0.0, 1.0}

    def test_score_in_unit_interval(self, fitted):
        clf, X, y = fitted
        assert 0.0 <= clf.score(X, y) <= 1.0

    def test_fit_is_deterministic(self):
        X, y = toy_arrays(n=8)
        runs = []
        for _ in range(2):
            clf = TUNetClassifier(levels=2, base_width=4, max_epochs=1,
                                  batch_size=4, augment=False, seed=3)
            clf.fit(X, y)
            runs.append(clf.predict_proba(X))
        assert np.array_equal(runs[0], runs[1])


class TestSklearnProtocol:
    def test_get_params_round_trip(self):
        clf = TUNetClassifier(levels=2, alpha=0.3)
        params = clf.get_params()
        assert params["levels"] == 2 and params["alpha"] == 0.3
        clf2 = TUNetClassifier(**params)
        assert clf2.get_params() == params

    def test_set_params_returns_self(self):
        clf = TUNetClassifier()
        assert clf.set_params(gamma=1.0) is clf
        assert clf.gamma == 1.0

    def test_clone_preserves_config(self):
        clf = TUNetClassifier(levels=2, base_width=4, seed=7)
        twin = clone(clf)
        assert twin.get_params() == clf.get_params()

    def test_unfitted_raises(self):
        clf = TUNetClassifier()
        X = np.zeros((2, 4, 16, 16), dtype=np.float32)
        for method in (clf.predict, clf.predict_proba, clf.predict_masks):
            with pytest.raises(NotFittedError):
                method(X)


class TestValidation:
    def test_wrong_rank_rejected(self):
        _, y = toy_arrays(n=4)
        with pytest.raises(Exception, match="4"):
            TUNetClassifier(levels=2, base_width=4).fit(
                np.zeros((4, 16, 16), dtype=np.float32), y)

    def test_non_square_rejected(self):
        _, y = toy_arrays(n=4)
        with pytest.raises(Exception):
            TUNetClassifier(levels=2, base_width=4).fit(
                np.zeros((4, 4, 16, 8), dtype=np.float32), y)

    def test_non_binary_labels_rejected(self):
        X, y = toy_arrays(n=4)
        y = y.copy()
        y[0, 0] = 0.5
        with pytest.raises(ValueError):
            TUNetClassifier(levels=2, base_width=4).fit(X, y)

    def test_row_count_mismatch_rejected(self):
        X, y = toy_arrays(n=4)
        with pytest.raises(Exception):
            TUNetClassifier(levels=2, base_width=4).fit(X, y[:3])
