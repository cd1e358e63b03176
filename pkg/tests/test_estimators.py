import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from autosampling.estimators import AutoSamplingClassifier, SGDScratchClassifier


@pytest.fixture
def xy(small_dataset):
    names = np.array(["a", "b", "c"])
    return small_dataset.features, names[small_dataset.labels], small_dataset.val_features, \
        names[small_dataset.val_labels]


def small_search(**kw):
    params = dict(population_size=3, intervals_per_exploitation=2, interval_len=3, batch_size=8,
                  total_alternations=2, base_lr=0.05, lr_schedule="constant", random_state=1)
    params.update(kw)
    return AutoSamplingClassifier(**params)


def test_get_params_round_trip():
    est = small_search(beta=2.0)
    assert clone(est).get_params() == est.get_params()


def test_fit_predict_with_validation(xy, small_config):
    X, y, Xv, yv = xy
    est = small_search().fit(X, y, Xv, yv)
    assert set(est.classes_) == {"a", "b", "c"}
    assert est.predict(Xv).shape == (len(Xv),)
    assert np.allclose(est.predict_proba(Xv).sum(axis=1), 1)
    assert est.score(Xv, yv) == pytest.approx(est.validation_score_)
    assert est.schedule_.num_batches == 12 and len(est.records_) == 4


def test_fit_deterministic(xy):
    X, y, Xv, yv = xy
    a = small_search().fit(X, y, Xv, yv)
    b = clone(small_search()).fit(X, y, Xv, yv)
    assert a.model_ == b.model_ and a.schedule_ == b.schedule_


def test_internal_split(xy):
    X, y, _, _ = xy
    est = small_search(validation_fraction=0.3).fit(X, y)
    assert est.schedule_.dataset_size == len(X) - int(np.ceil(0.3 * len(X)))


def test_pipeline(xy):
    X, y, Xv, yv = xy
    pipe = make_pipeline(StandardScaler(), small_search()).fit(X, y)
    assert pipe.predict(Xv).shape == (len(Xv),)


def test_not_fitted():
    with pytest.raises(NotFittedError):
        small_search().predict(np.zeros((2, 4)))


def test_feature_mismatch(xy):
    X, y, Xv, yv = xy
    est = small_search().fit(X, y, Xv, yv)
    with pytest.raises(ValueError):
        est.predict(np.zeros((2, 7)))


def test_invalid_params_raise_on_fit(xy):
    X, y, Xv, yv = xy
    with pytest.raises(ValueError):
        small_search(beta=0.1).fit(X, y, Xv, yv)


def test_scratch_classifier_matches_uniform_search(xy):
    X, y, Xv, yv = xy
    scratch = SGDScratchClassifier(batch_size=8, n_batches=12, base_lr=0.05, lr_schedule="constant",
                                   random_state=1).fit(X, y, Xv, yv)
    search = small_search(exploration_type="uniform", intervals_per_exploitation=1, interval_len=12,
                          total_alternations=1).fit(X, y, Xv, yv)
    assert scratch.model_ == search.model_
