"""scikit-learn compatible wrappers around the learner and the schedule search."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.model_selection import train_test_split
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .core import Dataset
from .search import SearchConfig, plain_sgd_baseline, run_autosampling
from .trainer import predict_proba as _predict_proba


class _ScheduleClassifierBase(ClassifierMixin, BaseEstimator):
    def _search_config(self) -> SearchConfig:
        raise NotImplementedError

    def _make_dataset(self, X, y, X_val, y_val) -> Dataset:
        X, y = check_X_y(X, y, dtype=np.float64)
        self._encoder = LabelEncoder().fit(y)
        self.classes_ = self._encoder.classes_
        self.n_features_in_ = X.shape[1]
        y_enc = self._encoder.transform(y)
        if X_val is None:
            if y_val is not None:
                raise ValueError("y_val given without X_val")
            X, X_val, y_enc, yv_enc = train_test_split(
                X, y_enc, test_size=self.validation_fraction, random_state=self.random_state, stratify=y_enc)
        else:
            X_val, y_val = check_X_y(X_val, y_val, dtype=np.float64)
            if X_val.shape[1] != X.shape[1]:
                raise ValueError("X_val has a different number of features than X")
            yv_enc = self._encoder.transform(y_val)
        return Dataset(X, y_enc, X_val, yv_enc, len(self.classes_))

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return _predict_proba(self.model_, X)

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]


class AutoSamplingClassifier(_ScheduleClassifierBase):
    """Softmax regression / ReLU MLP trained on a searched sampling schedule.

    ``fit`` runs the population search and keeps the final winner. Pass
    ``X_val``/``y_val`` to control the split used for exploit rewards;
    otherwise ``validation_fraction`` of the data is held out.

    Fitted attributes: ``classes_``, ``model_``, ``schedule_``,
    ``distribution_``, ``smoothed_distribution_``, ``records_``,
    ``validation_score_``.
    """

    def __init__(self, population_size=20, intervals_per_exploitation=10, interval_len=20, batch_size=128,
                 beta=1.0, n_uniform=3, exploration_type="mixture", warmup_batches=0, total_alternations=1,
                 eval_subset=None, hidden_dim=None, union_mode=False, base_lr=0.1, momentum=0.9,
                 lr_schedule="step", decay_factor=0.1, boundaries=(), total_steps=0,
                 validation_fraction=0.2, random_state=0, n_jobs=1):
        self.population_size = population_size
        self.intervals_per_exploitation = intervals_per_exploitation
        self.interval_len = interval_len
        self.batch_size = batch_size
        self.beta = beta
        self.n_uniform = n_uniform
        self.exploration_type = exploration_type
        self.warmup_batches = warmup_batches
        self.total_alternations = total_alternations
        self.eval_subset = eval_subset
        self.hidden_dim = hidden_dim
        self.union_mode = union_mode
        self.base_lr = base_lr
        self.momentum = momentum
        self.lr_schedule = lr_schedule
        self.decay_factor = decay_factor
        self.boundaries = boundaries
        self.total_steps = total_steps
        self.validation_fraction = validation_fraction
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _search_config(self) -> SearchConfig:
        params = self.get_params()
        for k in ("validation_fraction", "random_state", "n_jobs"):
            params.pop(k)
        return SearchConfig(seed=int(self.random_state), **params)

    def fit(self, X, y, X_val=None, y_val=None):
        dataset = self._make_dataset(X, y, X_val, y_val)
        res = run_autosampling(self._search_config(), dataset, n_jobs=self.n_jobs)
        self.model_ = res.model
        self.schedule_ = res.schedule
        self.distribution_ = res.distribution
        self.smoothed_distribution_ = res.smoothed_distribution
        self.records_ = res.records
        self.validation_score_ = res.final_eval.metric
        return self


class SGDScratchClassifier(_ScheduleClassifierBase):
    """The same learner trained with plain SGD over shuffled epochs."""

    def __init__(self, hidden_dim=None, batch_size=128, n_batches=1000, base_lr=0.1, momentum=0.9,
                 lr_schedule="step", decay_factor=0.1, boundaries=(), total_steps=0,
                 validation_fraction=0.2, random_state=0):
        self.hidden_dim = hidden_dim
        self.batch_size = batch_size
        self.n_batches = n_batches
        self.base_lr = base_lr
        self.momentum = momentum
        self.lr_schedule = lr_schedule
        self.decay_factor = decay_factor
        self.boundaries = boundaries
        self.total_steps = total_steps
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _search_config(self) -> SearchConfig:
        return SearchConfig(population_size=1, intervals_per_exploitation=1, interval_len=self.n_batches,
                            batch_size=self.batch_size, exploration_type="uniform", seed=int(self.random_state),
                            hidden_dim=self.hidden_dim, base_lr=self.base_lr, momentum=self.momentum,
                            lr_schedule=self.lr_schedule, decay_factor=self.decay_factor,
                            boundaries=self.boundaries, total_steps=self.total_steps)

    def fit(self, X, y, X_val=None, y_val=None):
        dataset = self._make_dataset(X, y, X_val, y_val)
        self.model_, self.schedule_, ev = plain_sgd_baseline(self._search_config(), dataset)
        self.validation_score_ = ev.metric
        return self
