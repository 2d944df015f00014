"""Scikit-learn style front end for the continual-learning engine.

``ContinualPeftClassifier`` follows the estimator protocol (``fit`` /
``partial_fit`` / ``predict`` / ``get_params``), so it composes with
pipelines, ``clone`` and model-selection utilities. Each ``partial_fit``
call trains one task; ``fit`` accepts an optional ``task_ids`` vector to
train a whole stream in task order.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from . import engine
from .data_io import Task, TaskStream
from .errors import DataError
from .validation import (as_labels, as_matrix, check_consistent_length,
                         check_is_fitted)


class ContinualPeftClassifier(BaseEstimator, ClassifierMixin):
    """Continual classifier over pre-computed embeddings.

    Parameters mirror :class:`hicl.engine.TrainConfig`; see the README for
    the full list of defaults. The estimator owns a
    :class:`hicl.engine.ModelState` in ``state_`` after fitting.
    """

    def __init__(self, peft: str = "lora", epochs: int = 20,
                 batch_size: int = 32, learning_rate: float = 0.005,
                 scenario: str = "cil", kmeans_k: int = 5,
                 pseudo_per_class: int = 64, cr_temperature: float = 0.8,
                 cr_weight: float = 0.1, train_shared_adapter: bool = False,
                 output_mode: str = "concat", backbone_seed: int = 1234,
                 random_state: int = 0):
        self.peft = peft
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.scenario = scenario
        self.kmeans_k = kmeans_k
        self.pseudo_per_class = pseudo_per_class
        self.cr_temperature = cr_temperature
        self.cr_weight = cr_weight
        self.train_shared_adapter = train_shared_adapter
        self.output_mode = output_mode
        self.backbone_seed = backbone_seed
        self.random_state = random_state

    def _train_config(self) -> engine.TrainConfig:
        return engine.TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size,
            learning_rate=self.learning_rate, peft_kind=self.peft,
            kmeans_k=self.kmeans_k, pseudo_per_class=self.pseudo_per_class,
            cr_temperature=self.cr_temperature, cr_weight=self.cr_weight,
            train_shared_adapter=self.train_shared_adapter,
            output_mode=self.output_mode, backbone_seed=self.backbone_seed,
            seed=self.random_state)

    def fit(self, X, y, task_ids=None):
        """Train on one task, or on a task sequence when ``task_ids`` given.

        Tasks are trained in ascending ``task_ids`` order; with no
        ``task_ids`` the data forms a single task.
        """
        X = as_matrix(X, "X")
        y = as_labels(y, "y")
        check_consistent_length(X, "X", y, "y")
        self.state_ = None
        self.n_features_in_ = X.shape[1]
        if task_ids is None:
            groups = [(0, np.arange(len(y)))]
        else:
            task_ids = as_labels(task_ids, "task_ids")
            check_consistent_length(X, "X", task_ids, "task_ids")
            groups = [(tid, np.flatnonzero(task_ids == tid))
                      for tid in sorted(set(task_ids.tolist()))]
        cfg = self._train_config()
        state = engine.new_state(cfg, self.scenario, input_dim=X.shape[1])
        for tid, idx in groups:
            task = _as_task(int(tid), X[idx], y[idx])
            engine.train_task(state, task, cfg)
        self.state_ = state
        self._refresh_classes()
        return self

    def partial_fit(self, X, y, classes=None):
        """Train one additional task on the given data."""
        X = as_matrix(X, "X")
        y = as_labels(y, "y")
        check_consistent_length(X, "X", y, "y")
        state = getattr(self, "state_", None)
        cfg = self._train_config()
        if state is None:
            self.n_features_in_ = X.shape[1]
            state = engine.new_state(cfg, self.scenario, input_dim=X.shape[1])
        task = _as_task(state.num_tasks, X, y)
        engine.train_task(state, task, cfg)
        self.state_ = state
        self._refresh_classes()
        return self

    def fit_stream(self, stream: TaskStream):
        """Train a full stream and record the accuracy matrix."""
        cfg = self._train_config()
        self.state_, self.accuracy_matrix_ = engine.train_sequence(stream, cfg)
        self.n_features_in_ = stream.tasks[0].train_x.shape[1]
        self._refresh_classes()
        return self

    def _refresh_classes(self):
        self.classes_ = np.sort(np.asarray(self.state_.class_order))

    def predict(self, X):
        check_is_fitted(self)
        return engine.predict(self.state_, as_matrix(X, "X")).labels

    def predict_task(self, X):
        """Predicted task index for each sample (the inference first stage)."""
        check_is_fitted(self)
        return engine.predict(self.state_, as_matrix(X, "X")).task_ids

    def predict_proba(self, X):
        """Class probabilities with columns aligned to ``classes_``."""
        check_is_fitted(self)
        pred = engine.predict(self.state_, as_matrix(X, "X"))
        order = np.asarray(self.state_.class_order)
        columns = np.searchsorted(self.classes_, order)
        out = np.zeros_like(pred.class_probs)
        out[:, columns] = pred.class_probs
        return out


def _as_task(task_id: int, X: np.ndarray, y: np.ndarray) -> Task:
    if len(y) == 0:
        raise DataError("task has no samples")
    return Task(task_id=task_id, train_x=X, train_y=y,
                test_x=X[:1], test_y=y[:1],
                label_set=tuple(sorted(set(y.tolist()))))
