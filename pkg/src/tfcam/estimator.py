"""scikit-learn compatible wrapper around :func:`tfcam.training.train`."""

from __future__ import annotations

from types import SimpleNamespace

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .models import ModelConfig
from .training import predict, train
from .validation import check_binary_labels, check_sequences


class TemporalClassifier(ClassifierMixin, BaseEstimator):
    """Binary outcome classifier over ``[n_patients, n_timesteps, n_features]`` input.

    ``model_kind`` selects ``"tfcam"``, ``"retain"`` or ``"lstm"``.  The
    remaining parameters mirror :class:`~tfcam.models.ModelConfig`; the
    input shape is taken from the data in :meth:`fit`.

    >>> clf = TemporalClassifier(model_kind="lstm", epochs=0)
    >>> clf.get_params()["model_kind"]
    'lstm'
    """

    def __init__(self, model_kind="tfcam", embed_dim=32, lstm_hidden=32, n_layers=2,
                 n_heads=4, causal_attention=True, learning_rate=1e-3, epochs=50,
                 batch_size=64, pos_weight=None, random_state=0):
        self.model_kind = model_kind
        self.embed_dim = embed_dim
        self.lstm_hidden = lstm_hidden
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.causal_attention = causal_attention
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.pos_weight = pos_weight
        self.random_state = random_state

    def _config(self, n_timesteps, n_features) -> ModelConfig:
        return ModelConfig(
            model_kind=self.model_kind, n_features=n_features, n_timesteps=n_timesteps,
            embed_dim=self.embed_dim, lstm_hidden=self.lstm_hidden, n_layers=self.n_layers,
            n_heads=self.n_heads, causal_attention=self.causal_attention,
            seed=self.random_state, learning_rate=self.learning_rate, epochs=self.epochs,
            batch_size=self.batch_size, pos_weight=self.pos_weight)

    def fit(self, X, y):
        X = check_sequences(X)
        y = check_binary_labels(y, len(X))
        config = self._config(X.shape[1], X.shape[2])
        self.model_ = train(SimpleNamespace(X=X, y=y), config)
        self.classes_ = np.array([0, 1])
        self.n_timesteps_, self.n_features_in_ = X.shape[1], X.shape[2]
        self.history_ = list(self.model_.history)
        return self

    def _checked(self, X):
        check_is_fitted(self, "model_")
        return check_sequences(X, self.n_timesteps_, self.n_features_in_)

    def decision_function(self, X) -> np.ndarray:
        X = self._checked(X)
        return self.model_.decision_function(X)

    def predict_proba(self, X) -> np.ndarray:
        X = self._checked(X)
        p = predict(self.model_, X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)

    def explain(self, X):
        """Temporal weights, feature gates, contributions and attention for ``X``."""
        X = self._checked(X)
        return self.model_.explain(X)
