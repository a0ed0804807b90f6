"""scikit-learn compatible wrappers.

Rows of ``X`` are flattened channel magnitudes (``K*K`` for IC, ``K*N``
for IMAC, as in :meth:`ProblemInstance.features`) and targets are power
vectors, so both estimators drop into pipelines and model selection.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .instance import IC, effective_channels
from .neural import TrainConfig, binarize, forward, init_model, train
from .validation import check_gains, users_from_features
from .wmmse import WmmseConfig, sum_rate_batch, wmmse_batch


class PowerControlMLP(RegressorMixin, BaseEstimator):
    """ReLU MLP mapping channel magnitudes to clamped powers, trained with RMSprop."""

    def __init__(self, hidden_layer_sizes=(200, 200, 200), p_max=1.0, learning_rate=1e-3,
                 rms_decay=0.9, batch_size=1000, epsilon=1e-8, max_epochs=100, patience=3,
                 max_halvings=5, validation_fraction=0.1, output_activation="clamp",
                 standardize=False, binarize=False, random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.p_max = p_max
        self.learning_rate = learning_rate
        self.rms_decay = rms_decay
        self.batch_size = batch_size
        self.epsilon = epsilon
        self.max_epochs = max_epochs
        self.patience = patience
        self.max_halvings = max_halvings
        self.validation_fraction = validation_fraction
        self.output_activation = output_activation
        self.standardize = standardize
        self.binarize = binarize
        self.random_state = random_state

    def _train_config(self):
        return TrainConfig(self.learning_rate, self.rms_decay, self.batch_size, self.epsilon,
                           self.max_epochs, self.patience, self.max_halvings,
                           self.random_state or 0, standardize=self.standardize)

    def fit(self, X, y, X_val=None, y_val=None):
        """Train; without an explicit validation set a ``validation_fraction`` split is held out."""
        X = check_gains(X) if self.output_activation == "clamp" else np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        y2 = y.reshape(len(y), -1)
        if X_val is None:
            rng = np.random.default_rng(self.random_state)
            order = rng.permutation(len(X))
            n_val = max(1, int(round(self.validation_fraction * len(X))))
            val, tr = order[:n_val], order[n_val:]
            X, X_val, y2, y_val = X[tr], X[val], y2[tr], y2[val]
        else:
            X_val = np.asarray(X_val, dtype=np.float64)
            y_val = np.asarray(y_val, dtype=np.float64).reshape(len(X_val), -1)
        sizes = [X.shape[1], *self.hidden_layer_sizes, y2.shape[1]]
        model = init_model(sizes, self.random_state or 0, self.p_max, self.output_activation)
        self.model_, self.history_ = train(model, (X, y2), (X_val, y_val), self._train_config())
        self.n_features_in_ = X.shape[1]
        self._y_1d = y.ndim == 1
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected an array with {self.n_features_in_} columns")
        out = forward(self.model_, X)
        if self.binarize:
            out = binarize(out, self.p_max)
        return out.ravel() if self._y_1d else out


class WMMSEAllocator(BaseEstimator):
    """WMMSE as a stateless estimator; ``fit`` only records the input width."""

    def __init__(self, kind=IC, num_cells=None, noise_power=1.0, p_max=1.0, obj_tol=1e-5,
                 max_iter=500):
        self.kind = kind
        self.num_cells = num_cells
        self.noise_power = noise_power
        self.p_max = p_max
        self.obj_tol = obj_tol
        self.max_iter = max_iter

    def fit(self, X, y=None):
        X = check_gains(X)
        self.n_features_in_ = X.shape[1]
        self.n_users_ = users_from_features(X.shape[1], self.kind, self.num_cells)
        return self

    def _channels(self, X):
        X = check_gains(X, self.n_features_in_)
        K = self.n_users_
        return effective_channels(self.kind, X.reshape(len(X), K, -1))

    def predict(self, X):
        check_is_fitted(self, "n_users_")
        cfg = WmmseConfig(self.obj_tol, self.max_iter)
        return wmmse_batch(self._channels(X), self.noise_power, 1.0, self.p_max, cfg).p

    transform = predict

    def score(self, X, y=None):
        """Average sum-rate (bits) of the WMMSE allocation."""
        H = self._channels(X)
        return float(np.mean(sum_rate_batch(H, self.predict(X), self.noise_power, 1.0)))
