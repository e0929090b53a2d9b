"""Scikit-learn style facades over the optimizer and classifier.

SemiSupervisedTSNE follows the fit/fit_transform estimator protocol with
partial labels passed as y (-1 marks unlabeled samples). ShallowMlpClassifier
wraps the active-learning network as a standard classifier.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from . import activelearn
from ._validation import check_matrix
from .engine import Engine, TsneConfig


class SemiSupervisedTSNE(BaseEstimator):
    """Label-aware Barnes-Hut t-SNE embedding.

    Parameters mirror TsneConfig. fit(X, y) accepts an optional integer
    label vector where -1 means unlabeled; labeled samples shape the layout
    through the attraction/repulsion priors from epoch `s` onward.

    Attributes after fit: embedding_ (N x out_dims), kl_divergence_,
    n_iter_, engine_ (the underlying session for further interaction).
    """

    def __init__(self, out_dims: int = 2, perplexity: float = 20.0,
                 theta: float = 0.5, theta_k: float = 0.8, f: float = 0.01,
                 r: float = 0.1, s: int = 200, ramp_epochs: int = 0,
                 e_max: int = 1000, eta: float = 200.0, alpha_hi: float = 4.0,
                 alpha_epochs: tuple[int, int] = (100, 250),
                 momentum_lo_hi: tuple[float, float] = (0.5, 0.8),
                 seed: int = 0, init_mode: str = "pca"):
        self.out_dims = out_dims
        self.perplexity = perplexity
        self.theta = theta
        self.theta_k = theta_k
        self.f = f
        self.r = r
        self.s = s
        self.ramp_epochs = ramp_epochs
        self.e_max = e_max
        self.eta = eta
        self.alpha_hi = alpha_hi
        self.alpha_epochs = alpha_epochs
        self.momentum_lo_hi = momentum_lo_hi
        self.seed = seed
        self.init_mode = init_mode

    def _config(self) -> TsneConfig:
        return TsneConfig(out_dims=self.out_dims, perplexity=self.perplexity,
                          theta=self.theta, theta_k=self.theta_k, f=self.f,
                          r=self.r, s=self.s, ramp_epochs=self.ramp_epochs,
                          e_max=self.e_max, eta=self.eta,
                          alpha_hi=self.alpha_hi,
                          alpha_epochs=tuple(self.alpha_epochs),
                          momentum_lo_hi=tuple(self.momentum_lo_hi),
                          seed=self.seed, init_mode=self.init_mode)

    def fit(self, X, y=None):
        X = check_matrix(np.asarray(X, dtype=np.float64), "X")
        config = self._config()
        engine = Engine(X, config)
        if y is not None:
            y = np.asarray(y, dtype=np.int64)
            if y.shape != (X.shape[0],):
                raise ValueError(f"y must have shape ({X.shape[0]},), got {y.shape}")
            for i in np.flatnonzero(y >= 0):
                engine.label(int(i), int(y[i]))
        engine.step(config.e_max)
        self.engine_ = engine
        self.embedding_ = engine.state.y.copy()
        self.kl_divergence_ = engine.kl()
        self.n_iter_ = engine.state.epoch
        return self

    def fit_transform(self, X, y=None):
        self.fit(X, y)
        return self.embedding_


class ShallowMlpClassifier(BaseEstimator, ClassifierMixin):
    """The bundled feed-forward network behind a fit/predict interface."""

    def __init__(self, epochs: int = 200, learning_rate: float = 1e-3,
                 batch_size: int = 32, dropout: float = 0.25, seed: int = 0):
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.dropout = dropout
        self.seed = seed

    def fit(self, X, y):
        X = check_matrix(np.asarray(X, dtype=np.float64), "X")
        y = np.asarray(y)
        if y.shape != (X.shape[0],):
            raise ValueError(f"y must have shape ({X.shape[0]},), got {y.shape}")
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise ValueError("need at least two classes")
        net = activelearn.MlpClassifier(X.shape[1], self.classes_.size,
                                        seed=self.seed, dropout=self.dropout,
                                        learning_rate=self.learning_rate,
                                        batch_size=self.batch_size)
        activelearn.train_incremental(net, X, encoded, epochs=self.epochs,
                                      seed=self.seed)
        self.net_ = net
        return self

    def predict_proba(self, X):
        X = check_matrix(np.asarray(X, dtype=np.float64), "X")
        return activelearn.predict_proba(self.net_, X)

    def predict(self, X):
        return self.classes_[self.predict_proba(X).argmax(axis=1)]
