"""scikit-learn wrapper around :func:`mmen.trainer.train`."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import DomainDataset, DomainPair
from .trainer import ModelConfig, TrainConfig, train

__all__ = ["MMENClassifier"]


class MMENClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Domain-adaptive MLP classifier.

    ``fit(X, y, X_target=...)`` trains on labeled source rows and unlabeled
    target rows. ``predict`` uses the auxiliary classifier head, or the
    discriminator head for ``variant="g_plus_d"``. ``transform`` returns
    generator features.

    Without ``X_target`` only ``variant="source_only"`` is accepted.
    """

    def __init__(
        self,
        variant="mmen",
        lam=0.1,
        k=4,
        epochs=150,
        pretrain_epochs=10,
        batch_size=128,
        optimizer="adam",
        lr=2e-4,
        d_first=False,
        generator_hidden=(32,),
        feature_dim=32,
        head_hidden=(32,),
        random_state=0,
    ):
        self.variant = variant
        self.lam = lam
        self.k = k
        self.epochs = epochs
        self.pretrain_epochs = pretrain_epochs
        self.batch_size = batch_size
        self.optimizer = optimizer
        self.lr = lr
        self.d_first = d_first
        self.generator_hidden = generator_hidden
        self.feature_dim = feature_dim
        self.head_hidden = head_hidden
        self.random_state = random_state

    def _configs(self):
        train_cfg = TrainConfig(
            lam=self.lam, k=self.k, epochs=self.epochs, pretrain_epochs=self.pretrain_epochs,
            batch_source=self.batch_size, batch_target=self.batch_size, optimizer=self.optimizer,
            lr=self.lr, seed=self.random_state, variant=self.variant, d_first=self.d_first,
        )
        return train_cfg, ModelConfig(self.generator_hidden, self.feature_dim, self.head_hidden)

    def fit(self, X, y, X_target=None):
        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise ValueError("need at least two classes in y")
        if X_target is None:
            if self.variant != "source_only":
                raise ValueError(f"variant {self.variant!r} needs X_target; pass it to fit()")
            X_target = X
        X_target = check_array(X_target, dtype=np.float64)
        if X_target.shape[1] != X.shape[1]:
            raise ValueError(f"X_target has {X_target.shape[1]} features, X has {X.shape[1]}")
        train_cfg, model_cfg = self._configs()
        n_classes = self.classes_.size
        pair = DomainPair(
            DomainDataset(X, encoded, "source", n_classes),
            DomainDataset(X_target, None, "target", n_classes),
        )
        result = train(pair, train_cfg, model_cfg)
        self.bundle_ = result.bundle
        self.history_ = result.log
        self.n_features_in_ = X.shape[1]
        return self

    def _checked(self, X):
        check_is_fitted(self, "bundle_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X

    def decision_function(self, X):
        X = self._checked(X)
        return self.bundle_.logits(X, self.bundle_.default_head())

    def predict_proba(self, X):
        z = self.decision_function(X)
        z = z - z.max(axis=1, keepdims=True)
        p = np.exp(z)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]

    def transform(self, X):
        X = self._checked(X)
        return self.bundle_.features(X)

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X, y, **fit_params).transform(X)
