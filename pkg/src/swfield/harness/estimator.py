"""scikit-learn style wrapper around the classification head."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from swfield.connectivity import Split
from swfield.harness.config import TrainConfig
from swfield.harness.dataset import FieldDataset
from swfield.harness.training import FieldModel, RunHistory, rng_for, train
from swfield.neural.heads import HeadConfig
from swfield.neural.losses import softmax


class HeadClassifier(ClassifierMixin, BaseEstimator):
    """Head-only classifier on precomputed feature rows.

    Each row of ``X`` plays the role of a frozen embedding; positional
    encoding is left to an upstream transformer such as
    :class:`swfield.encoding.PositionalFeatures`. A seeded hold-out of
    ``validation_fraction`` drives early stopping.
    """

    def __init__(self, kind="linear", hidden=256, n_layers=4, skip_every=2, dropout=0.1,
                 loss="focal", alpha=None, gamma=2.0, lr=1e-3, weight_decay=1e-4,
                 scheduler="plateau", sampling="none", batch_size=32, epochs=50, patience=5,
                 validation_fraction=0.1, random_state=0):
        self.kind = kind
        self.hidden = hidden
        self.n_layers = n_layers
        self.skip_every = skip_every
        self.dropout = dropout
        self.loss = loss
        self.alpha = alpha
        self.gamma = gamma
        self.lr = lr
        self.weight_decay = weight_decay
        self.scheduler = scheduler
        self.sampling = sampling
        self.batch_size = batch_size
        self.epochs = epochs
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _train_config(self, n_classes: int) -> TrainConfig:
        alpha = self.alpha if self.alpha is not None else (1.0 / n_classes,) * n_classes
        head = HeadConfig(kind=self.kind, hidden=self.hidden, n_layers=self.n_layers,
                          skip_every=self.skip_every, dropout=self.dropout, n_classes=n_classes)
        return TrainConfig(head=head, coords=(), loss=self.loss, alpha=tuple(float(a) for a in alpha),
                           alpha_order=None, gamma=self.gamma, lr=self.lr,
                           weight_decay=self.weight_decay, scheduler=self.scheduler,
                           sampling=self.sampling, batch_size=self.batch_size, epochs=self.epochs,
                           patience=self.patience, seed=int(self.random_state))

    @staticmethod
    def _as_dataset(X, y, split) -> FieldDataset:
        n = len(X)
        return FieldDataset(
            image_index=np.arange(n), coords=np.zeros((n, 0)), labels=y, timestamps=np.zeros(n),
            split=split, interp=np.zeros(n, dtype=bool), image_keys=np.arange(n), embeddings=X,
            coord_names=(),
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, yi = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in (0, 1)")
        cfg = self._train_config(len(self.classes_))
        order = rng_for(cfg.seed, "holdout").permutation(len(X))
        n_val = max(1, int(round(self.validation_fraction * len(X))))
        split = np.full(len(X), Split.TRAIN, dtype=object)
        split[order[:n_val]] = Split.VALIDATION
        data = self._as_dataset(X, yi, split)
        model = FieldModel.build(cfg, embedding_dim=X.shape[1])
        result = train(model, data, cfg, "head-only")
        self.model_ = result.model
        self.history_: RunHistory = result.history
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        n = len(X)
        data = self._as_dataset(X, np.zeros(n, dtype=np.int64), np.full(n, Split.TEST, dtype=object))
        return self.model_.logits(data)

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.decision_function(X))

    def predict(self, X) -> np.ndarray:
        return self.classes_[self.decision_function(X).argmax(axis=1)]


__all__ = ["HeadClassifier"]
