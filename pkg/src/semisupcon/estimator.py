"""scikit-learn compatible wrapper around the self-training engine.

Unlabeled samples are marked with ``-1`` in ``y``, the same convention as
``sklearn.semi_supervised``::

    clf = SemiSupConClassifier(total_steps=2000, random_state=0)
    clf.fit(X, y_with_minus_ones)
    clf.predict(X_test)
"""
import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import AugmentConfig, SemiSplit
from .model import forward
from .pseudo import prototype_probabilities
from .selftrain import PRESETS, TrainConfig, apply_preset, run_experiment

UNLABELED = -1


class SemiSupConClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Semi-supervised classifier trained with the unified contrastive loss.

    ``predict_proba`` is the prototype head at temperature ``t_prime`` and
    ``transform`` returns the unit-norm embeddings.  ``preset`` selects one of
    the ablation rows (1-6) and overrides ``mode``; leave it None to use
    ``mode`` and the lambda weights as given.
    """

    def __init__(self, mode="ssc", preset=None, hidden_dims=(128,), embed_dim=128,
                 batch_size=16, mu=7, t=0.01, t_prime=0.04, tau=0.95,
                 lambda_x=1.0, lambda_conf=1.0, lambda_unconf=0.2, lambda_proto=1.0,
                 lr0=0.001, momentum=0.9, weight_decay=5e-4, total_steps=3000,
                 augment_strength=20, weak_noise_sigma=0.02, random_state=0):
        self.mode = mode
        self.preset = preset
        self.hidden_dims = hidden_dims
        self.embed_dim = embed_dim
        self.batch_size = batch_size
        self.mu = mu
        self.t = t
        self.t_prime = t_prime
        self.tau = tau
        self.lambda_x = lambda_x
        self.lambda_conf = lambda_conf
        self.lambda_unconf = lambda_unconf
        self.lambda_proto = lambda_proto
        self.lr0 = lr0
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.total_steps = total_steps
        self.augment_strength = augment_strength
        self.weak_noise_sigma = weak_noise_sigma
        self.random_state = random_state

    def _train_config(self, k):
        cfg = TrainConfig(
            b=self.batch_size, mu=self.mu, k=k, t=self.t, t_prime=self.t_prime, tau=self.tau,
            lambda_x=self.lambda_x, lambda_conf=self.lambda_conf,
            lambda_unconf=self.lambda_unconf, lambda_proto=self.lambda_proto,
            lr0=self.lr0, momentum=self.momentum, weight_decay=self.weight_decay,
            total_steps=self.total_steps, steps_per_epoch=max(self.total_steps, 1),
            mode=self.mode, hidden_dims=tuple(self.hidden_dims), embed_dim=self.embed_dim,
            seed=0 if self.random_state is None else int(self.random_state),
        )
        if self.preset is not None:
            if self.preset not in PRESETS:
                raise ValueError(f"preset must be one of {sorted(PRESETS)}")
            cfg = apply_preset(cfg, self.preset)
        return cfg

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        labeled = y != UNLABELED
        if not labeled.any():
            raise ValueError("y contains no labeled sample (all entries are -1)")
        self.classes_, y_enc = np.unique(y[labeled], return_inverse=True)
        k = len(self.classes_)
        if k < 2:
            raise ValueError("need at least two classes among the labeled samples")
        cfg = self._train_config(k)
        unlabeled = X[~labeled]
        if cfg.mode in ("ssc", "fixmatch_ce") and unlabeled.shape[0] == 0:
            raise ValueError(f"mode {cfg.mode!r} needs unlabeled samples (y == -1)")
        x_lab = X[labeled]
        split = SemiSplit(
            labeled_x=x_lab,
            labeled_y=y_enc,
            unlabeled=unlabeled if unlabeled.shape[0] else x_lab,
            val_x=x_lab,
            val_y=y_enc,
        )
        aug = AugmentConfig.from_strength(self.augment_strength, self.weak_noise_sigma)
        result = run_experiment(cfg, split, aug)
        self.params_ = result.params
        self.train_config_ = cfg
        self.history_ = result.steps
        self.n_features_in_ = X.shape[1]
        return self

    def _embed(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        z, _ = forward(self.params_, X, record=False)
        return z

    def transform(self, X):
        return self._embed(X)

    def predict_proba(self, X):
        return prototype_probabilities(self._embed(X), self.params_.prototypes, self.t_prime)

    def decision_function(self, X):
        return self._embed(X) @ self.params_.prototypes.T

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]
