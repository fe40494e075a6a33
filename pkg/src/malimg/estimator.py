"""scikit-learn compatible front-ends.

``ByteImageTransformer`` turns raw byte strings into image arrays;
``MalwareImageClassifier`` trains the backbone/FPN network on such arrays.
Both follow the usual ``fit`` / ``transform`` / ``predict`` conventions, so
they can sit in a ``Pipeline`` and be cloned or grid-searched.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.validation import check_is_fitted

from .augment import DEFAULT_TA_OPS
from .binimg.convert import DEFAULT_SIZE, convert
from .binimg.grid import WidthRule
from .harness.config import RunConfig
from .harness.data import ArrayDataset
from .harness.train import evaluate_model, fit, predict_logits
from .metrics import MetricsReport
from .nn.functional import softmax


class ByteImageTransformer(TransformerMixin, BaseEstimator):
    """Convert a sequence of byte strings to a ``(n, channels, size, size)`` array.

    Parameters
    ----------
    channels : {1, 3}
        Grayscale, or DEX-section colouring (non-DEX inputs fall back to a
        replicated grayscale image with a warning).
    size : int
        Output side length.
    width_rule : WidthRule or None
        File length -> grid width table; ``None`` uses the standard table.
    """

    def __init__(self, channels=1, size=DEFAULT_SIZE, width_rule=None):
        self.channels = channels
        self.size = size
        self.width_rule = width_rule

    def fit(self, X, y=None):
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        if int(self.size) <= 0:
            raise ValueError("size must be positive")
        self.rule_ = self.width_rule or WidthRule.standard()
        return self

    def transform(self, X):
        check_is_fitted(self, "rule_")
        if isinstance(X, (bytes, bytearray)):
            raise TypeError("expected a sequence of byte strings, not a single byte string")
        out = np.stack([convert(x, self.channels, self.rule_, int(self.size)) for x in X])
        return out.astype(np.float32)

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.input_tags.two_d_array = False
        tags.input_tags.string = True
        return tags


def _check_images(X, channels=None) -> np.ndarray:
    X = np.asarray(X, dtype=np.float32)
    if X.ndim != 4:
        raise ValueError(f"expected images shaped (n, K, H, W), got {X.shape}")
    if channels is not None and X.shape[1] != channels:
        raise ValueError(f"expected {channels} channels, got {X.shape[1]}")
    if not np.all(np.isfinite(X)) or X.size and (X.min() < 0 or X.max() > 1):
        raise ValueError("image values must be finite and within [0, 1]")
    if X.shape[2] % 32 or X.shape[3] % 32:
        raise ValueError(f"image sides must be multiples of 32, got {X.shape[2:]}")
    return X


class MalwareImageClassifier(ClassifierMixin, BaseEstimator):
    """Backbone (+ optional FPN) image classifier trained from scratch in numpy.

    Hyperparameters mirror the ablation axes: ``fpn``, ``ta`` (TrivialAugment),
    ``mixup``, ``optimizer`` ("AF" schedule-free AdamW or "AW" AdamW) and
    ``loss`` ("CE" or "WCE"). After ``fit`` the deployed weights are those of
    the epoch with the best validation F1_macro when validation data is
    given, otherwise of the last epoch.
    """

    def __init__(self, fpn=True, ta=False, mixup=False, mixup_alpha=0.2, ta_ops=None,
                 optimizer="AF", loss="CE", lr=None, weight_decay=0.01, warmup_steps=1000,
                 beta1=None, beta2=0.999, eps=1e-8, widths=(16, 32, 64, 128), fpn_width=64,
                 batch_size=128, epochs=10, seed=0, threads=1, init_weights=None):
        self.fpn = fpn
        self.ta = ta
        self.mixup = mixup
        self.mixup_alpha = mixup_alpha
        self.ta_ops = ta_ops
        self.optimizer = optimizer
        self.loss = loss
        self.lr = lr
        self.weight_decay = weight_decay
        self.warmup_steps = warmup_steps
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.widths = widths
        self.fpn_width = fpn_width
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.threads = threads
        self.init_weights = init_weights

    def _run_config(self, channels: int) -> RunConfig:
        sf = {"weight_decay": self.weight_decay, "warmup_steps": self.warmup_steps,
              "beta2": self.beta2, "eps": self.eps}
        aw = {"weight_decay": self.weight_decay, "beta2": self.beta2, "eps": self.eps}
        if self.lr is not None:
            sf["lr"] = aw["lr"] = self.lr
        if self.beta1 is not None:
            sf["beta1"] = aw["beta1"] = self.beta1
        return RunConfig(
            id="estimator", pt=self.init_weights, fpn=bool(self.fpn), in_channels=channels,
            opt=self.optimizer, loss=self.loss, sf=sf, adamw=aw,
            mixup={"enabled": bool(self.mixup), "alpha": self.mixup_alpha},
            ta={"enabled": bool(self.ta), "ops": dict(self.ta_ops or DEFAULT_TA_OPS)},
            model={"widths": tuple(self.widths), "fpn_width": self.fpn_width},
            batch_size=self.batch_size, epochs=self.epochs, seed=self.seed, threads=self.threads,
        )

    def fit(self, X, y, X_val=None, y_val=None):
        X = _check_images(X)
        y = np.asarray(y)
        if len(y) != len(X):
            raise ValueError(f"X has {len(X)} samples but y has {len(y)}")
        self.label_encoder_ = LabelEncoder().fit(y)
        self.classes_ = self.label_encoder_.classes_
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        self.config_ = self._run_config(X.shape[1])
        train_ds = ArrayDataset(X, self.label_encoder_.transform(y))
        if X_val is None:
            val_ds = train_ds
        else:
            val_ds = ArrayDataset(_check_images(X_val, X.shape[1]), self.label_encoder_.transform(np.asarray(y_val)))
        result = fit(self.config_, train_ds, val_ds, len(self.classes_),
                     class_names=[str(c) for c in self.classes_])
        if X_val is None:
            result.best_params = result.optimizer.eval_params().copy()
            result.best_epoch = self.config_.epochs
            result.use_best()
        self.fit_result_ = result
        self.model_ = result.model
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        X = _check_images(X, self.config_.in_channels)
        return predict_logits(self.model_, ArrayDataset(X, np.zeros(len(X), dtype=np.int64)),
                              self.config_.eval_batch_size)

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]

    def report(self, X, y) -> MetricsReport:
        """Full macro-metric report (precision/recall/F1/AUC, mean CE loss) on ``(X, y)``."""
        check_is_fitted(self, "model_")
        ds = ArrayDataset(_check_images(X, self.config_.in_channels), self.label_encoder_.transform(np.asarray(y)))
        return evaluate_model(self.model_, ds, self.config_.eval_batch_size, [str(c) for c in self.classes_])
