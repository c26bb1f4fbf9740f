"""scikit-learn style estimators wrapping pre-training and fine-tuning.

``CSPClassifier`` trains the toy classifier on an (N, C, H, W) stack with
either the natural channel order or channel shuffling; ``CSPSegmenter``
trains the toy segmenter, optionally starting from a pre-trained encoder.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.validation import check_array, check_is_fitted

from .csp import Baseline, Csp, CspConfig
from .data.augment import DEFAULT_SCALES
from .data.normalize import normalize, stats_from_images
from .errors import InvalidConfig, ShapeMismatch
from .metrics import ConfusionMatrix, classify, iou_scores, sliding_inference
from .models import Checkpoint, build_classifier, build_segmenter, load_checkpoint, transfer_encoder
from .train.loops import TrainConfig, eval_plan, train_classifier, train_segmenter
from .train.optim import AdamWConfig
from .train.schedule import ScheduleConfig


def _check_images(X, *, channels: int | None = None) -> np.ndarray:
    X = check_array(X, allow_nd=True, dtype=np.float32, ensure_all_finite=True)
    if X.ndim != 4:
        raise ShapeMismatch(f"expected an (N, C, H, W) stack, got shape {X.shape}", field="X")
    if channels is not None and X.shape[1] != channels:
        raise ShapeMismatch(f"fitted on {channels} channels, got {X.shape[1]}", field="X")
    return X


class CSPClassifier(ClassifierMixin, BaseEstimator):
    """Toy CNN classifier pre-trained with or without channel shuffling.

    ``strategy="csp"`` feeds every training sample through a fresh
    duplicate-shuffle-truncate draw to ``n_channels`` inputs;
    ``"baseline"`` keeps the natural band order (and needs
    ``n_channels`` equal to the data's channel count).
    """

    def __init__(self, strategy="csp", n_channels=None, width=32, epochs=10, batch_size=32,
                 learning_rate=2e-3, warmup_epochs=1, weight_decay=0.05, augment=False,
                 scales=DEFAULT_SCALES, flip_prob=0.5, seed=0):
        self.strategy = strategy
        self.n_channels = n_channels
        self.width = width
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.warmup_epochs = warmup_epochs
        self.weight_decay = weight_decay
        self.augment = augment
        self.scales = scales
        self.flip_prob = flip_prob
        self.seed = seed

    def _strategy(self, m: int, n: int):
        if self.strategy == "baseline":
            if n != m:
                raise InvalidConfig(f"baseline needs n_channels ({n}) == data channels ({m})", field="n_channels")
            return Baseline()
        if self.strategy == "csp":
            return Csp(CspConfig(m, n, self.seed))
        raise InvalidConfig(f"strategy must be 'csp' or 'baseline', got {self.strategy!r}", field="strategy")

    def fit(self, X, y):
        X = _check_images(X)
        y = np.asarray(y)
        if y.shape != (len(X),):
            raise ShapeMismatch(f"y has shape {y.shape}, expected ({len(X)},)", field="y")
        self._label_encoder = LabelEncoder().fit(y)
        self.classes_ = self._label_encoder.classes_
        m = X.shape[1]
        n = m if self.n_channels is None else int(self.n_channels)
        self.strategy_ = self._strategy(m, n)
        self.stats_ = stats_from_images(X)
        self.n_features_in_ = m
        self.net_ = build_classifier(n, len(self.classes_), self.width, seed=self.seed)
        cfg = TrainConfig(batch_size=self.batch_size, epochs=self.epochs, seed=self.seed,
                          patch_size=X.shape[2], augment=self.augment, scales=tuple(self.scales),
                          flip_prob=self.flip_prob)
        sched = ScheduleConfig(self.learning_rate, self.warmup_epochs, max(self.epochs, self.warmup_epochs + 1),
                               1e-3, "cosine", unit="epoch")
        self.history_ = train_classifier(self.net_, normalize(X, self.stats_), self._label_encoder.transform(y),
                                         self.strategy_, cfg, sched, AdamWConfig(weight_decay=self.weight_decay))
        return self

    def _model_input(self, X) -> np.ndarray:
        check_is_fitted(self, "net_")
        x = normalize(_check_images(X, channels=self.n_features_in_), self.stats_)
        plan = eval_plan(self.strategy_, self.n_features_in_)
        return x if plan is None else x[:, list(plan.sources)]

    def decision_function(self, X) -> np.ndarray:
        x = self._model_input(X)
        return classify(self.net_, x)

    def predict_proba(self, X) -> np.ndarray:
        x = self._model_input(X)
        return self.net_.predict_scores(x)

    def predict(self, X) -> np.ndarray:
        scores = self.decision_function(X)
        return self.classes_[scores.argmax(axis=1)]

    def to_checkpoint(self) -> Checkpoint:
        check_is_fitted(self, "net_")
        meta = {"norm_stats": self.stats_.to_json(), "classes": [str(c) for c in self.classes_],
                "epochs": self.epochs, "seed": self.seed}
        return Checkpoint.from_network(self.net_, self.strategy_.tag, meta)


class CSPSegmenter(BaseEstimator):
    """Toy encoder-decoder segmenter, optionally initialised from a checkpoint.

    ``init_checkpoint`` is a :class:`Checkpoint` or a path; its encoder is
    copied in (with stem adaptation when channel counts differ).  ``X`` is
    an (N, C, H, W) stack and ``y`` the matching (N, H, W) label maps.
    """

    def __init__(self, n_classes=None, init_checkpoint=None, width=32, iterations=1000, batch_size=8,
                 learning_rate=1e-3, warmup=100, weight_decay=0.01, patch_size=32, stride=None,
                 augment=True, scales=DEFAULT_SCALES, flip_prob=0.5, ignore_index=255, seed=0):
        self.n_classes = n_classes
        self.init_checkpoint = init_checkpoint
        self.width = width
        self.iterations = iterations
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.warmup = warmup
        self.weight_decay = weight_decay
        self.patch_size = patch_size
        self.stride = stride
        self.augment = augment
        self.scales = scales
        self.flip_prob = flip_prob
        self.ignore_index = ignore_index
        self.seed = seed

    def _checkpoint(self) -> Checkpoint | None:
        ck = self.init_checkpoint
        if ck is None or isinstance(ck, Checkpoint):
            return ck
        return load_checkpoint(Path(ck))

    def fit(self, X, y):
        X = _check_images(X)
        y = np.asarray(y)
        if y.shape != (X.shape[0],) + X.shape[2:]:
            raise ShapeMismatch(f"masks {y.shape} do not match images {X.shape}", field="y")
        valid = y[y != self.ignore_index]
        k = int(self.n_classes) if self.n_classes is not None else int(valid.max()) + 1 if valid.size else 1
        self.n_classes_ = k
        self.stats_ = stats_from_images(X)
        self.n_features_in_ = X.shape[1]
        ck = self._checkpoint()
        width = ck.width if ck is not None else self.width
        net = build_segmenter(X.shape[1], k, width, seed=self.seed)
        self.net_ = transfer_encoder(ck, net) if ck is not None else net
        cfg = TrainConfig(batch_size=self.batch_size, iterations=self.iterations, seed=self.seed,
                          patch_size=self.patch_size, augment=self.augment, scales=tuple(self.scales),
                          flip_prob=self.flip_prob)
        total = max(self.iterations, self.warmup + 1)
        sched = ScheduleConfig(self.learning_rate, self.warmup, total, 1e-3, "poly", 1.0)
        x = [normalize(img, self.stats_) for img in X]
        self.history_ = train_segmenter(self.net_, x, list(y), cfg, sched, AdamWConfig(weight_decay=self.weight_decay),
                                        ignore_index=self.ignore_index)
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "net_")
        X = _check_images(X, channels=self.n_features_in_)
        return np.stack([sliding_inference(self.net_, img, self.patch_size, self.stride, self.stats_) for img in X])

    def score(self, X, y) -> float:
        """Mean IoU over classes present in either prediction or ground truth."""
        cm = ConfusionMatrix(self.n_classes_)
        for pred, gt in zip(self.predict(X), np.asarray(y)):
            cm.update(pred, gt, self.ignore_index)
        miou = iou_scores(cm)[1]
        return float("nan") if miou is None else miou

    def to_checkpoint(self) -> Checkpoint:
        check_is_fitted(self, "net_")
        source = self._checkpoint()
        tag = f"{source.strategy}+finetune" if source is not None else "scratch"
        meta = {"norm_stats": self.stats_.to_json(), "iterations": self.iterations, "seed": self.seed,
                "ignore_index": self.ignore_index, "patch_size": self.patch_size}
        return Checkpoint.from_network(self.net_, tag, meta)


__all__ = ["CSPClassifier", "CSPSegmenter"]
