"""Single-image geoclassifier: an MLP head from feature vectors to cell probabilities.

Hidden layers use ``tanh``; the last hidden activation (or the raw input
for a linear model) is the embedding fed to the softmax. Training minimises
cross-entropy against one-hot cell targets with AdaGrad.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from geocells.data import feature_matrix, labels_of
from geocells.errors import (
    ConfigError,
    DimensionError,
    LabelError,
    NumericError,
    VersionMismatch,
)
from geocells.optim import AdaGrad

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    n_classes: int
    hidden_dims: tuple[int, ...] = ()
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim <= 0 or any(h <= 0 for h in self.hidden_dims):
            raise ConfigError("all layer dims must be positive")
        if self.n_classes < 2:
            raise ConfigError("need at least two classes")

    @property
    def embedding_dim(self) -> int:
        return self.hidden_dims[-1] if self.hidden_dims else self.input_dim


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.045
    eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 50
    seed: int = 0
    # early stopping: stop after `patience` epochs without a `min_delta` gain
    patience: int = 5
    min_delta: float = 0.001

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError("learning rate must be non-negative")
        if self.batch_size <= 0 or self.epochs < 0:
            raise ConfigError("batch_size must be positive and epochs non-negative")


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def init_dense(rng, fan_in, fan_out):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)), np.zeros(fan_out)


@dataclass
class GeoClassifier:
    config: ModelConfig
    params: dict[str, np.ndarray]
    partition_tag: str = ""
    # per-feature training mean; the default occlusion fill
    feature_mean: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def initialize(cls, config: ModelConfig, partition_tag: str = "") -> "GeoClassifier":
        rng = np.random.default_rng(config.seed)
        dims = (config.input_dim, *config.hidden_dims, config.n_classes)
        params = {}
        for k in range(len(dims) - 1):
            params[f"W{k}"], params[f"b{k}"] = init_dense(rng, dims[k], dims[k + 1])
        return cls(config, params, partition_tag)

    @property
    def n_layers(self) -> int:
        return len(self.config.hidden_dims) + 1

    def _as_batch(self, features):
        x = np.asarray(features, dtype=float)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[1] != self.config.input_dim:
            raise DimensionError(f"feature dim {x.shape[1]} != model input dim {self.config.input_dim}")
        return x, single

    def _forward(self, x):
        acts = [x]
        for k in range(self.n_layers - 1):
            acts.append(np.tanh(acts[-1] @ self.params[f"W{k}"] + self.params[f"b{k}"]))
        last = self.n_layers - 1
        logits = acts[-1] @ self.params[f"W{last}"] + self.params[f"b{last}"]
        return acts, logits

    def logits(self, features) -> np.ndarray:
        x, single = self._as_batch(features)
        out = self._forward(x)[1]
        return out[0] if single else out

    def predict(self, features) -> np.ndarray:
        """Cell distribution(s); a 1-D input gives one vector, 2-D gives rows."""
        x, single = self._as_batch(features)
        p = softmax(self._forward(x)[1])
        return p[0] if single else p

    def embed(self, features) -> np.ndarray:
        """Activation of the layer feeding the softmax."""
        x, single = self._as_batch(features)
        e = self._forward(x)[0][-1]
        return e[0] if single else e

    def loss_and_grads(self, x, y):
        """Mean cross-entropy over the batch and its gradient for every parameter."""
        acts, logits = self._forward(x)
        n = x.shape[0]
        logp = log_softmax(logits)
        loss = -logp[np.arange(n), y].mean()
        delta = np.exp(logp)
        delta[np.arange(n), y] -= 1.0
        delta /= n
        grads = {}
        for k in range(self.n_layers - 1, -1, -1):
            grads[f"W{k}"] = acts[k].T @ delta
            grads[f"b{k}"] = delta.sum(axis=0)
            if k:
                delta = (delta @ self.params[f"W{k}"].T) * (1.0 - acts[k] ** 2)
        return float(loss), grads

    def loss(self, x, y) -> float:
        logp = log_softmax(self._forward(np.atleast_2d(x))[1])
        return float(-logp[np.arange(len(y)), y].mean())

    def accuracy(self, x, y) -> float:
        if len(y) == 0:
            return float("nan")
        return float((self.logits(x).argmax(axis=1) == y).mean())

    # -- checkpoints ---------------------------------------------------------

    def to_json(self):
        return {
            "kind": "geoclassifier",
            "format": CHECKPOINT_FORMAT,
            "config": dataclasses.asdict(self.config),
            "partition_tag": self.partition_tag,
            "feature_mean": None if self.feature_mean is None else self.feature_mean.tolist(),
            "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in self.params.items()},
        }

    @classmethod
    def from_json(cls, obj, partition=None) -> "GeoClassifier":
        if obj.get("kind") != "geoclassifier" or obj.get("format") != CHECKPOINT_FORMAT:
            raise VersionMismatch("not a geoclassifier checkpoint of a supported format")
        if partition is not None and obj["partition_tag"] != partition.tag:
            raise VersionMismatch(
                f"checkpoint built for partition {obj['partition_tag']}, got {partition.tag}"
            )
        cfg = obj["config"]
        config = ModelConfig(cfg["input_dim"], cfg["n_classes"], tuple(cfg["hidden_dims"]), cfg["seed"])
        params = {k: np.array(v["data"], dtype=float).reshape(v["shape"]) for k, v in obj["params"].items()}
        mean = obj.get("feature_mean")
        return cls(config, params, obj["partition_tag"], None if mean is None else np.array(mean, dtype=float))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json()) + "\n")

    @classmethod
    def load(cls, path, partition=None) -> "GeoClassifier":
        return cls.from_json(json.loads(Path(path).read_text()), partition)


# ---------------------------------------------------------------------------
# training


def _check_labels(y, n_classes, what):
    if len(y) and (y.min() < 0 or y.max() >= n_classes):
        raise LabelError(f"{what} labels must lie in [0, {n_classes}); unlabeled records need filter_covered")


def fit(model: GeoClassifier, x, y, x_val=None, y_val=None, tcfg: TrainConfig | None = None):
    """Mini-batch AdaGrad on arrays; returns the per-epoch log.

    Epoch 0 in the log is the untrained model. With a validation set, the
    best-validation parameters are kept and training stops early once
    accuracy has not improved by ``min_delta`` for ``patience`` epochs.
    """
    tcfg = tcfg or TrainConfig()
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or x.shape[1] != model.config.input_dim:
        raise DimensionError(f"training features have shape {x.shape}, expected (n, {model.config.input_dim})")
    _check_labels(y, model.config.n_classes, "training")
    has_val = x_val is not None and len(x_val) > 0
    if has_val:
        x_val = np.asarray(x_val, dtype=float)
        y_val = np.asarray(y_val, dtype=np.int64)
        if x_val.shape[1] != model.config.input_dim:
            raise DimensionError("validation feature dim does not match the model")
        _check_labels(y_val, model.config.n_classes, "validation")
    if len(x):
        model.feature_mean = x.mean(axis=0)

    rng = np.random.default_rng(tcfg.seed)
    opt = AdaGrad(tcfg.lr, tcfg.eps)

    def record(epoch):
        entry = {"epoch": epoch, "train_loss": model.loss(x, y) if len(x) else float("nan")}
        if has_val:
            entry["val_acc"] = model.accuracy(x_val, y_val)
        return entry

    history = [record(0)]
    best_acc = history[0].get("val_acc", -1.0)
    best_params = {k: v.copy() for k, v in model.params.items()}
    stale = 0
    for epoch in range(1, tcfg.epochs + 1):
        order = rng.permutation(len(x))
        for start in range(0, len(x), tcfg.batch_size):
            idx = order[start : start + tcfg.batch_size]
            loss, grads = model.loss_and_grads(x[idx], y[idx])
            if not math.isfinite(loss):
                raise NumericError(f"non-finite loss in epoch {epoch}")
            opt.step(model.params, grads)
        entry = record(epoch)
        history.append(entry)
        log.debug("epoch %d %s", epoch, entry)
        if not has_val:
            continue
        if entry["val_acc"] > best_acc + tcfg.min_delta:
            best_acc = entry["val_acc"]
            best_params = {k: v.copy() for k, v in model.params.items()}
            stale = 0
        else:
            stale += 1
            if stale >= tcfg.patience:
                break
    if has_val:
        model.params = best_params
    return history


def train(train_set, val_set, partition, mcfg: ModelConfig, tcfg: TrainConfig | None = None):
    """Train on labeled records (see :func:`geocells.partition.filter_covered`)."""
    if mcfg.n_classes != len(partition):
        raise ConfigError(f"n_classes={mcfg.n_classes} but the partition has {len(partition)} cells")
    train_set, val_set = list(train_set), list(val_set or [])
    for r in train_set + val_set:
        if r.label is None:
            raise LabelError(f"record {r.id} has no label")
    model = GeoClassifier.initialize(mcfg, partition.tag)
    history = fit(
        model,
        feature_matrix(train_set).reshape(len(train_set), -1) if train_set else np.zeros((0, mcfg.input_dim)),
        labels_of(train_set),
        feature_matrix(val_set) if val_set else None,
        labels_of(val_set) if val_set else None,
        tcfg,
    )
    return model, history


# ---------------------------------------------------------------------------
# inspection


def top_k(dist, k: int) -> list[tuple[int, float]]:
    """``k`` most probable classes, descending; equal probabilities by class index."""
    p = np.asarray(dist, dtype=float)
    if not (1 <= k <= p.size):
        raise ConfigError(f"k={k} outside [1, {p.size}]")
    order = np.argsort(-p, kind="stable")[:k]
    return [(int(c), float(p[c])) for c in order]


def occlusion_map(model: GeoClassifier, features, true_class: int, window, stride,
                  grid_shape, fill=None) -> np.ndarray:
    """True-class probability as a square window slides over the feature grid.

    ``features`` are reshaped to ``grid_shape = (H, W, C)``. Inside the window
    each value is replaced by ``fill``, which defaults to the per-channel mean
    of the training features; any array broadcastable to the grid works.
    """
    h, w, c = grid_shape
    x = np.asarray(features, dtype=float)
    if x.size != h * w * c or x.size != model.config.input_dim:
        raise DimensionError(f"{x.size} features do not fit grid {grid_shape} / model")
    win_h, win_w = (window, window) if np.isscalar(window) else window
    step_h, step_w = (stride, stride) if np.isscalar(stride) else stride
    if not (0 < win_h <= h and 0 < win_w <= w) or step_h <= 0 or step_w <= 0:
        raise DimensionError(f"window {window} / stride {stride} invalid for grid {grid_shape}")
    grid = x.reshape(h, w, c)
    if fill is None:
        if model.feature_mean is None:
            raise ConfigError("model has no training mean; pass fill explicitly")
        fill = model.feature_mean.reshape(h, w, c).mean(axis=(0, 1))
    fill_grid = np.broadcast_to(np.asarray(fill, dtype=float), grid.shape)

    rows = (h - win_h) // step_h + 1
    cols = (w - win_w) // step_w + 1
    batch = np.empty((rows * cols, h * w * c))
    for r in range(rows):
        for q in range(cols):
            occluded = grid.copy()
            sl = (slice(r * step_h, r * step_h + win_h), slice(q * step_w, q * step_w + win_w))
            occluded[sl] = fill_grid[sl]
            batch[r * cols + q] = occluded.ravel()
    return model.predict(batch)[:, true_class].reshape(rows, cols)
