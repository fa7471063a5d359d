"""Album geolocation with LSTMs over frozen single-image embeddings.

Variants differ only in how an album of ``T`` photos is turned into an input
sequence and which steps' outputs are scored:

``basic``          inputs ``x_0..x_{T-1}``; step ``t`` predicts photo ``t``.
``offset`` (k)     inputs followed by ``k`` blank (zero) steps; step ``t + k``
                   predicts photo ``t``, so the first ``k`` outputs are unused.
``repeated``       the album fed twice; only the second pass is scored.
``bidirectional``  a forward and a backward LSTM; their states at step ``t``
                   are concatenated before the softmax.

The LSTM cell has input, forget and output gates and a tanh candidate, no
peepholes. Gate blocks in the fused weight matrix are ordered ``i, f, o, g``.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from geocells.classifier import GeoClassifier, TrainConfig, init_dense, log_softmax, softmax
from geocells.data import Album, feature_matrix
from geocells.errors import (
    ConfigError,
    DimensionError,
    LabelError,
    NumericError,
    SequenceLengthError,
    VersionMismatch,
)
from geocells.optim import AdaGrad

log = logging.getLogger(__name__)

BASIC = "basic"
OFFSET = "offset"
REPEATED = "repeated"
BIDIRECTIONAL = "bidirectional"
VARIANTS = (BASIC, OFFSET, REPEATED, BIDIRECTIONAL)

CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class SequenceModelConfig:
    variant: str = BASIC
    offset: int = 0
    max_length: int | None = None
    hidden: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if (self.variant == OFFSET) != (self.offset >= 1):
            raise ConfigError("offset >= 1 is required for, and only allowed with, the offset variant")
        if self.max_length is not None and self.max_length < 2:
            raise ConfigError("max_length must be at least 2")
        if self.hidden <= 0:
            raise ConfigError("hidden size must be positive")

    @property
    def min_length(self) -> int:
        return self.offset + 1

    @property
    def name(self) -> str:
        base = {BASIC: "basic", OFFSET: f"offset{self.offset}", REPEATED: "repeated", BIDIRECTIONAL: "blstm"}
        suffix = f"{self.max_length}" if self.max_length else ""
        return base[self.variant] + suffix

    @classmethod
    def from_name(cls, name: str, **kw) -> "SequenceModelConfig":
        """Parse CLI names: ``basic``, ``offset1``, ``offset2``, ``repeated``, ``blstm``."""
        if name == "blstm":
            kw.setdefault("max_length", 25)
            return cls(BIDIRECTIONAL, **kw)
        if name in ("basic", "repeated"):
            return cls(name, **kw)
        if name.startswith("offset") and name[6:].isdigit():
            return cls(OFFSET, offset=int(name[6:]), **kw)
        raise ConfigError(f"unknown sequence variant {name!r}")


# ---------------------------------------------------------------------------
# LSTM cell


@dataclass
class LstmParams:
    W: np.ndarray  # (input + hidden, 4 * hidden)
    b: np.ndarray  # (4 * hidden,)

    @property
    def hidden(self) -> int:
        return self.b.shape[0] // 4

    @property
    def input_dim(self) -> int:
        return self.W.shape[0] - self.hidden

    @classmethod
    def initialize(cls, rng, input_dim, hidden, forget_bias=1.0):
        W, b = init_dense(rng, input_dim + hidden, 4 * hidden)
        b[hidden : 2 * hidden] = forget_bias
        return cls(W, b)


def _sigmoid(z):
    # split form avoids overflow in exp for large |z|
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def lstm_step(params: LstmParams, x, state):
    """One cell update. Returns ``(h', (h', c'))``; works on vectors or batches."""
    h, c = state
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.input_dim or np.shape(h)[-1] != params.hidden:
        raise DimensionError("input or state size does not match the LSTM")
    n = params.hidden
    z = np.concatenate([x, h], axis=-1) @ params.W + params.b
    i, f, o = _sigmoid(z[..., :n]), _sigmoid(z[..., n : 2 * n]), _sigmoid(z[..., 2 * n : 3 * n])
    g = np.tanh(z[..., 3 * n :])
    c_new = f * c + i * g
    h_new = o * np.tanh(c_new)
    return h_new, (h_new, c_new)


def lstm_forward(params: LstmParams, xs):
    """Run over ``xs`` of shape ``(T, B, E)`` from a zero state."""
    T, B, _ = xs.shape
    n = params.hidden
    h = np.zeros((B, n))
    c = np.zeros((B, n))
    hs = np.empty((T, B, n))
    cache = []
    for t in range(T):
        xh = np.concatenate([xs[t], h], axis=1)
        z = xh @ params.W + params.b
        i, f, o = _sigmoid(z[:, :n]), _sigmoid(z[:, n : 2 * n]), _sigmoid(z[:, 2 * n : 3 * n])
        g = np.tanh(z[:, 3 * n :])
        c_prev = c
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        hs[t] = h
        cache.append((xh, i, f, o, g, c_prev, tc))
    return hs, cache


def lstm_backward(params: LstmParams, cache, dhs):
    """Backprop ``dL/dh_t`` for every step; returns ``(dW, db, dxs)``."""
    n = params.hidden
    e = params.input_dim
    dW = np.zeros_like(params.W)
    db = np.zeros_like(params.b)
    dxs = np.empty(dhs.shape[:2] + (e,))
    dh_next = np.zeros(dhs.shape[1:])
    dc_next = np.zeros(dhs.shape[1:])
    for t in range(len(cache) - 1, -1, -1):
        xh, i, f, o, g, c_prev, tc = cache[t]
        dh = dhs[t] + dh_next
        do = dh * tc
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dz = np.concatenate(
            [dc * g * i * (1.0 - i), dc * c_prev * f * (1.0 - f), do * o * (1.0 - o), dc * i * (1.0 - g * g)],
            axis=1,
        )
        dW += xh.T @ dz
        db += dz.sum(axis=0)
        dxh = dz @ params.W.T
        dxs[t] = dxh[:, :e]
        dh_next = dxh[:, e:]
        dc_next = dc * f
    return dW, db, dxs


# ---------------------------------------------------------------------------
# sequence model


@dataclass
class SequenceModel:
    config: SequenceModelConfig
    params: dict[str, np.ndarray]
    n_classes: int
    embedder: GeoClassifier
    partition_tag: str = ""

    @classmethod
    def initialize(cls, config: SequenceModelConfig, embedder: GeoClassifier, n_classes: int,
                   partition_tag: str = "") -> "SequenceModel":
        rng = np.random.default_rng(config.seed)
        e = embedder.config.embedding_dim
        fwd = LstmParams.initialize(rng, e, config.hidden)
        params = {"Wf": fwd.W, "bf": fwd.b}
        out_in = config.hidden
        if config.variant == BIDIRECTIONAL:
            bwd = LstmParams.initialize(rng, e, config.hidden)
            params.update(Wb=bwd.W, bb=bwd.b)
            out_in = 2 * config.hidden
        params["Wout"], params["bout"] = init_dense(rng, out_in, n_classes)
        return cls(config, params, n_classes, embedder, partition_tag)

    def _lstm(self, which):
        return LstmParams(self.params["W" + which], self.params["b" + which])

    def _forward(self, emb):
        """``emb`` is ``(T, B, E)``; returns per-photo logits ``(T, B, C)`` and a cache."""
        cfg = self.config
        T = emb.shape[0]
        if cfg.variant == BIDIRECTIONAL:
            hf, cache_f = lstm_forward(self._lstm("f"), emb)
            hb, cache_b = lstm_forward(self._lstm("b"), emb[::-1])
            hs = np.concatenate([hf, hb[::-1]], axis=2)
            cache = (cache_f, cache_b, None, None)
        else:
            if cfg.variant == OFFSET:
                inp = np.concatenate([emb, np.zeros((cfg.offset,) + emb.shape[1:])])
                steps = np.arange(cfg.offset, T + cfg.offset)
            elif cfg.variant == REPEATED:
                inp = np.concatenate([emb, emb])
                steps = np.arange(T, 2 * T)
            else:
                inp = emb
                steps = np.arange(T)
            h_all, cache_f = lstm_forward(self._lstm("f"), inp)
            hs = h_all[steps]
            cache = (cache_f, None, steps, len(inp))
        logits = hs @ self.params["Wout"] + self.params["bout"]
        return logits, (hs, cache)

    def loss_and_grads(self, emb, y):
        """Mean cross-entropy over every scored step of a ``(T, B)`` label batch."""
        logits, (hs, (cache_f, cache_b, steps, n_in)) = self._forward(emb)
        T, B, C = logits.shape
        logp = log_softmax(logits).reshape(T * B, C)
        flat_y = y.reshape(T * B)
        loss = -logp[np.arange(T * B), flat_y].mean()
        dlogits = np.exp(logp)
        dlogits[np.arange(T * B), flat_y] -= 1.0
        dlogits = (dlogits / (T * B)).reshape(T, B, C)

        grads = {
            "Wout": np.einsum("tbh,tbc->hc", hs, dlogits),
            "bout": dlogits.sum(axis=(0, 1)),
        }
        dhs = dlogits @ self.params["Wout"].T
        n = self.config.hidden
        if self.config.variant == BIDIRECTIONAL:
            grads["Wf"], grads["bf"], _ = lstm_backward(self._lstm("f"), cache_f, dhs[:, :, :n])
            grads["Wb"], grads["bb"], _ = lstm_backward(self._lstm("b"), cache_b, dhs[::-1, :, n:])
        else:
            dh_all = np.zeros((n_in, B, n))
            dh_all[steps] = dhs
            grads["Wf"], grads["bf"], _ = lstm_backward(self._lstm("f"), cache_f, dh_all)
        return float(loss), grads

    def _chunks(self, n):
        size = self.config.max_length or n
        return [(s, min(s + size, n)) for s in range(0, n, size)]

    def predict_embeddings(self, emb) -> np.ndarray:
        """Distributions ``(T, C)`` for one album's ``(T, E)`` embeddings."""
        out = np.empty((len(emb), self.n_classes))
        for s, e in self._chunks(len(emb)):
            if e - s < self.config.min_length:
                raise SequenceLengthError(
                    f"{self.config.name} needs sequences longer than {self.config.min_length - 1}"
                )
            logits, _ = self._forward(emb[s:e, None, :])
            out[s:e] = softmax(logits[:, 0, :])
        return out

    # -- checkpoints ---------------------------------------------------------

    def to_json(self):
        return {
            "kind": "sequence",
            "format": CHECKPOINT_FORMAT,
            "variant": self.config.name,
            "config": dataclasses.asdict(self.config),
            "n_classes": self.n_classes,
            "partition_tag": self.partition_tag,
            "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in self.params.items()},
            "embedder": self.embedder.to_json(),
        }

    @classmethod
    def from_json(cls, obj, partition=None) -> "SequenceModel":
        if obj.get("kind") != "sequence" or obj.get("format") != CHECKPOINT_FORMAT:
            raise VersionMismatch("not a sequence checkpoint of a supported format")
        if partition is not None and obj["partition_tag"] != partition.tag:
            raise VersionMismatch(
                f"checkpoint built for partition {obj['partition_tag']}, got {partition.tag}"
            )
        config = SequenceModelConfig(**obj["config"])
        params = {k: np.array(v["data"], dtype=float).reshape(v["shape"]) for k, v in obj["params"].items()}
        embedder = GeoClassifier.from_json(obj["embedder"], partition)
        return cls(config, params, obj["n_classes"], embedder, obj["partition_tag"])

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json()) + "\n")

    @classmethod
    def load(cls, path, partition=None) -> "SequenceModel":
        return cls.from_json(json.loads(Path(path).read_text()), partition)


# ---------------------------------------------------------------------------
# training and inference


def _album_arrays(album: Album, embedder: GeoClassifier):
    labels = [p.label for p in album.photos]
    if any(lab is None for lab in labels):
        raise LabelError(f"album {album.album_id} has unlabeled photos")
    return embedder.embed(feature_matrix(album.photos)), np.array(labels, dtype=np.int64)


def _batches(sequences, batch_size, rng):
    buckets = defaultdict(list)
    for emb, y in sequences:
        buckets[len(y)].append((emb, y))
    batches = []
    for length in sorted(buckets):
        items = buckets[length]
        order = rng.permutation(len(items))
        for s in range(0, len(items), batch_size):
            chosen = [items[k] for k in order[s : s + batch_size]]
            # (T, B, E) and (T, B)
            batches.append((np.stack([c[0] for c in chosen], axis=1), np.stack([c[1] for c in chosen], axis=1)))
    return [batches[k] for k in rng.permutation(len(batches))]


def train_sequence(albums, frozen_model: GeoClassifier, partition, cfg: SequenceModelConfig,
                   tcfg: TrainConfig | None = None, val_albums=None):
    """Train LSTM and softmax weights; the embedding model is never modified.

    Albums longer than ``cfg.max_length`` are cut into consecutive chunks
    trained as independent sequences. Chunks shorter than the variant needs
    are skipped and counted. Returns ``(model, info)`` with ``info`` holding
    ``skipped`` and the per-epoch ``history``.
    """
    tcfg = tcfg or TrainConfig()
    model = SequenceModel.initialize(cfg, frozen_model, len(partition), partition.tag)
    sequences = []
    skipped = 0
    for album in albums:
        emb, y = _album_arrays(album, frozen_model)
        if len(y) and (y.min() < 0 or y.max() >= len(partition)):
            raise LabelError(f"album {album.album_id} has labels outside the partition")
        for s, e in model._chunks(len(y)):
            if e - s < cfg.min_length:
                skipped += 1
            else:
                sequences.append((emb[s:e], y[s:e]))
    if skipped:
        log.warning("%s: skipped %d sequences shorter than %d", cfg.name, skipped, cfg.min_length)

    val = [(*_album_arrays(a, frozen_model), a) for a in (val_albums or [])]
    val = [(emb, y) for emb, y, _ in val if all(e - s >= cfg.min_length for s, e in model._chunks(len(y)))]

    def val_accuracy():
        hits = sum(int((model.predict_embeddings(emb).argmax(axis=1) == y).sum()) for emb, y in val)
        return hits / max(1, sum(len(y) for _, y in val))

    rng = np.random.default_rng(tcfg.seed)
    opt = AdaGrad(tcfg.lr, tcfg.eps)
    history = []
    best_acc = val_accuracy() if val else -1.0
    best_params = {k: v.copy() for k, v in model.params.items()}
    stale = 0
    for epoch in range(1, tcfg.epochs + 1):
        total, count = 0.0, 0
        for emb, y in _batches(sequences, tcfg.batch_size, rng):
            loss, grads = model.loss_and_grads(emb, y)
            if not math.isfinite(loss):
                raise NumericError(f"non-finite sequence loss in epoch {epoch}")
            opt.step(model.params, grads)
            total += loss * y.size
            count += y.size
        entry = {"epoch": epoch, "train_loss": total / count if count else float("nan")}
        if val:
            entry["val_acc"] = val_accuracy()
            if entry["val_acc"] > best_acc + tcfg.min_delta:
                best_acc, stale = entry["val_acc"], 0
                best_params = {k: v.copy() for k, v in model.params.items()}
            else:
                stale += 1
        history.append(entry)
        log.debug("%s epoch %d %s", cfg.name, epoch, entry)
        if val and stale >= tcfg.patience:
            break
    if val:
        model.params = best_params
    return model, {"skipped": skipped, "history": history}


def predict_sequence(model: SequenceModel, album: Album) -> list[np.ndarray]:
    """One distribution per photo, in the album's (chronological) order."""
    if not len(album):
        raise SequenceLengthError("empty album")
    emb = model.embedder.embed(feature_matrix(album.photos))
    return list(model.predict_embeddings(emb))


def average_baseline(single_model: GeoClassifier, album: Album) -> list[np.ndarray]:
    """Every photo gets the mean of the album's single-image distributions."""
    if not len(album):
        raise SequenceLengthError("empty album")
    mean = single_model.predict(feature_matrix(album.photos)).mean(axis=0)
    return [mean.copy() for _ in album.photos]
