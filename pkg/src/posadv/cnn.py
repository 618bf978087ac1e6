"""The victim sentiment classifier.

Embedding -> same-padded conv1d + ReLU -> batch norm -> dropout -> global
max-pool -> dense sigmoid, trained with BCE and Adam under early stopping.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nn
from .errors import DimensionMismatch, EmptyTestSet, LengthMismatch, UntrainedModel
from .text import PAD_ID, PLACEHOLDER_ID, EmbeddingTable, Vocabulary, encode_batch
from .training import EpochRecord, fit, predict, write_history_csv


@dataclass(frozen=True)
class ModelConfig:
    max_len: int = 400
    embedding_dim: int = 100
    filters: int = 100
    kernel_size: int = 5
    dropout_rate: float = 0.5
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 20
    patience: int = 3
    threshold: float = 0.5
    seed: int = 0
    trainable_embeddings: bool = True

    def __post_init__(self):
        for name in ("max_len", "embedding_dim", "filters", "kernel_size", "lr", "batch_size", "max_epochs", "patience"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie in (0, 1)")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


class SentimentCNN(nn.Network):
    def __init__(self, embedding: np.ndarray, config: ModelConfig):
        rng = np.random.default_rng(config.seed)
        k, d, f = config.kernel_size, embedding.shape[1], config.filters
        super().__init__(
            params={
                "embedding": embedding.astype(np.float32, copy=True),
                "conv_w": glorot(rng, (k, d, f), k * d, k * f),
                "conv_b": np.zeros(f, np.float32),
                "bn_gamma": np.ones(f, np.float32),
                "bn_beta": np.zeros(f, np.float32),
                "dense_w": glorot(rng, (f, 1), f, 1),
                "dense_b": np.zeros(1, np.float32),
            },
            frozen=set() if config.trainable_embeddings else {"embedding"},
        )
        self.bn = nn.BatchNormState.fresh(f)
        self.dropout_rate = config.dropout_rate
        self._cache = None

    def buffers(self):
        return {"bn_mean": self.bn.running_mean, "bn_var": self.bn.running_var}

    def forward(self, inputs, train: bool = False, rng=None) -> np.ndarray:
        (ids,) = inputs
        p = self.params
        mode = "train" if train else "eval"
        e = p["embedding"][ids]
        h, c_conv = nn.conv1d_forward(e, p["conv_w"], p["conv_b"])
        h, c_bn = nn.batch_norm(h, p["bn_gamma"], p["bn_beta"], self.bn, mode)
        h, mask = nn.dropout(h, self.dropout_rate, mode, rng)
        pooled, arg = nn.global_max_pool(h)
        out, c_dense = nn.dense_sigmoid(pooled, p["dense_w"], p["dense_b"])
        self._cache = (ids, c_conv, c_bn, mask, arg, h.shape[1], c_dense) if train else None
        return out

    def backward(self, grad_p: np.ndarray) -> dict[str, np.ndarray]:
        if self._cache is None:
            raise RuntimeError("backward needs a preceding train-mode forward")
        ids, c_conv, c_bn, mask, arg, length, c_dense = self._cache
        g, g_dense = nn.dense_sigmoid_backward(grad_p, c_dense)
        g = nn.global_max_pool_backward(g, arg, length)
        g = nn.dropout_backward(g, mask)
        g, g_bn = nn.batch_norm_backward(g, c_bn)
        g, g_conv = nn.conv1d_backward(g, c_conv)
        grads = {
            "conv_w": g_conv["weight"], "conv_b": g_conv["bias"],
            "bn_gamma": g_bn["gamma"], "bn_beta": g_bn["beta"],
            "dense_w": g_dense["weight"], "dense_b": g_dense["bias"],
        }
        if "embedding" not in self.frozen:
            g_emb = np.zeros_like(self.params["embedding"])
            np.add.at(g_emb, ids.ravel(), g.reshape(-1, g.shape[-1]))
            g_emb[[PAD_ID, PLACEHOLDER_ID]] = 0
            grads["embedding"] = g_emb
        return grads


@dataclass
class SentimentModel:
    vocab: Vocabulary
    config: ModelConfig
    net: SentimentCNN
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    trained: bool = False

    def encode(self, docs: Sequence[Sequence[str]]) -> np.ndarray:
        return encode_batch(docs, self.vocab, self.config.max_len)


def build_model(config: ModelConfig, vocab: Vocabulary, embeddings: EmbeddingTable) -> SentimentModel:
    if embeddings.dim != config.embedding_dim:
        raise DimensionMismatch(f"embedding table has dim {embeddings.dim}, config expects {config.embedding_dim}")
    if embeddings.matrix.shape[0] != vocab.size:
        raise DimensionMismatch(f"embedding table has {embeddings.matrix.shape[0]} rows for a vocabulary of {vocab.size}")
    return SentimentModel(vocab, config, SentimentCNN(embeddings.matrix, config))


def _as_ids(model: SentimentModel, reviews) -> np.ndarray:
    if isinstance(reviews, np.ndarray) and reviews.dtype.kind in "iu":
        if reviews.ndim != 2 or reviews.shape[1] != model.config.max_len:
            raise LengthMismatch(f"id matrix shape {reviews.shape} does not match max_len {model.config.max_len}")
        return reviews
    return model.encode(reviews)


def train(model: SentimentModel, docs: Sequence[Sequence[str]], labels: Sequence[int], val_split: float = 0.1) -> SentimentModel:
    """Fit on token lists with 0/1 labels; the tail of a seeded shuffle is held out for validation."""
    if len(docs) != len(labels):
        raise LengthMismatch(f"{len(docs)} reviews but {len(labels)} labels")
    c = model.config
    history, best = fit(
        model.net, (_as_ids(model, docs),), np.asarray(labels, dtype=np.int64),
        lr=c.lr, batch_size=c.batch_size, max_epochs=c.max_epochs, patience=c.patience,
        val_split=val_split, seed=c.seed, threshold=c.threshold,
    )
    model.history, model.best_epoch, model.trained = history, best, True
    return model


def predict_proba(model: SentimentModel, reviews) -> np.ndarray:
    """Positive-class probabilities for token lists or an id matrix, in input order."""
    if not model.trained:
        raise UntrainedModel("predict_proba called before training or loading weights")
    ids = _as_ids(model, reviews)
    if len(ids) == 0:
        return np.empty(0)
    return predict(model.net, (ids,))


def classify(proba, threshold: float = 0.5):
    """Probability to class; a probability exactly at the threshold maps to 1."""
    return (np.asarray(proba) >= threshold).astype(np.int64)


@dataclass
class Evaluation:
    accuracy: float
    tp: int
    tn: int
    fp: int
    fn: int
    proba: np.ndarray
    predictions: np.ndarray


def evaluate(model: SentimentModel, docs: Sequence[Sequence[str]], labels: Sequence[int]) -> Evaluation:
    if len(docs) == 0:
        raise EmptyTestSet("evaluate needs at least one review")
    y = np.asarray(labels)
    proba = predict_proba(model, docs)
    pred = classify(proba, model.config.threshold)
    return Evaluation(
        accuracy=float(np.mean(pred == y)),
        tp=int(np.sum((pred == 1) & (y == 1))),
        tn=int(np.sum((pred == 0) & (y == 0))),
        fp=int(np.sum((pred == 1) & (y == 0))),
        fn=int(np.sum((pred == 0) & (y == 1))),
        proba=proba,
        predictions=pred,
    )


class BlackBoxVictim:
    """Query-only view of a trained classifier: token lists in, probabilities out.

    Attack code receives this object, never the model, and every query is
    counted.
    """

    def __init__(self, model: SentimentModel):
        if not model.trained:
            raise UntrainedModel("the victim must be trained before it can be attacked")
        self._model = model
        self.threshold = model.config.threshold
        self.queries = 0

    def predict_proba(self, docs: Sequence[Sequence[str]]) -> np.ndarray:
        self.queries += len(docs)
        return predict_proba(self._model, docs)

    def predict(self, docs: Sequence[Sequence[str]]) -> np.ndarray:
        return classify(self.predict_proba(docs), self.threshold)


# -- persistence -------------------------------------------------------------

def save_model(model: SentimentModel, directory) -> None:
    """``model.ckpt`` (weights + config), ``vocab.txt`` and ``history.csv``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {"kind": "sentiment_cnn", "config": asdict(model.config), "best_epoch": model.best_epoch, "trained": model.trained}
    nn.save_checkpoint(d / "model.ckpt", model.net.state_dict(), meta)
    model.vocab.save(d / "vocab.txt")
    write_history_csv(d / "history.csv", model.history)


def load_model(directory) -> SentimentModel:
    d = Path(directory)
    header, tensors = nn.load_checkpoint(d / "model.ckpt")
    meta = header["meta"]
    config = ModelConfig(**meta["config"])
    vocab = Vocabulary.load(d / "vocab.txt")
    model = build_model(config, vocab, EmbeddingTable(config.embedding_dim, tensors["embedding"]))
    model.net.load_state(tensors)
    model.best_epoch = meta["best_epoch"]
    model.trained = meta["trained"]
    return model


def with_overrides(config: ModelConfig, **kw) -> ModelConfig:
    return replace(config, **{k: v for k, v in kw.items() if v is not None})


def config_json(config: ModelConfig) -> str:
    return json.dumps(asdict(config), sort_keys=True)
