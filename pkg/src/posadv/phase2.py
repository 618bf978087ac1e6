"""Two-branch network that predicts whether a deletion set fools the victim.

Branch A encodes the original review and branch B the manipulated one
(embedding -> conv1d + ReLU -> global max-pool each, with separate conv
weights). The pooled features are concatenated and passed through a ReLU
dense layer and a sigmoid output.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nn
from .cnn import glorot
from .errors import DimensionMismatch, LengthMismatch, SingleClassDataset, UntrainedModel
from .phase1 import AdvDatasetRecord
from .text import EmbeddingTable, Vocabulary, encode_batch
from .training import EpochRecord, fit, predict

BRANCHES = ("a", "b")


@dataclass(frozen=True)
class AdvNetConfig:
    max_len: int = 400
    embedding_dim: int = 100
    filters: int = 100
    kernel_size: int = 5
    fusion_width: int = 64
    dropout_rate: float = 0.5
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 20
    patience: int = 3
    threshold: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")


class TwoBranchNet(nn.Network):
    def __init__(self, embedding: np.ndarray, config: AdvNetConfig):
        rng = np.random.default_rng(config.seed)
        k, d, f, h = config.kernel_size, embedding.shape[1], config.filters, config.fusion_width
        params = {"embedding": embedding.astype(np.float32, copy=True)}
        for b in BRANCHES:
            params[f"conv_{b}_w"] = glorot(rng, (k, d, f), k * d, k * f)
            params[f"conv_{b}_b"] = np.zeros(f, np.float32)
        params["fuse_w"] = glorot(rng, (2 * f, h), 2 * f, h)
        params["fuse_b"] = np.zeros(h, np.float32)
        params["out_w"] = glorot(rng, (h, 1), h, 1)
        params["out_b"] = np.zeros(1, np.float32)
        super().__init__(params=params, frozen={"embedding"})
        self.dropout_rate = config.dropout_rate
        self._cache = None

    @property
    def fusion_input_width(self) -> int:
        return self.params["fuse_w"].shape[0]

    def forward(self, inputs, train: bool = False, rng=None) -> np.ndarray:
        p = self.params
        mode = "train" if train else "eval"
        pooled, caches = [], []
        for b, ids in zip(BRANCHES, inputs):
            h, c_conv = nn.conv1d_forward(p["embedding"][ids], p[f"conv_{b}_w"], p[f"conv_{b}_b"])
            v, arg = nn.global_max_pool(h)
            pooled.append(v)
            caches.append((c_conv, arg, h.shape[1]))
        z = np.concatenate(pooled, axis=-1)
        z, mask = nn.dropout(z, self.dropout_rate, mode, rng)
        u, c_fuse = nn.dense_forward(z, p["fuse_w"], p["fuse_b"], relu=True)
        out, c_out = nn.dense_sigmoid(u, p["out_w"], p["out_b"])
        self._cache = (caches, mask, c_fuse, c_out) if train else None
        return out

    def backward(self, grad_p: np.ndarray) -> dict[str, np.ndarray]:
        caches, mask, c_fuse, c_out = self._cache
        g, g_out = nn.dense_sigmoid_backward(grad_p, c_out)
        g, g_fuse = nn.dense_backward(g, c_fuse)
        g = nn.dropout_backward(g, mask)
        f = self.params["conv_a_b"].shape[0]
        grads = {"fuse_w": g_fuse["weight"], "fuse_b": g_fuse["bias"], "out_w": g_out["weight"], "out_b": g_out["bias"]}
        for i, (b, (c_conv, arg, length)) in enumerate(zip(BRANCHES, caches)):
            gh = nn.global_max_pool_backward(g[..., i * f:(i + 1) * f], arg, length)
            _, gc = nn.conv1d_backward(gh, c_conv, input_grad=False)
            grads[f"conv_{b}_w"], grads[f"conv_{b}_b"] = gc["weight"], gc["bias"]
        return grads


@dataclass
class AdvNet:
    vocab: Vocabulary
    config: AdvNetConfig
    net: TwoBranchNet
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    trained: bool = False

    def encode(self, docs) -> np.ndarray:
        if isinstance(docs, np.ndarray) and docs.dtype.kind in "iu":
            return docs
        return encode_batch(docs, self.vocab, self.config.max_len)


def build_adv_net(config: AdvNetConfig, vocab: Vocabulary, embeddings: EmbeddingTable) -> AdvNet:
    if embeddings.dim != config.embedding_dim:
        raise DimensionMismatch(f"embedding table has dim {embeddings.dim}, config expects {config.embedding_dim}")
    return AdvNet(vocab, config, TwoBranchNet(embeddings.matrix, config))


def dedupe_records(records: Sequence[AdvDatasetRecord]) -> list[AdvDatasetRecord]:
    """Keep the first record of every distinct (original tokens, manipulated tokens) pair."""
    seen = set()
    out = []
    for r in records:
        key = (r.original.tokens, r.manipulated)
        if key not in seen:
            seen.add(key)
            out.append(r)
    return out


def train_adv_net(net: AdvNet, records: Sequence[AdvDatasetRecord], val_split: float = 0.2) -> AdvNet:
    """Fit on deduplicated records with the minority label oversampled to 1:1 every epoch."""
    records = dedupe_records(records)
    y = np.array([r.adv_label for r in records], dtype=np.int64)
    if len(np.unique(y)) < 2:
        raise SingleClassDataset(f"all {len(y)} adversarial labels equal {y[0] if len(y) else None}")
    c = net.config
    inputs = (net.encode([r.original.tokens for r in records]), net.encode([r.manipulated for r in records]))
    net.history, net.best_epoch = fit(
        net.net, inputs, y, lr=c.lr, batch_size=c.batch_size, max_epochs=c.max_epochs,
        patience=c.patience, val_split=val_split, seed=c.seed, oversample=True, threshold=c.threshold,
    )
    net.trained = True
    return net


def score(net: AdvNet, originals, manipulated) -> np.ndarray:
    """Predicted probability that each manipulated review fools the victim, in input order."""
    if not net.trained:
        raise UntrainedModel("score called on an untrained adversarial network")
    a, b = net.encode(originals), net.encode(manipulated)
    if len(a) != len(b):
        raise LengthMismatch(f"{len(a)} originals vs {len(b)} manipulated reviews")
    if len(a) == 0:
        return np.empty(0)
    return predict(net.net, (a, b))


def save_adv_net(net: AdvNet, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    groups = {k: ("shared" if k == "embedding" else f"branch_{k[5]}" if k.startswith("conv_") else "fusion") for k in net.net.params}
    meta = {"kind": "adv_net", "config": asdict(net.config), "best_epoch": net.best_epoch, "trained": net.trained}
    nn.save_checkpoint(d / "adv_net.ckpt", net.net.state_dict(), meta, groups)


def load_adv_net(directory, vocab: Vocabulary) -> AdvNet:
    header, tensors = nn.load_checkpoint(Path(directory) / "adv_net.ckpt")
    meta = header["meta"]
    config = AdvNetConfig(**meta["config"])
    net = build_adv_net(config, vocab, EmbeddingTable(config.embedding_dim, tensors["embedding"]))
    net.net.load_state(tensors)
    net.best_epoch, net.trained = meta["best_epoch"], meta["trained"]
    return net
