"""Mini-batch training with BCE, Adam and early stopping on validation loss."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import InsufficientData, SingleClassDataset
from .nn import Adam, Network, bce_loss

EVAL_BATCH = 256


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    train_acc: float
    val_acc: float


class EarlyStopping:
    """Tracks the best validation loss and keeps a copy of that epoch's weights."""

    def __init__(self, patience: int):
        if patience < 1:
            raise ValueError("patience must be at least 1")
        self.patience = patience
        self.best_loss = np.inf
        self.best_epoch = 0
        self.best_state = None
        self.wait = 0

    def update(self, epoch: int, val_loss: float, net: Network) -> bool:
        """Record an epoch; returns True when training should stop."""
        if val_loss < self.best_loss:
            self.best_loss = val_loss
            self.best_epoch = epoch
            self.best_state = net.state_dict()
            self.wait = 0
            return False
        self.wait += 1
        return self.wait >= self.patience


def split_indices(n: int, val_split: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Shuffle ``0..n-1`` and carve the validation set from the tail."""
    if not 0 < val_split < 1:
        raise ValueError(f"val_split must lie in (0, 1), got {val_split}")
    order = rng.permutation(n)
    n_val = max(1, int(round(n * val_split)))
    return order[: n - n_val], order[n - n_val:]


def balanced_order(labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Positions into ``labels`` with the minority class resampled up to 1:1, shuffled."""
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    small, big = (pos, neg) if len(pos) < len(neg) else (neg, pos)
    extra = rng.choice(small, size=len(big) - len(small), replace=True) if len(small) else small
    return rng.permutation(np.concatenate([big, small, extra]))


def batches(order: np.ndarray, batch_size: int) -> list[np.ndarray]:
    """Consecutive slices; a trailing singleton joins the previous batch so batch norm sees >= 2."""
    out = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if len(out) > 1 and len(out[-1]) == 1:
        last = out.pop()
        out[-1] = np.concatenate([out[-1], last])
    return out


def predict(net: Network, inputs: Sequence[np.ndarray], batch_size: int = EVAL_BATCH) -> np.ndarray:
    """Eval-mode probabilities, computed in fixed-size chunks."""
    n = len(inputs[0])
    out = np.empty(n, dtype=np.float64)
    for s in range(0, n, batch_size):
        out[s:s + batch_size] = net.forward(tuple(x[s:s + batch_size] for x in inputs), train=False)
    return out


def accuracy(y: np.ndarray, p: np.ndarray, threshold: float = 0.5) -> float:
    return float(np.mean((p >= threshold).astype(int) == y))


def fit(
    net: Network,
    inputs: Sequence[np.ndarray],
    y: np.ndarray,
    *,
    lr: float,
    batch_size: int,
    max_epochs: int,
    patience: int,
    val_split: float,
    seed: int,
    oversample: bool = False,
    threshold: float = 0.5,
) -> tuple[list[EpochRecord], int]:
    """Train ``net`` in place and restore the weights of the best validation epoch.

    Returns the per-epoch history and the (1-based) best epoch.
    """
    y = np.asarray(y)
    n = len(y)
    if n < 10 * batch_size:
        raise InsufficientData(f"{n} examples; training needs at least 10 x batch_size = {10 * batch_size}")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    split_rng, shuffle_rng, noise_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))
    tr, va = split_indices(n, val_split, split_rng)
    if oversample and len(np.unique(y[tr])) < 2:
        raise SingleClassDataset("training split holds a single label class")
    x_val = tuple(x[va] for x in inputs)
    yf = y.astype(np.float32)
    opt = Adam(net.params, lr=lr, skip=net.frozen)
    stopper = EarlyStopping(patience)
    history: list[EpochRecord] = []
    for epoch in range(1, max_epochs + 1):
        order = tr[balanced_order(y[tr], shuffle_rng)] if oversample else tr[shuffle_rng.permutation(len(tr))]
        loss_sum = 0.0
        correct = 0
        for idx in batches(order, batch_size):
            p = net.forward(tuple(x[idx] for x in inputs), train=True, rng=noise_rng)
            loss, grad = bce_loss(yf[idx], p.astype(np.float32))
            opt.step(net.params, net.backward(grad))
            loss_sum += loss * len(idx)
            correct += int(np.sum((p >= threshold) == (y[idx] == 1)))
        pv = predict(net, x_val)
        val_loss, _ = bce_loss(yf[va], pv)
        history.append(EpochRecord(epoch, loss_sum / len(order), val_loss, correct / len(order), accuracy(y[va], pv, threshold)))
        if stopper.update(epoch, val_loss, net):
            break
    net.load_state(stopper.best_state)
    return history, stopper.best_epoch


def write_history_csv(path, history: Sequence[EpochRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "val_loss", "train_acc", "val_acc"], lineterminator="\n")
        w.writeheader()
        for rec in history:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in asdict(rec).items()})
