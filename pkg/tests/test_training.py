import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from posadv.errors import InsufficientData, SingleClassDataset
from posadv.nn import Network
from posadv.training import EarlyStopping, balanced_order, batches, fit, split_indices, write_history_csv


class ScriptedNet(Network):
    """Validation quality follows a fixed script; every step nudges ``w`` so epochs are distinguishable."""

    def __init__(self, val_quality):
        super().__init__(params={"w": np.zeros(1, np.float32)})
        self.val_quality = list(val_quality)
        self.snapshots = []

    def forward(self, inputs, train=False, rng=None):
        (x,) = inputs
        if train:
            return np.full(len(x), 0.5, np.float32)
        self.snapshots.append(self.params["w"].copy())
        q = self.val_quality[len(self.snapshots) - 1]
        return np.where(x[:, 0] > 0, q, 1 - q)

    def backward(self, grad_p):
        return {"w": np.ones(1, np.float32)}


def _data(n=64):
    x = np.arange(n, dtype=np.float32).reshape(-1, 1) % 2
    return (x,), x[:, 0].astype(int)


def test_restores_best_epoch_weights():
    net = ScriptedNet([0.6, 0.9, 0.7, 0.55, 0.52])
    inputs, y = _data()
    history, best = fit(net, inputs, y, lr=0.01, batch_size=4, max_epochs=5, patience=1, val_split=0.25, seed=0)
    assert best == 2
    assert len(history) == 3  # stops one epoch after the best
    np.testing.assert_array_equal(net.params["w"], net.snapshots[1])
    assert not np.array_equal(net.snapshots[1], net.snapshots[2])


def test_runs_to_max_epochs_when_improving():
    net = ScriptedNet([0.6, 0.7, 0.8, 0.9])
    inputs, y = _data()
    history, best = fit(net, inputs, y, lr=0.01, batch_size=4, max_epochs=4, patience=2, val_split=0.25, seed=0)
    assert best == 4 and len(history) == 4
    assert history[-1].val_acc == 1.0


def test_early_stopping_counter():
    net = ScriptedNet([])
    stop = EarlyStopping(2)
    assert not stop.update(1, 1.0, net)
    assert not stop.update(2, 0.5, net)
    assert not stop.update(3, 0.6, net)
    assert stop.update(4, 0.5, net)  # equal is not an improvement
    assert stop.best_epoch == 2
    with pytest.raises(ValueError):
        EarlyStopping(0)


def test_fit_guards():
    inputs, y = _data(30)
    with pytest.raises(InsufficientData):
        fit(ScriptedNet([]), inputs, y, lr=0.1, batch_size=4, max_epochs=1, patience=1, val_split=0.2, seed=0)
    inputs, y = _data(64)
    with pytest.raises(ValueError):
        fit(ScriptedNet([]), inputs, y + 1, lr=0.1, batch_size=4, max_epochs=1, patience=1, val_split=0.2, seed=0)
    with pytest.raises(SingleClassDataset):
        fit(ScriptedNet([]), inputs, np.zeros_like(y), lr=0.1, batch_size=4, max_epochs=1, patience=1,
            val_split=0.2, seed=0, oversample=True)


@given(st.integers(2, 500), st.floats(0.05, 0.5))
def test_split_partitions(n, frac):
    tr, va = split_indices(n, frac, np.random.default_rng(0))
    assert sorted(np.concatenate([tr, va]).tolist()) == list(range(n))
    assert len(va) >= 1


def test_split_rejects_bad_fraction():
    with pytest.raises(ValueError):
        split_indices(10, 1.0, np.random.default_rng(0))


@given(st.lists(st.integers(0, 1), min_size=2, max_size=60).filter(lambda v: 0 < sum(v) < len(v)))
def test_balanced_order(labels):
    labels = np.array(labels)
    order = balanced_order(labels, np.random.default_rng(0))
    picked = labels[order]
    assert (picked == 1).sum() == (picked == 0).sum()
    assert set(np.flatnonzero(labels)) <= set(order.tolist())


@given(st.integers(1, 200), st.integers(2, 40))
def test_batches_cover_once_and_never_singleton(n, size):
    parts = batches(np.arange(n), size)
    assert np.concatenate(parts).tolist() == list(range(n))
    if n > 1:
        assert all(len(p) >= 2 for p in parts)


def test_history_csv(tmp_path):
    net = ScriptedNet([0.6, 0.7])
    inputs, y = _data()
    history, _ = fit(net, inputs, y, lr=0.01, batch_size=4, max_epochs=2, patience=1, val_split=0.25, seed=0)
    write_history_csv(tmp_path / "h.csv", history)
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,train_acc,val_acc" and len(lines) == 3
