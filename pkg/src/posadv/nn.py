"""Numpy forward/backward kernels for the sentiment CNN and the attack network.

Tensors are plain ``numpy.ndarray`` values. Every ``*_forward`` function
returns ``(output, cache)`` and the matching ``*_backward`` consumes the cache.
Sequence tensors are laid out ``(batch, time, channels)``; unbatched
``(time, channels)`` inputs are accepted where noted.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import DegenerateBatch, EmptyInput, LengthMismatch, ShapeMismatch

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
BCE_CLIP = 1e-7


# -- convolution -------------------------------------------------------------

def conv1d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, relu: bool = True):
    """Same-padded 1D convolution over time followed by ReLU.

    ``x`` is ``(B, L, Din)`` or ``(L, Din)``; ``weight`` is ``(k, Din, F)`` with
    odd ``k``; ``bias`` is ``(F,)``. Output has the input's time length.
    """
    unbatched = x.ndim == 2
    if unbatched:
        x = x[None]
    if x.ndim != 3 or weight.ndim != 3:
        raise ShapeMismatch(f"conv1d expects (B, L, Din) input and (k, Din, F) weight, got {x.shape}, {weight.shape}")
    k, din, f = weight.shape
    if k % 2 == 0:
        raise ShapeMismatch(f"kernel size must be odd for same padding, got {k}")
    if x.shape[2] != din or bias.shape != (f,):
        raise ShapeMismatch(f"input channels {x.shape[2]} / bias {bias.shape} do not match weight {weight.shape}")
    b, length, _ = x.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
    # (B, L, Din, k) -> (B*L, k*Din) matching weight.reshape(k*Din, F)
    cols = sliding_window_view(xp, k, axis=1).transpose(0, 1, 3, 2).reshape(b * length, k * din)
    z = (cols @ weight.reshape(k * din, f) + bias).reshape(b, length, f)
    out = np.maximum(z, 0) if relu else z
    cache = (cols, z > 0 if relu else None, weight, x.shape, unbatched)
    return (out[0] if unbatched else out), cache


def conv1d_backward(grad_out: np.ndarray, cache, input_grad: bool = True):
    """Returns ``(grad_input, {"weight": ..., "bias": ...})``; ``grad_input`` is None when not requested."""
    cols, active, weight, xshape, unbatched = cache
    if unbatched:
        grad_out = grad_out[None]
    b, length, din = xshape
    k, _, f = weight.shape
    if grad_out.shape != (b, length, f):
        raise ShapeMismatch(f"grad_out {grad_out.shape} does not match forward output {(b, length, f)}")
    g = grad_out * active if active is not None else grad_out
    g2 = g.reshape(b * length, f)
    grad_w = (cols.T @ g2).reshape(k, din, f)
    grad_b = g2.sum(axis=0)
    if not input_grad:
        return None, {"weight": grad_w, "bias": grad_b}
    dcols = (g2 @ weight.reshape(k * din, f).T).reshape(b, length, k, din)
    pad = k // 2
    dxp = np.zeros((b, length + 2 * pad, din), dtype=dcols.dtype)
    for j in range(k):
        dxp[:, j:j + length] += dcols[:, :, j]
    dx = dxp[:, pad:pad + length]
    return (dx[0] if unbatched else dx), {"weight": grad_w, "bias": grad_b}


# -- pooling -----------------------------------------------------------------

def global_max_pool(x: np.ndarray):
    """Max over the time axis. Returns ``(pooled, argmax)``; ties pick the first index."""
    if x.shape[-2] == 0:
        raise EmptyInput("global max-pool over an empty sequence")
    idx = np.argmax(x, axis=-2)
    out = np.take_along_axis(x, np.expand_dims(idx, -2), axis=-2).squeeze(-2)
    return out, idx


def global_max_pool_backward(grad_out: np.ndarray, argmax: np.ndarray, length: int) -> np.ndarray:
    shape = grad_out.shape[:-1] + (length, grad_out.shape[-1])
    dx = np.zeros(shape, dtype=grad_out.dtype)
    np.put_along_axis(dx, np.expand_dims(argmax, -2), np.expand_dims(grad_out, -2), axis=-2)
    return dx


# -- batch normalization -----------------------------------------------------

@dataclass
class BatchNormState:
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS

    @classmethod
    def fresh(cls, channels: int, dtype=np.float32) -> "BatchNormState":
        return cls(np.zeros(channels, dtype), np.ones(channels, dtype))


def batch_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, state: BatchNormState, mode: str = "train"):
    """Per-channel normalization over every axis but the last.

    Train mode uses batch statistics and folds them into the running
    averages; eval mode uses the running averages only.
    """
    axes = tuple(range(x.ndim - 1))
    if mode == "train":
        if x.shape[0] < 2:
            raise DegenerateBatch(f"batch norm needs at least 2 examples in train mode, got {x.shape[0]}")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        m = state.momentum
        state.running_mean[...] = m * state.running_mean + (1 - m) * mean
        state.running_var[...] = m * state.running_var + (1 - m) * var
    elif mode == "eval":
        mean, var = state.running_mean, state.running_var
    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x - mean) * inv_std
    out = gamma * xhat + beta
    return out, (xhat, inv_std, gamma, mode)


def batch_norm_backward(grad_out: np.ndarray, cache):
    xhat, inv_std, gamma, mode = cache
    axes = tuple(range(grad_out.ndim - 1))
    grad_gamma = (grad_out * xhat).sum(axis=axes)
    grad_beta = grad_out.sum(axis=axes)
    dxhat = grad_out * gamma
    if mode == "eval":
        return dxhat * inv_std, {"gamma": grad_gamma, "beta": grad_beta}
    n = xhat.size // xhat.shape[-1]
    dx = (inv_std / n) * (n * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
    return dx, {"gamma": grad_gamma, "beta": grad_beta}


# -- dropout -----------------------------------------------------------------

def dropout(x: np.ndarray, rate: float = 0.5, mode: str = "train", rng: np.random.Generator | None = None):
    """Inverted dropout; identity in eval mode. Returns ``(out, mask)``."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if mode == "eval" or rate == 0:
        return x, None
    if rng is None:
        raise ValueError("train-mode dropout needs an explicit random generator")
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) / np.asarray(1 - rate, dtype=x.dtype)
    return x * mask, mask


def dropout_backward(grad_out: np.ndarray, mask) -> np.ndarray:
    return grad_out if mask is None else grad_out * mask


# -- dense -------------------------------------------------------------------

def dense_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, relu: bool = False):
    if x.shape[-1] != weight.shape[0] or bias.shape != weight.shape[1:]:
        raise ShapeMismatch(f"dense input {x.shape} / weight {weight.shape} / bias {bias.shape}")
    z = x @ weight + bias
    if relu:
        return np.maximum(z, 0), (x, weight, z > 0)
    return z, (x, weight, None)


def dense_backward(grad_out: np.ndarray, cache):
    x, weight, active = cache
    if active is not None:
        grad_out = grad_out * active
    x2 = x.reshape(-1, x.shape[-1])
    g2 = grad_out.reshape(-1, weight.shape[1])
    return grad_out @ weight.T, {"weight": x2.T @ g2, "bias": g2.sum(axis=0)}


def sigmoid(z):
    return expit(z)


def dense_sigmoid(x: np.ndarray, weight: np.ndarray, bias: np.ndarray):
    """``sigmoid(x . w + b)`` for ``x`` of shape ``(F,)`` or ``(B, F)``; ``weight`` is ``(F, 1)``."""
    if weight.ndim == 1:
        weight = weight[:, None]
    if bias.ndim == 0:
        bias = bias.reshape(1)
    z, cache = dense_forward(x, weight, bias)
    p = sigmoid(z[..., 0])
    return p, (cache, p)


def dense_sigmoid_backward(grad_p: np.ndarray, cache):
    dense_cache, p = cache
    dz = (grad_p * p * (1 - p))[..., None]
    return dense_backward(dz, dense_cache)


# -- loss --------------------------------------------------------------------

def bce_loss(y: np.ndarray, yhat: np.ndarray):
    """Mean binary cross-entropy and its gradient with respect to ``yhat``.

    ``yhat`` is clipped to ``[1e-7, 1 - 1e-7]`` before the logs; the gradient
    is evaluated at the clipped value.
    """
    y = np.asarray(y)
    yhat = np.asarray(yhat)
    if y.shape != yhat.shape:
        raise LengthMismatch(f"labels {y.shape} vs predictions {yhat.shape}")
    n = y.size
    if n == 0:
        raise LengthMismatch("bce_loss needs at least one example")
    p = np.clip(yhat, BCE_CLIP, 1 - BCE_CLIP)
    loss = -np.mean(y * np.log(p) + (1 - y) * np.log1p(-p))
    grad = (p - y) / (n * p * (1 - p))
    return float(loss), grad.astype(yhat.dtype, copy=False)


# -- optimizer ---------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def like(cls, param: np.ndarray, **hyper) -> "AdamState":
        return cls(np.zeros_like(param), np.zeros_like(param), **hyper)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState) -> np.ndarray:
    """One Adam update, applied to ``param`` in place (also returned)."""
    if param.shape != grad.shape or state.m.shape != param.shape:
        raise ShapeMismatch(f"param {param.shape}, grad {grad.shape}, state {state.m.shape}")
    state.t += 1
    state.m *= state.beta1
    state.m += (1 - state.beta1) * grad
    state.v *= state.beta2
    state.v += (1 - state.beta2) * grad * grad
    m_hat = state.m / (1 - state.beta1 ** state.t)
    v_hat = state.v / (1 - state.beta2 ** state.t)
    param -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(param.dtype, copy=False)
    return param


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float = 1e-3, skip=()):
        self.states = {k: AdamState.like(v, lr=lr) for k, v in params.items() if k not in skip}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name, state in self.states.items():
            adam_step(params[name], grads[name], state)


# -- gradient checking -------------------------------------------------------

@dataclass
class GradCheckResult:
    max_rel_error: float
    skipped: bool = False
    reason: str = ""
    worst: str = ""

    def ok(self, rtol: float = 1e-4) -> bool:
        return self.skipped or self.max_rel_error < rtol


def grad_check(
    loss_fn: Callable[[], float],
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    h: float = 1e-5,
    floor: float = 1e-4,
    domain: dict[str, tuple[float, float]] | None = None,
) -> GradCheckResult:
    """Compare analytic ``grads`` with central differences of ``loss_fn``.

    ``loss_fn`` recomputes the loss from ``params``, which are perturbed in
    place. The error per entry is ``|a - n| / max(|a|, |n|, floor)``. Entries
    of a parameter listed in ``domain`` that sit within ``h`` of a
    non-differentiable boundary make the whole check skip.
    """
    for name, (lo, hi) in (domain or {}).items():
        p = params[name]
        if np.any(np.abs(p - lo) <= h) or np.any(np.abs(p - hi) <= h) or np.any((p < lo) | (p > hi)):
            return GradCheckResult(float("nan"), skipped=True, reason=f"{name} at non-differentiable boundary")
    worst, where = 0.0, ""
    for name, p in params.items():
        if p.dtype != np.float64:
            raise TypeError(f"gradient checks run in float64; {name} is {p.dtype}")
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + h
            up = loss_fn()
            p[i] = old - h
            down = loss_fn()
            p[i] = old
            num = (up - down) / (2 * h)
            ana = grads[name][i]
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            if err > worst:
                worst, where = float(err), f"{name}{list(i)}"
    return GradCheckResult(worst, worst=where)


# -- checkpoints -------------------------------------------------------------

CHECKPOINT_FORMAT = "posadv-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict | None = None, groups: dict[str, str] | None = None) -> None:
    """JSON header line, then each tensor as raw little-endian float32 in header order."""
    entries = []
    for name, arr in tensors.items():
        entry = {"name": name, "shape": list(arr.shape)}
        if groups and name in groups:
            entry["group"] = groups[name]
        entries.append(entry)
    header = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "meta": meta or {}, "tensors": entries}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8") + b"\n")
        for arr in tensors.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl])
    if header.get("format") != CHECKPOINT_FORMAT or header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION} file")
    offset = nl + 1
    tensors = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(entry["shape"])
        tensors[entry["name"]] = arr.astype(np.float32)
        offset += 4 * count
    if offset != len(raw):
        raise ValueError(f"{path}: payload length does not match header")
    return header, tensors


@dataclass
class Network:
    """Parameter container shared by the victim CNN and the attack network.

    Subclasses implement ``forward(inputs, train, rng)`` returning
    probabilities of shape ``(B,)`` and ``backward(grad_p)`` returning a dict
    of gradients keyed like ``params``.
    """

    params: dict[str, np.ndarray] = field(default_factory=dict)
    frozen: set = field(default_factory=set)

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {k: v.copy() for k, v in self.params.items()}
        out.update({k: v.copy() for k, v in self.buffers().items()})
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, v in self.params.items():
            v[...] = state[k]
        for k, v in self.buffers().items():
            v[...] = state[k]
