"""Recurrent cells, self-attention and encoder blocks built on the primitives."""

from __future__ import annotations

import math
from typing import Mapping, Optional

import numpy as np

from . import ops
from .ops import DimensionError
from .tensor import Parameter, Tensor, as_tensor


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_linear(rng, n_in: int, n_out: int, prefix: str) -> dict:
    return {
        "W": Parameter(uniform_init(rng, (n_in, n_out), n_in), f"{prefix}.W"),
        "b": Parameter(uniform_init(rng, (n_out,), n_in), f"{prefix}.b"),
    }


def init_lstm(rng, n_in: int, hidden: int, prefix: str) -> dict:
    """Gate blocks are stacked as [input, forget, candidate, output]."""
    return {
        "W_x": Parameter(uniform_init(rng, (n_in, 4 * hidden), n_in), f"{prefix}.W_x"),
        "W_h": Parameter(uniform_init(rng, (hidden, 4 * hidden), hidden), f"{prefix}.W_h"),
        "b": Parameter(uniform_init(rng, (4 * hidden,), hidden), f"{prefix}.b"),
    }


def init_bilstm(rng, n_in: int, hidden: int, prefix: str) -> dict:
    return {"fwd": init_lstm(rng, n_in, hidden, f"{prefix}.fwd"),
            "bwd": init_lstm(rng, n_in, hidden, f"{prefix}.bwd")}


def init_gru(rng, n_in: int, hidden: int, prefix: str) -> dict:
    """Gate blocks are stacked as [reset, update, candidate]."""
    return {
        "W_x": Parameter(uniform_init(rng, (n_in, 3 * hidden), n_in), f"{prefix}.W_x"),
        "W_h": Parameter(uniform_init(rng, (hidden, 3 * hidden), hidden), f"{prefix}.W_h"),
        "b_x": Parameter(uniform_init(rng, (3 * hidden,), hidden), f"{prefix}.b_x"),
        "b_h": Parameter(uniform_init(rng, (3 * hidden,), hidden), f"{prefix}.b_h"),
    }


def init_attention(rng, dim: int, prefix: str) -> dict:
    params = {}
    for key in ("q", "k", "v", "o"):
        lin = init_linear(rng, dim, dim, f"{prefix}.{key}")
        params[f"W_{key}"], params[f"b_{key}"] = lin["W"], lin["b"]
    return params


def init_encoder_layer(rng, dim: int, prefix: str, ff_mult: int = 4) -> dict:
    return {
        "attn": init_attention(rng, dim, f"{prefix}.attn"),
        "norm1": {"gamma": Parameter(np.ones(dim), f"{prefix}.norm1.gamma"),
                  "beta": Parameter(np.zeros(dim), f"{prefix}.norm1.beta")},
        "ff1": init_linear(rng, dim, ff_mult * dim, f"{prefix}.ff1"),
        "ff2": init_linear(rng, ff_mult * dim, dim, f"{prefix}.ff2"),
        "norm2": {"gamma": Parameter(np.ones(dim), f"{prefix}.norm2.gamma"),
                  "beta": Parameter(np.zeros(dim), f"{prefix}.norm2.beta")},
    }


def _hidden_size(params) -> int:
    return params["W_h"].shape[0]


def _lstm_step(xz_t, h_prev, c_prev, W_h):
    hd = W_h.shape[0]
    z = xz_t + ops.matmul(h_prev, W_h)
    i = ops.sigmoid(z[:, :hd])
    f = ops.sigmoid(z[:, hd:2 * hd])
    g = ops.tanh(z[:, 2 * hd:3 * hd])
    o = ops.sigmoid(z[:, 3 * hd:])
    c = f * c_prev + i * g
    h = o * ops.tanh(c)
    return h, c


def lstm_cell(x_t, h_prev, c_prev, params: Mapping):
    """One LSTM step; returns ``(h_t, c_t)``."""
    x_t, h_prev, c_prev = as_tensor(x_t), as_tensor(h_prev), as_tensor(c_prev)
    hd = _hidden_size(params)
    if h_prev.shape[-1] != hd or c_prev.shape[-1] != hd or h_prev.shape != c_prev.shape:
        raise DimensionError(
            f"lstm_cell: states {h_prev.shape}/{c_prev.shape} do not match hidden size {hd}")
    xz = ops.linear(x_t, params["W_x"], params["b"])
    return _lstm_step(xz, h_prev, c_prev, params["W_h"])


def lstm(x, params: Mapping, reverse: bool = False) -> Tensor:
    """Run an LSTM over ``x[B,T,D]`` from zero states; returns ``[B,T,Hd]``."""
    x = as_tensor(x)
    if x.ndim != 3 or x.shape[1] == 0:
        raise DimensionError(f"lstm needs a non-empty [B,T,D] input, got {x.shape}")
    B, T, _ = x.shape
    hd = _hidden_size(params)
    xz = ops.linear(x, params["W_x"], params["b"])
    h = Tensor(np.zeros((B, hd)))
    c = Tensor(np.zeros((B, hd)))
    outputs = [None] * T
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        h, c = _lstm_step(xz[:, t], h, c, params["W_h"])
        outputs[t] = h
    return ops.stack(outputs, axis=1)


def bilstm(x, params: Mapping) -> Tensor:
    """Forward and time-reversed LSTM passes concatenated per step: ``[B,T,2Hd]``."""
    fwd = lstm(x, params["fwd"])
    bwd = lstm(x, params["bwd"], reverse=True)
    return ops.concat([fwd, bwd], axis=-1)


def gru_cell(x_t, h_prev, params: Mapping) -> Tensor:
    x_t, h_prev = as_tensor(x_t), as_tensor(h_prev)
    return _gru_step(ops.linear(x_t, params["W_x"], params["b_x"]), h_prev, params)


def _gru_step(xz_t, h_prev, params):
    hd = _hidden_size(params)
    hz = ops.linear(h_prev, params["W_h"], params["b_h"])
    r = ops.sigmoid(xz_t[:, :hd] + hz[:, :hd])
    u = ops.sigmoid(xz_t[:, hd:2 * hd] + hz[:, hd:2 * hd])
    n = ops.tanh(xz_t[:, 2 * hd:] + r * hz[:, 2 * hd:])
    return (1.0 - u) * n + u * h_prev


def gru(x, params: Mapping, reverse: bool = False) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 3 or x.shape[1] == 0:
        raise DimensionError(f"gru needs a non-empty [B,T,D] input, got {x.shape}")
    B, T, _ = x.shape
    xz = ops.linear(x, params["W_x"], params["b_x"])
    h = Tensor(np.zeros((B, _hidden_size(params))))
    outputs = [None] * T
    for t in (range(T - 1, -1, -1) if reverse else range(T)):
        h = _gru_step(xz[:, t], h, params)
        outputs[t] = h
    return ops.stack(outputs, axis=1)


def causal_mask(T: int) -> np.ndarray:
    """True where the key position lies after the query position."""
    return np.triu(np.ones((T, T), dtype=bool), k=1)


def multi_head_self_attention(x, params: Mapping, n_heads: int, causal: bool = False):
    """Scaled dot-product self-attention.

    Returns ``(out[B,T,D], weights[B,H,T,T])`` where ``weights[b,h,q,k]`` is
    the share of query position ``q`` placed on key position ``k``.
    """
    x = as_tensor(x)
    if x.ndim != 3:
        raise DimensionError(f"attention needs [B,T,D] input, got {x.shape}")
    B, T, D = x.shape
    if T == 0:
        raise DimensionError("attention needs at least one time step")
    if n_heads < 1 or D % n_heads:
        raise DimensionError(f"embedding dim {D} is not divisible by {n_heads} heads")
    dh = D // n_heads

    def heads(name):
        proj = ops.linear(x, params[f"W_{name}"], params[f"b_{name}"])
        return ops.transpose(ops.reshape(proj, (B, T, n_heads, dh)), (0, 2, 1, 3))

    q, k, v = heads("q"), heads("k"), heads("v")
    scores = ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(dh))
    weights = ops.softmax(scores, axis=-1, mask=causal_mask(T) if causal else None)
    ctx = ops.reshape(ops.transpose(ops.matmul(weights, v), (0, 2, 1, 3)), (B, T, D))
    return ops.linear(ctx, params["W_o"], params["b_o"]), weights


def encoder_layer(x, params: Mapping, n_heads: int, causal: bool = False):
    """Post-norm block: attention, add & norm, feed-forward, add & norm."""
    attn, weights = multi_head_self_attention(x, params["attn"], n_heads, causal)
    h = ops.layer_norm(x + attn, params["norm1"]["gamma"], params["norm1"]["beta"])
    ff = ops.linear(ops.relu(ops.linear(h, params["ff1"]["W"], params["ff1"]["b"])),
                    params["ff2"]["W"], params["ff2"]["b"])
    out = ops.layer_norm(h + ff, params["norm2"]["gamma"], params["norm2"]["beta"])
    return out, weights


def positional_encoding(T: int, D: int) -> np.ndarray:
    """Fixed sinusoidal table ``[T, D]``: sin on even columns, cos on odd ones."""
    if D % 2:
        raise ValueError(f"positional encoding needs an even dimension, got {D}")
    pos = np.arange(T, dtype=np.float64)[:, None]
    freq = np.power(10000.0, -np.arange(0, D, 2, dtype=np.float64) / D)
    pe = np.empty((T, D))
    pe[:, 0::2] = np.sin(pos * freq)
    pe[:, 1::2] = np.cos(pos * freq)
    return pe


def iter_parameters(tree, out: Optional[list] = None) -> list:
    """Flatten a nested dict of parameters in insertion order."""
    out = [] if out is None else out
    if isinstance(tree, Parameter):
        out.append(tree)
    elif isinstance(tree, Mapping):
        for value in tree.values():
            iter_parameters(value, out)
    elif isinstance(tree, (list, tuple)):
        for value in tree:
            iter_parameters(value, out)
    return out
