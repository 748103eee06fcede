"""Network building blocks: convolution, linear maps, pooling, embeddings.

All ops follow the tensor module's recording convention and work on single
images laid out channels-first (C, H, W).
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, _merge_tapes, _record, as_tensor


def conv2d(x, w, b=None, padding: int = 1) -> Tensor:
    """2D convolution (stride 1) of a (Cin,H,W) image with (Cout,Cin,k,k) kernels."""
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise ValueError(f"conv2d: expected (C,H,W) and (O,C,k,k), got {x.data.shape} and {w.data.shape}")
    cin, h, wd = x.data.shape
    cout, cin_w, k, k2 = w.data.shape
    if cin != cin_w or k != k2:
        raise ValueError(f"conv2d: shape mismatch {x.data.shape} vs {w.data.shape}")
    ho, wo = h + 2 * padding - k + 1, wd + 2 * padding - k + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d: kernel {k} too large for input {x.data.shape} with padding {padding}")

    if padding:
        xp = np.zeros((cin, h + 2 * padding, wd + 2 * padding))
        xp[:, padding:padding + h, padding:padding + wd] = x.data
    else:
        xp = x.data
    win = sliding_window_view(xp, (k, k), axis=(1, 2))          # (Cin, ho, wo, k, k)
    cols = win.transpose(0, 3, 4, 1, 2).reshape(cin * k * k, ho * wo)
    w2 = w.data.reshape(cout, cin * k * k)
    out_data = (w2 @ cols).reshape(cout, ho, wo)

    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        if b.data.shape != (cout,):
            raise ValueError(f"conv2d: bias shape {b.data.shape} vs ({cout},)")
        out_data = out_data + b.data[:, None, None]
        parents.append(b)
    tape = _merge_tapes(*parents)

    def vjp_x(g):
        dcols = (w2.T @ g.reshape(cout, ho * wo)).reshape(cin, k, k, ho, wo)
        xpg = np.zeros_like(xp)
        for di in range(k):
            for dj in range(k):
                xpg[:, di:di + ho, dj:dj + wo] += dcols[:, di, dj]
        return xpg[:, padding:padding + h, padding:padding + wd] if padding else xpg

    def vjp_w(g):
        return (g.reshape(cout, ho * wo) @ cols.T).reshape(w.data.shape)

    pairs = [(x, vjp_x), (w, vjp_w)]
    if b is not None:
        pairs.append((b, lambda g: g.sum(axis=(1, 2))))
    return _record(tape, out_data, pairs)


def linear(x, w, b=None) -> Tensor:
    """Affine map of a vector: w @ x + b with w shaped (out, in)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 1 or w.data.ndim != 2 or w.data.shape[1] != x.data.shape[0]:
        raise ValueError(f"linear: shape mismatch {w.data.shape} vs {x.data.shape}")
    out_data = w.data @ x.data
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        if b.data.shape != (w.data.shape[0],):
            raise ValueError(f"linear: bias shape {b.data.shape} vs ({w.data.shape[0]},)")
        out_data = out_data + b.data
        parents.append(b)
    tape = _merge_tapes(*parents)
    pairs = [(x, lambda g: w.data.T @ g), (w, lambda g: np.outer(g, x.data))]
    if b is not None:
        pairs.append((b, lambda g: g))
    return _record(tape, out_data, pairs)


def channel_bias(x, b) -> Tensor:
    """Add a per-channel offset (the timestep-embedding injection point)."""
    x, b = as_tensor(x), as_tensor(b)
    if x.data.ndim != 3 or b.data.shape != (x.data.shape[0],):
        raise ValueError(f"channel_bias: shape mismatch {x.data.shape} vs {b.data.shape}")
    tape = _merge_tapes(x, b)
    return _record(tape, x.data + b.data[:, None, None],
                   [(x, lambda g: g), (b, lambda g: g.sum(axis=(1, 2)))])


def avg_pool2(x) -> Tensor:
    """2x2 mean pooling; spatial dims must be even."""
    x = as_tensor(x)
    c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ValueError(f"avg_pool2: odd spatial dims {x.data.shape}")
    out_data = x.data.reshape(c, h // 2, 2, w // 2, 2).sum(axis=4).sum(axis=2) * 0.25
    return _record(x.tape, out_data,
                   [(x, lambda g: g.repeat(2, axis=1).repeat(2, axis=2) * 0.25)])


def upsample2(x) -> Tensor:
    """Nearest-neighbour 2x upsampling."""
    x = as_tensor(x)
    c, h, w = x.data.shape
    out_data = x.data.repeat(2, axis=1).repeat(2, axis=2)
    return _record(x.tape, out_data,
                   [(x, lambda g: g.reshape(c, h, 2, w, 2).sum(axis=(2, 4)))])


def timestep_embed(t: int, dim: int) -> Tensor:
    """Sinusoidal embedding of an integer timestep into a `dim`-vector.

    Layout is [sin(t*f_0)..sin(t*f_{h-1}), cos(t*f_0)..cos(t*f_{h-1})] with
    geometrically spaced frequencies f_i = 10000^(-i/(h-1)), h = dim/2.
    Constant with respect to any tape.
    """
    if dim < 4 or dim % 2:
        raise ValueError(f"timestep_embed: dim must be even and >= 4, got {dim}")
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / (half - 1))
    ang = float(t) * freqs
    return Tensor(np.concatenate([np.sin(ang), np.cos(ang)]))
