"""Fixed-point layer kernels shared by the simulated device and the reference.

Values are signed integers of the network's element width.  Accumulation is
exact (int64, or float64 GEMM where every partial sum stays below 2**53),
followed by an arithmetic right shift, optional bias, ReLU and saturation.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .workload import Layer


def value_range(bits: int) -> tuple[int, int]:
    return -(1 << (bits - 1)), (1 << (bits - 1)) - 1


def pack(values: np.ndarray, bits: int) -> bytes:
    v = np.asarray(values, dtype=np.int64).ravel()
    if bits == 8:
        return v.astype(np.int8).tobytes()
    if bits == 16:
        return v.astype("<i2").tobytes()
    u = (v & ((1 << bits) - 1)).astype(np.uint16)
    planes = ((u[:, None] >> np.arange(bits, dtype=np.uint16)) & 1).astype(np.uint8)
    return np.packbits(planes.ravel(), bitorder="little").tobytes()


def unpack(data: bytes, n: int, bits: int) -> np.ndarray:
    buf = np.frombuffer(data, dtype=np.uint8)
    if bits == 8:
        return buf[:n].view(np.int8).astype(np.int64)
    if bits == 16:
        return buf[: 2 * n].view("<i2").astype(np.int64)
    planes = np.unpackbits(buf, bitorder="little")[: n * bits].reshape(n, bits)
    u = planes.astype(np.int64) @ (1 << np.arange(bits, dtype=np.int64))
    return np.where(u >= 1 << (bits - 1), u - (1 << bits), u)


def random_values(rng: np.random.Generator, n: int, bits: int) -> np.ndarray:
    lo, hi = value_range(bits)
    return rng.integers(lo, hi + 1, size=n, dtype=np.int64)


def random_weights(rng: np.random.Generator, layer: Layer, bits: int) -> np.ndarray:
    """Full-range kernel weights and small biases, so outputs track the input."""
    w = random_values(rng, layer.n_weights, bits)
    if layer.bias:
        w[-layer.out_shape[0]:] //= 16
    return w


def _clip(x: np.ndarray, bits: int) -> np.ndarray:
    lo, hi = value_range(bits)
    return np.clip(x, lo, hi)


def _fan_in(layer: Layer) -> int:
    if layer.op == "fc":
        return layer.in_shape[0]
    if layer.op == "conv":
        return layer.in_shape[0] * layer.kernel * layer.kernel
    return 1


def out_shift(layer: Layer, bits: int) -> int:
    return bits - 1 + _fan_in(layer).bit_length() // 2


def update_shift(layer: Layer, bits: int) -> int:
    if layer.op == "conv":
        _, ho, wo = layer.conv_shape
        n_reduce = ho * wo
    else:
        n_reduce = 1
    return 2 * (bits - 1) + n_reduce.bit_length() // 2 + 1


def split_weights(layer: Layer, w: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
    cout = layer.out_shape[0]
    if layer.op == "fc":
        n = layer.in_shape[0] * cout
        kernel = w[:n].reshape(cout, layer.in_shape[0])
    else:
        n = cout * layer.in_shape[0] * layer.kernel * layer.kernel
        kernel = w[:n].reshape(cout, layer.in_shape[0], layer.kernel, layer.kernel)
    return kernel, (w[n : n + cout] if layer.bias else None)


def _gemm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # float64 GEMM is exact while |partial sums| < 2**53, which holds for
    # <= 16-bit operands and reduction lengths < 2**23
    return np.rint(a.astype(np.float64) @ b.astype(np.float64)).astype(np.int64)


def _im2col(x: np.ndarray, layer: Layer) -> tuple[np.ndarray, int, int]:
    k, s, p = layer.kernel, layer.stride, layer.pad
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::s, ::s]
    _, ho, wo = win.shape[:3]
    cols = win.transpose(0, 3, 4, 1, 2).reshape(x.shape[0] * k * k, ho * wo)
    return cols, ho, wo


def _pool(y: np.ndarray, p: int) -> np.ndarray:
    if p == 1:
        return y
    c, h, w = y.shape
    h2, w2 = h // p, w // p
    return y[:, : h2 * p, : w2 * p].reshape(c, h2, p, w2, p).max(axis=(2, 4))


def forward(layer: Layer, x: np.ndarray, w: np.ndarray | None, bits: int) -> np.ndarray:
    """Forward pass of one layer on flat integer arrays; returns a flat array."""
    if layer.op == "identity":
        return np.array(x, dtype=np.int64)
    kernel, bias = split_weights(layer, w)
    shift = out_shift(layer, bits)
    if layer.op == "fc":
        acc = _gemm(kernel, x.reshape(-1, 1)).ravel()
        y = acc >> shift
        if bias is not None:
            y = y + bias
    else:
        xi = x.reshape(layer.in_shape)
        cols, ho, wo = _im2col(xi, layer)
        acc = _gemm(kernel.reshape(kernel.shape[0], -1), cols)
        y = acc >> shift
        if bias is not None:
            y = y + bias[:, None]
        y = y.reshape(-1, ho, wo)
    if layer.relu:
        y = np.maximum(y, 0)
    y = _clip(y, bits)
    if layer.op == "conv":
        y = _pool(y, layer.pool)
    return y.ravel()


def backward(layer: Layer, g_out: np.ndarray, x: np.ndarray, w: np.ndarray | None,
             bits: int) -> tuple[np.ndarray, np.ndarray | None]:
    """Backward pass: returns (gradient w.r.t. the input, updated weights).

    Activation and pooling derivatives are straight-through: a pooled
    gradient is spread to every position of its pooling window.
    """
    if layer.op == "identity":
        return np.array(g_out, dtype=np.int64), None
    kernel, bias = split_weights(layer, w)
    shift = out_shift(layer, bits)
    ushift = update_shift(layer, bits)
    if layer.op == "fc":
        g = g_out.reshape(-1, 1)
        g_in = _gemm(kernel.T, g).ravel() >> shift
        dw = _gemm(g, x.reshape(1, -1)) >> ushift
        new_kernel = _clip(kernel - dw, bits)
        new_bias = None if bias is None else _clip(bias - (g_out >> (bits - 1)), bits)
    else:
        cout, ho, wo = layer.conv_shape
        g = g_out.reshape(layer.out_shape)
        p = layer.pool
        gp = np.zeros((cout, ho, wo), dtype=np.int64)
        up = np.repeat(np.repeat(g, p, axis=1), p, axis=2)
        gp[:, : up.shape[1], : up.shape[2]] = up
        gmat = gp.reshape(cout, -1)
        cols, _, _ = _im2col(x.reshape(layer.in_shape), layer)
        dw = _gemm(gmat, cols.T).reshape(kernel.shape) >> ushift
        new_kernel = _clip(kernel - dw, bits)
        dcols = _gemm(kernel.reshape(cout, -1).T, gmat)
        g_in = _col2im(dcols, layer, ho, wo) >> shift
        new_bias = None if bias is None else _clip(bias - (gmat.sum(axis=1) >> ushift), bits)
    g_in = _clip(g_in, bits)
    parts = [new_kernel.ravel()] + ([new_bias] if new_bias is not None else [])
    return g_in.ravel(), np.concatenate(parts)


def _col2im(dcols: np.ndarray, layer: Layer, ho: int, wo: int) -> np.ndarray:
    c, h, w = layer.in_shape
    k, s, p = layer.kernel, layer.stride, layer.pad
    d = dcols.reshape(c, k, k, ho, wo)
    out = np.zeros((c, h + 2 * p, w + 2 * p), dtype=np.int64)
    for i in range(k):
        for j in range(k):
            out[:, i : i + s * ho : s, j : j + s * wo : s] += d[:, i, j]
    return out[:, p : p + h, p : p + w]
