"""Differentiable 1D layers: convolution, normalization, pooling, blocks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autograd import Tensor, as_tensor, relu, sqrt

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _batched(x):
    x = as_tensor(x)
    if x.ndim == 2:
        return x.reshape(1, *x.shape), True
    if x.ndim != 3:
        raise ValueError(f"expected [C, L] or [N, C, L] input, got shape {x.shape}")
    return x, False


def conv1d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation of ``x`` [N, C_in, L] (or [C_in, L]) with ``weight`` [C_out, C_in, K].

    Output length is ``floor((L + 2*padding - K) / stride) + 1``.
    """
    x, squeeze = _batched(x)
    weight = as_tensor(weight)
    if weight.ndim != 3:
        raise ValueError(f"kernels must be [C_out, C_in, K], got {weight.shape}")
    n, c_in, length = x.shape
    c_out, wc_in, k = weight.shape
    if wc_in != c_in:
        raise ValueError(f"input has {c_in} channels but kernels expect {wc_in}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if k > length + 2 * padding:
        raise ValueError(f"kernel size {k} exceeds padded length {length + 2 * padding}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    # windows: [N, C_in, L', K]
    windows = sliding_window_view(xp, k, axis=2)[:, :, ::stride, :]
    l_out = windows.shape[2]
    out = np.einsum("nclk,ock->nol", windows, weight.data, optimize=True)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[None, :, None]
        parents.append(bias)

    def bw(g):
        gw = np.einsum("nol,nclk->ock", g, windows, optimize=True)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[:, :, j : j + stride * (l_out - 1) + 1 : stride] += np.einsum(
                "nol,oc->ncl", g, weight.data[:, :, j], optimize=True
            )
        gx = gxp[:, :, padding : padding + length] if padding else gxp
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)))
        return tuple(grads)

    y = Tensor._make(out, tuple(parents), bw)
    return y.reshape(c_out, l_out) if squeeze else y


def conv_transpose1d(x, weight, bias=None, stride=1, padding=0):
    """Transposed convolution; ``weight`` is [C_in, C_out, K] (adjoint of :func:`conv1d`).

    Output length is ``(L - 1)*stride - 2*padding + K``.
    """
    x, squeeze = _batched(x)
    weight = as_tensor(weight)
    n, c_in, length = x.shape
    wc_in, c_out, k = weight.shape
    if wc_in != c_in:
        raise ValueError(f"input has {c_in} channels but kernels expect {wc_in}")
    full = (length - 1) * stride + k
    l_out = full - 2 * padding
    if l_out <= 0:
        raise ValueError("transposed convolution output would be empty")
    buf = np.zeros((n, c_out, full))
    for j in range(k):
        buf[:, :, j : j + stride * (length - 1) + 1 : stride] += np.einsum(
            "ncl,co->nol", x.data, weight.data[:, :, j], optimize=True
        )
    out = buf[:, :, padding : padding + l_out]
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[None, :, None]
        parents.append(bias)

    def bw(g):
        gfull = np.zeros((n, c_out, full))
        gfull[:, :, padding : padding + l_out] = g
        windows = sliding_window_view(gfull, k, axis=2)[:, :, ::stride, :][:, :, :length, :]
        gx = np.einsum("nolk,cok->ncl", windows, weight.data, optimize=True)
        gw = np.einsum("ncl,nolk->cok", x.data, windows, optimize=True)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)))
        return tuple(grads)

    y = Tensor._make(np.ascontiguousarray(out), tuple(parents), bw)
    return y.reshape(c_out, l_out) if squeeze else y


def max_pool1d(x, window=2):
    """Non-overlapping max pooling; a trailing partial window is dropped."""
    x, squeeze = _batched(x)
    n, c, length = x.shape
    l_out = length // window
    if l_out == 0:
        raise ValueError(f"pool window {window} longer than input length {length}")
    blocks = x.data[:, :, : l_out * window].reshape(n, c, l_out, window)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gx = np.zeros_like(x.data)
        gx[:, :, : l_out * window] = gb.reshape(n, c, l_out * window)
        return (gx,)

    y = Tensor._make(out, (x,), bw)
    return y.reshape(c, l_out) if squeeze else y


def adaptive_pool_matrix(length, out_len):
    """Averaging matrix [length, out_len] with bin i covering [floor(i*L/o), ceil((i+1)*L/o))."""
    m = np.zeros((length, out_len))
    for i in range(out_len):
        start = (i * length) // out_len
        end = -((-(i + 1) * length) // out_len)
        m[start:end, i] = 1.0 / (end - start)
    return m


def adaptive_avg_pool1d(x, out_len):
    x = as_tensor(x)
    return x @ adaptive_pool_matrix(x.shape[-1], out_len)


def batch_norm(x, gamma, beta, running_mean=None, running_var=None, training=True,
               momentum=BN_MOMENTUM, eps=BN_EPS):
    """Per-channel normalization over batch and length of ``x`` [N, C, L].

    In training mode batch statistics are used and ``running_mean``/``running_var``
    (numpy arrays, updated in place) track them with ``momentum``. In inference mode
    the running statistics are used.
    """
    x, squeeze = _batched(x)
    n, c, length = x.shape
    gamma, beta = as_tensor(gamma), as_tensor(beta)
    if training:
        if n * length == 0:
            raise ValueError("batch normalization in training mode needs a non-empty batch")
        mu = x.mean(axis=(0, 2), keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=(0, 2), keepdims=True)
        if running_mean is not None:
            count = n * length
            unbiased = var.data.reshape(c) * (count / max(count - 1, 1))
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu.data.reshape(c)
            running_var *= 1.0 - momentum
            running_var += momentum * unbiased
        xhat = xc / sqrt(var + eps)
    else:
        if running_mean is None:
            raise ValueError("inference-mode normalization needs running statistics")
        xhat = (x - running_mean.reshape(1, c, 1)) * (1.0 / np.sqrt(running_var.reshape(1, c, 1) + eps))
    y = xhat * gamma.reshape(1, c, 1) + beta.reshape(1, c, 1)
    return y.reshape(c, length) if squeeze else y


@dataclass(frozen=True)
class BlockSpec:
    in_channels: int
    out_channels: int
    kernel: int = 5
    stride: int = 1
    padding: int | None = None
    pool: int = 2

    @property
    def pad(self):
        return self.kernel // 2 if self.padding is None else self.padding


def init_block(spec: BlockSpec, rng, prefix=""):
    """Parameters and running buffers for one conv block."""
    fan_in = spec.in_channels * spec.kernel
    bound = 1.0 / np.sqrt(fan_in)
    params = {
        prefix + "conv.weight": rng.uniform(-bound, bound, (spec.out_channels, spec.in_channels, spec.kernel)),
        prefix + "conv.bias": rng.uniform(-bound, bound, spec.out_channels),
        prefix + "bn.weight": np.ones(spec.out_channels),
        prefix + "bn.bias": np.zeros(spec.out_channels),
    }
    buffers = {
        prefix + "bn.running_mean": np.zeros(spec.out_channels),
        prefix + "bn.running_var": np.ones(spec.out_channels),
    }
    return params, buffers


def nn_block(x, params, spec: BlockSpec, buffers=None, training=True, prefix=""):
    """conv1d -> batch norm -> ReLU -> max-pool."""
    buffers = buffers if buffers is not None else {}
    h = conv1d(x, params[prefix + "conv.weight"], params[prefix + "conv.bias"],
               stride=spec.stride, padding=spec.pad)
    h = batch_norm(h, params[prefix + "bn.weight"], params[prefix + "bn.bias"],
                   buffers.get(prefix + "bn.running_mean"), buffers.get(prefix + "bn.running_var"),
                   training=training)
    h = relu(h)
    return max_pool1d(h, spec.pool) if spec.pool > 1 else h
