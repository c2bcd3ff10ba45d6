"""
Forward kernels and their gradients for the network's primitive operations.

All feature maps use the batch x channels x height x width layout. Each
function validates shapes, computes its output with numpy, and registers a
backward closure through make_result().
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError
from .tensor import Tensor, as_tensor, make_result

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _require_4d(t: Tensor, what: str):
    if t.ndim != 4:
        raise ShapeError(f"{what} must be 4-D (batch, channels, height, width), got shape {t.shape}")


def conv2d(x, kernel, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation (no kernel flip) of x[B,Cin,H,W] with kernel[Cout,Cin,kh,kw]"""
    x, kernel = as_tensor(x), as_tensor(kernel)
    _require_4d(x, "conv2d input")
    _require_4d(kernel, "conv2d kernel")
    batch, channels, height, width = x.shape
    out_channels, kernel_channels, kh, kw = kernel.shape
    if kernel_channels != channels:
        raise ShapeError(f"conv2d kernel expects {kernel_channels} input channels, input has {channels}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d needs stride >= 1 and padding >= 0, got stride={stride}, padding={padding}")
    if height + 2 * padding < kh or width + 2 * padding < kw:
        raise ShapeError(f"conv2d kernel {kh}x{kw} larger than padded input {height + 2 * padding}x{width + 2 * padding}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (out_channels,):
            raise ShapeError(f"conv2d bias must have shape ({out_channels},), got {bias.shape}")

    p, s = padding, stride
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    out_h = (height + 2 * p - kh) // s + 1
    out_w = (width + 2 * p - kw) // s + 1
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s][:, :, :out_h, :out_w]

    out = np.tensordot(windows, kernel.data, axes=([1, 4, 5], [1, 2, 3]))
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def grad_fn(g):
        grad_kernel = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        grad_xp = np.zeros(xp.shape, dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                contrib = np.tensordot(g, kernel.data[:, :, i, j], axes=([1], [0]))
                grad_xp[:, :, i:i + s * (out_h - 1) + 1:s, j:j + s * (out_w - 1) + 1:s] += contrib.transpose(0, 3, 1, 2)
        grad_x = grad_xp[:, :, p:p + height, p:p + width]
        if bias is None:
            return grad_x, grad_kernel
        return grad_x, grad_kernel, g.sum(axis=(0, 2, 3))

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return make_result("conv2d", inputs, out, grad_fn)


@lru_cache(maxsize=256)
def _bilinear_matrix(n_in: int, n_out: int, dtype_name: str) -> np.ndarray:
    matrix = np.zeros((n_out, n_in), dtype=np.dtype(dtype_name))
    scale = n_in / n_out
    for o in range(n_out):
        src = max((o + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        w1 = src - i0
        matrix[o, i0] += 1.0 - w1
        matrix[o, i1] += w1
    matrix.setflags(write=False)
    return matrix


def bilinear_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """1-D interpolation weights (n_out x n_in), align-corners=false convention"""
    return _bilinear_matrix(n_in, n_out, np.dtype(dtype).name)


def resample_bilinear(x, out_h: int, out_w: int) -> Tensor:
    x = as_tensor(x)
    _require_4d(x, "resample input")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"resample target must be at least 1x1, got {out_h}x{out_w}")
    height, width = x.shape[2], x.shape[3]
    mh = bilinear_matrix(height, out_h, x.data.dtype)
    mw = bilinear_matrix(width, out_w, x.data.dtype)
    out = mh @ x.data @ mw.T

    def grad_fn(g):
        return (mh.T @ g @ mw,)

    return make_result("resample_bilinear", (x,), out, grad_fn)


def max_pool2d(x, k: int, stride: int) -> Tensor:
    """Window maxima; gradient goes to the first (row-major) maximum of each window"""
    x = as_tensor(x)
    _require_4d(x, "max_pool2d input")
    batch, channels, height, width = x.shape
    if k < 1 or stride < 1:
        raise ShapeError(f"max_pool2d needs k >= 1 and stride >= 1, got k={k}, stride={stride}")
    if height < k or width < k:
        raise ShapeError(f"max_pool2d window {k}x{k} larger than input {height}x{width}")
    out_h = (height - k) // stride + 1
    out_w = (width - k) // stride + 1
    windows = sliding_window_view(x.data, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :out_h, :out_w]
    flat = windows.reshape(batch, channels, out_h, out_w, k * k)
    argmax = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]

    def grad_fn(g):
        grad = np.zeros_like(x.data)
        bi, ci, hi, wi = np.indices(argmax.shape)
        rows = hi * stride + argmax // k
        cols = wi * stride + argmax % k
        np.add.at(grad, (bi, ci, rows, cols), g)
        return (grad,)

    return make_result("max_pool2d", (x,), out, grad_fn)


def global_avg_pool(x) -> Tensor:
    x = as_tensor(x)
    _require_4d(x, "global_avg_pool input")
    height, width = x.shape[2], x.shape[3]
    out = x.data.mean(axis=(2, 3))

    def grad_fn(g):
        return (np.broadcast_to(g[:, :, None, None] / (height * width), x.shape).copy(),)

    return make_result("global_avg_pool", (x,), out, grad_fn)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return make_result("relu", (x,), np.where(mask, x.data, 0).astype(x.data.dtype), lambda g: (g * mask,))


def _stable_sigmoid(values: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(values))
    out = np.where(values >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(values.dtype)
    # strictly inside (0, 1) at the working precision
    tiny = np.nextafter(values.dtype.type(0), values.dtype.type(1))
    return np.clip(out, tiny, np.nextafter(values.dtype.type(1), values.dtype.type(0)))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = _stable_sigmoid(x.data)
    return make_result("sigmoid", (x,), out, lambda g: (g * out * (1.0 - out),))


def activation(x, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation '{kind}'")


def softmax_axis(x, axis: int) -> Tensor:
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result("softmax", (x,), out, grad_fn)


@dataclass
class RunningStats:
    """Per-channel running mean/variance used by batch_norm in eval mode"""
    mean: np.ndarray
    var: np.ndarray
    momentum: float = BN_MOMENTUM

    @classmethod
    def fresh(cls, channels: int, dtype=np.float32, momentum: float = BN_MOMENTUM) -> "RunningStats":
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype), momentum)


def batch_norm(x, gamma, beta, stats: RunningStats, training: bool = True, eps: float = BN_EPS) -> Tensor:
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    _require_4d(x, "batch_norm input")
    batch, channels, height, width = x.shape
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeError(f"batch_norm expects gamma/beta of shape ({channels},), got {gamma.shape} and {beta.shape}")
    axes = (0, 2, 3)
    count = batch * height * width

    if training:
        if count < 2:
            raise ShapeError(f"batch_norm in train mode needs at least 2 values per channel, got {count}")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        m = stats.momentum
        stats.mean[...] = (1.0 - m) * stats.mean + m * mean
        stats.var[...] = (1.0 - m) * stats.var + m * var * count / (count - 1)
    else:
        mean = stats.mean.astype(x.data.dtype)
        var = stats.var.astype(x.data.dtype)

    inv_std = (1.0 / np.sqrt(var + eps))[None, :, None, None]
    x_hat = (x.data - mean[None, :, None, None]) * inv_std
    g_b = gamma.data[None, :, None, None]
    out = g_b * x_hat + beta.data[None, :, None, None]

    def grad_fn(g):
        grad_gamma = (g * x_hat).sum(axis=axes)
        grad_beta = g.sum(axis=axes)
        d_hat = g * g_b
        if training:
            grad_x = inv_std / count * (
                count * d_hat
                - d_hat.sum(axis=axes, keepdims=True)
                - x_hat * (d_hat * x_hat).sum(axis=axes, keepdims=True)
            )
        else:
            grad_x = d_hat * inv_std
        return grad_x, grad_gamma, grad_beta

    return make_result("batch_norm", (x, gamma, beta), out, grad_fn)


def fully_connected(x, weight, bias=None) -> Tensor:
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 2 or weight.shape[1] != x.shape[1]:
        raise ShapeError(f"fully_connected cannot map input {x.shape} with weight {weight.shape}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"fully_connected bias must have shape ({weight.shape[0]},), got {bias.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def grad_fn(g):
        grads = (g @ weight.data, g.T @ x.data)
        return grads if bias is None else grads + (g.sum(axis=0),)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result("fully_connected", inputs, out, grad_fn)


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat_channels needs at least one part")
    for p in parts:
        _require_4d(p, "concat_channels part")
    batch, _, height, width = parts[0].shape
    for p in parts[1:]:
        if (p.shape[0], p.shape[2], p.shape[3]) != (batch, height, width):
            raise ShapeError(f"concat_channels parts disagree: {parts[0].shape} vs {p.shape}")
    if len(parts) == 1:
        return parts[0]
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])
    out = np.concatenate([p.data for p in parts], axis=1)

    def grad_fn(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return make_result("concat_channels", parts, out, grad_fn)


def weighted_sum(x: Tensor, weights: Optional[np.ndarray] = None) -> Tensor:
    """sum(x * weights): scalar probe used by gradient checks"""
    if weights is None:
        return x.sum()
    return (x * Tensor._wrap(np.asarray(weights, dtype=x.data.dtype), False)).sum()
