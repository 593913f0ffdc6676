"""Network operations over (channels, frames) tensors.

Convolution forward runs as an im2col gather plus one GEMM; its input
gradient is a per-tap scatter, which makes conv_transpose1d the exact
algebraic adjoint of conv1d when given the same weight array reinterpreted
as (in_channels, out_channels, k).
"""

import numpy as np

from ..errors import ParameterError, ShapeError
from .tensor import Tensor


def _pad_pair(padding):
    if isinstance(padding, tuple):
        left, right = padding
    else:
        left = right = int(padding)
    if left < 0 or right < 0:
        raise ParameterError("padding must be non-negative")
    return int(left), int(right)


def _check_2d(t, name):
    if not isinstance(t, Tensor):
        raise ParameterError(f"{name} must be a Tensor")
    if t.values.ndim != 2:
        raise ShapeError(f"{name} must be 2-D (channels, frames), got shape {t.shape}")


def conv1d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation of x (C_in, T) with weight (C_out, C_in, k).

    padding is an int or an explicit (left, right) pair of zero-padding
    amounts; output length is (T + left + right - k) // stride + 1.
    """
    _check_2d(x, "conv1d input")
    if weight.values.ndim != 3:
        raise ShapeError("conv1d weight must be 3-D (out, in, k)")
    c_out, c_in, k = weight.shape
    if x.shape[0] != c_in:
        raise ShapeError(f"conv1d: input has {x.shape[0]} channels, weight expects {c_in}")
    if stride < 1:
        raise ParameterError("stride must be >= 1")
    left, right = _pad_pair(padding)
    t_in = x.shape[1]
    t_pad = t_in + left + right
    if t_pad < k:
        raise ParameterError(f"conv1d: padded length {t_pad} shorter than kernel {k}")
    t_out = (t_pad - k) // stride + 1

    xv = x.values
    if left or right:
        xp = np.zeros((c_in, t_pad))
        xp[:, left : left + t_in] = xv
    else:
        xp = xv
    windows = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)[:, ::stride, :]
    col = windows.transpose(0, 2, 1).reshape(c_in * k, t_out)
    vals = weight.values.reshape(c_out, c_in * k) @ col
    if bias is not None:
        if bias.shape != (c_out,):
            raise ShapeError(f"conv1d bias must have shape ({c_out},)")
        vals = vals + bias.values[:, None]

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        if weight.requires_grad:
            gw = (g @ col.T).reshape(c_out, c_in, k)
            weight._accumulate(gw)
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=1))
        if x.requires_grad:
            gxp = np.zeros((c_in, t_pad))
            span = stride * (t_out - 1) + 1
            wv = weight.values
            for j in range(k):
                gxp[:, j : j + span : stride] += wv[:, :, j].T @ g
            x._accumulate(gxp[:, left : left + t_in])

    return Tensor._make(vals, parents, backward, "conv1d")


def conv_transpose1d(x, weight, bias=None, stride=1, padding=0):
    """Adjoint of conv1d: scatter x (C_in, T) through weight (C_in, C_out, k).

    The untrimmed output has length (T - 1) * stride + k; padding is an int
    or (left, right) pair trimmed off that full output.
    """
    _check_2d(x, "conv_transpose1d input")
    if weight.values.ndim != 3:
        raise ShapeError("conv_transpose1d weight must be 3-D (in, out, k)")
    c_in, c_out, k = weight.shape
    if x.shape[0] != c_in:
        raise ShapeError(
            f"conv_transpose1d: input has {x.shape[0]} channels, weight expects {c_in}"
        )
    if stride < 1:
        raise ParameterError("stride must be >= 1")
    left, right = _pad_pair(padding)
    t_in = x.shape[1]
    t_full = (t_in - 1) * stride + k
    if t_full - left - right < 1:
        raise ParameterError("conv_transpose1d: trim removes the whole output")

    xv = x.values
    wv = weight.values
    full = np.zeros((c_out, t_full))
    span = stride * (t_in - 1) + 1
    for j in range(k):
        full[:, j : j + span : stride] += wv[:, :, j].T @ xv
    vals = full[:, left : t_full - right].copy()
    if bias is not None:
        if bias.shape != (c_out,):
            raise ShapeError(f"conv_transpose1d bias must have shape ({c_out},)")
        vals = vals + bias.values[:, None]

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g_full = np.zeros((c_out, t_full))
        g_full[:, left : t_full - right] = g
        windows = np.lib.stride_tricks.sliding_window_view(g_full, k, axis=1)[:, ::stride, :]
        if x.requires_grad:
            col = windows.transpose(0, 2, 1).reshape(c_out * k, t_in)
            x._accumulate(wv.reshape(c_in, c_out * k) @ col)
        if weight.requires_grad:
            gw = np.empty_like(wv)
            for j in range(k):
                gw[:, :, j] = xv @ windows[:, :, j].T
            weight._accumulate(gw)
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=1))

    return Tensor._make(vals, parents, backward, "conv_transpose1d")


def linear(x, weight, bias=None):
    """weight (C_out, C_in) applied frame-wise to x (C_in, T)."""
    _check_2d(x, "linear input")
    if weight.values.ndim != 2:
        raise ShapeError("linear weight must be 2-D")
    c_out, c_in = weight.shape
    if x.shape[0] != c_in:
        raise ShapeError(f"linear: input has {x.shape[0]} channels, weight expects {c_in}")
    vals = weight.values @ x.values
    if bias is not None:
        if bias.shape != (c_out,):
            raise ShapeError(f"linear bias must have shape ({c_out},)")
        vals = vals + bias.values[:, None]

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        if weight.requires_grad:
            weight._accumulate(g @ x.values.T)
        if x.requires_grad:
            x._accumulate(weight.values.T @ g)
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=1))

    return Tensor._make(vals, parents, backward, "linear")


def concat_channels(a, b):
    """Stack two (C, T) tensors along the channel axis; frame counts must match."""
    _check_2d(a, "concat operand")
    _check_2d(b, "concat operand")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"concat_channels: frame counts {a.shape[1]} and {b.shape[1]} differ")
    ca = a.shape[0]
    vals = np.concatenate([a.values, b.values], axis=0)

    def backward(g):
        a._accumulate(g[:ca])
        b._accumulate(g[ca:])

    return Tensor._make(vals, (a, b), backward, "concat_channels")


def mse(a, b):
    """Mean squared difference as a scalar tensor."""
    if not isinstance(a, Tensor) or not isinstance(b, Tensor):
        raise ParameterError("mse expects Tensor operands")
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes {a.shape} and {b.shape} differ")
    if a.size == 0:
        raise ParameterError("mse of empty tensors")
    diff = a.values - b.values
    vals = np.asarray(np.mean(diff * diff))
    n = a.size

    def backward(g):
        scaled = (2.0 / n) * g * diff
        a._accumulate(scaled)
        b._accumulate(-scaled)

    return Tensor._make(vals, (a, b), backward, "mse")


def straight_through(x, target_values):
    """Forward the given values, backward the identity onto x.

    target_values is a plain array with x's shape; no gradient flows into it.
    """
    if not isinstance(x, Tensor):
        raise ParameterError("straight_through expects a Tensor input")
    tv = np.asarray(target_values, dtype=np.float64)
    if tv.shape != x.values.shape:
        raise ShapeError(f"straight_through: value shape {tv.shape} does not match {x.shape}")
    vals = tv.copy()

    def backward(g):
        x._accumulate(g)

    return Tensor._make(vals, (x,), backward, "straight_through")
