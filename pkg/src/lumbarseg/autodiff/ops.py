"""Differentiable volumetric layers.

Tensors are channels-first, ``(batch, channels, depth, height, width)``.
Convolutions switch to a channels-last copy internally because a matmul over
the trailing channel axis of a shifted view is far cheaper in numpy than an
explicit im2col buffer once there are more than a handful of channels.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import NumericError, ShapeError
from .tensor import Tensor, make_result

BN_EPS = 1e-5
BN_MOMENTUM = 0.9

# below this many input channels the per-offset matmuls are too skinny for BLAS
_IM2COL_MAX_CHANNELS = 4


def _require_5d(x, what):
    if x.ndim != 5:
        raise ShapeError(f"{what} expects a (N, C, D, H, W) tensor, got shape {x.shape}")


def _to_last(a):
    return np.ascontiguousarray(np.moveaxis(a, 1, -1))


def _to_first(a):
    return np.ascontiguousarray(np.moveaxis(a, -1, 1))


def _same_padding(kernel_shape, padding):
    if padding == "valid":
        return (0, 0, 0)
    if padding != "same":
        raise ValueError(f"unknown padding mode {padding!r}")
    if any(k % 2 == 0 for k in kernel_shape):
        raise ShapeError(f"'same' padding needs odd kernel extents, got {kernel_shape}")
    return tuple((k - 1) // 2 for k in kernel_shape)


def _correlate_last(xp, wl, out_extents):
    """Valid correlation of channels-last ``xp`` with ``wl`` of shape ``(kd, kh, kw, C, O)``."""
    do, ho, wo = out_extents
    kd, kh, kw, _, o = wl.shape
    out = np.zeros(xp.shape[:1] + (do, ho, wo, o), dtype=np.result_type(xp, wl))
    for a in range(kd):
        for b in range(kh):
            for e in range(kw):
                out += xp[:, a:a + do, b:b + ho, e:e + wo, :] @ wl[a, b, e]
    return out


def conv3d_raw(x, kernel, bias=None, padding="same"):
    """Stride-1 3D convolution (cross-correlation, as in every DL framework).

    ``kernel`` has shape ``(out_channels, in_channels, kd, kh, kw)``.
    """
    _require_5d(x, "conv3d")
    n, c, d, h, w = x.shape
    o, kc, kd, kh, kw = kernel.shape
    if kc != c:
        raise ShapeError(f"conv3d: input has {c} channels but kernel expects {kc}")
    if not np.all(np.isfinite(x.data)):
        raise NumericError("conv3d: input contains non-finite values")
    pd, ph, pw = _same_padding((kd, kh, kw), padding)
    do, ho, wo = d + 2 * pd - kd + 1, h + 2 * ph - kh + 1, w + 2 * pw - kw + 1
    if min(do, ho, wo) < 1:
        raise ShapeError(f"conv3d: kernel {kernel.shape[2:]} larger than padded input {x.shape[2:]}")

    xl = _to_last(x.data)
    if pd or ph or pw:
        xp = np.pad(xl, ((0, 0), (pd, pd), (ph, ph), (pw, pw), (0, 0)))
    else:
        xp = xl
    # (kd, kh, kw, C, O)
    wl = np.ascontiguousarray(kernel.data.transpose(2, 3, 4, 1, 0))
    offsets = [(a, b, e) for a in range(kd) for b in range(kh) for e in range(kw)]
    use_cols = c <= _IM2COL_MAX_CHANNELS and len(offsets) > 1

    cols = None
    if use_cols:
        view = sliding_window_view(xp, (kd, kh, kw), axis=(1, 2, 3))
        # view: (N, Do, Ho, Wo, C, kd, kh, kw) -> rows ordered (kd, kh, kw, C)
        cols = np.ascontiguousarray(view.transpose(0, 1, 2, 3, 5, 6, 7, 4)).reshape(-1, kd * kh * kw * c)
        out = (cols @ wl.reshape(-1, o)).reshape(n, do, ho, wo, o)
    else:
        out = _correlate_last(xp, wl, (do, ho, wo))
    if bias is not None:
        out += bias.data
    result = _to_first(out)

    def backward(g):
        gl = _to_last(g)
        g2 = gl.reshape(-1, o)
        if bias is not None and bias.requires_grad:
            bias.accumulate(g2.sum(axis=0))
        if kernel.requires_grad:
            if use_cols:
                gw = (cols.T @ g2).reshape(kd, kh, kw, c, o)
            else:
                gw = np.empty_like(wl)
                for a, b, e in offsets:
                    shifted = xp[:, a:a + do, b:b + ho, e:e + wo, :]
                    gw[a, b, e] = np.matmul(shifted.swapaxes(-1, -2), gl).sum(axis=(0, 1, 2))
            kernel.accumulate(gw.transpose(4, 3, 0, 1, 2))
        if x.requires_grad:
            # input gradient = full correlation of g with the flipped, transposed kernel
            qd, qh, qw = kd - 1 - pd, kh - 1 - ph, kw - 1 - pw
            gp = np.pad(gl, ((0, 0), (qd, qd), (qh, qh), (qw, qw), (0, 0))) if qd or qh or qw else gl
            wf = np.ascontiguousarray(wl[::-1, ::-1, ::-1].transpose(0, 1, 2, 4, 3))
            x.accumulate(_to_first(_correlate_last(gp, wf, (d, h, w))))

    return make_result(result, (x, kernel) + ((bias,) if bias is not None else ()), backward)


def conv_transpose3d_raw(x, kernel, bias=None):
    """2x2x2, stride-2 transposed convolution; doubles every spatial extent.

    ``kernel`` has shape ``(in_channels, out_channels, 2, 2, 2)``.
    """
    _require_5d(x, "transposed_conv3d")
    n, c, d, h, w = x.shape
    kc, o = kernel.shape[:2]
    if kc != c or kernel.shape[2:] != (2, 2, 2):
        raise ShapeError(f"transposed_conv3d: kernel {kernel.shape} incompatible with input {x.shape}")
    xl = _to_last(x.data)
    wm = kernel.data.transpose(0, 2, 3, 4, 1).reshape(c, 8 * o)  # (C, [a, b, e, O])
    y = (xl.reshape(-1, c) @ wm).reshape(n, d, h, w, 2, 2, 2, o)
    y = y.transpose(0, 1, 4, 2, 5, 3, 6, 7).reshape(n, 2 * d, 2 * h, 2 * w, o)
    if bias is not None:
        y = y + bias.data
    result = _to_first(y)

    def backward(g):
        gl = _to_last(g)
        if bias is not None and bias.requires_grad:
            bias.accumulate(gl.reshape(-1, o).sum(axis=0))
        gb = gl.reshape(n, d, 2, h, 2, w, 2, o).transpose(0, 1, 3, 5, 2, 4, 6, 7).reshape(-1, 8 * o)
        if kernel.requires_grad:
            gw = (xl.reshape(-1, c).T @ gb).reshape(c, 2, 2, 2, o).transpose(0, 4, 1, 2, 3)
            kernel.accumulate(gw)
        if x.requires_grad:
            x.accumulate(_to_first((gb @ wm.T).reshape(n, d, h, w, c)))

    return make_result(result, (x, kernel) + ((bias,) if bias is not None else ()), backward)


def _pool_blocks(a):
    n, c, d, h, w = a.shape
    blocks = a.reshape(n, c, d // 2, 2, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 6, 3, 5, 7)
    return blocks.reshape(n, c, d // 2, h // 2, w // 2, 8)


def maxpool3d(x):
    """2x2x2 max pooling with stride 2. Returns ``(output, argmax_indices)``.

    The indices address the flattened 2x2x2 block of each output voxel; ties
    resolve to the first maximal position in (z, y, x) order.
    """
    _require_5d(x, "maxpool3d")
    n, c, d, h, w = x.shape
    if d % 2 or h % 2 or w % 2:
        raise ShapeError(f"maxpool3d needs even spatial extents, got {(d, h, w)}")
    blocks = _pool_blocks(x.data)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        gb = gb.reshape(n, c, d // 2, h // 2, w // 2, 2, 2, 2).transpose(0, 1, 2, 5, 3, 6, 4, 7)
        x.accumulate(gb.reshape(x.shape))

    return make_result(np.ascontiguousarray(out), (x,), backward), idx


def pool_has_ties(x, rtol=0.0):
    """True where a 2x2x2 block's maximum is attained more than once."""
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    blocks = _pool_blocks(data)
    top = blocks.max(axis=-1, keepdims=True)
    tol = rtol * np.abs(top)
    return (np.abs(blocks - top) <= tol).sum(axis=-1) > 1


def batch_norm_raw(x, scale, shift, running_mean, running_var, training, momentum=BN_MOMENTUM, eps=BN_EPS):
    """Per-channel batch normalization.

    In training mode the batch statistics normalize the input and the running
    buffers (plain numpy arrays) are updated in place by an exponential moving
    average that keeps ``momentum`` of the old value.
    """
    _require_5d(x, "batch_norm3d")
    axes = (0, 2, 3, 4)
    bshape = (1, -1, 1, 1, 1)
    count = x.data.size // x.shape[1]
    if training:
        mean = x.data.mean(axis=axes)
        centered = x.data - mean.reshape(bshape)
        var = (centered * centered).mean(axis=axes)
        inv_std = 1.0 / np.sqrt(var + eps)
        unbiased = var * (count / (count - 1)) if count > 1 else var
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mean
        running_var *= momentum
        running_var += (1.0 - momentum) * unbiased
    else:
        centered = x.data - running_mean.reshape(bshape).astype(x.dtype)
        inv_std = (1.0 / np.sqrt(running_var + eps)).astype(x.dtype)
    xhat = centered * inv_std.reshape(bshape)
    out = xhat * scale.data.reshape(bshape) + shift.data.reshape(bshape)

    def backward(g):
        if shift.requires_grad:
            shift.accumulate(g.sum(axis=axes))
        if scale.requires_grad:
            scale.accumulate((g * xhat).sum(axis=axes))
        if not x.requires_grad:
            return
        gx_hat = g * scale.data.reshape(bshape)
        if training:
            s1 = gx_hat.sum(axis=axes).reshape(bshape)
            s2 = (gx_hat * xhat).sum(axis=axes).reshape(bshape)
            gx = (gx_hat - (s1 + xhat * s2) / count) * inv_std.reshape(bshape)
        else:
            gx = gx_hat * inv_std.reshape(bshape)
        x.accumulate(gx)

    return make_result(out, (x, scale, shift), backward)


def relu(x):
    mask = x.data > 0

    def backward(g):
        x.accumulate(g * mask)

    return make_result(x.data * mask, (x,), backward)


def softmax_channels(x):
    """Softmax over axis 1, stabilised by subtracting the per-voxel maximum."""
    if x.ndim < 2 or x.shape[1] < 1:
        raise ShapeError(f"softmax_channels needs a channel axis, got shape {x.shape}")
    p = softmax_array(x.data)

    def backward(g):
        x.accumulate(p * (g - (g * p).sum(axis=1, keepdims=True)))

    return make_result(p, (x,), backward)


def softmax_array(a, axis=1):
    z = a - a.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def concat(tensors, axis=1):
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(lo, hi)
                t.accumulate(np.ascontiguousarray(g[tuple(index)]))

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)
