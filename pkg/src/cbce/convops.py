"""Spatial operations: dilated convolution, pooling, bilinear resizing.

All maps are H x W x C. Convolutions are stride-1 cross-correlations with
"same" padding of dilation * (k - 1) / 2 per side, implemented as k*k
shifted matrix products so numpy's BLAS does the heavy lifting. Padding
replicates the border pixel, so translation-invariant stacks keep
spatially constant inputs exactly constant.
"""
from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, record_op


def _pad_edge(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((pad, pad), (pad, pad), (0, 0)), mode="edge")


def _fold_pad_gradient(dxp: np.ndarray, pad: int, h: int, w: int) -> np.ndarray:
    """Collapse gradient mass on replicated padding back onto the edges."""
    if pad == 0:
        return dxp
    rows = dxp[pad : pad + h].copy()
    rows[0] += dxp[:pad].sum(axis=0)
    rows[-1] += dxp[pad + h :].sum(axis=0)
    dx = rows[:, pad : pad + w].copy()
    dx[:, 0] += rows[:, :pad].sum(axis=1)
    dx[:, -1] += rows[:, pad + w :].sum(axis=1)
    return dx


def _check_kernel(k: int, dilation: int):
    if k % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {k}")
    if not isinstance(dilation, (int, np.integer)) or dilation < 1:
        raise ValueError(f"dilation must be a positive integer, got {dilation!r}")


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, dilation: int = 1) -> Tensor:
    """Dilated 2-D cross-correlation.

    x: (H, W, Cin), w: (k, k, Cin, Cout), bias: (Cout,) or None.
    Output spatial size equals input ("same" padding).
    """
    if x.ndim != 3:
        raise ShapeError(f"conv2d input must be (H, W, Cin), got {x.shape}")
    if w.ndim != 4 or w.shape[0] != w.shape[1]:
        raise ShapeError(f"conv2d kernel must be (k, k, Cin, Cout), got {w.shape}")
    k = w.shape[0]
    _check_kernel(k, dilation)
    if w.shape[2] != x.shape[2]:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs kernel {w.shape}")
    h, wid, cin = x.shape
    cout = w.shape[3]
    pad = dilation * (k - 1) // 2
    xp = _pad_edge(x.data, pad)
    wd = w.data

    acc = np.zeros((h * wid, cout), dtype=x.dtype)
    for a in range(k):
        for b in range(k):
            xs = xp[a * dilation : a * dilation + h, b * dilation : b * dilation + wid]
            acc += xs.reshape(-1, cin) @ wd[a, b]
    out = acc.reshape(h, wid, cout)
    if bias is not None:
        if bias.shape != (cout,):
            raise ShapeError(f"conv2d bias must be ({cout},), got {bias.shape}")
        out = out + bias.data

    def bwd(g):
        g2 = g.reshape(-1, cout)
        dw = np.empty_like(wd)
        dxp = np.zeros_like(xp)
        for a in range(k):
            for b in range(k):
                sl = (
                    slice(a * dilation, a * dilation + h),
                    slice(b * dilation, b * dilation + wid),
                )
                xs = xp[sl]
                dw[a, b] = xs.reshape(-1, cin).T @ g2
                dxp[sl] += (g2 @ wd[a, b].T).reshape(h, wid, cin)
        grads = [_fold_pad_gradient(dxp, pad, h, wid), dw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 1)))
        return tuple(grads)

    inputs = (x, w) if bias is None else (x, w, bias)
    return record_op("conv2d", out, inputs, bwd)


def depthwise_conv2d(x: Tensor, w: Tensor, dilation: int = 1) -> Tensor:
    """Per-channel dilated convolution; w is (k, k, Cin)."""
    if x.ndim != 3:
        raise ShapeError(f"depthwise_conv2d input must be (H, W, Cin), got {x.shape}")
    if w.ndim != 3 or w.shape[0] != w.shape[1]:
        raise ShapeError(f"depthwise kernel must be (k, k, Cin), got {w.shape}")
    k = w.shape[0]
    _check_kernel(k, dilation)
    if w.shape[2] != x.shape[2]:
        raise ShapeError(f"depthwise channel mismatch: input {x.shape} vs kernel {w.shape}")
    h, wid, cin = x.shape
    pad = dilation * (k - 1) // 2
    xp = _pad_edge(x.data, pad)
    wd = w.data

    out = np.zeros((h, wid, cin), dtype=x.dtype)
    for a in range(k):
        for b in range(k):
            out += xp[a * dilation : a * dilation + h, b * dilation : b * dilation + wid] * wd[a, b]

    def bwd(g):
        dw = np.empty_like(wd)
        dxp = np.zeros_like(xp)
        for a in range(k):
            for b in range(k):
                sl = (
                    slice(a * dilation, a * dilation + h),
                    slice(b * dilation, b * dilation + wid),
                )
                dw[a, b] = (xp[sl] * g).sum(axis=(0, 1))
                dxp[sl] += g * wd[a, b]
        return _fold_pad_gradient(dxp, pad, h, wid), dw

    return record_op("depthwise_conv2d", out, (x, w), bwd)


def depthwise_separable_conv(
    x: Tensor,
    depthwise_w: Tensor,
    pointwise_w: Tensor,
    dilation: int = 1,
    bias: Tensor | None = None,
) -> Tensor:
    """Depthwise k x k stage followed by a 1x1 pointwise mix.

    pointwise_w is (1, 1, Cin, Cout); equivalent to a single conv2d with
    kernel K[a,b,ci,co] = depthwise_w[a,b,ci] * pointwise_w[0,0,ci,co].
    """
    if pointwise_w.ndim != 4 or pointwise_w.shape[:2] != (1, 1):
        raise ShapeError(f"pointwise kernel must be (1, 1, Cin, Cout), got {pointwise_w.shape}")
    mixed = depthwise_conv2d(x, depthwise_w, dilation)
    return conv2d(mixed, pointwise_w, bias, dilation=1)


def global_avg_pool(x: Tensor) -> Tensor:
    """(H, W, C) -> (1, 1, C) spatial mean."""
    if x.ndim != 3:
        raise ShapeError(f"global_avg_pool input must be (H, W, C), got {x.shape}")
    h, w, _ = x.shape
    out = x.data.mean(axis=(0, 1), keepdims=True)
    shape = x.data.shape

    def bwd(g):
        return (np.broadcast_to(g / (h * w), shape).copy(),)

    return record_op("global_avg_pool", out, (x,), bwd)


def avg_pool2d(x: Tensor, window: int = 2) -> Tensor:
    """Non-overlapping window mean with ceil semantics.

    Inputs that do not fill the last window are edge-replicated before
    pooling, so the output always covers the full spatial extent and the
    cell-to-pixel geometry stays consistent across input sizes.
    """
    if x.ndim != 3:
        raise ShapeError(f"avg_pool2d input must be (H, W, C), got {x.shape}")
    if window < 1 or min(x.shape[0], x.shape[1]) < window:
        raise ShapeError(f"avg_pool2d window {window} too large for input {x.shape}")
    h, w, c = x.shape
    ph = (-h) % window
    pw = (-w) % window
    xp = np.pad(x.data, ((0, ph), (0, pw), (0, 0)), mode="edge") if ph or pw else x.data
    ho, wo = xp.shape[0] // window, xp.shape[1] // window
    out = xp.reshape(ho, window, wo, window, c).mean(axis=(1, 3))

    def bwd(g):
        spread = np.repeat(np.repeat(g, window, axis=0), window, axis=1) / (window * window)
        if ph:
            spread[h - 1] += spread[h:].sum(axis=0)
        rows = spread[:h]
        if pw:
            rows[:, w - 1] += rows[:, w:].sum(axis=1)
        return (np.ascontiguousarray(rows[:, :w]),)

    return record_op("avg_pool2d", out, (x,), bwd)


def _resize_axis(n_in: int, n_out: int):
    """Source indices/weights for align-corners=false bilinear sampling."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    i0f = np.floor(src)
    frac = src - i0f
    i0 = np.clip(i0f, 0, n_in - 1).astype(np.int64)
    i1 = np.clip(i0f + 1, 0, n_in - 1).astype(np.int64)
    return i0, i1, frac


def bilinear_upsample(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize of an (H, W, C) map to (out_h, out_w, C).

    align-corners=false semantics: output pixel centers are mapped back
    into the input grid, edges clamped. Works for both up and down
    scaling; resizing to the same size is the identity.
    """
    if x.ndim != 3:
        raise ShapeError(f"bilinear_upsample input must be (H, W, C), got {x.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError(f"bad target size {(out_h, out_w)}")
    h, w, c = x.shape
    r0, r1, fr = _resize_axis(h, out_h)
    c0, c1, fc = _resize_axis(w, out_w)
    fr_col = fr[:, None, None]
    fc_col = fc[None, :, None]
    xd = x.data

    rows = xd[r0] * (1.0 - fr_col) + xd[r1] * fr_col  # (out_h, W, C)
    out = rows[:, c0] * (1.0 - fc_col) + rows[:, c1] * fc_col

    def bwd(g):
        grows = np.zeros((out_h, w, c), dtype=g.dtype)
        # scatter over columns first, then rows; add.at handles clamped dupes
        gt = np.swapaxes(grows, 0, 1)  # view (W, out_h, C)
        np.add.at(gt, c0, np.swapaxes(g * (1.0 - fc_col), 0, 1))
        np.add.at(gt, c1, np.swapaxes(g * fc_col, 0, 1))
        dx = np.zeros((h, w, c), dtype=g.dtype)
        np.add.at(dx, r0, grows * (1.0 - fr_col))
        np.add.at(dx, r1, grows * fr_col)
        return (dx,)

    return record_op("bilinear_upsample", out, (x,), bwd)
