"""Forward primitives and their reverse-mode rules.

All convolutions are stride-1 with same-centered zero padding, so every
spatial extent is preserved; this is the only geometry the networks here
need.  Kernel layouts:

* ``standard-1d``  w: (out, in, k)          x: (b, in, L)
* ``standard-2d``  w: (out, in, kh, kw)     x: (b, in, H, W)
* ``standard-3d``  w: (out, in, kd, kh, kw) x: (b, in, D, H, W)
* ``depthwise-2d`` w: (C, 1, kh, kw)        x: (b, C, H, W)
* ``pointwise``    w: (out, in)             x: (b, in, *spatial)

A leading batch axis may be omitted for the non-pointwise kinds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor

__all__ = [
    "ConvSpec", "convolve", "pool_avg", "global_avg", "linear", "normalize",
    "relu", "softmax", "cross_entropy", "upsample_bilinear", "take_pixels",
]

_STANDARD_DIMS = {"standard-1d": 1, "standard-2d": 2, "standard-3d": 3}
_KINDS = set(_STANDARD_DIMS) | {"depthwise-2d", "pointwise"}


@dataclass(frozen=True)
class ConvSpec:
    """Convolution geometry; only stride-1 same-centered forms are supported."""

    kind: str
    stride: int = 1
    padding: str = "same-centered"

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown convolution kind {self.kind!r}")
        if self.stride != 1:
            raise ValueError(f"stride {self.stride} unsupported; only stride 1 is implemented")
        if self.padding != "same-centered":
            raise ValueError(f"padding {self.padding!r} unsupported")


def _check_extents(extents):
    for axis, e in enumerate(extents):
        if e < 1 or e % 2 == 0:
            raise ValueError(
                f"kernel extent {e} along spatial axis {axis} must be odd and positive")


def _pad_same(x: np.ndarray, extents, spatial_start: int) -> np.ndarray:
    pads = [(0, 0)] * spatial_start + [((e - 1) // 2, (e - 1) // 2) for e in extents]
    return np.pad(x, pads)


def _conv_standard_np(x: np.ndarray, w: np.ndarray, d: int) -> np.ndarray:
    """x: (b, in, *sp) -> (b, out, *sp) for a d-dimensional standard kernel."""
    extents = w.shape[2:]
    xp = _pad_same(x, extents, 2)
    patches = sliding_window_view(xp, extents, axis=tuple(range(2, 2 + d)))
    # patches: (b, in, *sp, *extents); contract channel + kernel axes with w.
    x_axes = (1,) + tuple(range(2 + d, 2 + 2 * d))
    w_axes = (1,) + tuple(range(2, 2 + d))
    out = np.tensordot(patches, w, axes=(x_axes, w_axes))  # (b, *sp, out)
    return np.moveaxis(out, -1, 1)


def _conv_depthwise_np(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """x: (b, C, H, W), w: (C, 1, kh, kw) -> (b, C, H, W)."""
    extents = w.shape[2:]
    xp = _pad_same(x, extents, 2)
    patches = sliding_window_view(xp, extents, axis=(2, 3))
    return np.einsum("bchwyx,cyx->bchw", patches, w[:, 0])


def _grad_w_standard(g: np.ndarray, x: np.ndarray, w_shape, d: int) -> np.ndarray:
    extents = w_shape[2:]
    xp = _pad_same(x, extents, 2)
    patches = sliding_window_view(xp, extents, axis=tuple(range(2, 2 + d)))
    g_axes = (0,) + tuple(range(2, 2 + d))
    p_axes = (0,) + tuple(range(2, 2 + d))
    # (out, in, *extents)
    return np.tensordot(g, patches, axes=(g_axes, p_axes))


def _grad_w_depthwise(g: np.ndarray, x: np.ndarray, w_shape) -> np.ndarray:
    extents = w_shape[2:]
    xp = _pad_same(x, extents, 2)
    patches = sliding_window_view(xp, extents, axis=(2, 3))
    dw = np.einsum("bchw,bchwyx->cyx", g, patches)
    return dw[:, None]


def _flip_spatial(w: np.ndarray, d: int) -> np.ndarray:
    return np.flip(w, axis=tuple(range(w.ndim - d, w.ndim)))


def convolve(x: Tensor, w: Tensor, spec: ConvSpec) -> Tensor:
    """Stride-1 same-centered convolution; linear in both arguments."""
    xd, wd = x.data, w.data
    kind = spec.kind

    if kind == "pointwise":
        if wd.ndim != 2:
            raise ValueError(f"pointwise kernel must be 2-d, got rank {wd.ndim}")
        if xd.ndim < 3:
            raise ValueError("pointwise input must be batched (b, channels, *spatial)")
        if xd.shape[1] != wd.shape[1]:
            raise ValueError(
                f"channel axis 1 of input ({xd.shape[1]}) does not match kernel "
                f"input channels ({wd.shape[1]})")

        def fwd(xa):
            return np.moveaxis(np.tensordot(wd, xa, axes=((1,), (1,))), 0, 1)

        out_data = fwd(xd)

        def vjp(g):
            dx = np.moveaxis(np.tensordot(wd.T, g, axes=((1,), (1,))), 0, 1)
            sp = tuple(range(2, g.ndim))
            dw = np.tensordot(g, xd, axes=((0,) + sp, (0,) + sp))
            return dx, dw

        return Tensor._make(out_data, (x, w), vjp)

    if kind == "depthwise-2d":
        if wd.ndim != 4 or wd.shape[1] != 1:
            raise ValueError("depthwise-2d kernel must have shape (channels, 1, kh, kw)")
        _check_extents(wd.shape[2:])
        batched = xd.ndim == 4
        if xd.ndim not in (3, 4):
            raise ValueError(f"depthwise-2d input rank must be 3 or 4, got {xd.ndim}")
        xb = xd if batched else xd[None]
        if xb.shape[1] != wd.shape[0]:
            raise ValueError(
                f"channel axis 1 of input ({xb.shape[1]}) does not match kernel "
                f"channels ({wd.shape[0]})")
        out_data = _conv_depthwise_np(xb, wd)
        if not batched:
            out_data = out_data[0]

        def vjp(g):
            gb = g if batched else g[None]
            dx = _conv_depthwise_np(gb, _flip_spatial(wd, 2))
            dw = _grad_w_depthwise(gb, xb, wd.shape)
            return (dx if batched else dx[0]), dw

        return Tensor._make(out_data, (x, w), vjp)

    d = _STANDARD_DIMS[kind]
    if wd.ndim != 2 + d:
        raise ValueError(f"{kind} kernel must have rank {2 + d}, got {wd.ndim}")
    _check_extents(wd.shape[2:])
    batched = xd.ndim == 2 + d
    if xd.ndim not in (1 + d, 2 + d):
        raise ValueError(f"{kind} input rank must be {1 + d} or {2 + d}, got {xd.ndim}")
    xb = xd if batched else xd[None]
    if xb.shape[1] != wd.shape[1]:
        raise ValueError(
            f"channel axis 1 of input ({xb.shape[1]}) does not match kernel "
            f"input channels ({wd.shape[1]})")
    out_data = _conv_standard_np(xb, wd, d)
    if not batched:
        out_data = out_data[0]

    def vjp(g):
        gb = g if batched else g[None]
        w_t = np.swapaxes(_flip_spatial(wd, d), 0, 1)
        dx = _conv_standard_np(gb, w_t, d)
        dw = _grad_w_standard(gb, xb, wd.shape, d)
        return (dx if batched else dx[0]), dw

    return Tensor._make(out_data, (x, w), vjp)


def _pool_axis_np(x: np.ndarray, axis: int, factor: int) -> np.ndarray:
    length = x.shape[axis]
    padded = -(-length // factor) * factor
    if padded != length:
        pads = [(0, 0)] * x.ndim
        pads[axis] = (0, padded - length)
        x = np.pad(x, pads)
    shape = x.shape[:axis] + (padded // factor, factor) + x.shape[axis + 1:]
    return x.reshape(shape).sum(axis=axis + 1) / factor


def _unpool_axis_np(g: np.ndarray, axis: int, factor: int, length: int) -> np.ndarray:
    rep = np.repeat(g, factor, axis=axis) / factor
    index = [slice(None)] * g.ndim
    index[axis] = slice(0, length)
    return rep[tuple(index)]


def pool_avg(x: Tensor, factor: int, axes) -> Tensor:
    """Non-overlapping window average of ``factor`` along each given axis.

    A ragged right edge is zero-padded to complete the final window, so each
    pooled extent becomes ``ceil(extent / factor)``.
    """
    if not isinstance(factor, int) or factor < 1:
        raise ValueError(f"pooling factor must be a positive integer, got {factor}")
    axes = tuple(a % x.ndim for a in ((axes,) if isinstance(axes, int) else axes))
    if len(set(axes)) != len(axes):
        raise ValueError("repeated pooling axes")
    lengths = [x.data.shape[a] for a in axes]

    out_data = x.data
    for a in axes:
        out_data = _pool_axis_np(out_data, a, factor)

    def vjp(g):
        for a, length in zip(reversed(axes), reversed(lengths)):
            g = _unpool_axis_np(g, a, factor, length)
        return (g,)

    return Tensor._make(out_data, (x,), vjp)


def global_avg(x: Tensor, spatial_axes=None) -> Tensor:
    """Mean over the spatial axes, keeping them as size-1 dims.

    With the default, spatial axes are everything after (batch, channel) for
    rank >= 3 inputs, and everything after the channel axis for rank 2.
    """
    if x.ndim < 2:
        raise ValueError(f"global_avg needs rank >= 2, got {x.ndim}")
    if spatial_axes is None:
        spatial_axes = tuple(range(2, x.ndim)) if x.ndim >= 3 else (1,)
    return x.mean(axis=tuple(spatial_axes), keepdims=True)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map ``x @ w + b`` with w of shape (n_in, n_out)."""
    xd, wd, bd = x.data, w.data, b.data
    if wd.ndim != 2 or bd.shape != (wd.shape[1],):
        raise ValueError("linear expects w (n_in, n_out) and b (n_out,)")
    batched = xd.ndim == 2
    if xd.ndim not in (1, 2):
        raise ValueError(f"linear input rank must be 1 or 2, got {xd.ndim}")
    if xd.shape[-1] != wd.shape[0]:
        raise ValueError(
            f"inner axis of input ({xd.shape[-1]}) does not match w rows ({wd.shape[0]})")
    xb = xd if batched else xd[None]
    out_data = xb @ wd + bd
    if not batched:
        out_data = out_data[0]

    def vjp(g):
        gb = g if batched else g[None]
        dx = gb @ wd.T
        dw = xb.T @ gb
        db = gb.sum(axis=0)
        return (dx if batched else dx[0]), dw, db

    return Tensor._make(out_data, (x, w, b), vjp)


def _affine(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    shape = (1, gamma.size) + (1,) * (x.ndim - 2)
    return x * gamma.reshape(shape) + beta.reshape(shape)


def normalize(x: Tensor, mode: str, gamma: Tensor, beta: Tensor, *,
              groups: int | None = None, eps: float = 1e-5) -> Tensor:
    """Batch or group normalization from the statistics of ``x`` itself.

    ``x`` is (b, C, *spatial).  Batch mode shares statistics per channel over
    the batch and spatial axes; group mode computes them per sample per group
    of ``C // groups`` channels.
    """
    if x.ndim < 2:
        raise ValueError(f"normalize needs rank >= 2, got {x.ndim}")
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ValueError("gamma/beta must be per-channel vectors")

    if mode == "batch":
        axes = (0,) + tuple(range(2, x.ndim))
        mean = x.mean(axis=axes, keepdims=True)
        centered = x - mean
        var = (centered * centered).mean(axis=axes, keepdims=True)
        return _affine(centered / (var + eps).sqrt(), gamma, beta)

    if mode == "group":
        if groups is None or groups < 1:
            raise ValueError("group mode needs a positive groups count")
        if channels % groups:
            raise ValueError(
                f"channels ({channels}) not divisible by groups ({groups})")
        b = x.shape[0]
        xg = x.reshape((b, groups, channels // groups) + x.shape[2:])
        axes = tuple(range(2, xg.ndim))
        mean = xg.mean(axis=axes, keepdims=True)
        centered = xg - mean
        var = (centered * centered).mean(axis=axes, keepdims=True)
        normed = (centered / (var + eps).sqrt()).reshape(x.shape)
        return _affine(normed, gamma, beta)

    raise ValueError(f"unknown normalization mode {mode!r}")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out_data = np.where(mask, x.data, 0.0)

    def vjp(g):
        return (g * mask,)

    return Tensor._make(out_data, (x,), vjp)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shift = Tensor(x.data.max(axis=axis, keepdims=True))
    e = (x - shift).exp()
    return e / e.sum(axis=axis, keepdims=True)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``logits``.

    Accepts (K,) with a scalar label or (n, K) with n labels.
    """
    z = logits.data
    batched = z.ndim == 2
    if z.ndim not in (1, 2):
        raise ValueError(f"logits rank must be 1 or 2, got {z.ndim}")
    zb = z if batched else z[None]
    lab = np.atleast_1d(np.asarray(labels))
    if lab.shape != (zb.shape[0],):
        raise ValueError(
            f"labels shape {lab.shape} does not match batch size {zb.shape[0]}")
    if not np.issubdtype(lab.dtype, np.integer):
        raise ValueError("labels must be integers")
    k = zb.shape[1]
    if lab.min() < 0 or lab.max() >= k:
        raise ValueError(f"label out of range [0, {k})")

    m = zb.max(axis=1, keepdims=True)
    ez = np.exp(zb - m)
    lse = m[:, 0] + np.log(ez.sum(axis=1))
    n = zb.shape[0]
    rows = np.arange(n)
    out_data = np.asarray((lse - zb[rows, lab]).mean())

    def vjp(g):
        p = ez / ez.sum(axis=1, keepdims=True)
        p[rows, lab] -= 1.0
        dz = p * (float(g) / n)
        return (dz if batched else dz[0],)

    return Tensor._make(out_data, (logits,), vjp)


def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Corner-aligned 1-d linear interpolation as an (n_out, n_in) matrix."""
    a = np.zeros((n_out, n_in))
    if n_out == 1:
        src = np.zeros(1)
    else:
        src = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lo = np.minimum(src.astype(int), n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    rows = np.arange(n_out)
    np.add.at(a, (rows, lo), 1.0 - frac)
    np.add.at(a, (rows, hi), frac)
    return a


def _apply_hw(x3: np.ndarray, ah: np.ndarray, aw: np.ndarray) -> np.ndarray:
    t = np.moveaxis(np.tensordot(ah, x3, axes=((1,), (1,))), 0, 1)
    return np.tensordot(t, aw, axes=((2,), (1,)))


def upsample_bilinear(x: Tensor, target_hw) -> Tensor:
    """Bilinear resample of the last two axes to ``target_hw`` (corner-aligned)."""
    th, tw = target_hw
    if th < 1 or tw < 1:
        raise ValueError(f"target size must be positive, got {(th, tw)}")
    if x.ndim < 2:
        raise ValueError(f"upsample_bilinear needs rank >= 2, got {x.ndim}")
    h, w = x.shape[-2:]
    lead = x.shape[:-2]
    ah, aw = _interp_matrix(h, th), _interp_matrix(w, tw)
    x3 = x.data.reshape((-1, h, w))
    out_data = _apply_hw(x3, ah, aw).reshape(lead + (th, tw))

    def vjp(g):
        g3 = g.reshape((-1, th, tw))
        return (_apply_hw(g3, ah.T, aw.T).reshape(lead + (h, w)),)

    return Tensor._make(out_data, (x,), vjp)


def take_pixels(x: Tensor, rows, cols) -> Tensor:
    """Gather per-pixel channel vectors from a (1, C, H, W) map -> (n, C)."""
    if x.ndim != 4 or x.shape[0] != 1:
        raise ValueError("take_pixels expects a single (1, C, H, W) map")
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    out_data = x.data[0][:, rows, cols].T.copy()

    def vjp(g):
        dx = np.zeros_like(x.data)
        np.add.at(dx[0], (slice(None), rows, cols), g.T)
        return (dx,)

    return Tensor._make(out_data, (x,), vjp)
