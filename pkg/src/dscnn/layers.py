"""Differentiable layers used by the segmentation networks.

Convolutions are lowered to matrix products over im2col buffers.  The
buffers and the products are kept in float64 so that reductions accumulate
in double precision; results are stored back in the input dtype.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DimensionError
from .tensor import Tensor, make_node

ACC = np.float64


def _out_dtype(*arrays):
    return np.result_type(*[a.dtype for a in arrays])


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """(N, C, Hp, Wp) -> (N, C*kh*kw, ho*wo) in float64."""
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=ACC)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols.reshape(n, c * kh * kw, ho * wo)


def _col2im(cols: np.ndarray, c: int, kh: int, kw: int, stride: int, ho: int, wo: int,
            hp: int, wp: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add columns back onto a padded image."""
    n = cols.shape[0]
    cols = cols.reshape(n, c, kh, kw, ho, wo)
    out = np.zeros((n, c, hp, wp), dtype=ACC)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, :, i, j]
    return out


def _bias_shape_ok(bias: Tensor | None, channels: int) -> None:
    if bias is not None and bias.shape != (1, channels, 1, 1):
        raise DimensionError(f"bias must have shape (1, {channels}, 1, 1), got {bias.shape}")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0) -> Tensor:
    """Cross-correlation of ``x`` (N, C, H, W) with ``weight`` (O, C, kh, kw)."""
    n, c, h, w = x.shape
    o, wc, kh, kw = weight.shape
    if wc != c:
        raise DimensionError(f"conv2d: input has {c} channels, kernel expects {wc}")
    _bias_shape_ok(bias, o)
    hp, wp = h + 2 * padding, w + 2 * padding
    ho, wo = (hp - kh) // stride + 1, (wp - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} does not fit input {h}x{w}")
    dtype = _out_dtype(x.data, weight.data)

    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    if kh == 1 and kw == 1 and stride == 1:
        cols = xp.reshape(n, c, ho * wo).astype(ACC)
    else:
        cols = _im2col(xp, kh, kw, stride, ho, wo)
    wmat = weight.data.reshape(o, -1).astype(ACC)
    out = np.matmul(wmat, cols)
    if bias is not None:
        out += bias.data.reshape(1, o, 1).astype(ACC)
    out = out.reshape(n, o, ho, wo).astype(dtype)

    def bw(g):
        gm = g.reshape(n, o, ho * wo).astype(ACC, copy=False)
        gw = np.tensordot(gm, cols, axes=([0, 2], [0, 2])).reshape(weight.shape)
        gcols = np.matmul(wmat.T, gm)
        if kh == 1 and kw == 1 and stride == 1:
            gxp = gcols.reshape(n, c, hp, wp)
        else:
            gxp = _col2im(gcols, c, kh, kw, stride, ho, wo, hp, wp)
        gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        gb = gm.sum(axis=(0, 2)).reshape(1, o, 1, 1) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(out, parents, bw, "conv2d")


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
                     padding: int = 0) -> Tensor:
    """Transposed convolution; ``weight`` is laid out (in_ch, out_ch, kh, kw).

    Output size is ``stride * (H - 1) + kh - 2 * padding``, i.e. the input-side
    shape of a forward :func:`conv2d` with the same kernel, stride and padding.
    """
    n, c, h, w = x.shape
    wc, o, kh, kw = weight.shape
    if wc != c:
        raise DimensionError(f"conv_transpose2d: input has {c} channels, kernel expects {wc}")
    _bias_shape_ok(bias, o)
    hf, wf = stride * (h - 1) + kh, stride * (w - 1) + kw
    ho, wo = hf - 2 * padding, wf - 2 * padding
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv_transpose2d: padding {padding} crops output to nothing")
    dtype = _out_dtype(x.data, weight.data)

    xm = x.data.reshape(n, c, h * w).astype(ACC)
    wmat = weight.data.reshape(c, -1).astype(ACC)
    cols = np.matmul(wmat.T, xm)
    full = _col2im(cols, o, kh, kw, stride, h, w, hf, wf)
    out = full[:, :, padding:padding + ho, padding:padding + wo]
    if bias is not None:
        out = out + bias.data.astype(ACC)
    out = out.astype(dtype)

    def bw(g):
        gp = g.astype(ACC, copy=False)
        if padding:
            gp = np.pad(gp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        gcols = _im2col(gp, kh, kw, stride, h, w)
        gx = np.matmul(wmat, gcols).reshape(n, c, h, w)
        gw = np.tensordot(xm, gcols, axes=([0, 2], [0, 2])).reshape(weight.shape)
        gb = g.sum(axis=(0, 2, 3), dtype=ACC).reshape(1, o, 1, 1) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(out, parents, bw, "conv_transpose2d")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_node(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function, evaluated through exp(-|x|) so it never overflows."""
    e = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return make_node(out, (x,), lambda g: (g * out * (1 - out),), "sigmoid")


def maxpool2d(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2; gradient goes to the first maximum in row-major order."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"maxpool2d needs even height and width, got {h}x{w}")
    win = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(n, c, h // 2, w // 2, 4)
    idx = np.argmax(win, axis=-1)[..., None]
    out = np.take_along_axis(win, idx, axis=-1)[..., 0]

    def bw(g):
        gw = np.zeros((n, c, h // 2, w // 2, 4), dtype=g.dtype)
        np.put_along_axis(gw, idx, g[..., None], axis=-1)
        gw = gw.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (gw.reshape(n, c, h, w),)

    return make_node(out, (x,), bw, "maxpool2d")


def upsample(x: Tensor, factor: int = 2) -> Tensor:
    """Nearest-neighbour upsampling; each value fills a ``factor x factor`` block."""
    if factor < 1:
        raise DimensionError(f"upsample factor must be >= 1, got {factor}")
    if factor == 1:
        return x
    n, c, h, w = x.shape
    out = np.broadcast_to(x.data[:, :, :, None, :, None], (n, c, h, factor, w, factor))
    out = out.reshape(n, c, h * factor, w * factor)

    def bw(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return make_node(np.ascontiguousarray(out), (x,), bw, "upsample")


def concat(a: Tensor, b: Tensor) -> Tensor:
    """Join along the channel axis."""
    if (a.shape[0], a.shape[2], a.shape[3]) != (b.shape[0], b.shape[2], b.shape[3]):
        raise DimensionError(f"concat: shapes {a.shape} and {b.shape} differ outside channels")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)
    return make_node(out, (a, b), lambda g: (g[:, :ca], g[:, ca:]), "concat")


# layer objects ---------------------------------------------------------------


def kaiming_normal(rng: np.random.Generator, shape, fan_in: float, dtype=np.float32) -> np.ndarray:
    return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(dtype)


class Conv2d:
    """Same-padded stride-1 convolution with a 1x1 or 3x3 kernel."""

    def __init__(self, in_ch: int, out_ch: int, kernel_size: int = 3,
                 rng: np.random.Generator | None = None):
        if kernel_size not in (1, 3):
            raise DimensionError(f"kernel size must be 1 or 3, got {kernel_size}")
        rng = rng if rng is not None else np.random.default_rng(0)
        k = kernel_size
        self.in_ch, self.out_ch, self.kernel_size = in_ch, out_ch, k
        self.padding = (k - 1) // 2
        self.weight = Tensor(kaiming_normal(rng, (out_ch, in_ch, k, k), in_ch * k * k),
                             requires_grad=True)
        self.bias = Tensor(np.zeros((1, out_ch, 1, 1), np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=1, padding=self.padding)

    def parameters(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}


class Deconv2d:
    """Transposed convolution with a learned kernel (in_ch, out_ch, k, k)."""

    def __init__(self, in_ch: int, out_ch: int, kernel_size: int = 3, stride: int = 1,
                 padding: int = 0, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        k = kernel_size
        self.in_ch, self.out_ch, self.kernel_size = in_ch, out_ch, k
        self.stride, self.padding = stride, padding
        fan_in = in_ch * k * k / (stride * stride)
        self.weight = Tensor(kaiming_normal(rng, (in_ch, out_ch, k, k), fan_in), requires_grad=True)
        self.bias = Tensor(np.zeros((1, out_ch, 1, 1), np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return conv_transpose2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)

    def parameters(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}
