"""Deterministic forward-only tensor kernels.

Every kernel is a pure function: float32 in, float32 out, no shared state,
bit-identical results across repeated calls.  Dot-product style reductions
(convolution, dense, softmax) accumulate in float64 so long channel sums do
not lose low bits, then round once back to float32.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError
from .validation import as_float_array, check_nonnegative_int, check_positive_int


@dataclass(frozen=True, eq=False)
class ConvSpec:
    """Parameters of one 2-D cross-correlation layer.

    ``weights`` has shape [out_channels, in_channels, kernel_h, kernel_w] and
    ``bias`` shape [out_channels]; both are stored read-only as float32.
    """

    out_channels: int
    in_channels: int
    kernel_h: int
    kernel_w: int
    stride: int
    padding: int
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        for field in ("out_channels", "in_channels", "kernel_h", "kernel_w", "stride"):
            object.__setattr__(self, field, check_positive_int(getattr(self, field), field))
        object.__setattr__(self, "padding", check_nonnegative_int(self.padding, "padding"))
        weights = as_float_array(self.weights, rank=4, name="weights")
        expected = (self.out_channels, self.in_channels, self.kernel_h, self.kernel_w)
        if weights.shape != expected:
            raise ShapeError(f"weights: expected shape {expected}, got {weights.shape}")
        bias = as_float_array(self.bias, rank=1, name="bias")
        if bias.shape != (self.out_channels,):
            raise ShapeError(f"bias: expected shape ({self.out_channels},), got {bias.shape}")
        weights.setflags(write=False)
        bias.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "bias", bias)

    @property
    def param_count(self) -> int:
        return self.weights.size + self.bias.size


def conv_output_hw(spec: ConvSpec, h: int, w: int) -> tuple[int, int]:
    """Output spatial dims for ``spec`` applied to an h-by-w input.

    The padded span must be covered by the stride exactly; a remainder is
    rejected rather than silently cropped.
    """
    span_h = h + 2 * spec.padding - spec.kernel_h
    span_w = w + 2 * spec.padding - spec.kernel_w
    if span_h < 0 or span_w < 0:
        raise ShapeError(
            f"kernel {spec.kernel_h}x{spec.kernel_w} larger than padded input "
            f"{h + 2 * spec.padding}x{w + 2 * spec.padding}"
        )
    if span_h % spec.stride or span_w % spec.stride:
        raise ShapeError(
            f"stride {spec.stride} does not divide spans ({span_h}, {span_w}) "
            f"of {h}x{w} input exactly"
        )
    return span_h // spec.stride + 1, span_w // spec.stride + 1


def pool_output_hw(h: int, w: int, window: int, stride: int) -> tuple[int, int]:
    """Output spatial dims for max pooling; the input must cover one window."""
    if h < window or w < window:
        raise ShapeError(f"pooling window {window} exceeds input {h}x{w}")
    return (h - window) // stride + 1, (w - window) // stride + 1


def conv2d(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Cross-correlation with bias: [C,H,W] -> [out_channels,H',W']."""
    x = as_float_array(x, rank=3, name="conv2d input")
    c, h, w = x.shape
    if c != spec.in_channels:
        raise ShapeError(f"conv2d: input has {c} channels, spec expects {spec.in_channels}")
    oh, ow = conv_output_hw(spec, h, w)
    p = spec.padding
    padded = np.pad(x, ((0, 0), (p, p), (p, p))) if p else x
    windows = sliding_window_view(padded, (spec.kernel_h, spec.kernel_w), axis=(1, 2))
    windows = windows[:, :: spec.stride, :: spec.stride]
    cols = windows.transpose(1, 2, 0, 3, 4).reshape(oh * ow, -1).astype(np.float64)
    kernel = spec.weights.reshape(spec.out_channels, -1).astype(np.float64)
    out = cols @ kernel.T + spec.bias.astype(np.float64)
    return np.ascontiguousarray(out.T.reshape(spec.out_channels, oh, ow)).astype(np.float32)


def relu(x: np.ndarray) -> np.ndarray:
    """Elementwise max(0, x), shape preserved."""
    x = as_float_array(x, name="relu input")
    return np.maximum(x, np.float32(0.0))


def maxpool2d(x: np.ndarray, window: int, stride: int) -> np.ndarray:
    """Per-window maximum over square windows: [C,H,W] -> [C,H',W']."""
    x = as_float_array(x, rank=3, name="maxpool2d input")
    window = check_positive_int(window, "window")
    stride = check_positive_int(stride, "stride")
    _, h, w = x.shape
    pool_output_hw(h, w, window, stride)
    windows = sliding_window_view(x, (window, window), axis=(1, 2))[:, ::stride, ::stride]
    return np.ascontiguousarray(windows.max(axis=(3, 4)))


def dense(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine map out[k] = sum_d weights[k,d] * x[d] + bias[k]."""
    x = as_float_array(x, rank=1, name="dense input")
    weights = as_float_array(weights, rank=2, name="dense weights")
    bias = as_float_array(bias, rank=1, name="dense bias")
    k, d = weights.shape
    if x.shape[0] != d:
        raise ShapeError(f"dense: input length {x.shape[0]} != weight columns {d}")
    if bias.shape[0] != k:
        raise ShapeError(f"dense: bias length {bias.shape[0]} != weight rows {k}")
    out = weights.astype(np.float64) @ x.astype(np.float64) + bias.astype(np.float64)
    return out.astype(np.float32)


def softmax(x: np.ndarray) -> np.ndarray:
    """Stable softmax over a rank-1 tensor: outputs in (0,1), summing to 1.

    The maximum is subtracted before exponentiation so any finite input is
    safe.
    """
    x = as_float_array(x, rank=1, name="softmax input")
    z = x.astype(np.float64)
    z -= z.max()
    e = np.exp(z)
    return (e / e.sum()).astype(np.float32)


def bilinear_resize(x: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Bilinear resample [C,h,w] -> [C,target_h,target_w].

    Uses half-pixel sample centers (align-corners=false): source coordinate
    (d + 0.5) * in/out - 0.5, clamped to the valid range.  Constant inputs
    map to bit-identical constant outputs, and resizing to the same size is
    the identity.
    """
    x = as_float_array(x, rank=3, name="bilinear_resize input")
    if target_h < 1 or target_w < 1:
        raise ShapeError(f"target dims must be positive, got {target_h}x{target_w}")
    _, h, w = x.shape
    ys = np.clip((np.arange(target_h, dtype=np.float64) + 0.5) * (h / target_h) - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(target_w, dtype=np.float64) + 0.5) * (w / target_w) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = xs - x0
    v = x.astype(np.float64)
    v00 = v[:, y0[:, None], x0[None, :]]
    v01 = v[:, y0[:, None], x1[None, :]]
    v10 = v[:, y1[:, None], x0[None, :]]
    v11 = v[:, y1[:, None], x1[None, :]]
    # Separable blend: zero fractions contribute exactly nothing, which keeps
    # constants and same-size resizes exact.
    top = v00 + wx * (v01 - v00)
    bottom = v10 + wx * (v11 - v10)
    return (top + wy * (bottom - top)).astype(np.float32)


def nearest_resize(x: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Nearest-neighbor resample with the same half-pixel convention."""
    x = as_float_array(x, rank=3, name="nearest_resize input")
    if target_h < 1 or target_w < 1:
        raise ShapeError(f"target dims must be positive, got {target_h}x{target_w}")
    _, h, w = x.shape
    ys = np.minimum((np.arange(target_h) + 0.5) * (h / target_h), h - 1).astype(np.intp)
    xs = np.minimum((np.arange(target_w) + 0.5) * (w / target_w), w - 1).astype(np.intp)
    return np.ascontiguousarray(x[:, ys[:, None], xs[None, :]])


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise product; a single-channel [1,H,W] ``b`` broadcasts over
    the channels of a [C,H,W] ``a``."""
    a = as_float_array(a, name="hadamard lhs")
    b = as_float_array(b, name="hadamard rhs")
    if a.shape == b.shape:
        return a * b
    if a.ndim == 3 and b.shape == (1,) + a.shape[1:]:
        return a * b
    raise ShapeError(f"hadamard: incompatible shapes {a.shape} and {b.shape}")


def minmax_normalize(x: np.ndarray) -> np.ndarray:
    """Rescale to [0,1] via (x - min) / (max - min).

    A constant tensor maps to all zeros: a flat field carries no spatial
    information, so the empty mask is the meaningful degenerate output.
    """
    x = as_float_array(x, name="minmax_normalize input")
    lo = x.min()
    hi = x.max()
    if hi == lo:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def argmax(x: np.ndarray) -> int:
    """Index of the maximum of a rank-1 tensor; ties go to the lowest index."""
    x = as_float_array(x, rank=1, name="argmax input")
    return int(np.argmax(x))
