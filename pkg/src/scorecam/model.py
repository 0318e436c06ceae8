"""Immutable layer graphs and their forward-only execution.

A :class:`ModelGraph` is an ordered sequence of layers validated once, at
construction, by symbolic shape propagation.  A validated graph never raises
a shape error during inference on a correctly shaped input.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Union

import numpy as np

from . import tensor_ops as ops
from .errors import ShapeError
from .validation import as_float_array, check_positive_int


@dataclass(frozen=True, eq=False)
class Conv2d:
    spec: ops.ConvSpec


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPool2d:
    window: int
    stride: int

    def __post_init__(self):
        object.__setattr__(self, "window", check_positive_int(self.window, "window"))
        object.__setattr__(self, "stride", check_positive_int(self.stride, "stride"))


@dataclass(frozen=True)
class GlobalAvgPool:
    pass


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True, eq=False)
class Dense:
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        weights = as_float_array(self.weights, rank=2, name="dense weights")
        bias = as_float_array(self.bias, rank=1, name="dense bias")
        if bias.shape[0] != weights.shape[0]:
            raise ShapeError(
                f"dense bias length {bias.shape[0]} != weight rows {weights.shape[0]}"
            )
        weights.setflags(write=False)
        bias.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "bias", bias)


@dataclass(frozen=True)
class Softmax:
    pass


Layer = Union[Conv2d, ReLU, MaxPool2d, GlobalAvgPool, Flatten, Dense, Softmax]

_WEIGHTED = (Conv2d, Dense)


def layer_kind(layer: Layer) -> str:
    return type(layer).__name__


def layer_param_count(layer: Layer) -> int:
    if isinstance(layer, Conv2d):
        return layer.spec.param_count
    if isinstance(layer, Dense):
        return layer.weights.size + layer.bias.size
    return 0


def infer_output_shape(layer: Layer, in_shape: tuple[int, ...]) -> tuple[int, ...]:
    """Shape produced by ``layer`` on an input of ``in_shape``.

    Raises ShapeError when the layer cannot consume that shape; this is the
    single source of truth the graph validator and the kernels share.
    """
    if isinstance(layer, Conv2d):
        if len(in_shape) != 3:
            raise ShapeError(f"Conv2d expects rank-3 input, got shape {in_shape}")
        c, h, w = in_shape
        if c != layer.spec.in_channels:
            raise ShapeError(
                f"Conv2d expects {layer.spec.in_channels} input channels, got {c}"
            )
        oh, ow = ops.conv_output_hw(layer.spec, h, w)
        return (layer.spec.out_channels, oh, ow)
    if isinstance(layer, ReLU):
        return in_shape
    if isinstance(layer, MaxPool2d):
        if len(in_shape) != 3:
            raise ShapeError(f"MaxPool2d expects rank-3 input, got shape {in_shape}")
        c, h, w = in_shape
        oh, ow = ops.pool_output_hw(h, w, layer.window, layer.stride)
        return (c, oh, ow)
    if isinstance(layer, GlobalAvgPool):
        if len(in_shape) != 3:
            raise ShapeError(f"GlobalAvgPool expects rank-3 input, got shape {in_shape}")
        return (in_shape[0],)
    if isinstance(layer, Flatten):
        return (int(np.prod(in_shape)),)
    if isinstance(layer, Dense):
        if len(in_shape) != 1:
            raise ShapeError(f"Dense expects rank-1 input, got shape {in_shape}")
        k, d = layer.weights.shape
        if in_shape[0] != d:
            raise ShapeError(f"Dense expects input length {d}, got {in_shape[0]}")
        return (k,)
    if isinstance(layer, Softmax):
        if len(in_shape) != 1:
            raise ShapeError(f"Softmax expects rank-1 input, got shape {in_shape}")
        return in_shape
    raise ShapeError(f"unknown layer type {type(layer).__name__}")


def apply_layer(layer: Layer, x: np.ndarray) -> np.ndarray:
    if isinstance(layer, Conv2d):
        return ops.conv2d(x, layer.spec)
    if isinstance(layer, ReLU):
        return ops.relu(x)
    if isinstance(layer, MaxPool2d):
        return ops.maxpool2d(x, layer.window, layer.stride)
    if isinstance(layer, GlobalAvgPool):
        return x.astype(np.float64).mean(axis=(1, 2)).astype(np.float32)
    if isinstance(layer, Flatten):
        return x.reshape(-1)
    if isinstance(layer, Dense):
        return ops.dense(x, layer.weights, layer.bias)
    if isinstance(layer, Softmax):
        return ops.softmax(x)
    raise ShapeError(f"unknown layer type {type(layer).__name__}")


class ForwardResult(NamedTuple):
    """One forward pass: final output, pre-softmax scores, probabilities,
    and (optionally) one captured intermediate activation."""

    output: np.ndarray
    logits: np.ndarray
    probabilities: np.ndarray
    captured: np.ndarray | None


@dataclass(frozen=True, eq=False)
class ModelGraph:
    """Ordered layers with immutable weights, validated at construction.

    Invariants enforced here: consecutive layer shapes compose, the final
    output is rank-1 of length ``class_count``, and at least one Conv2d is
    present so there is an activation source to explain.
    """

    layers: tuple[Layer, ...]
    input_shape: tuple[int, int, int]
    class_count: int
    class_names: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "class_count", int(self.class_count))
        if self.class_names is not None:
            object.__setattr__(self, "class_names", tuple(str(n) for n in self.class_names))
        if len(self.input_shape) != 3 or any(d < 1 for d in self.input_shape):
            raise ShapeError(f"input_shape must be [C,H,W] with positive dims, got {self.input_shape}")
        if self.class_count < 1:
            raise ShapeError(f"class_count must be positive, got {self.class_count}")
        if not self.layers:
            raise ShapeError("model must contain at least one layer")
        if self.class_names is not None and len(self.class_names) != self.class_count:
            raise ShapeError(
                f"{len(self.class_names)} class names for {self.class_count} classes"
            )
        shapes = []
        shape: tuple[int, ...] = self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                shape = infer_output_shape(layer, shape)
            except ShapeError as exc:
                raise ShapeError(
                    f"layer {i} ({layer_kind(layer)}) cannot follow layer {i - 1}: {exc}"
                    if i
                    else f"layer 0 ({layer_kind(layer)}) cannot consume the input: {exc}"
                ) from exc
            shapes.append(shape)
        if shape != (self.class_count,):
            raise ShapeError(
                f"final layer produces shape {shape}, expected ({self.class_count},)"
            )
        if not any(isinstance(l, Conv2d) for l in self.layers):
            raise ShapeError("model must contain at least one Conv2d layer")
        object.__setattr__(self, "_output_shapes", tuple(shapes))

    @property
    def output_shapes(self) -> tuple[tuple[int, ...], ...]:
        """Per-layer output shapes, as established by validation."""
        return self._output_shapes

    @cached_property
    def conv_indices(self) -> tuple[int, ...]:
        return tuple(i for i, l in enumerate(self.layers) if isinstance(l, Conv2d))

    @property
    def last_conv_index(self) -> int:
        return self.conv_indices[-1]

    @cached_property
    def weighted_indices(self) -> tuple[int, ...]:
        return tuple(i for i, l in enumerate(self.layers) if isinstance(l, _WEIGHTED))

    @property
    def param_count(self) -> int:
        return sum(layer_param_count(l) for l in self.layers)

    def run(self, x: np.ndarray, capture: int | None = None) -> ForwardResult:
        """Execute all layers on one [C,H,W] input.

        ``logits`` is the activation entering a final Softmax layer, or the
        final output itself when the graph does not end in Softmax; in the
        latter case ``probabilities`` is the softmax of that output.
        """
        x = as_float_array(x, rank=3, name="model input")
        if x.shape != self.input_shape:
            raise ShapeError(f"input shape {x.shape} != model input {self.input_shape}")
        captured = None
        current = x
        before_last = x
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            if i == last:
                before_last = current
            current = apply_layer(layer, current)
            if capture is not None and i == capture:
                captured = current
        if isinstance(self.layers[last], Softmax):
            logits, probabilities = before_last, current
        else:
            logits, probabilities = current, ops.softmax(current)
        return ForwardResult(current, logits, probabilities, captured)

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Output of the final layer for one [C,H,W] input."""
        return self.run(x).output


def graphs_equal(a: ModelGraph, b: ModelGraph) -> bool:
    """Structural equality: same architecture, bit-equal weights."""
    if (a.input_shape, a.class_count, a.class_names) != (b.input_shape, b.class_count, b.class_names):
        return False
    if len(a.layers) != len(b.layers):
        return False
    for la, lb in zip(a.layers, b.layers):
        if type(la) is not type(lb):
            return False
        if isinstance(la, Conv2d):
            sa, sb = la.spec, lb.spec
            if (sa.out_channels, sa.in_channels, sa.kernel_h, sa.kernel_w, sa.stride, sa.padding) != (
                sb.out_channels, sb.in_channels, sb.kernel_h, sb.kernel_w, sb.stride, sb.padding
            ):
                return False
            if not (np.array_equal(sa.weights, sb.weights) and np.array_equal(sa.bias, sb.bias)):
                return False
        elif isinstance(la, MaxPool2d):
            if (la.window, la.stride) != (lb.window, lb.stride):
                return False
        elif isinstance(la, Dense):
            if not (np.array_equal(la.weights, lb.weights) and np.array_equal(la.bias, lb.bias)):
                return False
    return True
