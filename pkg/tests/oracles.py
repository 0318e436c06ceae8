"""Independent naive reference implementations used as test oracles.

Everything here is written directly from the operation definitions with
explicit loops (or the textbook formula), deliberately avoiding the
vectorized paths in the package.  Storage is float32 with float64 inner
arithmetic, matching the declared numeric policy, so oracle and
implementation agree to tight absolute tolerances.
"""

import math

import numpy as np

from scorecam.model import (
    Conv2d,
    Dense,
    Flatten,
    GlobalAvgPool,
    MaxPool2d,
    ReLU,
    Softmax,
)


def conv2d_scalar(x, spec):
    """Fully scalar cross-correlation: loops over every output element and
    every kernel tap."""
    c, h, w = x.shape
    s, p = spec.stride, spec.padding
    oh = (h + 2 * p - spec.kernel_h) // s + 1
    ow = (w + 2 * p - spec.kernel_w) // s + 1
    out = np.zeros((spec.out_channels, oh, ow), dtype=np.float32)
    for k in range(spec.out_channels):
        for oy in range(oh):
            for ox in range(ow):
                acc = float(spec.bias[k])
                for ci in range(c):
                    for u in range(spec.kernel_h):
                        for v in range(spec.kernel_w):
                            iy = oy * s + u - p
                            ix = ox * s + v - p
                            if 0 <= iy < h and 0 <= ix < w:
                                acc += float(x[ci, iy, ix]) * float(spec.weights[k, ci, u, v])
                out[k, oy, ox] = acc
    return out


def conv2d_windowed(x, spec):
    """Per-output-element window sums; faster than the scalar oracle but
    still a direct transcription of the definition (used inside the naive
    forward pass)."""
    c, h, w = x.shape
    s, p = spec.stride, spec.padding
    oh = (h + 2 * p - spec.kernel_h) // s + 1
    ow = (w + 2 * p - spec.kernel_w) // s + 1
    padded = np.pad(x.astype(np.float64), ((0, 0), (p, p), (p, p)))
    weights = spec.weights.astype(np.float64)
    out = np.zeros((spec.out_channels, oh, ow), dtype=np.float32)
    for k in range(spec.out_channels):
        for oy in range(oh):
            for ox in range(ow):
                window = padded[:, oy * s : oy * s + spec.kernel_h, ox * s : ox * s + spec.kernel_w]
                out[k, oy, ox] = np.sum(window * weights[k]) + float(spec.bias[k])
    return out


def maxpool2d_scalar(x, window, stride):
    c, h, w = x.shape
    oh = (h - window) // stride + 1
    ow = (w - window) // stride + 1
    out = np.zeros((c, oh, ow), dtype=np.float32)
    for ci in range(c):
        for oy in range(oh):
            for ox in range(ow):
                best = -math.inf
                for u in range(window):
                    for v in range(window):
                        best = max(best, float(x[ci, oy * stride + u, ox * stride + v]))
                out[ci, oy, ox] = best
    return out


def dense_scalar(x, weights, bias):
    k, d = weights.shape
    out = np.zeros(k, dtype=np.float32)
    for i in range(k):
        acc = float(bias[i])
        for j in range(d):
            acc += float(weights[i, j]) * float(x[j])
        out[i] = acc
    return out


def softmax_direct(x):
    """Direct exp/sum evaluation (the shift is part of the definition's
    numerical guard and does not change the value)."""
    z = [math.exp(float(v) - max(float(u) for u in x)) for v in x]
    total = sum(z)
    return np.array([v / total for v in z], dtype=np.float32)


def bilinear_scalar(channel, target_h, target_w):
    """Per-pixel four-term interpolation with half-pixel sample centers.

    ``channel`` is a single [h,w] plane.
    """
    h, w = channel.shape
    out = np.zeros((target_h, target_w), dtype=np.float32)
    for oy in range(target_h):
        sy = min(max((oy + 0.5) * h / target_h - 0.5, 0.0), h - 1.0)
        y0 = int(math.floor(sy))
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for ox in range(target_w):
            sx = min(max((ox + 0.5) * w / target_w - 0.5, 0.0), w - 1.0)
            x0 = int(math.floor(sx))
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            out[oy, ox] = (
                (1 - fy) * (1 - fx) * float(channel[y0, x0])
                + (1 - fy) * fx * float(channel[y0, x1])
                + fy * (1 - fx) * float(channel[y1, x0])
                + fy * fx * float(channel[y1, x1])
            )
    return out


def minmax_scan(x):
    flat = [float(v) for v in np.asarray(x).reshape(-1)]
    lo, hi = min(flat), max(flat)
    if hi == lo:
        return np.zeros_like(np.asarray(x), dtype=np.float32)
    return ((np.asarray(x, dtype=np.float32) - np.float32(lo)) / np.float32(hi - lo)).astype(np.float32)


def argmax_scan(x):
    best, best_i = -math.inf, 0
    for i, v in enumerate(np.asarray(x).reshape(-1)):
        if float(v) > best:
            best, best_i = float(v), i
    return best_i


# ---------------------------------------------------------------------------
# naive forward pass and straight-line saliency reference
# ---------------------------------------------------------------------------


def run_layers_naive(model, x):
    """All per-layer activations, computed with the naive kernels."""
    acts = []
    current = np.asarray(x, dtype=np.float32)
    for layer in model.layers:
        if isinstance(layer, Conv2d):
            current = conv2d_windowed(current, layer.spec)
        elif isinstance(layer, ReLU):
            current = np.where(current > 0, current, np.float32(0.0))
        elif isinstance(layer, MaxPool2d):
            current = maxpool2d_scalar(current, layer.window, layer.stride)
        elif isinstance(layer, GlobalAvgPool):
            current = np.array(
                [np.mean(current[ci].astype(np.float64)) for ci in range(current.shape[0])],
                dtype=np.float32,
            )
        elif isinstance(layer, Flatten):
            current = current.reshape(-1)
        elif isinstance(layer, Dense):
            current = dense_scalar(current, layer.weights, layer.bias)
        elif isinstance(layer, Softmax):
            current = softmax_direct(current)
        else:
            raise AssertionError(f"oracle cannot run layer {type(layer).__name__}")
        acts.append(current)
    return acts


def class_score_naive(model, x, class_index, score_mode):
    acts = run_layers_naive(model, x)
    if isinstance(model.layers[-1], Softmax):
        logits = acts[-2] if len(acts) > 1 else np.asarray(x, dtype=np.float32)
        probs = acts[-1]
    else:
        logits = acts[-1]
        probs = softmax_direct(logits)
    return float(probs[class_index] if score_mode == "post_softmax" else logits[class_index])


def scorecam_reference(model, x, layer_index, class_index, score_mode="post_softmax", baseline=None):
    """Straight-line saliency pipeline: capture, per-channel mask, score,
    softmax weights, combine.  One mask at a time, no batching, no threads;
    built entirely from the naive kernels above.
    """
    x = np.asarray(x, dtype=np.float32)
    activation = run_layers_naive(model, x)[layer_index]
    k_channels, _, _ = activation.shape
    input_h, input_w = x.shape[1], x.shape[2]
    if baseline is None:
        baseline = np.zeros_like(x)
    base_score = class_score_naive(model, baseline, class_index, score_mode)
    raw = []
    for k in range(k_channels):
        upsampled = bilinear_scalar(activation[k], input_h, input_w)
        mask = minmax_scan(upsampled)
        masked = (x * mask[None, :, :]).astype(np.float32)
        raw.append(class_score_naive(model, masked, class_index, score_mode) - base_score)
    shifted = [math.exp(v - max(raw)) for v in raw]
    total = sum(shifted)
    weights = [v / total for v in shifted]
    cam = np.zeros(activation.shape[1:], dtype=np.float64)
    for k in range(k_channels):
        cam += weights[k] * activation[k].astype(np.float64)
    cam = np.where(cam > 0, cam, 0.0).astype(np.float32)
    upsampled = bilinear_scalar(cam, input_h, input_w)
    return minmax_scan(upsampled)
