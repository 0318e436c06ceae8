"""Core saliency algorithm: activation capture, mask scoring, combination.

The pipeline for one image is

1. run the model once, keeping the activation of the chosen convolution
   layer and the class scores of the unmasked input;
2. upsample each activation channel to the input size and rescale it to
   [0,1], turning it into a soft mask;
3. score the input under each mask: the class score of the masked input
   minus the class score of a baseline input (all zeros by default);
4. softmax the per-channel scores into weights that sum to one, linearly
   combine the activation channels, clip at zero, upsample, and rescale.

All masked forward passes are independent: batching and thread workers
change throughput only, never the result.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import tensor_ops as ops
from .errors import (
    ClassOutOfRange,
    IndexOutOfRange,
    LayerOutOfRange,
    NotAConvLayer,
    ShapeError,
)
from .model import Conv2d, ModelGraph
from .validation import as_float_array

SCORE_MODES = ("post_softmax", "logit")
UPSAMPLE_MODES = ("bilinear", "nearest")


@dataclass(frozen=True, eq=False)
class ActivationCapture:
    """Activation [K,h,w] of the target layer plus the post-softmax class
    scores of the unmasked input."""

    activation: np.ndarray
    scores: np.ndarray


@dataclass(frozen=True, eq=False)
class SaliencyMap:
    """Single-channel [1,H,W] map at input resolution, values in [0,1].

    ``meta`` records how the map was produced (model id, layer, class,
    score mode, per-channel weights and raw scores).  An all-zero map is
    valid: it means no channel combination had positive evidence.
    """

    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        values = as_float_array(self.values, rank=3, name="saliency values")
        if values.shape[0] != 1:
            raise ShapeError(f"saliency must be [1,H,W], got {values.shape}")
        if values.min() < 0.0 or values.max() > 1.0:
            raise ValueError("saliency values must lie in [0,1]")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


def _check_class(model: ModelGraph, class_index: int) -> int:
    class_index = int(class_index)
    if not 0 <= class_index < model.class_count:
        raise ClassOutOfRange(
            f"class {class_index} outside 0..{model.class_count - 1}"
        )
    return class_index


def _check_score_mode(score_mode: str) -> str:
    if score_mode not in SCORE_MODES:
        raise ValueError(f"score_mode must be one of {SCORE_MODES}, got {score_mode!r}")
    return score_mode


def _class_score(result, class_index: int, score_mode: str) -> float:
    source = result.probabilities if score_mode == "post_softmax" else result.logits
    return float(source[class_index])


def resolve_target_layer(model: ModelGraph, target_layer: int | None) -> int:
    """Validate a convolution layer index; None selects the last Conv2d."""
    if target_layer is None:
        return model.last_conv_index
    index = int(target_layer)
    if not 0 <= index < len(model.layers):
        raise LayerOutOfRange(f"layer {index} outside 0..{len(model.layers) - 1}")
    if not isinstance(model.layers[index], Conv2d):
        raise NotAConvLayer(
            f"layer {index} is {type(model.layers[index]).__name__}, need Conv2d"
        )
    return index


def forward_with_capture(model: ModelGraph, x: np.ndarray, layer: int) -> ActivationCapture:
    """One forward pass that also keeps the indexed Conv2d layer's output.

    The returned scores are bit-identical to a plain forward pass: capture
    only records an intermediate, it never re-routes arithmetic.
    """
    layer = resolve_target_layer(model, layer)
    result = model.run(x, capture=layer)
    return ActivationCapture(activation=result.captured, scores=result.probabilities)


def build_masks(
    activation: np.ndarray, input_h: int, input_w: int, upsample_mode: str = "bilinear"
) -> np.ndarray:
    """Per-channel soft masks: upsample each [h,w] channel to the input size,
    then rescale to [0,1].  Returns [K,1,input_h,input_w].

    A constant channel yields an all-zero mask (the degenerate rescale).
    """
    activation = as_float_array(activation, rank=3, name="activation")
    if upsample_mode not in UPSAMPLE_MODES:
        raise ValueError(f"upsample_mode must be one of {UPSAMPLE_MODES}, got {upsample_mode!r}")
    resize = ops.bilinear_resize if upsample_mode == "bilinear" else ops.nearest_resize
    return np.stack(
        [ops.minmax_normalize(resize(activation[k : k + 1], input_h, input_w))
         for k in range(activation.shape[0])]
    )


def score_masked_batch(
    model: ModelGraph,
    x: np.ndarray,
    masks,
    class_index: int,
    *,
    score_mode: str = "post_softmax",
    baseline: np.ndarray | None = None,
    batch_size: int = 32,
    n_workers: int | None = None,
    subtract_baseline: bool = True,
) -> np.ndarray:
    """Raw per-channel scores: score(x * mask_k) - score(baseline).

    The score is the class probability (``post_softmax``) or the pre-softmax
    class value (``logit``).  Masked inputs are processed in chunks of
    ``batch_size``, optionally across ``n_workers`` threads; each chunk
    writes into its own slice of the result, so neither knob changes the
    output.  ``subtract_baseline=False`` skips the baseline term; it exists
    so the documented shift-invariance of the downstream softmax weights can
    be asserted by computing both ways.
    """
    x = as_float_array(x, rank=3, name="input")
    class_index = _check_class(model, class_index)
    _check_score_mode(score_mode)
    if batch_size < 1:
        raise ValueError(f"batch_size must be positive, got {batch_size}")
    mask_stack = np.asarray(masks, dtype=np.float32)
    if mask_stack.ndim != 4 or mask_stack.shape[1] != 1 or mask_stack.shape[2:] != x.shape[1:]:
        raise ShapeError(
            f"masks must be [K,1,{x.shape[1]},{x.shape[2]}], got {mask_stack.shape}"
        )
    if baseline is None:
        baseline = np.zeros_like(x)
    else:
        baseline = as_float_array(baseline, rank=3, name="baseline")
        if baseline.shape != x.shape:
            raise ShapeError(f"baseline shape {baseline.shape} != input shape {x.shape}")

    base_score = (
        _class_score(model.run(baseline), class_index, score_mode) if subtract_baseline else 0.0
    )

    k = mask_stack.shape[0]
    raw = np.empty(k, dtype=np.float32)

    def score_chunk(start: int, stop: int) -> None:
        for i in range(start, stop):
            masked = ops.hadamard(x, mask_stack[i])
            raw[i] = _class_score(model.run(masked), class_index, score_mode) - base_score

    bounds = [(s, min(s + batch_size, k)) for s in range(0, k, batch_size)]
    workers = (os.cpu_count() or 1) if n_workers is None else int(n_workers)
    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=min(workers, len(bounds))) as pool:
            list(pool.map(lambda b: score_chunk(*b), bounds))
    else:
        for b in bounds:
            score_chunk(*b)
    return raw


def softmax_weights(raw: np.ndarray) -> np.ndarray:
    """Normalize raw channel scores into positive weights summing to one."""
    return ops.softmax(raw)


def combine_activations(weights: np.ndarray, activation: np.ndarray) -> np.ndarray:
    """Weighted channel combination clipped at zero, at activation resolution.

    This is the un-normalized core of the final map; kept separate so the
    combination step can be checked before resizing and rescaling.
    """
    weights = as_float_array(weights, rank=1, name="weights")
    activation = as_float_array(activation, rank=3, name="activation")
    if weights.shape[0] != activation.shape[0]:
        raise ShapeError(
            f"{weights.shape[0]} weights for {activation.shape[0]} channels"
        )
    cam = np.einsum("k,khw->hw", weights.astype(np.float64), activation.astype(np.float64))
    return np.maximum(cam, 0.0).astype(np.float32)


def combine(
    weights: np.ndarray,
    activation: np.ndarray,
    input_h: int,
    input_w: int,
    meta: dict | None = None,
) -> SaliencyMap:
    """Combine channels, upsample to the input size, rescale to [0,1]."""
    cam = combine_activations(weights, activation)
    upsampled = ops.bilinear_resize(cam[None], input_h, input_w)
    return SaliencyMap(values=ops.minmax_normalize(upsampled), meta=dict(meta or {}))


def scorecam(
    model: ModelGraph,
    x: np.ndarray,
    *,
    target_layer: int | None = None,
    target_class: int | str = "predicted",
    score_mode: str = "post_softmax",
    baseline: np.ndarray | None = None,
    batch_size: int = 32,
    upsample_mode: str = "bilinear",
    n_workers: int | None = None,
    subtract_baseline: bool = True,
    model_id: str | None = None,
) -> SaliencyMap:
    """End-to-end saliency map for one [C,H,W] input.

    ``target_layer`` defaults to the last convolution layer; ``"predicted"``
    resolves the class by argmax of the unmasked scores.  Deterministic for
    fixed inputs and configuration.
    """
    layer = resolve_target_layer(model, target_layer)
    _check_score_mode(score_mode)
    x = as_float_array(x, rank=3, name="input")
    capture = forward_with_capture(model, x, layer)
    if isinstance(target_class, str):
        if target_class != "predicted":
            raise ValueError(f"target_class must be an index or 'predicted', got {target_class!r}")
        class_index = ops.argmax(capture.scores)
    else:
        class_index = _check_class(model, target_class)
    _, input_h, input_w = x.shape
    masks = build_masks(capture.activation, input_h, input_w, upsample_mode)
    raw = score_masked_batch(
        model,
        x,
        masks,
        class_index,
        score_mode=score_mode,
        baseline=baseline,
        batch_size=batch_size,
        n_workers=n_workers,
        subtract_baseline=subtract_baseline,
    )
    weights = softmax_weights(raw)
    meta = {
        "model": model_id or "",
        "layer": layer,
        "class_index": class_index,
        "score_mode": score_mode,
        "upsample_mode": upsample_mode,
        "weights": weights,
        "raw_scores": raw,
    }
    return combine(weights, capture.activation, input_h, input_w, meta=meta)


def increase_of_confidence(
    model: ModelGraph,
    base: np.ndarray,
    probe: np.ndarray,
    index: int,
    class_index: int,
    score_mode: str = "logit",
) -> float:
    """Score change from substituting one entry of ``base`` with ``probe``'s.

    ``index`` addresses the flattened input; the substitution is realized
    through an indicator mask, base * (1 - e_i) + probe * e_i.  This is the
    single-feature contribution that the per-channel scoring generalizes;
    provided as a diagnostic primitive.
    """
    base = as_float_array(base, rank=3, name="base")
    probe = as_float_array(probe, rank=3, name="probe")
    if probe.shape != base.shape:
        raise ShapeError(f"probe shape {probe.shape} != base shape {base.shape}")
    class_index = _check_class(model, class_index)
    _check_score_mode(score_mode)
    if not 0 <= int(index) < base.size:
        raise IndexOutOfRange(f"index {index} outside 0..{base.size - 1}")
    indicator = np.zeros(base.size, dtype=np.float32)
    indicator[int(index)] = 1.0
    indicator = indicator.reshape(base.shape)
    probed = base * (1.0 - indicator) + probe * indicator
    before = _class_score(model.run(base), class_index, score_mode)
    after = _class_score(model.run(probed), class_index, score_mode)
    return after - before


class ScoreCam(BaseEstimator, TransformerMixin):
    """Saliency explainer with a scikit-learn estimator surface.

    All knobs are constructor parameters so ``get_params`` / ``set_params``
    / ``clone`` behave as usual; ``fit`` validates the model and resolves
    the target layer (there is nothing to learn), and ``transform`` maps a
    batch of images to saliency maps.

    Parameters
    ----------
    model : ModelGraph
        Validated forward-only model to explain.
    target_layer : int or None
        Index of a Conv2d layer; None picks the last one.
    target_class : int or "predicted"
        Class to explain; "predicted" uses the argmax of the unmasked scores.
    score_mode : {"post_softmax", "logit"}
        Whether channel scores are class probabilities or pre-softmax values.
    baseline : ndarray or None
        Reference input scored alongside each masked input; None means the
        all-zero tensor in model input space.
    batch_size : int
        Masked inputs per scoring chunk.
    upsample_mode : {"bilinear", "nearest"}
        How activation channels are upsampled to the input size.
    n_workers : int or None
        Thread workers for mask scoring; None uses the available CPUs.
        Results never depend on this value.
    """

    def __init__(
        self,
        model: ModelGraph | None = None,
        target_layer: int | None = None,
        target_class: int | str = "predicted",
        score_mode: str = "post_softmax",
        baseline: np.ndarray | None = None,
        batch_size: int = 32,
        upsample_mode: str = "bilinear",
        n_workers: int | None = None,
    ):
        self.model = model
        self.target_layer = target_layer
        self.target_class = target_class
        self.score_mode = score_mode
        self.baseline = baseline
        self.batch_size = batch_size
        self.upsample_mode = upsample_mode
        self.n_workers = n_workers

    def fit(self, X=None, y=None):
        """Validate the configuration; no statistics are learned from X."""
        if self.model is None:
            raise ValueError("ScoreCam requires a ModelGraph via the 'model' parameter")
        _check_score_mode(self.score_mode)
        if self.upsample_mode not in UPSAMPLE_MODES:
            raise ValueError(
                f"upsample_mode must be one of {UPSAMPLE_MODES}, got {self.upsample_mode!r}"
            )
        self.model_ = self.model
        self.target_layer_ = resolve_target_layer(self.model, self.target_layer)
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("this ScoreCam instance is not fitted yet; call fit() first")

    def explain(self, x: np.ndarray, target_class: int | str | None = None) -> SaliencyMap:
        """Full saliency map (with metadata) for a single [C,H,W] input."""
        self._check_fitted()
        return scorecam(
            self.model_,
            x,
            target_layer=self.target_layer_,
            target_class=self.target_class if target_class is None else target_class,
            score_mode=self.score_mode,
            baseline=self.baseline,
            batch_size=self.batch_size,
            upsample_mode=self.upsample_mode,
            n_workers=self.n_workers,
        )

    def transform(self, X: np.ndarray) -> np.ndarray:
        """Map [N,C,H,W] (or a single [C,H,W]) to [N,1,H,W] saliency values."""
        self._check_fitted()
        X = np.asarray(X, dtype=np.float32)
        if X.ndim == 3:
            X = X[None]
        if X.ndim != 4:
            raise ShapeError(f"expected [N,C,H,W] or [C,H,W], got shape {X.shape}")
        return np.stack([self.explain(image).values for image in X])
