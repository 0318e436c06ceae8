"""Cascading weight-randomization check.

A saliency method that ignores model weights is not explaining the model.
This harness re-draws weights layer by layer from the output end inward,
recomputes the saliency map at each stage, and reports how similar each
stage's map is to the original.  Similarity is Spearman rank correlation:
the final map rescaling is monotone, so rank structure is the right thing
to compare; raw L2 distance is included as a secondary diagnostic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from . import tensor_ops as ops
from .engine import SaliencyMap, scorecam
from .errors import LayerOutOfRange, ShapeError
from .model import Conv2d, Dense, ModelGraph


@dataclass(frozen=True)
class RandomizationStage:
    """One cascade stage: weighted layers at or after ``randomized_from``
    carry re-drawn weights (``randomized_from == len(layers)`` means none)."""

    randomized_from: int
    similarity: float
    l2_distance: float


@dataclass(frozen=True)
class RandomizationReport:
    stages: tuple[RandomizationStage, ...]
    seed: int

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "stages": [
                {
                    "randomized_from": s.randomized_from,
                    "similarity": s.similarity,
                    "l2_distance": s.l2_distance,
                }
                for s in self.stages
            ],
        }


def randomize_from(model: ModelGraph, from_layer: int, seed: int) -> ModelGraph:
    """New graph with every weighted layer at index >= ``from_layer`` re-drawn.

    Replacement weights and biases are sampled from a seeded normal whose
    standard deviation matches the original weights' empirical standard
    deviation, so activation scales stay comparable and forward passes stay
    finite.  Each layer gets its own (seed, layer-index) stream: randomizing
    from a deeper layer leaves already-randomized layers' draws unchanged,
    which is what makes the cascade cumulative.  ``from_layer ==
    len(layers)`` is allowed and returns an equal graph.  The input graph is
    never modified.
    """
    from_layer = int(from_layer)
    if not 0 <= from_layer <= len(model.layers):
        raise LayerOutOfRange(f"from_layer {from_layer} outside 0..{len(model.layers)}")
    new_layers = []
    for i, layer in enumerate(model.layers):
        if i < from_layer or not isinstance(layer, (Conv2d, Dense)):
            new_layers.append(layer)
            continue
        rng = np.random.default_rng([int(seed), i])
        if isinstance(layer, Conv2d):
            s = layer.spec
            std = float(s.weights.std())
            new_layers.append(
                Conv2d(
                    ops.ConvSpec(
                        s.out_channels,
                        s.in_channels,
                        s.kernel_h,
                        s.kernel_w,
                        s.stride,
                        s.padding,
                        rng.normal(0.0, std, size=s.weights.shape).astype(np.float32),
                        rng.normal(0.0, std, size=s.bias.shape).astype(np.float32),
                    )
                )
            )
        else:
            std = float(layer.weights.std())
            new_layers.append(
                Dense(
                    rng.normal(0.0, std, size=layer.weights.shape).astype(np.float32),
                    rng.normal(0.0, std, size=layer.bias.shape).astype(np.float32),
                )
            )
    return ModelGraph(tuple(new_layers), model.input_shape, model.class_count, model.class_names)


def rank_correlation(a, b) -> float:
    """Spearman rank correlation over flattened values, ties by average rank.

    Identical rank vectors (including two constant inputs, whose ranks are
    all tied) return exactly 1.0; when exactly one side is constant there is
    no rank structure to correlate and the result is 0.0.
    """
    va = np.asarray(getattr(a, "values", a), dtype=np.float64)
    vb = np.asarray(getattr(b, "values", b), dtype=np.float64)
    if va.shape != vb.shape:
        raise ShapeError(f"rank_correlation: shapes {va.shape} and {vb.shape} differ")
    ra = rankdata(va.ravel(), method="average")
    rb = rankdata(vb.ravel(), method="average")
    if np.array_equal(ra, rb):
        return 1.0
    if ra.std() == 0.0 or rb.std() == 0.0:
        return 0.0
    return float(np.corrcoef(ra, rb)[0, 1])


def cascading_test(
    model: ModelGraph,
    x: np.ndarray,
    seed: int = 0,
    target_class: int | str = "predicted",
    **cam_kwargs,
) -> RandomizationReport:
    """Randomize weighted layers cumulatively from the output end and track
    how the saliency map departs from the original.

    Stage 0 compares the original map with itself (similarity exactly 1.0).
    The explained class is resolved once, on the original model, so every
    stage explains the same class.  Deterministic for a fixed seed.
    """
    if isinstance(target_class, str):
        resolved = ops.argmax(model.run(x).probabilities)
    else:
        resolved = int(target_class)
    base = scorecam(model, x, target_class=resolved, **cam_kwargs)
    stages = [
        RandomizationStage(
            randomized_from=len(model.layers),
            similarity=rank_correlation(base, base),
            l2_distance=0.0,
        )
    ]
    for from_layer in reversed(model.weighted_indices):
        randomized = randomize_from(model, from_layer, seed)
        current = scorecam(randomized, x, target_class=resolved, **cam_kwargs)
        diff = base.values.astype(np.float64) - current.values.astype(np.float64)
        stages.append(
            RandomizationStage(
                randomized_from=from_layer,
                similarity=rank_correlation(base, current),
                l2_distance=float(np.linalg.norm(diff.ravel())),
            )
        )
    return RandomizationReport(stages=tuple(stages), seed=int(seed))
