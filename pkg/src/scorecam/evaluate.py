"""Quantitative saliency evaluation: recognition fidelity, deletion and
insertion curves, and the energy-based pointing game.

Pixel ranking is shared by every perturbation here: pixels are ordered by
descending saliency with ties broken by row-major index, so all curves and
masks are reproducible.  Perturbations operate on the preprocessed input
tensor (the same space the model consumes); a "pixel" is one spatial
location across all channels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .engine import SaliencyMap, scorecam
from .errors import (
    ClassOutOfRange,
    DegenerateMap,
    EmptyDataset,
    NoEligibleImages,
    NonpositiveScore,
    ShapeError,
)
from .formats import ImageRecord, PreprocessConfig, preprocess
from .model import ModelGraph
from .validation import as_float_array

CURVE_STEPS = 100  # fraction grid 0.00, 0.01, ..., 1.00


@dataclass(frozen=True)
class PerImageRecognition:
    id: str
    full_score: float
    masked_score: float
    drop_pct: float
    increased: bool


@dataclass(frozen=True)
class RecognitionReport:
    """Aggregated recognition fidelity over a dataset, in percent."""

    average_drop_pct: float
    average_increase_pct: float
    per_image: tuple[PerImageRecognition, ...]

    def to_dict(self) -> dict:
        return {
            "average_drop_pct": self.average_drop_pct,
            "average_increase_pct": self.average_increase_pct,
            "per_image": [
                {
                    "id": r.id,
                    "full_score": r.full_score,
                    "masked_score": r.masked_score,
                    "drop_pct": r.drop_pct,
                    "increased": r.increased,
                }
                for r in self.per_image
            ],
        }


@dataclass(frozen=True)
class CurveReport:
    """Class probability as a function of the perturbed pixel fraction."""

    mode: str
    fractions: tuple[float, ...]
    probabilities: tuple[float, ...]
    auc: float

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "fractions": list(self.fractions),
            "probabilities": list(self.probabilities),
            "auc": self.auc,
        }


@dataclass(frozen=True)
class PointingReport:
    """Energy proportions inside ground-truth boxes."""

    per_image: tuple[tuple[str, float], ...]
    mean_proportion: float
    skipped_oversized: int
    degenerate_maps: int

    def to_dict(self) -> dict:
        return {
            "per_image": [{"id": i, "proportion": p} for i, p in self.per_image],
            "mean_proportion": self.mean_proportion,
            "skipped_oversized": self.skipped_oversized,
            "degenerate_maps": self.degenerate_maps,
        }


def _saliency_values(saliency) -> np.ndarray:
    """[H,W] float32 view of a SaliencyMap or bare array."""
    values = saliency.values if isinstance(saliency, SaliencyMap) else saliency
    values = as_float_array(values, name="saliency")
    if values.ndim == 3 and values.shape[0] == 1:
        values = values[0]
    if values.ndim != 2:
        raise ShapeError(f"saliency must be [H,W] or [1,H,W], got {values.shape}")
    return values


def _rank_order(values: np.ndarray) -> np.ndarray:
    """Flat pixel indices by descending saliency, row-major on ties."""
    return np.argsort(-values.reshape(-1), kind="stable")


def _check_class(model: ModelGraph, class_index: int) -> int:
    class_index = int(class_index)
    if not 0 <= class_index < model.class_count:
        raise ClassOutOfRange(f"class {class_index} outside 0..{model.class_count - 1}")
    return class_index


def mask_top_fraction(x: np.ndarray, saliency, keep_fraction: float) -> np.ndarray:
    """Zero out all but the ceil(keep_fraction * H * W) most salient pixels.

    Retained pixels keep all channels; everything else becomes 0.
    """
    x = as_float_array(x, rank=3, name="input")
    values = _saliency_values(saliency)
    if values.shape != x.shape[1:]:
        raise ShapeError(f"saliency {values.shape} does not match input {x.shape[1:]}")
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    hw = values.size
    n_keep = min(hw, int(math.ceil(keep_fraction * hw)))
    keep = np.zeros(hw, dtype=bool)
    keep[_rank_order(values)[:n_keep]] = True
    return (x.reshape(x.shape[0], hw) * keep).reshape(x.shape)


def average_drop(pairs) -> float:
    """Mean of max(0, Y - O) / Y over (full, masked) score pairs, in percent."""
    pairs = [(float(y), float(o)) for y, o in pairs]
    if not pairs:
        raise EmptyDataset("average_drop needs at least one score pair")
    ys = np.array([y for y, _ in pairs], dtype=np.float64)
    os_ = np.array([o for _, o in pairs], dtype=np.float64)
    if np.any(ys <= 0):
        raise NonpositiveScore("full-input scores must be positive")
    return float(np.mean(np.maximum(0.0, ys - os_) / ys) * 100.0)


def average_increase(pairs) -> float:
    """Percent of images whose masked score exceeds the full score."""
    pairs = [(float(y), float(o)) for y, o in pairs]
    if not pairs:
        raise EmptyDataset("average_increase needs at least one score pair")
    return float(100.0 * sum(o > y for y, o in pairs) / len(pairs))


def _trapezoid(xs: np.ndarray, ys: np.ndarray) -> float:
    return float(np.sum(np.diff(xs) * (ys[1:] + ys[:-1]) * 0.5))


def _probability_curve(model, x, values, class_index, fill) -> tuple[np.ndarray, np.ndarray]:
    """Probability at each perturbation fraction.

    ``fill(flat_input, pixel_indices)`` returns the perturbed [C,HW] tensor
    for the given most-salient pixel set.
    """
    hw = values.size
    order = _rank_order(values)
    flat = x.reshape(x.shape[0], hw)
    fractions = np.arange(CURVE_STEPS + 1, dtype=np.float64) / CURVE_STEPS
    probs = np.empty(CURVE_STEPS + 1, dtype=np.float64)
    for i in range(CURVE_STEPS + 1):
        # exact integer ceil(i * hw / steps); float rounding here would
        # occasionally perturb one pixel too many
        n = (i * hw + CURVE_STEPS - 1) // CURVE_STEPS
        perturbed = fill(flat, order[:n])
        probs[i] = float(
            model.run(perturbed.reshape(x.shape)).probabilities[class_index]
        )
    return fractions, probs


def deletion_curve(model: ModelGraph, x: np.ndarray, saliency, class_index: int) -> CurveReport:
    """Probability of ``class_index`` as the most salient pixels are zeroed.

    The 0.00 point is exactly the unperturbed probability and the 1.00 point
    exactly the all-zero-input probability; a sharp early drop (low AUC)
    indicates a sharp explanation.
    """
    x = as_float_array(x, rank=3, name="input")
    values = _saliency_values(saliency)
    if values.shape != x.shape[1:]:
        raise ShapeError(f"saliency {values.shape} does not match input {x.shape[1:]}")
    class_index = _check_class(model, class_index)

    def remove(flat, idx):
        out = flat.copy()
        out[:, idx] = 0.0
        return out

    fractions, probs = _probability_curve(model, x, values, class_index, remove)
    return CurveReport(
        "deletion", tuple(map(float, fractions)), tuple(map(float, probs)),
        _trapezoid(fractions, probs),
    )


def insertion_curve(model: ModelGraph, x: np.ndarray, saliency, class_index: int) -> CurveReport:
    """Probability of ``class_index`` as salient pixels are restored onto an
    all-zero canvas; higher AUC indicates a sharper explanation."""
    x = as_float_array(x, rank=3, name="input")
    values = _saliency_values(saliency)
    if values.shape != x.shape[1:]:
        raise ShapeError(f"saliency {values.shape} does not match input {x.shape[1:]}")
    class_index = _check_class(model, class_index)

    def restore(flat, idx):
        out = np.zeros_like(flat)
        out[:, idx] = flat[:, idx]
        return out

    fractions, probs = _probability_curve(model, x, values, class_index, restore)
    return CurveReport(
        "insertion", tuple(map(float, fractions)), tuple(map(float, probs)),
        _trapezoid(fractions, probs),
    )


def energy_pointing(saliency, bbox) -> float:
    """Fraction of total saliency mass inside the (x, y, w, h) box."""
    values = _saliency_values(saliency)
    h, w = values.shape
    x0, y0, bw, bh = (int(v) for v in bbox)
    if bw < 1 or bh < 1 or x0 < 0 or y0 < 0 or x0 + bw > w or y0 + bh > h:
        raise ValueError(f"bbox {(x0, y0, bw, bh)} outside {w}x{h} map")
    total = float(values.astype(np.float64).sum())
    if total == 0.0:
        raise DegenerateMap("all-zero saliency map; energy proportion is undefined")
    inside = float(values[y0 : y0 + bh, x0 : x0 + bw].astype(np.float64).sum())
    return inside / total


def scale_bbox(bbox, src_size: tuple[int, int], dst_size: tuple[int, int]) -> tuple[int, int, int, int]:
    """Scale an (x, y, w, h) box between (width, height) spaces, covering the
    scaled region with integer bounds."""
    x, y, w, h = (int(v) for v in bbox)
    sw, sh = src_size
    dw, dh = dst_size
    if (sw, sh) == (dw, dh):
        return (x, y, w, h)
    x0 = x * dw // sw
    y0 = y * dh // sh
    x1 = min(dw, ((x + w) * dw + sw - 1) // sw)
    y1 = min(dh, ((y + h) * dh + sh - 1) // sh)
    x0 = min(x0, dw - 1)
    y0 = min(y0, dh - 1)
    return (x0, y0, max(1, x1 - x0), max(1, y1 - y0))


def _default_cfg(model: ModelGraph, cfg: PreprocessConfig | None) -> PreprocessConfig:
    if cfg is not None:
        return cfg
    return PreprocessConfig(target_h=model.input_shape[1], target_w=model.input_shape[2])


def run_recognition_eval(
    model: ModelGraph,
    records,
    cfg: PreprocessConfig | None = None,
    keep_fraction: float = 0.5,
    **cam_kwargs,
) -> RecognitionReport:
    """Recognition fidelity over labeled records.

    Per image: Y is the label-class probability on the preprocessed input,
    O the probability after muting all but the top ``keep_fraction`` of
    pixels ranked by that image's saliency map.  Extra keyword arguments are
    forwarded to :func:`scorecam`.
    """
    records = list(records)
    if not records:
        raise EmptyDataset("recognition evaluation needs at least one image")
    cfg = _default_cfg(model, cfg)
    per_image = []
    for record in records:
        if record.label is None:
            raise ValueError(f"record {record.id!r}: label required for recognition eval")
        label = _check_class(model, record.label)
        x = preprocess(record, cfg)
        full = float(model.run(x).probabilities[label])
        saliency = scorecam(model, x, target_class=label, **cam_kwargs)
        masked = mask_top_fraction(x, saliency, keep_fraction)
        masked_score = float(model.run(masked).probabilities[label])
        if full <= 0:
            raise NonpositiveScore(f"record {record.id!r}: full-input score {full} is not positive")
        drop = max(0.0, full - masked_score) / full * 100.0
        per_image.append(
            PerImageRecognition(record.id, full, masked_score, drop, masked_score > full)
        )
    pairs = [(r.full_score, r.masked_score) for r in per_image]
    return RecognitionReport(
        average_drop_pct=average_drop(pairs),
        average_increase_pct=average_increase(pairs),
        per_image=tuple(per_image),
    )


def run_pointing_eval(
    model: ModelGraph,
    records,
    cfg: PreprocessConfig | None = None,
    **cam_kwargs,
) -> PointingReport:
    """Energy-based pointing game over records with bounding boxes.

    Images whose box covers more than half the image are skipped (and
    counted); all-zero saliency maps are excluded from the mean and counted
    separately instead of silently contributing zero.
    """
    records = list(records)
    if not records:
        raise EmptyDataset("pointing evaluation needs at least one image")
    cfg = _default_cfg(model, cfg)
    eligible = []
    skipped = 0
    for record in records:
        if record.bbox is None:
            raise ValueError(f"record {record.id!r}: bbox required for pointing eval")
        if record.label is None:
            raise ValueError(f"record {record.id!r}: label required for pointing eval")
        _, _, bw, bh = record.bbox
        if bw * bh * 2 > record.width * record.height:
            skipped += 1
            continue
        eligible.append(record)
    if not eligible:
        raise NoEligibleImages(f"all {skipped} boxed images cover more than half the image")
    per_image = []
    degenerate = 0
    for record in eligible:
        label = _check_class(model, record.label)
        x = preprocess(record, cfg)
        saliency = scorecam(model, x, target_class=label, **cam_kwargs)
        box = scale_bbox(record.bbox, (record.width, record.height), (cfg.target_w, cfg.target_h))
        try:
            per_image.append((record.id, energy_pointing(saliency, box)))
        except DegenerateMap:
            degenerate += 1
    if not per_image:
        raise NoEligibleImages("every eligible image produced an all-zero saliency map")
    mean = float(np.mean([p for _, p in per_image]))
    return PointingReport(
        per_image=tuple(per_image),
        mean_proportion=mean,
        skipped_oversized=skipped,
        degenerate_maps=degenerate,
    )
