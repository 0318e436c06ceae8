"""Gradient-free saliency maps for small CNNs.

The package bundles a deterministic forward-only inference engine, the
channel-score explanation algorithm (as plain functions and as the
scikit-learn style :class:`ScoreCam` estimator), binary model/image
formats, and the standard evaluation suite: recognition fidelity,
deletion/insertion curves, the energy-based pointing game, and a
weight-randomization sanity check.
"""

__version__ = "0.1.0"

from . import errors
from .engine import (
    ActivationCapture,
    SaliencyMap,
    ScoreCam,
    build_masks,
    combine,
    combine_activations,
    forward_with_capture,
    increase_of_confidence,
    resolve_target_layer,
    score_masked_batch,
    scorecam,
    softmax_weights,
)
from .evaluate import (
    CurveReport,
    PointingReport,
    RecognitionReport,
    average_drop,
    average_increase,
    deletion_curve,
    energy_pointing,
    insertion_curve,
    mask_top_fraction,
    run_pointing_eval,
    run_recognition_eval,
)
from .formats import (
    ImageRecord,
    PreprocessConfig,
    load_image,
    load_manifest,
    load_model,
    load_tensor,
    preprocess,
    save_model,
    save_tensor,
    write_heatmap,
    write_pgm,
    write_ppm,
)
from .model import (
    Conv2d,
    Dense,
    Flatten,
    GlobalAvgPool,
    MaxPool2d,
    ModelGraph,
    ReLU,
    Softmax,
    graphs_equal,
)
from .sanity import (
    RandomizationReport,
    RandomizationStage,
    cascading_test,
    randomize_from,
    rank_correlation,
)
from .tensor_ops import (
    ConvSpec,
    argmax,
    bilinear_resize,
    conv2d,
    dense,
    hadamard,
    maxpool2d,
    minmax_normalize,
    nearest_resize,
    relu,
    softmax,
)

__all__ = [
    "ActivationCapture",
    "ConvSpec",
    "Conv2d",
    "CurveReport",
    "Dense",
    "Flatten",
    "GlobalAvgPool",
    "ImageRecord",
    "MaxPool2d",
    "ModelGraph",
    "PointingReport",
    "PreprocessConfig",
    "RandomizationReport",
    "RandomizationStage",
    "RecognitionReport",
    "ReLU",
    "SaliencyMap",
    "ScoreCam",
    "Softmax",
    "argmax",
    "average_drop",
    "average_increase",
    "bilinear_resize",
    "build_masks",
    "cascading_test",
    "combine",
    "combine_activations",
    "conv2d",
    "deletion_curve",
    "dense",
    "energy_pointing",
    "errors",
    "forward_with_capture",
    "graphs_equal",
    "hadamard",
    "increase_of_confidence",
    "insertion_curve",
    "load_image",
    "load_manifest",
    "load_model",
    "load_tensor",
    "mask_top_fraction",
    "maxpool2d",
    "minmax_normalize",
    "nearest_resize",
    "preprocess",
    "randomize_from",
    "rank_correlation",
    "relu",
    "resolve_target_layer",
    "run_pointing_eval",
    "run_recognition_eval",
    "save_model",
    "save_tensor",
    "score_masked_batch",
    "scorecam",
    "softmax",
    "softmax_weights",
    "write_heatmap",
    "write_pgm",
    "write_ppm",
]
