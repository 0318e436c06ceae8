"""On-disk formats: model files, raw tensors, portable pixmaps, manifests.

Model files (magic ``SCAM``) and raw tensors (magic ``SCTN``) are little-
endian binary layouts chosen for byte-exact round trips:

``SCAM`` model file
    magic ``SCAM`` | version u32 (=1) | class_count u32 | input C,H,W u32 |
    layer_count u32 | per layer: kind tag byte, kind parameters as u32,
    then weights and bias as float32 in declared shape order.
    Kind tags: Conv2d=1, ReLU=2, MaxPool2d=3, GlobalAvgPool=4, Flatten=5,
    Dense=6, Softmax=7.  Conv2d parameters: out_channels, in_channels,
    kernel_h, kernel_w, stride, padding.  MaxPool2d: window, stride.
    Dense: out_features, in_features.

``SCTN`` raw tensor
    magic ``SCTN`` | rank u32 | dims u32 each | float32 payload, row-major.

Images are binary PPM (``P6``, maxval 255) or a 3-channel ``SCTN`` tensor;
heatmaps are written as binary PGM (``P5``) plus an optional PPM overlay.
Manifests are tab-separated lines ``image_path<TAB>label[<TAB>x,y,w,h]``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import tensor_ops as ops
from .errors import (
    MagicMismatch,
    ParseError,
    ShapeError,
    TruncatedFile,
    UnsupportedFormat,
    VersionUnsupported,
)
from .model import (
    Conv2d,
    Dense,
    Flatten,
    GlobalAvgPool,
    Layer,
    MaxPool2d,
    ModelGraph,
    ReLU,
    Softmax,
)
from .validation import as_float_array

MODEL_MAGIC = b"SCAM"
TENSOR_MAGIC = b"SCTN"
MODEL_VERSION = 1

_TAG_CONV, _TAG_RELU, _TAG_MAXPOOL, _TAG_GAP, _TAG_FLATTEN, _TAG_DENSE, _TAG_SOFTMAX = range(1, 8)

# Fixed blue-to-red ramp for heatmap overlays: entry i is (R=i, G=0, B=255-i).
HEAT_COLORMAP = np.stack(
    [np.arange(256), np.zeros(256, dtype=np.int64), 255 - np.arange(256)], axis=1
).astype(np.uint8)


# ---------------------------------------------------------------------------
# low-level binary helpers
# ---------------------------------------------------------------------------


def _read_exact(f, n: int, path) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise TruncatedFile(f"{path}: expected {n} more bytes, found {len(data)}")
    return data


def _read_u32(f, n: int, path) -> tuple[int, ...]:
    return struct.unpack(f"<{n}I", _read_exact(f, 4 * n, path))


def _write_u32(f, *values: int) -> None:
    f.write(struct.pack(f"<{len(values)}I", *values))


def _read_f32(f, count: int, path) -> np.ndarray:
    raw = _read_exact(f, 4 * count, path)
    return np.frombuffer(raw, dtype="<f4").astype(np.float32)


def _write_f32(f, arr: np.ndarray) -> None:
    f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


# ---------------------------------------------------------------------------
# model files
# ---------------------------------------------------------------------------


def save_model(model: ModelGraph, path) -> None:
    """Write ``model`` so that :func:`load_model` reproduces it byte-exactly."""
    path = Path(path)
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        _write_u32(f, MODEL_VERSION, model.class_count, *model.input_shape, len(model.layers))
        for layer in model.layers:
            if isinstance(layer, Conv2d):
                s = layer.spec
                f.write(bytes([_TAG_CONV]))
                _write_u32(f, s.out_channels, s.in_channels, s.kernel_h, s.kernel_w, s.stride, s.padding)
                _write_f32(f, s.weights)
                _write_f32(f, s.bias)
            elif isinstance(layer, ReLU):
                f.write(bytes([_TAG_RELU]))
            elif isinstance(layer, MaxPool2d):
                f.write(bytes([_TAG_MAXPOOL]))
                _write_u32(f, layer.window, layer.stride)
            elif isinstance(layer, GlobalAvgPool):
                f.write(bytes([_TAG_GAP]))
            elif isinstance(layer, Flatten):
                f.write(bytes([_TAG_FLATTEN]))
            elif isinstance(layer, Dense):
                f.write(bytes([_TAG_DENSE]))
                _write_u32(f, *layer.weights.shape)
                _write_f32(f, layer.weights)
                _write_f32(f, layer.bias)
            elif isinstance(layer, Softmax):
                f.write(bytes([_TAG_SOFTMAX]))
            else:
                raise UnsupportedFormat(f"cannot serialize layer type {type(layer).__name__}")


def load_model(path) -> ModelGraph:
    """Load and validate a ``SCAM`` model file.

    Shape problems (layers that do not compose) surface here, at load time,
    never later during inference.
    """
    path = Path(path)
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, path)
        if magic != MODEL_MAGIC:
            raise MagicMismatch(f"{path}: expected magic {MODEL_MAGIC!r}, found {magic!r}")
        (version,) = _read_u32(f, 1, path)
        if version != MODEL_VERSION:
            raise VersionUnsupported(f"{path}: format version {version}, supported: {MODEL_VERSION}")
        class_count, c, h, w, layer_count = _read_u32(f, 5, path)
        layers: list[Layer] = []
        for i in range(layer_count):
            tag = _read_exact(f, 1, path)[0]
            if tag == _TAG_CONV:
                oc, ic, kh, kw, stride, pad = _read_u32(f, 6, path)
                weights = _read_f32(f, oc * ic * kh * kw, path).reshape(oc, ic, kh, kw)
                bias = _read_f32(f, oc, path)
                layers.append(Conv2d(ops.ConvSpec(oc, ic, kh, kw, stride, pad, weights, bias)))
            elif tag == _TAG_RELU:
                layers.append(ReLU())
            elif tag == _TAG_MAXPOOL:
                window, stride = _read_u32(f, 2, path)
                layers.append(MaxPool2d(window, stride))
            elif tag == _TAG_GAP:
                layers.append(GlobalAvgPool())
            elif tag == _TAG_FLATTEN:
                layers.append(Flatten())
            elif tag == _TAG_DENSE:
                k, d = _read_u32(f, 2, path)
                weights = _read_f32(f, k * d, path).reshape(k, d)
                bias = _read_f32(f, k, path)
                layers.append(Dense(weights, bias))
            elif tag == _TAG_SOFTMAX:
                layers.append(Softmax())
            else:
                raise UnsupportedFormat(f"{path}: unknown layer kind tag {tag} at layer {i}")
    return ModelGraph(tuple(layers), (c, h, w), class_count)


# ---------------------------------------------------------------------------
# raw tensors
# ---------------------------------------------------------------------------


def save_tensor(arr: np.ndarray, path) -> None:
    arr = as_float_array(arr, name="tensor")
    with open(path, "wb") as f:
        f.write(TENSOR_MAGIC)
        _write_u32(f, arr.ndim, *arr.shape)
        _write_f32(f, arr)


def load_tensor(path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, path)
        if magic != TENSOR_MAGIC:
            raise MagicMismatch(f"{path}: expected magic {TENSOR_MAGIC!r}, found {magic!r}")
        (rank,) = _read_u32(f, 1, path)
        if not 1 <= rank <= 4:
            raise UnsupportedFormat(f"{path}: tensor rank {rank} outside 1-4")
        dims = _read_u32(f, rank, path)
        if any(d < 1 for d in dims):
            raise UnsupportedFormat(f"{path}: zero-size dimension in {dims}")
        data = _read_f32(f, int(np.prod(dims)), path)
    return data.reshape(dims)


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ImageRecord:
    """One evaluation input: id, [3,H,W] pixels in [0,1], optional label and
    (x, y, w, h) bounding box in pixel units."""

    id: str
    pixels: np.ndarray
    label: int | None = None
    bbox: tuple[int, int, int, int] | None = None

    def __post_init__(self):
        pixels = as_float_array(self.pixels, rank=3, name="pixels")
        if pixels.shape[0] != 3:
            raise ShapeError(f"pixels must be [3,H,W], got {pixels.shape}")
        pixels.setflags(write=False)
        object.__setattr__(self, "pixels", pixels)
        if self.bbox is not None:
            x, y, w, h = (int(v) for v in self.bbox)
            _, height, width = pixels.shape
            if w < 1 or h < 1 or x < 0 or y < 0 or x + w > width or y + h > height:
                raise ShapeError(
                    f"bbox {(x, y, w, h)} outside {width}x{height} image"
                )
            object.__setattr__(self, "bbox", (x, y, w, h))

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]


def _parse_ppm_header(data: bytes, path) -> tuple[int, int, int, int]:
    """Parse 'P6 <w> <h> <maxval>' allowing whitespace and # comments.

    Returns (width, height, maxval, payload offset).
    """
    pos = 2  # past the already-checked magic
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise TruncatedFile(f"{path}: header ended before width/height/maxval")
        try:
            fields.append(int(data[start:pos]))
        except ValueError:
            raise UnsupportedFormat(f"{path}: non-numeric header field {data[start:pos]!r}")
    pos += 1  # single whitespace byte terminating the maxval field
    return fields[0], fields[1], fields[2], pos


def load_image(path) -> ImageRecord:
    """Read a binary PPM (P6, maxval 255) or 3-channel SCTN tensor.

    Pixels are returned scaled to [0,1].
    """
    path = Path(path)
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] == TENSOR_MAGIC:
        pixels = load_tensor(path)
        if pixels.ndim != 3 or pixels.shape[0] != 3:
            raise UnsupportedFormat(f"{path}: image tensor must be [3,H,W], got {pixels.shape}")
        return ImageRecord(id=path.stem, pixels=pixels)
    if data[:2] == b"P6":
        width, height, maxval, offset = _parse_ppm_header(data, path)
        if maxval != 255:
            raise UnsupportedFormat(f"{path}: only maxval 255 supported, got {maxval}")
        if width < 1 or height < 1:
            raise UnsupportedFormat(f"{path}: bad dimensions {width}x{height}")
        payload = data[offset : offset + 3 * width * height]
        if len(payload) != 3 * width * height:
            raise TruncatedFile(
                f"{path}: expected {3 * width * height} pixel bytes, found {len(payload)}"
            )
        hwc = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
        pixels = (hwc.transpose(2, 0, 1).astype(np.float32)) / np.float32(255.0)
        return ImageRecord(id=path.stem, pixels=pixels)
    raise UnsupportedFormat(f"{path}: neither P6 PPM nor SCTN tensor")


def _quantize(values: np.ndarray) -> np.ndarray:
    """Map [0,1] floats to bytes by round(255*v), rounding halves up."""
    scaled = np.floor(values.astype(np.float64) * 255.0 + 0.5)
    return np.clip(scaled, 0, 255).astype(np.uint8)


def write_ppm(pixels: np.ndarray, path) -> None:
    """Write [3,H,W] values in [0,1] as a binary P6 file."""
    pixels = as_float_array(pixels, rank=3, name="pixels")
    if pixels.shape[0] != 3:
        raise ShapeError(f"PPM pixels must be [3,H,W], got {pixels.shape}")
    _, h, w = pixels.shape
    body = _quantize(pixels).transpose(1, 2, 0).tobytes()
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(body)


def write_pgm(values: np.ndarray, path) -> None:
    """Write [H,W] or [1,H,W] values in [0,1] as a binary P5 file."""
    values = as_float_array(values, name="values")
    if values.ndim == 3 and values.shape[0] == 1:
        values = values[0]
    if values.ndim != 2:
        raise ShapeError(f"PGM values must be [H,W] or [1,H,W], got {values.shape}")
    h, w = values.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(_quantize(values).tobytes())


def write_heatmap(saliency, path, *, image: ImageRecord | None = None, overlay_path=None) -> None:
    """Write a saliency map as 8-bit grayscale PGM; values must be in [0,1].

    When ``image`` and ``overlay_path`` are given, also writes a PPM overlay:
    each saliency byte indexes :data:`HEAT_COLORMAP` and is alpha-blended at
    a fixed 0.5 with the source pixels (bilinearly resized to the map size
    if needed).
    """
    values = getattr(saliency, "values", saliency)
    values = as_float_array(values, name="saliency")
    if values.ndim == 3 and values.shape[0] == 1:
        values = values[0]
    if values.ndim != 2:
        raise ShapeError(f"saliency must be [H,W] or [1,H,W], got {values.shape}")
    if values.min() < 0.0 or values.max() > 1.0:
        raise ValueError("saliency values must lie in [0,1]")
    write_pgm(values, path)
    if image is None or overlay_path is None:
        return
    h, w = values.shape
    src = image.pixels
    if src.shape[1:] != (h, w):
        src = ops.bilinear_resize(src, h, w)
    heat = HEAT_COLORMAP[_quantize(values)].astype(np.float64)  # [H,W,3]
    base = src.transpose(1, 2, 0).astype(np.float64) * 255.0
    blended = np.floor(0.5 * heat + 0.5 * base + 0.5).clip(0, 255) / 255.0
    write_ppm(blended.transpose(2, 0, 1).astype(np.float32), overlay_path)


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------


def load_manifest(path) -> list[ImageRecord]:
    """Read tab-separated ``image_path<TAB>label[<TAB>x,y,w,h]`` lines.

    Image paths are resolved relative to the manifest's directory.  Blank
    lines are skipped; anything else that fails to parse raises ParseError
    naming the 1-based line number.
    """
    path = Path(path)
    records: list[ImageRecord] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3):
                raise ParseError(
                    f"{path}:{lineno}: expected 2 or 3 tab-separated fields, got {len(parts)}"
                )
            image_path = (path.parent / parts[0]).resolve()
            try:
                label = int(parts[1])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: label {parts[1]!r} is not an integer")
            bbox = None
            if len(parts) == 3:
                pieces = parts[2].split(",")
                if len(pieces) != 4:
                    raise ParseError(f"{path}:{lineno}: bbox must be x,y,w,h, got {parts[2]!r}")
                try:
                    bbox = tuple(int(p) for p in pieces)
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: bbox fields must be integers, got {parts[2]!r}")
            record = load_image(image_path)
            try:
                record = replace(record, label=label, bbox=bbox)
            except ShapeError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}")
            records.append(record)
    return records


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PreprocessConfig:
    """Resize target plus per-channel normalization statistics.

    Defaults match the common ImageNet pipeline (224x224 inputs, mean
    [0.485, 0.456, 0.406], std [0.229, 0.224, 0.225]); all fields are
    overridable because other models need other statistics.  ``value_scale``
    divides raw pixel values first, for inputs that are not already in
    [0,1] (loaders in this package already scale bytes down, so 1.0).
    """

    target_h: int = 224
    target_w: int = 224
    mean: tuple[float, float, float] = (0.485, 0.456, 0.406)
    std: tuple[float, float, float] = (0.229, 0.224, 0.225)
    value_scale: float = 1.0

    def __post_init__(self):
        if self.target_h < 1 or self.target_w < 1:
            raise ValueError(f"target dims must be positive, got {self.target_h}x{self.target_w}")
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ValueError("mean and std must be 3-vectors")
        if any(s <= 0 for s in self.std):
            raise ValueError(f"std components must be > 0, got {self.std}")
        if self.value_scale <= 0:
            raise ValueError(f"value_scale must be > 0, got {self.value_scale}")


def preprocess(image, cfg: PreprocessConfig) -> np.ndarray:
    """Scale, bilinearly resize, and normalize an image to model input space.

    Accepts an :class:`ImageRecord` or a raw [3,H,W] array; returns float32
    [3, target_h, target_w] with per-channel (x - mean) / std applied.
    """
    pixels = image.pixels if isinstance(image, ImageRecord) else as_float_array(image, rank=3)
    if cfg.value_scale != 1.0:
        pixels = pixels / np.float32(cfg.value_scale)
    resized = ops.bilinear_resize(pixels, cfg.target_h, cfg.target_w)
    mean = np.asarray(cfg.mean, dtype=np.float32)[:, None, None]
    std = np.asarray(cfg.std, dtype=np.float32)[:, None, None]
    return (resized - mean) / std
