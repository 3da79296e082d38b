"""Core raster types and quality/accuracy metrics.

An Image is an H x W x C array of 8-bit samples (C is 1 or 3); a LabelMap is an
H x W array of class indices up to 65535. Both wrap read-only numpy arrays so
they are safely shareable across workers. The metrics here (MSE, PSNR, IoU,
mIoU) are the currency every other module trades in.

Design notes:
  - PSNR peak is fixed at 255 (8-bit samples) and identical inputs yield +inf.
  - IoU averages over the union of classes present in prediction or truth;
    a class absent from both simply does not appear (no 0/0 terms, no
    artificial 1.0 credits).
  - All metric arithmetic happens in int64/float64 regardless of platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptySet

PEAK_VALUE = 255.0


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Image:
    """Dense H x W x C raster of 8-bit samples. Immutable."""

    samples: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.samples)
        if arr.ndim == 2:
            arr = arr[:, :, np.newaxis]
        if arr.ndim != 3:
            raise DimensionMismatch(f"image array must be H x W x C, got shape {arr.shape}")
        h, w, c = arr.shape
        if h < 1 or w < 1:
            raise DimensionMismatch(f"image must be at least 1 x 1, got {h} x {w}")
        if c not in (1, 3):
            raise DimensionMismatch(f"image must have 1 or 3 channels, got {c}")
        if arr.dtype != np.uint8:
            if not np.issubdtype(arr.dtype, np.integer):
                raise DimensionMismatch(f"image samples must be integers, got dtype {arr.dtype}")
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise DimensionMismatch("image samples must lie in [0, 255]")
            arr = arr.astype(np.uint8)
        else:
            arr = arr.copy()
        object.__setattr__(self, "samples", _frozen(arr))

    @classmethod
    def from_array(cls, arr) -> "Image":
        return cls(np.asarray(arr))

    @property
    def height(self) -> int:
        return int(self.samples.shape[0])

    @property
    def width(self) -> int:
        return int(self.samples.shape[1])

    @property
    def channels(self) -> int:
        return int(self.samples.shape[2])

    @property
    def min_sample(self) -> int:
        """Global minimum over all samples (MIN_I of the distortion formulas)."""
        return int(self.samples.min())

    @property
    def max_sample(self) -> int:
        """Global maximum over all samples (MAX_I of the distortion formulas)."""
        return int(self.samples.max())

    def __eq__(self, other) -> bool:
        if not isinstance(other, Image):
            return NotImplemented
        return self.samples.shape == other.samples.shape and np.array_equal(self.samples, other.samples)

    def __repr__(self) -> str:
        return f"Image({self.height}x{self.width}x{self.channels})"


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Dense H x W raster of class indices in [0, 65535]. Immutable."""

    labels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if arr.ndim != 2:
            raise DimensionMismatch(f"label array must be H x W, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionMismatch(f"label map must be at least 1 x 1, got {arr.shape}")
        if arr.dtype != np.uint16:
            if not np.issubdtype(arr.dtype, np.integer):
                raise DimensionMismatch(f"labels must be integers, got dtype {arr.dtype}")
            if arr.size and (arr.min() < 0 or arr.max() > 65535):
                raise DimensionMismatch("class indices must lie in [0, 65535]")
            arr = arr.astype(np.uint16)
        else:
            arr = arr.copy()
        object.__setattr__(self, "labels", _frozen(arr))

    @classmethod
    def from_array(cls, arr) -> "LabelMap":
        return cls(np.asarray(arr))

    @property
    def height(self) -> int:
        return int(self.labels.shape[0])

    @property
    def width(self) -> int:
        return int(self.labels.shape[1])

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabelMap):
            return NotImplemented
        return self.labels.shape == other.labels.shape and np.array_equal(
            self.labels, other.labels
        )

    def __repr__(self) -> str:
        return f"LabelMap({self.height}x{self.width})"


@dataclass(frozen=True)
class IoUReport:
    """Per-class IoU plus the unweighted mean over reported classes."""

    per_class: dict[int, float]
    mean_iou: float


def _require_same_shape(a, b, what: str):
    sa = a.samples.shape if isinstance(a, Image) else a.labels.shape
    sb = b.samples.shape if isinstance(b, Image) else b.labels.shape
    if sa != sb:
        raise DimensionMismatch(f"{what}: shapes differ, {sa} vs {sb}")


def mse(a: Image, b: Image) -> float:
    """Mean squared error over all samples, in float64."""
    _require_same_shape(a, b, "mse")
    diff = a.samples.astype(np.int64) - b.samples.astype(np.int64)
    return float(np.mean(diff * diff, dtype=np.float64))


def psnr(original: Image, distorted: Image) -> float:
    """Peak signal-to-noise ratio in dB; +inf for identical images."""
    err = mse(original, distorted)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(PEAK_VALUE * PEAK_VALUE / err)


def iou(prediction: LabelMap, truth: LabelMap) -> IoUReport:
    """Intersection-over-union per class, over classes present in either map."""
    _require_same_shape(prediction, truth, "iou")
    pred = prediction.labels
    true = truth.labels
    classes = np.union1d(np.unique(pred), np.unique(true))
    per_class: dict[int, float] = {}
    for c in classes:
        p = pred == c
        t = true == c
        inter = int(np.count_nonzero(p & t))
        union = int(np.count_nonzero(p | t))
        # union > 0 by construction: c is present in at least one map
        per_class[int(c)] = inter / union
    mean = float(sum(per_class.values()) / len(per_class))
    return IoUReport(per_class=per_class, mean_iou=mean)


def mean_iou_over_set(pairs) -> float:
    """Mean of per-pair mean IoU over a non-empty list of (prediction, truth)."""
    pairs = list(pairs)
    if not pairs:
        raise EmptySet("mean_iou_over_set: no pairs given")
    total = 0.0
    for prediction, truth in pairs:
        total += iou(prediction, truth).mean_iou
    return total / len(pairs)
