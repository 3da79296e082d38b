"""A dependency-free demo model: per-pixel nearest-centroid segmentation.

The centroid table below mirrors the segevo toolkit's built-in palette,
value for value, and the assignment rule matches it too: squared Euclidean
distance in RGB, ties to the lowest class id. That makes the demo backend
a drop-in stand-in for the builtin oracle, which is exactly what the
cross-package equivalence tests check.
"""

from __future__ import annotations

import numpy as np

from .errors import ModelContractError
from .model import BridgeConfig

DEMO_CENTROIDS: tuple[tuple[int, tuple[int, int, int]], ...] = (
    (0, (96, 96, 96)),
    (1, (144, 96, 96)),
    (2, (96, 144, 96)),
    (3, (96, 96, 144)),
    (4, (144, 144, 96)),
)


class DemoSegmenter:
    """Nearest-centroid labeling over a fixed palette."""

    def __init__(self, centroids=DEMO_CENTROIDS):
        self.centroids = tuple(sorted(
            (int(cls), tuple(int(v) for v in rgb)) for cls, rgb in centroids))

    def segment(self, pixels: np.ndarray) -> np.ndarray:
        arr = np.asarray(pixels)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ModelContractError(
                f"demo model wants (H, W, 3) pixels, got shape {arr.shape}")
        work = arr.astype(np.int32)
        best_dist = None
        best_cls = None
        # Visiting centroids in ascending class order with a strict "<"
        # means the lowest class id keeps every tie.
        for cls, rgb in self.centroids:
            delta = work - np.asarray(rgb, dtype=np.int32)
            dist = (delta * delta).sum(axis=2)
            if best_dist is None:
                best_dist = dist
                best_cls = np.full(dist.shape, cls, dtype=np.uint16)
            else:
                closer = dist < best_dist
                best_dist = np.where(closer, dist, best_dist)
                best_cls = np.where(closer, np.uint16(cls), best_cls)
        return best_cls


def demo_segment(pixels: np.ndarray) -> np.ndarray:
    """Module-level entry point usable as a model_spec target."""
    return DemoSegmenter().segment(pixels)


def wrap_builtin_demo() -> BridgeConfig:
    """A ready-to-serve config for the demo model over stdio."""
    return BridgeConfig(model_spec="segbridge.demo:demo_segment")
