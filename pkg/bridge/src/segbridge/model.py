"""Loading user models and holding them to the pixels-in/labels-out contract."""

from __future__ import annotations

import importlib
import inspect
from dataclasses import dataclass

import numpy as np

from .errors import ModelContractError, StartupError

TRANSPORT_STDIO = "stdio"
TRANSPORT_SOCKET = "socket"


@dataclass(frozen=True)
class BridgeConfig:
    """Everything needed to stand up one oracle server.

    model_spec is "module.path:callable"; the callable takes an (H, W, C)
    uint8 array and returns an (H, W) integer label array. device is an
    opaque hint forwarded to the callable only if it accepts a `device`
    keyword. address is required for socket transport and ignored for stdio.
    """

    model_spec: str
    transport: str = TRANSPORT_STDIO
    address: tuple[str, int] | None = None
    device: str = ""
    timeout: float = 30.0

    def __post_init__(self):
        if self.transport not in (TRANSPORT_STDIO, TRANSPORT_SOCKET):
            raise StartupError(f"unknown transport {self.transport!r}")
        if self.transport == TRANSPORT_SOCKET and self.address is None:
            raise StartupError("socket transport needs an address")
        if ":" not in self.model_spec:
            raise StartupError(
                f"model spec {self.model_spec!r} must look like module.path:callable")
        if self.timeout <= 0:
            raise StartupError("timeout must be positive")


def load_model(cfg: BridgeConfig):
    """Import the configured callable; wrap it so segment(pixels) -> labels.

    Import or lookup problems raise StartupError (the model never loaded,
    so serving must not start). Contract violations at call time raise
    ModelContractError, which the server turns into error frames.
    """
    module_name, _, attr = cfg.model_spec.partition(":")
    try:
        module = importlib.import_module(module_name)
    except ImportError as exc:
        raise StartupError(f"cannot import model module {module_name!r}: {exc}") from exc
    try:
        fn = getattr(module, attr)
    except AttributeError:
        raise StartupError(f"module {module_name!r} has no attribute {attr!r}") from None
    if not callable(fn):
        raise StartupError(f"{cfg.model_spec} is not callable")

    wants_device = False
    try:
        wants_device = "device" in inspect.signature(fn).parameters
    except (TypeError, ValueError):
        pass  # builtins and some callables hide their signature; just call plainly

    def segment(pixels: np.ndarray) -> np.ndarray:
        if wants_device and cfg.device:
            raw = fn(pixels, device=cfg.device)
        else:
            raw = fn(pixels)
        return check_labels(raw, pixels.shape[:2])

    return segment


def check_labels(raw, expected_shape: tuple[int, int]) -> np.ndarray:
    """Validate a model's return value and normalize it to uint16."""
    labels = np.asarray(raw)
    if labels.ndim != 2:
        raise ModelContractError(f"model returned ndim={labels.ndim}, expected a 2-d label map")
    if tuple(labels.shape) != tuple(expected_shape):
        raise ModelContractError(
            f"model returned shape {tuple(labels.shape)}, request was {tuple(expected_shape)}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ModelContractError(f"model returned dtype {labels.dtype}, expected integers")
    if labels.size and (labels.min() < 0 or labels.max() > 0xFFFF):
        raise ModelContractError("model returned class ids outside the uint16 range")
    return labels.astype(np.uint16, copy=False)
