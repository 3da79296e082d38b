"""segbridge: serve any Python segmentation callable as a segevo oracle."""

from .demo import DemoSegmenter, demo_segment, wrap_builtin_demo
from .errors import BridgeError, ModelContractError, ProtocolError, StartupError
from .model import BridgeConfig, load_model
from .server import serve

__all__ = [
    "BridgeConfig",
    "BridgeError",
    "DemoSegmenter",
    "ModelContractError",
    "ProtocolError",
    "StartupError",
    "demo_segment",
    "load_model",
    "serve",
    "wrap_builtin_demo",
]
