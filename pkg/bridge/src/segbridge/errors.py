"""Error taxonomy for the bridge.

ProtocolError covers malformed bytes on the wire; ModelContractError covers
a model whose return value breaks the pixels-in/labels-out contract; both
are converted to error frames by the server loop, never crashes.
StartupError aborts before serving begins and maps to a nonzero exit.
"""


class BridgeError(Exception):
    pass


class ProtocolError(BridgeError):
    pass


class ModelContractError(BridgeError):
    pass


class StartupError(BridgeError):
    pass
