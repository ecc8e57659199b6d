class MicroelastError(Exception):
    """Base class for every fault raised by the solver."""


class TopologyError(MicroelastError, ValueError):
    """Raised when a network topology is not valid."""


class NonFiniteError(MicroelastError, FloatingPointError):
    """Raised when a network layer produces NaN or infinite values."""

    def __init__(self, layer: int, what: str = "activation"):
        self.layer = layer
        super().__init__(f"Non-finite {what} in layer {layer}")


class UnsupportedLossError(MicroelastError, TypeError):
    """Raised when a loss cannot be differentiated w.r.t. the parameters."""


class MaterialError(MicroelastError, ValueError):
    """Raised for unphysical material data."""


class DomainError(MicroelastError, ValueError):
    """Raised when a point lies outside the unit cell."""


class BoundaryRuleError(MicroelastError, ValueError):
    """Raised when a hard boundary rule set is incomplete or inconsistent."""


class SelectionError(MicroelastError, ValueError):
    """Raised when an adaptive selection cannot be made."""


class InterfaceError(MicroelastError, ValueError):
    """Raised when interface points do not lie on their interface."""


class OptimizerError(MicroelastError, RuntimeError):
    """Raised when an optimization run fails."""

    def __init__(self, message: str, cycle: int | None = None):
        self.cycle = cycle
        prefix = f"[cycle {cycle}] " if cycle is not None else ""
        super().__init__(f"{prefix}{message}")


class PgmFormatError(MicroelastError, ValueError):
    """Raised when a PGM file is malformed."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


class ExportError(MicroelastError, OSError):
    """Raised when an export cannot be written or read back."""


class ConfigError(MicroelastError, ValueError):
    """Raised when an experiment configuration is invalid."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")
