"""
Exception types shared by the simulator modules.

The CLI turns any SimulationError into a machine-readable report
(see backend/cli.py), so every subclass carries a stable error_type.
"""

from typing import Optional


class SimulationError(Exception):
    """Base class for all simulator failures"""

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message)
        self.field = field

    @property
    def error_type(self) -> str:
        name = type(self).__name__
        out = []
        for i, ch in enumerate(name):
            if ch.isupper() and i > 0:
                out.append("_")
            out.append(ch.lower())
        return "".join(out)

    def to_dict(self):
        return {
            "success": False,
            "error": str(self),
            "error_type": self.error_type,
            "field": self.field,
        }


class ConfigurationError(SimulationError):
    """Invalid input parameters; `field` holds the dotted config path"""


class GridResolutionError(ConfigurationError):
    """Grid too coarse or too small for the requested beam"""


class RealizationMismatchError(SimulationError):
    """Fields from different turbulence realizations were combined"""


class FullyLossyChannelError(SimulationError):
    """No probability left inside the encoding subspace"""


class NonPhysicalStateError(SimulationError):
    """Density matrix is not Hermitian or has negative eigenvalues"""


class DimensionMismatchError(SimulationError):
    """Operator and state dimensions do not agree"""


class AliasingWarning(UserWarning):
    """Field carries power in the spectral guard band"""


class WeakBeaconError(SimulationError):
    """Beacon power too low to locate its focal spot"""
