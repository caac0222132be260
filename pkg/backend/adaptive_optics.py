"""
Adaptive Optics Module
Gaussian beacon propagated through the same channel realization, and the
ideal and tip-tilt phase-correction models driven by it
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy import fft

from config import settings
from backend.errors import (
    ConfigurationError,
    DimensionMismatchError,
    RealizationMismatchError,
    WeakBeaconError,
)
from backend.field_core import (
    ComplexField,
    angular_spectrum_propagate,
    apply_phase,
    make_gaussian,
    total_power,
)
from backend.turbulence import ChannelPlan, PhaseScreen, propagate_channel

# Configure logging
logging.basicConfig(level=settings.LOG_LEVEL)
logger = logging.getLogger(__name__)

# Beacon pixels weaker than this fraction of the peak amplitude carry no phase
AMPLITUDE_FLOOR = 1e-12
MIN_BEACON_POWER = 1e-9


class Correction(str, Enum):
    NONE = "none"
    TIPTILT = "tiptilt"
    IDEAL = "ideal"

    @classmethod
    def parse(cls, value: Union[str, "Correction"]) -> "Correction":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower().replace("-", "").replace("_", ""))
        except ValueError:
            raise ConfigurationError(
                f"Unknown correction mode '{value}', expected one of none|tiptilt|ideal", field="ao_modes"
            )


@dataclass(frozen=True)
class AOMode:
    """Correction model together with the beacon waist it senses with"""
    correction: Correction
    beacon_w0: float

    def __post_init__(self):
        if not self.beacon_w0 > 0:
            raise ConfigurationError(f"Beacon waist must be positive, got {self.beacon_w0}", field="beacon_w0")


def vacuum_beacon(plan: ChannelPlan, beacon_w0: Optional[float] = None) -> ComplexField:
    """Gaussian beacon propagated through vacuum to the receiver plane"""
    beacon_w0 = beacon_w0 or plan.params.w0
    beacon = make_gaussian(plan.grid, beacon_w0, plan.params.wavelength)
    return angular_spectrum_propagate(beacon, plan.params.z)


def propagate_beacon(plan: ChannelPlan,
                     screens: Sequence[PhaseScreen],
                     beacon_w0: Optional[float] = None,
                     vacuum: Optional[ComplexField] = None) -> Tuple[ComplexField, ComplexField]:
    """
    Send the beacon through a realization and through vacuum

    Args:
        plan (ChannelPlan): Channel plan
        screens (Sequence[PhaseScreen]): Screens of one realization
        beacon_w0 (float, optional): Beacon waist (defaults to the signal waist)
        vacuum (ComplexField, optional): Precomputed vacuum beacon

    Returns:
        Tuple[ComplexField, ComplexField]: (beacon_turb, beacon_vac) at the receiver
    """
    beacon_w0 = beacon_w0 or plan.params.w0
    beacon = make_gaussian(plan.grid, beacon_w0, plan.params.wavelength)
    turbulent = propagate_channel(beacon, plan, screens)
    if vacuum is None:
        vacuum = vacuum_beacon(plan, beacon_w0)
    return turbulent, vacuum


def _check_same_realization(signal: ComplexField, beacon_turb: ComplexField, beacon_vac: ComplexField):
    if not (signal.grid == beacon_turb.grid == beacon_vac.grid):
        raise DimensionMismatchError("Signal and beacons must share one grid")
    if (signal.realization is not None and beacon_turb.realization is not None
            and signal.realization != beacon_turb.realization):
        raise RealizationMismatchError(
            f"Signal of realization {signal.realization} corrected with beacon of "
            f"realization {beacon_turb.realization}"
        )


def aberration_phase(beacon_turb: ComplexField, beacon_vac: ComplexField) -> Tuple[np.ndarray, int]:
    """
    Beacon phase relative to the vacuum beacon, φ_B = arg(ψ_turb) - arg(ψ_vac)

    Pixels where either beacon is weaker than 1e-12 of its peak get φ_B = 0.

    Returns:
        Tuple[np.ndarray, int]: phase map and number of flagged pixels
    """
    turb = beacon_turb.amplitude
    vac = beacon_vac.amplitude
    valid = ((np.abs(turb) >= AMPLITUDE_FLOOR * np.abs(turb).max())
             & (np.abs(vac) >= AMPLITUDE_FLOOR * np.abs(vac).max()))
    phase = np.where(valid, np.angle(turb * np.conj(vac)), 0.0)
    return phase, int(np.count_nonzero(~valid))


def ideal_correction(signal: ComplexField,
                     beacon_turb: ComplexField,
                     beacon_vac: ComplexField,
                     return_flagged: bool = False):
    """
    Full reconstruction of the beacon aberration, applied as exp(-iφ_B)

    Args:
        signal (ComplexField): Received signal field
        beacon_turb (ComplexField): Beacon through the same realization
        beacon_vac (ComplexField): Beacon through vacuum
        return_flagged (bool): Also return the count of pixels without beacon phase

    Returns:
        ComplexField (or (ComplexField, int) with return_flagged)
    """
    _check_same_realization(signal, beacon_turb, beacon_vac)
    phase, flagged = aberration_phase(beacon_turb, beacon_vac)
    if flagged:
        logger.debug(f"Ideal correction: {flagged} pixels below the beacon amplitude floor")
    corrected = apply_phase(signal, phase)
    return (corrected, flagged) if return_flagged else corrected


def _spot_centroid(field: ComplexField) -> Tuple[float, float]:
    kx, ky = field.grid.angular_frequencies()
    spot = np.abs(fft.fft2(field.amplitude)) ** 2
    norm = spot.sum()
    return float((kx * spot).sum() / norm), float((ky * spot).sum() / norm)


def estimate_tilt(beacon_turb: ComplexField, beacon_vac: ComplexField) -> Tuple[float, float]:
    """
    Wavefront tilt (κ̄x, κ̄y) [rad/m] from the focal-spot displacement

    The focal plane is the discrete Fourier transform of the beacon; the
    displacement is measured against the vacuum beacon's spot.
    """
    if total_power(beacon_turb) < MIN_BEACON_POWER:
        raise WeakBeaconError(f"Beacon power {total_power(beacon_turb):.3e} too low to locate a focal spot")
    kx, ky = _spot_centroid(beacon_turb)
    kx0, ky0 = _spot_centroid(beacon_vac)
    return kx - kx0, ky - ky0


def tip_tilt_correction(signal: ComplexField,
                        beacon_turb: ComplexField,
                        beacon_vac: ComplexField) -> ComplexField:
    """Remove the beacon's tip and tilt with a compensating linear phase"""
    _check_same_realization(signal, beacon_turb, beacon_vac)
    kx, ky = estimate_tilt(beacon_turb, beacon_vac)
    x, y = signal.grid.coordinates()
    return apply_phase(signal, kx * x + ky * y)


def apply_correction(correction: Union[Correction, str],
                     signal: ComplexField,
                     beacon_turb: ComplexField,
                     beacon_vac: ComplexField) -> ComplexField:
    """Dispatch to the correction model named by `correction`"""
    correction = Correction.parse(correction)
    if correction is Correction.IDEAL:
        return ideal_correction(signal, beacon_turb, beacon_vac)
    if correction is Correction.TIPTILT:
        return tip_tilt_correction(signal, beacon_turb, beacon_vac)
    return signal
