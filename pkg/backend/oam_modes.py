"""
OAM Modes Module
Laguerre-Gaussian (p = 0) mode synthesis, projection of received fields onto
OAM modes, crosstalk matrices and spiral spectra
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config import settings
from backend.errors import (
    ConfigurationError,
    DimensionMismatchError,
    GridResolutionError,
    NonPhysicalStateError,
    RealizationMismatchError,
)
from backend.field_core import ComplexField, GridSpec, normalize

# Configure logging
logging.basicConfig(level=settings.LOG_LEVEL)
logger = logging.getLogger(__name__)

LOSS_TOLERANCE = 1e-6


@dataclass(frozen=True)
class LGModeSpec:
    """
    Laguerre-Gaussian mode with radial index p = 0.

    Attributes:
        l (int): Azimuthal index
        w0 (float): Waist at z = 0 [m]
        wavelength (float): Wavelength [m]
        p (int): Radial index (only 0 is supported)
    """
    l: int
    w0: float
    wavelength: float
    p: int = 0

    def __post_init__(self):
        if self.p != 0:
            raise ConfigurationError(f"Only radial index p = 0 is supported, got p={self.p}")
        if abs(self.l) > settings.MAX_AZIMUTHAL_INDEX:
            raise ConfigurationError(
                f"|l|={abs(self.l)} exceeds the cap of {settings.MAX_AZIMUTHAL_INDEX}", field="modes"
            )
        if not self.w0 > 0:
            raise ConfigurationError(f"Mode waist must be positive, got {self.w0}", field="optics.w0")

    @property
    def rayleigh_range(self) -> float:
        return math.pi * self.w0 ** 2 / self.wavelength

    def radius_at(self, z: float) -> float:
        """w(z) = w0 sqrt(1 + (z/z_R)²)"""
        return self.w0 * math.sqrt(1 + (z / self.rayleigh_range) ** 2)

    def gouy_phase(self, z: float) -> float:
        """Φ(z) = arctan(z/z_R)"""
        return math.atan2(z, self.rayleigh_range)


def lg_mode(grid: GridSpec, spec: LGModeSpec, z: float) -> ComplexField:
    """
    Sample u_{0,l}(ρ, θ, z) on the grid and renormalize to unit power

    The curvature factor exp[+ikρ²z/(2(z²+z_R²))] and the Gouy factor
    exp[-i(|l|+1)Φ(z)] match the vacuum propagator's exp(-iz|κ|²/(2k)).

    Args:
        grid (GridSpec): Transverse sampling
        spec (LGModeSpec): Mode description
        z (float): Distance from the waist [m]

    Returns:
        ComplexField: Unit-power mode at plane z
    """
    w = spec.radius_at(z)
    if w * math.sqrt(abs(spec.l) + 1) > grid.extent / 4:
        raise GridResolutionError(
            f"Mode l={spec.l} (w(z)={w:.4f} m) does not fit in a grid of extent {grid.extent} m",
            field="grid.extent",
        )
    grid.check_resolves(spec.w0)

    k = 2 * math.pi / spec.wavelength
    z_r = spec.rayleigh_range
    rho, theta = grid.polar()
    amplitude = (
        (math.sqrt(2) * rho / w) ** abs(spec.l)
        * np.exp(-(rho ** 2) / w ** 2)
        * np.exp(1j * k * rho ** 2 * z / (2 * (z ** 2 + z_r ** 2)))
        * np.exp(1j * spec.l * theta)
        * np.exp(-1j * (abs(spec.l) + 1) * spec.gouy_phase(z))
    )
    return normalize(ComplexField(grid=grid, amplitude=amplitude, wavelength=spec.wavelength, z=z))


def _check_compatible(field: ComplexField, wavelength: float):
    if not math.isclose(field.wavelength, wavelength, rel_tol=1e-12):
        raise DimensionMismatchError(
            f"Field wavelength {field.wavelength} differs from mode wavelength {wavelength}"
        )


def project_onto_mode(field: ComplexField, spec: LGModeSpec, z: float) -> complex:
    """Discrete inner product <u_{0,l}(z)|ψ> δ²"""
    _check_compatible(field, spec.wavelength)
    mode = lg_mode(field.grid, spec, z)
    return complex(np.vdot(mode.amplitude, field.amplitude) * field.grid.pitch ** 2)


@lru_cache(maxsize=4)
def _mode_matrix(n: int, extent: float, wavelength: float, w0: float, z: float,
                 indices: Tuple[int, ...]) -> np.ndarray:
    grid = GridSpec(n=n, extent=extent)
    rows = [
        np.conj(lg_mode(grid, LGModeSpec(l=l, w0=w0, wavelength=wavelength), z).amplitude).ravel()
        for l in indices
    ]
    matrix = np.asarray(rows) * grid.pitch ** 2
    matrix.flags.writeable = False
    return matrix


class ModeBasis:
    """
    Receiver-plane modes for a fixed list of azimuthal indices.

    Projects a field onto every mode with a single matrix product; the
    conjugated mode stack is cached per (grid, λ, w0, z, indices).
    """

    def __init__(self, grid: GridSpec, wavelength: float, w0: float, z: float, indices: Sequence[int]):
        self.grid = grid
        self.wavelength = wavelength
        self.w0 = w0
        self.z = z
        self.indices = tuple(int(l) for l in indices)
        self._matrix = _mode_matrix(grid.n, grid.extent, wavelength, w0, float(z), self.indices)

    def project(self, field: ComplexField) -> np.ndarray:
        """Coefficients <l|ψ> for every index, in basis order"""
        _check_compatible(field, self.wavelength)
        if field.grid != self.grid:
            raise DimensionMismatchError(f"Field grid {field.grid} differs from basis grid {self.grid}")
        return self._matrix @ field.amplitude.ravel()


@dataclass(frozen=True)
class CrosstalkMatrix:
    """
    Per-realization coefficients c_{l,l0} = <l|U|l0>.

    entries[i, j] holds c for output_indices[i] and input_indices[j].
    """
    input_indices: Tuple[int, ...]
    output_indices: Tuple[int, ...]
    entries: np.ndarray
    realization: Optional[int] = None

    def __post_init__(self):
        entries = np.array(self.entries, dtype=np.complex128)
        if entries.shape != (len(self.output_indices), len(self.input_indices)):
            raise DimensionMismatchError(
                f"Crosstalk entries {entries.shape} do not match "
                f"{len(self.output_indices)} outputs x {len(self.input_indices)} inputs"
            )
        column_power = np.sum(np.abs(entries) ** 2, axis=0)
        if np.any(column_power > 1 + LOSS_TOLERANCE):
            raise NonPhysicalStateError(
                f"Crosstalk column power {column_power.max():.8f} exceeds 1 (losses can only remove probability)"
            )
        entries.flags.writeable = False
        object.__setattr__(self, "input_indices", tuple(self.input_indices))
        object.__setattr__(self, "output_indices", tuple(self.output_indices))
        object.__setattr__(self, "entries", entries)

    def coefficient(self, l: int, l0: int) -> complex:
        try:
            return complex(self.entries[self.output_indices.index(l), self.input_indices.index(l0)])
        except ValueError:
            raise ConfigurationError(f"Crosstalk matrix has no entry for l={l}, l0={l0}")

    def has(self, l: int, l0: int) -> bool:
        return l in self.output_indices and l0 in self.input_indices


def crosstalk_matrix(received_fields: Mapping[int, ComplexField],
                     output_indices: Sequence[int],
                     w0: float,
                     basis: Optional[ModeBasis] = None) -> CrosstalkMatrix:
    """
    Project every received field of one realization onto the output modes

    Args:
        received_fields (Mapping[int, ComplexField]): Received field per input index l0
        output_indices (Sequence[int]): Output azimuthal indices l
        w0 (float): Transmitter waist of the projection modes [m]
        basis (ModeBasis, optional): Prebuilt basis for the output indices

    Returns:
        CrosstalkMatrix: Entries (l, l0)
    """
    if not received_fields:
        raise ConfigurationError("No received fields to project")

    tags = {field.realization for field in received_fields.values()}
    if len(tags) != 1:
        raise RealizationMismatchError(f"Received fields come from different realizations: {sorted(map(str, tags))}")

    inputs = tuple(received_fields.keys())
    first = received_fields[inputs[0]]
    if basis is None or basis.indices != tuple(output_indices):
        basis = ModeBasis(first.grid, first.wavelength, w0, first.z, output_indices)

    columns = [basis.project(received_fields[l0]) for l0 in inputs]
    return CrosstalkMatrix(
        input_indices=inputs,
        output_indices=basis.indices,
        entries=np.stack(columns, axis=1),
        realization=tags.pop(),
    )


def spectrum_window(l0: int, half_width: Optional[int] = None) -> List[int]:
    """Output indices l0 - h .. l0 + h"""
    half_width = settings.SPECTRUM_HALF_WINDOW if half_width is None else half_width
    return list(range(l0 - half_width, l0 + half_width + 1))


def spiral_spectrum(realizations: Sequence[CrosstalkMatrix], l0: int) -> Dict[int, float]:
    """
    Disorder-averaged spiral spectrum P(l0 -> l) = (1/N) Σ_i |c_{l,l0}|²

    Args:
        realizations (Sequence[CrosstalkMatrix]): One matrix per realization
        l0 (int): Input azimuthal index

    Returns:
        Dict[int, float]: Probability per output index
    """
    table = spectrum_table(realizations, l0)
    return dict(zip(table["l"].tolist(), table["P"].tolist()))


def spectrum_table(realizations: Sequence[CrosstalkMatrix], l0: int) -> pd.DataFrame:
    """Spiral spectrum with the standard error of every P"""
    if not realizations:
        raise ConfigurationError("Spiral spectrum needs at least one realization")

    outputs = realizations[0].output_indices
    powers = []
    for matrix in realizations:
        if matrix.output_indices != outputs:
            raise DimensionMismatchError("Realizations use different output windows")
        if l0 not in matrix.input_indices:
            raise ConfigurationError(f"Input mode l0={l0} missing from a crosstalk matrix")
        column = matrix.entries[:, matrix.input_indices.index(l0)]
        powers.append(np.abs(column) ** 2)

    powers = np.asarray(powers)
    n = len(powers)
    stderr = powers.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(powers.shape[1])
    return pd.DataFrame({
        "l0": l0,
        "l": list(outputs),
        "P": powers.mean(axis=0),
        "stderr_P": stderr,
        "N": n,
    })
