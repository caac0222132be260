"""
Field Core Module
Transverse-plane grid, complex field container, vacuum angular-spectrum
propagation, apertures and power bookkeeping
"""

import dataclasses
import logging
import warnings
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy import fft

from config import settings
from backend.errors import (
    AliasingWarning,
    ConfigurationError,
    DimensionMismatchError,
    GridResolutionError,
)

# Configure logging
logging.basicConfig(level=settings.LOG_LEVEL)
logger = logging.getLogger(__name__)

# Fraction of the Nyquist radius kept by the spectral guard band
GUARD_RADIUS = 7.0 / 8.0
# Relative power in the guard band above which a field is flagged as aliased
ALIASING_TOLERANCE = 1e-8


@dataclass(frozen=True)
class GridSpec:
    """
    Square sampling of the transverse plane, centred on pixel (n/2, n/2).

    Attributes:
        n (int): Samples per axis (power of two, >= 64)
        extent (float): Physical side length [m]
    """
    n: int
    extent: float

    def __post_init__(self):
        if self.n < 64 or (self.n & (self.n - 1)) != 0:
            raise GridResolutionError(f"Grid size must be a power of two >= 64, got {self.n}", field="grid.n")
        if not self.extent > 0:
            raise ConfigurationError(f"Grid extent must be positive, got {self.extent}", field="grid.extent")

    @property
    def pitch(self) -> float:
        """Pixel pitch δ [m]"""
        return self.extent / self.n

    @property
    def frequency_pitch(self) -> float:
        """Spatial-frequency pitch 1/extent [1/m]"""
        return 1.0 / self.extent

    def coordinates(self) -> Tuple[np.ndarray, np.ndarray]:
        """Cartesian coordinates (x, y) of every pixel [m]"""
        return _coordinates(self.n, self.extent)

    def polar(self) -> Tuple[np.ndarray, np.ndarray]:
        """Polar coordinates (ρ, θ) of every pixel"""
        x, y = self.coordinates()
        return np.hypot(x, y), np.arctan2(y, x)

    def angular_frequencies(self) -> Tuple[np.ndarray, np.ndarray]:
        """Angular spatial frequencies (κx, κy) in FFT order [rad/m]"""
        return _angular_frequencies(self.n, self.extent)

    def check_resolves(self, w0: float):
        """Raise if the pixel pitch cannot resolve a beam of waist w0"""
        if self.pitch > w0 / 8:
            raise GridResolutionError(
                f"Pixel pitch {self.pitch:.3e} m does not resolve w0={w0:.3e} m (needs <= w0/8)",
                field="grid.n",
            )


@lru_cache(maxsize=8)
def _coordinates(n: int, extent: float) -> Tuple[np.ndarray, np.ndarray]:
    axis = (np.arange(n) - n // 2) * (extent / n)
    x, y = np.meshgrid(axis, axis)
    x.flags.writeable = False
    y.flags.writeable = False
    return x, y


@lru_cache(maxsize=8)
def _angular_frequencies(n: int, extent: float) -> Tuple[np.ndarray, np.ndarray]:
    kappa = 2 * np.pi * fft.fftfreq(n, d=extent / n)
    kx, ky = np.meshgrid(kappa, kappa)
    kx.flags.writeable = False
    ky.flags.writeable = False
    return kx, ky


@dataclass(frozen=True)
class ComplexField:
    """
    Complex optical amplitude ψ sampled on a GridSpec.

    Fields are immutable values: every operation in this module returns
    a new ComplexField. `realization` tags fields that went through a
    particular turbulence realization (None for vacuum fields).
    """
    grid: GridSpec
    amplitude: np.ndarray
    wavelength: float
    z: float = 0.0
    realization: Optional[int] = None
    aliased: bool = False

    def __post_init__(self):
        amplitude = np.array(self.amplitude, dtype=np.complex128)
        if amplitude.shape != (self.grid.n, self.grid.n):
            raise DimensionMismatchError(
                f"Amplitude shape {amplitude.shape} does not match grid {self.grid.n}x{self.grid.n}"
            )
        amplitude.flags.writeable = False
        object.__setattr__(self, "amplitude", amplitude)

    @property
    def wavenumber(self) -> float:
        """k = 2π/λ [1/m]"""
        return 2 * np.pi / self.wavelength

    @property
    def intensity(self) -> np.ndarray:
        return np.abs(self.amplitude) ** 2

    @property
    def phase(self) -> np.ndarray:
        return np.angle(self.amplitude)

    def replace(self, **changes) -> "ComplexField":
        return dataclasses.replace(self, **changes)


def make_gaussian(grid: GridSpec, w0: float, wavelength: float) -> ComplexField:
    """
    Create a unit-power Gaussian field exp(-ρ²/w0²) at z = 0

    Args:
        grid (GridSpec): Transverse sampling
        w0 (float): Beam waist [m]
        wavelength (float): Wavelength [m]

    Returns:
        ComplexField: Normalized Gaussian beam
    """
    if not w0 > 0:
        raise ConfigurationError(f"Beam waist must be positive, got {w0}", field="optics.w0")
    if grid.extent < 8 * w0:
        raise GridResolutionError(
            f"Grid extent {grid.extent} m is smaller than 8*w0 = {8 * w0} m", field="grid.extent"
        )
    grid.check_resolves(w0)

    rho, _ = grid.polar()
    amplitude = np.exp(-(rho ** 2) / w0 ** 2)
    return normalize(ComplexField(grid=grid, amplitude=amplitude, wavelength=wavelength))


def total_power(field: ComplexField) -> float:
    """Discrete L² norm Σ|ψ|²δ²"""
    return float(np.sum(field.intensity) * field.grid.pitch ** 2)


def normalize(field: ComplexField) -> ComplexField:
    """Rescale a field to unit total power"""
    power = total_power(field)
    if power <= 0:
        raise ConfigurationError("Cannot normalize a field with zero power")
    return field.replace(amplitude=field.amplitude / np.sqrt(power))


@lru_cache(maxsize=32)
def _transfer_function(n: int, extent: float, wavelength: float, dz: float, guard: bool) -> np.ndarray:
    kx, ky = _angular_frequencies(n, extent)
    kappa_sq = kx ** 2 + ky ** 2
    k = 2 * np.pi / wavelength
    transfer = np.exp(-1j * dz * kappa_sq / (2 * k))
    if guard:
        transfer[np.sqrt(kappa_sq) > GUARD_RADIUS * np.pi * n / extent] = 0
    transfer.flags.writeable = False
    return transfer


@lru_cache(maxsize=8)
def _guard_mask(n: int, extent: float) -> np.ndarray:
    kx, ky = _angular_frequencies(n, extent)
    mask = np.hypot(kx, ky) > GUARD_RADIUS * np.pi * n / extent
    mask.flags.writeable = False
    return mask


def angular_spectrum_propagate(field: ComplexField,
                               dz: float,
                               guard: Optional[bool] = None) -> ComplexField:
    """
    Advance a field by dz under vacuum paraxial diffraction

    The spectrum is multiplied by exp(-i dz |κ|²/(2k)). With the guard band
    enabled the outer 1/8 of the frequency radius is zeroed, and a field
    carrying noticeable power there is flagged as aliased.

    Args:
        field (ComplexField): Input field
        dz (float): Propagation distance [m], non-negative
        guard (bool, optional): Spectral guard band (default from settings)

    Returns:
        ComplexField: Field at z + dz
    """
    if dz < 0:
        raise ConfigurationError(f"Propagation distance must be non-negative, got {dz}")
    if guard is None:
        guard = settings.SPECTRAL_GUARD

    grid = field.grid
    spectrum = fft.fft2(field.amplitude)
    aliased = field.aliased

    if guard:
        spectral_power = np.abs(spectrum) ** 2
        total = spectral_power.sum()
        leaked = spectral_power[_guard_mask(grid.n, grid.extent)].sum()
        if total > 0 and leaked / total > ALIASING_TOLERANCE:
            aliased = True
            warnings.warn(
                f"{leaked / total:.2e} of the field power lies in the spectral guard band",
                AliasingWarning,
            )

    transfer = _transfer_function(grid.n, grid.extent, field.wavelength, float(dz), bool(guard))
    amplitude = fft.ifft2(spectrum * transfer)
    return field.replace(amplitude=amplitude, z=field.z + dz, aliased=aliased)


def apply_phase(field: ComplexField, phase: np.ndarray) -> ComplexField:
    """Multiply the amplitude pointwise by exp(-iφ)"""
    phase = np.asarray(phase)
    if phase.shape != field.amplitude.shape:
        raise DimensionMismatchError(
            f"Phase map shape {phase.shape} does not match field shape {field.amplitude.shape}"
        )
    return field.replace(amplitude=field.amplitude * np.exp(-1j * phase))


def apply_aperture(field: ComplexField, radius: float) -> ComplexField:
    """Zero the field outside a hard-edge circular aperture of the given radius"""
    if not 0 < radius <= field.grid.extent / 2:
        raise ConfigurationError(
            f"Aperture radius {radius} m must lie in (0, {field.grid.extent / 2}] m",
            field="turbulence.aperture_radius",
        )
    rho, _ = field.grid.polar()
    return field.replace(amplitude=np.where(rho <= radius, field.amplitude, 0))


def centroid(field: ComplexField) -> Tuple[float, float]:
    """Intensity centroid (x̄, ȳ) [m]"""
    x, y = field.grid.coordinates()
    intensity = field.intensity
    norm = intensity.sum()
    if norm == 0:
        return 0.0, 0.0
    return float((x * intensity).sum() / norm), float((y * intensity).sum() / norm)


def beam_radius(field: ComplexField) -> float:
    """Second-moment 1/e² radius w = sqrt(2⟨ρ²⟩) about the centroid [m]"""
    x, y = field.grid.coordinates()
    xc, yc = centroid(field)
    intensity = field.intensity
    rho_sq = (x - xc) ** 2 + (y - yc) ** 2
    return float(np.sqrt(2 * (rho_sq * intensity).sum() / intensity.sum()))


def grid_for_aperture(n: int, aperture_radius: float, factor: Optional[float] = None) -> GridSpec:
    """Default grid whose extent is `factor` times the aperture diameter"""
    factor = factor or settings.GRID_EXTENT_FACTOR
    return GridSpec(n=n, extent=factor * 2 * aperture_radius)


def dump_field(field: ComplexField, path: Union[str, Path]) -> Path:
    """
    Write a field raster for debugging

    `.npz` stores the raw amplitude with grid metadata; `.csv` stores one
    row per pixel with x, y, intensity and phase.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    if path.suffix == ".npz":
        np.savez(path,
                 amplitude=field.amplitude,
                 n=field.grid.n,
                 extent=field.grid.extent,
                 wavelength=field.wavelength,
                 z=field.z)
    elif path.suffix == ".csv":
        x, y = field.grid.coordinates()
        pd.DataFrame({
            "x": x.ravel(),
            "y": y.ravel(),
            "intensity": field.intensity.ravel(),
            "phase": field.phase.ravel(),
        }).to_csv(path, index=False)
    else:
        raise ConfigurationError(f"Unsupported raster format: {path.suffix}", field="output.format")

    logger.info(f"Field raster written to {path}")
    return path
