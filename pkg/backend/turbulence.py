"""
Turbulence Module
Kolmogorov statistics, derived channel scales, split-step channel planning
and subharmonic phase-screen synthesis
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import fft, integrate

from config import settings
from backend.errors import ConfigurationError, RealizationMismatchError
from backend.field_core import ComplexField, GridSpec, angular_spectrum_propagate, apply_phase

# Configure logging
logging.basicConfig(level=settings.LOG_LEVEL)
logger = logging.getLogger(__name__)

# Kolmogorov phase PSD prefactor, Φ_φ(f) = 0.023 r0^{-5/3} f^{-11/3}
PSD_PREFACTOR = 0.023
# Structure function D(r) = 6.88 (r/r0)^{5/3}
STRUCTURE_PREFACTOR = 6.88
MAX_STEPS = 10000
# Grid cells within this many steps of the origin are integrated, not point-sampled
LOW_ORDER_RING = 3
# Midpoints per cell axis for integrated cells
CELL_QUADRATURE = 4


@dataclass(frozen=True)
class TurbulenceParams:
    """
    Physical description of a horizontal path with constant C_n².

    Attributes:
        cn2 (float): Refractive-index structure constant [m^-2/3]
        wavelength (float): Wavelength λ [m]
        z (float): Path length [m]
        w0 (float): Transmitter beam waist [m]
    """
    cn2: float
    wavelength: float
    z: float
    w0: float

    def __post_init__(self):
        if self.cn2 < 0:
            raise ConfigurationError(f"C_n^2 must be non-negative, got {self.cn2}", field="turbulence.cn2")
        if not self.wavelength > 0:
            raise ConfigurationError(f"Wavelength must be positive, got {self.wavelength}", field="optics.wavelength")
        if self.z < 0:
            raise ConfigurationError(f"Path length must be non-negative, got {self.z}", field="optics.z")
        if not self.w0 > 0:
            raise ConfigurationError(f"Beam waist must be positive, got {self.w0}", field="optics.w0")

    @property
    def wavenumber(self) -> float:
        return 2 * math.pi / self.wavelength

    @property
    def rayleigh_range(self) -> float:
        """z_R = π w0² / λ [m]"""
        return math.pi * self.w0 ** 2 / self.wavelength

    def beam_radius_at(self, z: float) -> float:
        """Vacuum Gaussian radius w(z) = w0 sqrt(1 + (z/z_R)²)"""
        return self.w0 * math.sqrt(1 + (z / self.rayleigh_range) ** 2)


@dataclass(frozen=True)
class DerivedChannelScales:
    """Fried parameter, Rytov variance and the dimensionless pair (t, W)"""
    r0: float
    rytov: float
    t: float
    W: float
    z_R: float


@dataclass(frozen=True)
class ChannelPlan:
    """
    Geometry, turbulence and step schedule of one propagation path.

    Each of the n_steps slabs is vacuum Δz/2, one screen, vacuum Δz/2.
    """
    params: TurbulenceParams
    grid: GridSpec
    n_steps: int
    step_length: float
    r0: float
    r0_screen: float
    aperture_radius: float
    subharmonic_levels: int
    aperture_factor: float
    max_l: int

    @property
    def step_rytov(self) -> float:
        return step_rytov_variance(self.params, self.step_length)


@dataclass(frozen=True)
class PhaseScreen:
    """Real phase map [rad] for one split-step slab"""
    grid: GridSpec
    values: np.ndarray
    r0_screen: float
    realization: Optional[int] = None
    index: Optional[int] = None


def fried_parameter(params: TurbulenceParams) -> float:
    """
    Plane-wave Fried parameter r0 = (0.423 k² C_n² z)^(-3/5)

    Returns +inf for a turbulence-free path.
    """
    if params.cn2 == 0 or params.z == 0:
        return math.inf
    return (0.423 * params.wavenumber ** 2 * params.cn2 * params.z) ** (-3.0 / 5.0)


def rytov_variance(params: TurbulenceParams) -> float:
    """σ_R² = 1.23 C_n² k^(7/6) z^(11/6)"""
    return 1.23 * params.cn2 * params.wavenumber ** (7.0 / 6.0) * params.z ** (11.0 / 6.0)


def step_rytov_variance(params: TurbulenceParams, step_length: float) -> float:
    """Rytov variance of a single slab of thickness step_length"""
    return 1.23 * params.cn2 * params.wavenumber ** (7.0 / 6.0) * step_length ** (11.0 / 6.0)


def dimensionless_scales(params: TurbulenceParams) -> DerivedChannelScales:
    """Compute r0, σ_R², t = z/z_R and W = w0/r0 for a path"""
    r0 = fried_parameter(params)
    z_r = params.rayleigh_range
    scales = DerivedChannelScales(
        r0=r0,
        rytov=rytov_variance(params),
        t=params.z / z_r,
        W=params.w0 / r0,
        z_R=z_r,
    )
    if scales.rytov > 0:
        predicted = 1.63 * scales.W ** (5.0 / 3.0) * scales.t ** (5.0 / 6.0)
        if abs(scales.rytov - predicted) / scales.rytov > 0.02:
            logger.warning(f"Rytov variance {scales.rytov:.4f} disagrees with 1.63 W^5/3 t^5/6 = {predicted:.4f}")
    return scales


def from_dimensionless(t: float, W: float, wavelength: float, w0: float) -> TurbulenceParams:
    """
    Physical parameters realizing a given (t, W) pair

    z = t z_R and C_n² follows from r0 = w0/W; W = 0 gives a vacuum path.
    """
    if not t > 0:
        raise ConfigurationError(f"Renormalized distance t must be positive, got {t}", field="optics.t")
    if W < 0:
        raise ConfigurationError(f"Turbulence strength W must be non-negative, got {W}", field="turbulence.W")
    z = t * math.pi * w0 ** 2 / wavelength
    if W == 0:
        return TurbulenceParams(cn2=0.0, wavelength=wavelength, z=z, w0=w0)
    k = 2 * math.pi / wavelength
    r0 = w0 / W
    cn2 = r0 ** (-5.0 / 3.0) / (0.423 * k ** 2 * z)
    return TurbulenceParams(cn2=cn2, wavelength=wavelength, z=z, w0=w0)


def rescale(params: TurbulenceParams, wavelength: float, w0: float) -> TurbulenceParams:
    """Equivalent path with new λ and w0 but the same t and W"""
    scales = dimensionless_scales(params)
    return from_dimensionless(scales.t, scales.W, wavelength, w0)


def scintillation_regime(rytov: float) -> str:
    return "weak" if rytov < 1 else "strong"


def critical_strength(t: float, rytov: float = 1.0) -> float:
    """W at which 1.63 W^(5/3) t^(5/6) reaches the given Rytov variance"""
    return (rytov / (1.63 * t ** (5.0 / 6.0))) ** (3.0 / 5.0)


def aperture_radius_for(params: TurbulenceParams, max_l: int, factor: float) -> float:
    """Receiver aperture enclosing a beam `factor` times the largest received mode"""
    return factor * params.beam_radius_at(params.z) * math.sqrt(abs(max_l) / 2 + 1)


def plan_channel(params: TurbulenceParams,
                 grid: GridSpec,
                 max_step_rytov: Optional[float] = None,
                 n_steps_override: Optional[int] = None,
                 max_l: int = 5,
                 min_steps: Optional[int] = None,
                 subharmonic_levels: Optional[int] = None,
                 aperture_factor: Optional[float] = None) -> ChannelPlan:
    """
    Split a path into equidistant slabs with one phase screen each

    Without an override the step count is the smallest integer keeping the
    per-slab Rytov variance below max_step_rytov, floored at min_steps
    (21 by default). A turbulence-free path uses a single step.

    Args:
        params (TurbulenceParams): Path description
        grid (GridSpec): Transverse sampling of the screens
        max_step_rytov (float, optional): Per-slab Rytov bound (default 0.5)
        n_steps_override (int, optional): Force a step count
        max_l (int): Largest |l| in use, sets the aperture
        min_steps (int, optional): Floor on the step count
        subharmonic_levels (int, optional): Subharmonic depth of the screens
        aperture_factor (float, optional): Aperture rule constant

    Returns:
        ChannelPlan: Deterministic step schedule
    """
    max_step_rytov = settings.MAX_STEP_RYTOV if max_step_rytov is None else max_step_rytov
    min_steps = settings.N_STEPS if min_steps is None else min_steps
    subharmonic_levels = settings.SUBHARMONIC_LEVELS if subharmonic_levels is None else subharmonic_levels
    aperture_factor = settings.APERTURE_FACTOR if aperture_factor is None else aperture_factor

    if not params.z > 0:
        raise ConfigurationError("Path length must be positive to plan a channel", field="optics.z")
    if not max_step_rytov > 0:
        raise ConfigurationError(f"Per-step Rytov bound {max_step_rytov} cannot be satisfied",
                                 field="turbulence.max_step_rytov")
    if subharmonic_levels < 0:
        raise ConfigurationError(f"Subharmonic levels must be >= 0, got {subharmonic_levels}",
                                 field="turbulence.subharmonic_levels")

    total = rytov_variance(params)
    if n_steps_override is not None:
        if n_steps_override < 1:
            raise ConfigurationError(f"Step count must be >= 1, got {n_steps_override}", field="turbulence.n_steps")
        n_steps = int(n_steps_override)
        if step_rytov_variance(params, params.z / n_steps) >= max_step_rytov:
            raise ConfigurationError(
                f"{n_steps} steps give per-step Rytov variance "
                f"{step_rytov_variance(params, params.z / n_steps):.3f} >= {max_step_rytov}",
                field="turbulence.n_steps",
            )
    elif params.cn2 == 0:
        n_steps = 1
    else:
        # per-step variance scales as n^(-11/6)
        n_steps = int(math.floor((total / max_step_rytov) ** (6.0 / 11.0))) + 1
        n_steps = max(n_steps, min_steps)
        if n_steps > MAX_STEPS:
            raise ConfigurationError(
                f"Per-step Rytov bound {max_step_rytov} needs {n_steps} steps (limit {MAX_STEPS})",
                field="turbulence.max_step_rytov",
            )

    r0 = fried_parameter(params)
    aperture = aperture_radius_for(params, max_l, aperture_factor)
    plan = ChannelPlan(
        params=params,
        grid=grid,
        n_steps=n_steps,
        step_length=params.z / n_steps,
        r0=r0,
        r0_screen=r0 * n_steps ** (3.0 / 5.0),
        aperture_radius=aperture,
        subharmonic_levels=subharmonic_levels,
        aperture_factor=aperture_factor,
        max_l=max_l,
    )
    logger.info(f"Channel plan: {n_steps} steps of {plan.step_length:.1f} m, r0={r0:.4g} m, "
                f"r0_screen={plan.r0_screen:.4g} m, aperture={aperture:.4f} m")
    if plan.step_rytov > 0.8 * max_step_rytov:
        logger.warning(f"Per-step Rytov variance {plan.step_rytov:.3f} is close to the bound {max_step_rytov}")
    return plan


def screen_stream(seed: int, realization: int, screen: int) -> np.random.Generator:
    """Counter-based random stream keyed by (seed, realization, screen)"""
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=(realization, screen))
    return np.random.Generator(np.random.Philox(sequence))


def _kolmogorov_psd(f: np.ndarray, r0: float) -> np.ndarray:
    psd = np.zeros_like(f)
    positive = f > 0
    psd[positive] = PSD_PREFACTOR * r0 ** (-5.0 / 3.0) * f[positive] ** (-11.0 / 3.0)
    return psd


@lru_cache(maxsize=None)
def _cell_moment(i: int, j: int) -> float:
    """Integral of |u|^(-5/3) over the unit cell centred on lattice point (i, j)"""
    if i == 0 and j == 0:
        # eight octants of the square |u|, |v| <= 1/2 in polar form
        value, _ = integrate.quad(lambda theta: math.cos(theta) ** (-1.0 / 3.0), 0.0, math.pi / 4)
        return 24.0 * 2.0 ** (-1.0 / 3.0) * value
    value, _ = integrate.dblquad(lambda v, u: (u * u + v * v) ** (-5.0 / 6.0),
                                 i - 0.5, i + 0.5, j - 0.5, j + 0.5)
    return value


@lru_cache(maxsize=None)
def _innermost_weight() -> float:
    """
    Factor on the eight cells around the origin of the deepest patch that
    moves the second moment ∫ Φ |f|² of the unsampled central cell onto them.
    Scale free: independent of r0 and of the patch spacing.
    """
    ring = sum(_cell_moment(i, j) for i in (-1, 0, 1) for j in (-1, 0, 1) if i or j)
    return 1.0 + _cell_moment(0, 0) / ring


def _patch(spacing: float, ring: int, r0: float, innermost: bool) -> Tuple[np.ndarray, np.ndarray]:
    """
    Cell-integrated low-frequency patch

    The (2 ring + 1)² cells of pitch `spacing` around the origin, each
    sampled at CELL_QUADRATURE² midpoints. The central cell is left to the
    next level, or folded into its eight neighbours for the deepest one.

    Returns:
        Tuple[np.ndarray, np.ndarray]: frequencies along one axis and the
        variance carried by each (fy, fx) point
    """
    count = (2 * ring + 1) * CELL_QUADRATURE
    fs = (np.arange(count) - (count - 1) / 2) * spacing / CELL_QUADRATURE
    cell = np.arange(count) // CELL_QUADRATURE - ring
    cx, cy = np.meshgrid(cell, cell)
    sx, sy = np.meshgrid(fs, fs)
    variance = _kolmogorov_psd(np.hypot(sx, sy), r0) * (spacing / CELL_QUADRATURE) ** 2
    variance[(cx == 0) & (cy == 0)] = 0.0
    if innermost:
        variance[(np.abs(cx) <= 1) & (np.abs(cy) <= 1)] *= _innermost_weight()
    return fs, variance


def generate_phase_screen(plan: ChannelPlan,
                          rng: np.random.Generator,
                          realization: Optional[int] = None,
                          index: Optional[int] = None) -> PhaseScreen:
    """
    Synthesize one Kolmogorov screen for a slab of the plan

    Fourier synthesis on the grid frequencies (piston removed) plus
    `subharmonic_levels` levels of 3x3 low-frequency patches with spacing
    1/(3^p D).

    Point sampling undercounts the steep spectrum near the origin, so the
    grid cells within LOW_ORDER_RING of it and every subharmonic cell are
    integrated by midpoint quadrature instead. The central cell of the
    deepest level keeps only its tilt, carried by the cells around it.

    Args:
        plan (ChannelPlan): Channel plan (grid and r0_screen)
        rng (np.random.Generator): Independent random stream
        realization (int, optional): Realization tag
        index (int, optional): Screen index within the realization

    Returns:
        PhaseScreen: Real-valued phase map [rad]
    """
    grid = plan.grid
    n = grid.n
    r0 = plan.r0_screen

    if math.isinf(r0):
        return PhaseScreen(grid=grid, values=np.zeros((n, n)), r0_screen=r0,
                           realization=realization, index=index)

    levels = plan.subharmonic_levels
    reach = min(LOW_ORDER_RING, n // 2 - 1)

    # high-frequency screen, cells near the origin left to the patches
    del_f = grid.frequency_pitch
    f1 = fft.fftfreq(n, d=grid.pitch)
    fx, fy = np.meshgrid(f1, f1)
    psd = _kolmogorov_psd(np.hypot(fx, fy), r0)
    near = np.arange(-reach, reach + 1) % n
    psd[np.ix_(near, near)] = 0.0
    cn = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) * np.sqrt(psd) * del_f
    high = fft.ifft2(cn).real * n * n

    # integrated patches, separable in x and y
    axis = (np.arange(n) - n // 2) * grid.pitch
    patches = [(del_f, reach)] + [(1.0 / (3 ** p * grid.extent), 1) for p in range(1, levels + 1)]
    low = np.zeros((n, n), dtype=np.complex128)
    for depth, (spacing, ring) in enumerate(patches):
        fs, variance = _patch(spacing, ring, r0, innermost=depth == levels)
        noise = rng.standard_normal(variance.shape) + 1j * rng.standard_normal(variance.shape)
        waves = np.exp(2j * np.pi * np.outer(fs, axis))
        low += waves.T @ (noise * np.sqrt(variance)) @ waves
    low = low.real - low.real.mean()

    return PhaseScreen(grid=grid, values=high + low, r0_screen=r0,
                       realization=realization, index=index)


def realization_screens(plan: ChannelPlan, seed: int, realization: int) -> List[PhaseScreen]:
    """All n_steps screens of one realization, each from its own stream"""
    return [
        generate_phase_screen(plan, screen_stream(seed, realization, s), realization=realization, index=s)
        for s in range(plan.n_steps)
    ]


def structure_function(screens: Sequence[PhaseScreen], max_shift: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Ensemble phase structure function D(r) = <[φ(x+r) - φ(x)]²>

    Averaged over screens, pixels and both grid axes, for shifts of
    1..max_shift pixels.

    Returns:
        Tuple[np.ndarray, np.ndarray]: separations r [m] and D(r) [rad²]
    """
    if not screens:
        raise ConfigurationError("Structure function needs at least one screen")
    pitch = screens[0].grid.pitch
    shifts = np.arange(1, max_shift + 1)
    totals = np.zeros(len(shifts))
    for screen in screens:
        phi = screen.values
        for i, s in enumerate(shifts):
            dx = phi[:, s:] - phi[:, :-s]
            dy = phi[s:, :] - phi[:-s, :]
            totals[i] += 0.5 * (np.mean(dx ** 2) + np.mean(dy ** 2))
    return shifts * pitch, totals / len(screens)


def kolmogorov_structure_function(r: np.ndarray, r0: float) -> np.ndarray:
    """Theoretical D(r) = 6.88 (r/r0)^(5/3)"""
    return STRUCTURE_PREFACTOR * (np.asarray(r) / r0) ** (5.0 / 3.0)


def propagate_channel(field: ComplexField,
                      plan: ChannelPlan,
                      screens: Sequence[PhaseScreen]) -> ComplexField:
    """
    Split-step propagation through one realization of the channel

    Every slab is vacuum Δz/2, the slab's screen, vacuum Δz/2. The result
    carries the realization tag of the screens.
    """
    if len(screens) != plan.n_steps:
        raise RealizationMismatchError(f"Plan has {plan.n_steps} steps but {len(screens)} screens were given")
    tags = {screen.realization for screen in screens}
    if len(tags) != 1:
        raise RealizationMismatchError("Screens of different realizations cannot share a channel")
    if field.realization is not None and field.realization not in tags:
        raise RealizationMismatchError(
            f"Field of realization {field.realization} cannot enter realization {tags.pop()}"
        )

    half = plan.step_length / 2
    for screen in screens:
        field = angular_spectrum_propagate(field, half)
        field = apply_phase(field, screen.values)
        field = angular_spectrum_propagate(field, half)
    return field.replace(realization=tags.pop())
