"""
Harness Module
Deterministic Monte-Carlo orchestration over turbulence realizations,
parameter sweeps and the figure-reproduction recipes
"""

import logging
import math
import time
from dataclasses import dataclass
from functools import lru_cache
from multiprocessing import Pool
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from config import settings
from backend.adaptive_optics import AOMode, Correction, apply_correction, propagate_beacon, vacuum_beacon
from backend.bell_cglmp import bell_parameter, critical_strength, violates
from backend.entanglement import (
    EncodingSubspace,
    MIN_BOOTSTRAP_REALIZATIONS,
    accumulate,
    assemble_biphoton,
    concurrence,
    error_bars,
    linear_error,
    negativity,
    ququart_pairs,
)
from backend.errors import ConfigurationError, FullyLossyChannelError
from backend.experiment import ExperimentConfig, ResultRecord, run_metadata
from backend.field_core import ComplexField, apply_aperture, dump_field
from backend.oam_modes import (
    CrosstalkMatrix,
    LGModeSpec,
    ModeBasis,
    crosstalk_matrix,
    lg_mode,
    spectrum_table,
    spectrum_window,
)
from backend.results_writer import ResultsWriter
from backend.turbulence import (
    ChannelPlan,
    from_dimensionless,
    generate_phase_screen,
    kolmogorov_structure_function,
    plan_channel,
    propagate_channel,
    realization_screens,
    screen_stream,
    structure_function,
)

# Configure logging
logging.basicConfig(level=settings.LOG_LEVEL)
logger = logging.getLogger(__name__)

FIGURES = ("fig1", "fig2", "fig3", "fig4", "ququarts", "fig5")
SCALES = {
    "desk": {"realizations": 50, "grid_n": 256, "points": 8},
    "full": {"realizations": 500, "grid_n": 512, "points": 20},
}
MAX_STRENGTH = 4.9
FIG1_STRENGTH = 2.45
SPECTRUM_STRENGTHS = [0.73, 2.45, 4.1]
ALL_CORRECTIONS = [Correction.NONE, Correction.TIPTILT, Correction.IDEAL]

# Functionals by measure name
MEASURES: Dict[str, Callable[[np.ndarray], float]] = {
    "concurrence": concurrence,
    "negativity": negativity,
}


@dataclass(frozen=True)
class RealizationTask:
    """Everything one worker needs to simulate one realization"""
    plan: ChannelPlan
    seed: int
    index: int
    inputs: Tuple[int, ...]
    outputs: Tuple[int, ...]
    modes: Tuple[AOMode, ...]


@lru_cache(maxsize=8)
def plan_vacuum_beacon(plan: ChannelPlan, beacon_w0: float) -> ComplexField:
    """Vacuum beacon of a plan, computed once per worker process"""
    return vacuum_beacon(plan, beacon_w0)


def received_fields(plan: ChannelPlan,
                    screens,
                    inputs: Sequence[int],
                    modes: Sequence[AOMode]) -> Dict[Correction, Dict[int, ComplexField]]:
    """
    Send every input mode through one realization and apply each correction

    The beacon and all modes share the same screens; the aperture is
    applied after correction.

    Returns:
        Dict[Correction, Dict[int, ComplexField]]: receiver fields per correction and l0
    """
    params = plan.params
    beacons: Dict[float, Tuple[ComplexField, ComplexField]] = {}
    for mode in modes:
        if mode.correction is not Correction.NONE and mode.beacon_w0 not in beacons:
            beacons[mode.beacon_w0] = propagate_beacon(plan, screens, mode.beacon_w0,
                                                       vacuum=plan_vacuum_beacon(plan, mode.beacon_w0))

    fields: Dict[Correction, Dict[int, ComplexField]] = {mode.correction: {} for mode in modes}
    for l0 in inputs:
        spec = LGModeSpec(l=l0, w0=params.w0, wavelength=params.wavelength)
        signal = propagate_channel(lg_mode(plan.grid, spec, 0.0), plan, screens)
        for mode in modes:
            corrected = signal
            if mode.correction is not Correction.NONE:
                corrected = apply_correction(mode.correction, signal, *beacons[mode.beacon_w0])
            fields[mode.correction][l0] = apply_aperture(corrected, plan.aperture_radius)
    return fields


def simulate_realization(task: RealizationTask) -> Dict[str, CrosstalkMatrix]:
    """Crosstalk matrix of one realization for every correction mode"""
    started = time.perf_counter()
    plan = task.plan
    screens = realization_screens(plan, task.seed, task.index)
    fields = received_fields(plan, screens, task.inputs, task.modes)
    basis = ModeBasis(plan.grid, plan.params.wavelength, plan.params.w0, plan.params.z, task.outputs)
    matrices = {
        mode.correction.value: crosstalk_matrix(fields[mode.correction], task.outputs, plan.params.w0, basis)
        for mode in task.modes
    }
    logger.debug(f"Realization {task.index} done in {time.perf_counter() - started:.2f} s")
    return matrices


def _run_tasks(tasks: List[RealizationTask], pool: Optional[Pool], label: str,
               progress: bool) -> List[Dict[str, CrosstalkMatrix]]:
    iterator = pool.imap(simulate_realization, tasks) if pool is not None else map(simulate_realization, tasks)
    return list(tqdm(iterator, total=len(tasks), desc=label, disable=not progress, leave=False))


def _ensemble_records(config: ExperimentConfig,
                      W: float,
                      correction: Correction,
                      matrices: List[CrosstalkMatrix],
                      metadata: Dict) -> List[ResultRecord]:
    records: List[ResultRecord] = []
    n = len(matrices)
    common = dict(W=W, correction=correction.value, N=n, metadata=metadata)

    for l0 in config.spectrum_modes:
        window = set(spectrum_window(l0, config.spectrum_half_window))
        table = spectrum_table(matrices, l0)
        for row in table[table["l"].isin(window)].itertuples(index=False):
            records.append(ResultRecord(kind="spectrum", metric="P", value=float(row.P),
                                        stderr=float(row.stderr_P), l0=l0, l=int(row.l), **common))

    for offset, subspace in enumerate(config.subspaces):
        states = [assemble_biphoton(ct, subspace) for ct in matrices]
        labels = dict(d=subspace.d, modes=subspace.label)
        try:
            density = accumulate(states)
        except FullyLossyChannelError as e:
            logger.warning(f"W={W:.3f} {correction.value} {subspace.label}: {e}")
            for name in _measures_for(subspace):
                records.append(ResultRecord(kind="entanglement", metric=name, value=math.nan, stderr=math.nan,
                                            trace=0.0, trace_stderr=0.0, **labels, **common))
            records.append(ResultRecord(kind="bell", metric="S_d", value=math.nan, stderr=math.nan,
                                        violated=False, **labels, **common))
            continue

        bootstrap_seed = config.seed + offset
        for name in _measures_for(subspace):
            functional = MEASURES[name]
            records.append(ResultRecord(
                kind="entanglement",
                metric=name,
                value=functional(density.rho),
                stderr=_bootstrap(density, functional, config, bootstrap_seed),
                trace=density.trace,
                trace_stderr=density.trace_stderr,
                linear_stderr=linear_error(density, functional) if config.linear_errors else None,
                **labels,
                **common,
            ))

        s_d = bell_parameter(density.rho)
        records.append(ResultRecord(
            kind="bell",
            metric="S_d",
            value=s_d,
            stderr=_bootstrap(density, bell_parameter, config, bootstrap_seed),
            violated=violates(s_d),
            linear_stderr=linear_error(density, bell_parameter) if config.linear_errors else None,
            **labels,
            **common,
        ))
    return records


def _measures_for(subspace: EncodingSubspace) -> List[str]:
    return ["concurrence", "negativity"] if subspace.d == 2 else ["negativity"]


def _bootstrap(density, functional, config: ExperimentConfig, seed: int) -> float:
    if density.n_realizations < MIN_BOOTSTRAP_REALIZATIONS:
        return math.nan
    return error_bars(density, functional, resamples=config.bootstrap_resamples, seed=seed)


def run_sweep(config: ExperimentConfig, progress: bool = True) -> List[ResultRecord]:
    """
    Run every (W, correction) point of a sweep

    Realizations are keyed by (seed, index) and reduced in index order, so
    the records do not depend on the worker count.

    Args:
        config (ExperimentConfig): Validated configuration
        progress (bool): Show tqdm progress bars

    Returns:
        List[ResultRecord]: Spectrum, entanglement and Bell records
    """
    config.validate()
    grid = config.grid()
    inputs = tuple(config.input_modes())
    outputs = tuple(config.output_modes())
    modes = tuple(config.ao_settings())
    logger.info(f"Sweep '{config.name}': {len(config.channels())} strengths x {len(modes)} corrections, "
                f"N={config.realizations}, grid {grid.n} over {grid.extent:.3f} m, inputs {list(inputs)}")

    records: List[ResultRecord] = []
    pool = Pool(config.workers) if config.workers > 1 else None
    try:
        for W, params in config.channels():
            plan = plan_channel(
                params,
                grid,
                max_step_rytov=config.max_step_rytov,
                n_steps_override=config.n_steps,
                max_l=config.max_l,
                min_steps=config.min_steps,
                subharmonic_levels=config.subharmonic_levels,
                aperture_factor=config.aperture_factor,
            )
            tasks = [
                RealizationTask(plan=plan, seed=config.seed, index=i, inputs=inputs, outputs=outputs, modes=modes)
                for i in range(config.realizations)
            ]
            results = _run_tasks(tasks, pool, f"W={W:.2f}", progress)

            metadata = run_metadata(config, grid, plan.aperture_radius)
            metadata.update({"t": params.z / params.rayleigh_range, "cn2": params.cn2, "n_steps": plan.n_steps})
            for mode in modes:
                matrices = [result[mode.correction.value] for result in results]
                records.extend(_ensemble_records(config, W, mode.correction, matrices, metadata))
            logger.info(f"W={W:.3f} finished ({plan.n_steps} steps)")
    finally:
        if pool is not None:
            pool.close()
            pool.join()
    return records


def _strength_grid(points: int) -> List[float]:
    return [float(W) for W in np.linspace(0.0, MAX_STRENGTH, points)]


def figure_config(name: str,
                  /,
                  scale: str = "desk",
                  base: Optional[ExperimentConfig] = None,
                  **overrides) -> ExperimentConfig:
    """
    Sweep configuration of a figure recipe

    The recipe is laid over `base` (defaults when omitted) and replaces its
    subspaces, spectrum modes and C_n² list. Non-None overrides win over both.
    """
    if name not in FIGURES:
        raise ConfigurationError(f"Unknown figure '{name}', expected one of {list(FIGURES)}", field="figure")
    if scale not in SCALES:
        raise ConfigurationError(f"Unknown scale '{scale}', expected desk or full", field="scale")
    preset = SCALES[scale]

    recipe = dict(
        grid_n=preset["grid_n"],
        realizations=preset["realizations"],
        strengths=_strength_grid(preset["points"]),
        ao_modes=list(ALL_CORRECTIONS),
        name=f"{name}_{scale}",
    )
    if name == "fig1":
        recipe.update(realizations=1, strengths=[FIG1_STRENGTH], spectrum_modes=[3])
    elif name == "fig2":
        recipe.update(strengths=list(SPECTRUM_STRENGTHS), spectrum_modes=[3, 5])
    elif name == "fig3":
        recipe.update(subspaces=[EncodingSubspace.qubit(l0) for l0 in range(1, 6)])
    elif name == "fig4":
        recipe.update(subspaces=[EncodingSubspace.qutrit(l0) for l0 in range(1, 6)])
    elif name == "ququarts":
        recipe.update(subspaces=ququart_pairs(5))
    elif name == "fig5":
        recipe.update(
            subspaces=[EncodingSubspace((-1, 1)), EncodingSubspace((-1, 0, 1)), EncodingSubspace((-2, -1, 1, 2))],
            ao_modes=[Correction.NONE, Correction.TIPTILT],
        )
    start = base or ExperimentConfig()
    config = start.with_overrides(reset=["subspaces", "spectrum_modes", "cn2"], **recipe)
    return config.with_overrides(**overrides).validate()


def reproduce_intensity_phase(config: ExperimentConfig, out_dir: Path) -> List[Path]:
    """
    Single-realization receiver fields of l0 = 3: vacuum, turbulent,
    tip-tilt corrected and ideally corrected, each as a raster
    """
    grid = config.grid()
    l0 = config.spectrum_modes[0] if config.spectrum_modes else 3
    W, params = config.channels()[0]
    plan = plan_channel(params, grid, max_step_rytov=config.max_step_rytov, n_steps_override=config.n_steps,
                        max_l=abs(l0), min_steps=config.min_steps,
                        subharmonic_levels=config.subharmonic_levels, aperture_factor=config.aperture_factor)
    vacuum_plan = plan_channel(from_dimensionless(params.z / params.rayleigh_range, 0.0, params.wavelength, params.w0),
                               grid, max_l=abs(l0), aperture_factor=config.aperture_factor)

    screens = realization_screens(plan, config.seed, 0)
    modes = [AOMode(correction, config.beacon_waist) for correction in ALL_CORRECTIONS]
    turbulent = received_fields(plan, screens, [l0], modes)
    vacuum = received_fields(vacuum_plan, realization_screens(vacuum_plan, config.seed, 0), [l0], modes[:1])

    panels = {"vacuum": vacuum[Correction.NONE][l0]}
    for mode in modes:
        panels[f"turbulent_{mode.correction.value}"] = turbulent[mode.correction][l0]

    paths = []
    for label, panel in panels.items():
        for suffix in ("npz", "csv"):
            paths.append(dump_field(panel, out_dir / f"{config.name}_l0_{l0}_W_{W:.2f}_{label}.{suffix}"))
    return paths


def reproduce_figure(name: str,
                     /,
                     scale: str = "desk",
                     out_dir: Optional[Path] = None,
                     progress: bool = True,
                     base: Optional[ExperimentConfig] = None,
                     **overrides) -> List[Path]:
    """
    Run a figure recipe and write its result files and plot-ready table

    Args:
        name (str): fig1, fig2, fig3, fig4, ququarts or fig5
        scale (str): desk (N=50, n=256, 8 strengths) or full (N=500, 20 strengths)
        out_dir (Path, optional): Output folder (default from settings)
        progress (bool): Show progress bars
        base (ExperimentConfig, optional): Configuration the recipe is laid over
        **overrides: ExperimentConfig fields taking precedence over the recipe

    Returns:
        List[Path]: Written files
    """
    config = figure_config(name, scale, base=base, **overrides)
    out_dir = Path(out_dir or config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if name == "fig1":
        return reproduce_intensity_phase(config, out_dir)

    records = run_sweep(config, progress=progress)
    writer = ResultsWriter(out_dir)
    paths = writer.write(records, config, formats=config.output_formats)
    paths.append(writer.write_plot_table(records, config.name))
    if name == "fig5":
        paths.append(writer.write_summary(critical_strengths(records), f"{config.name}_critical"))
    return paths


def critical_strengths(records: Sequence[ResultRecord]) -> List[Dict]:
    """Strength at which S_d stops violating the bound, per subspace and correction"""
    frame = pd.DataFrame([r.to_row() for r in records if r.kind == "bell"])
    summary = []
    if frame.empty:
        return summary
    for (modes, correction), group in frame.groupby(["modes", "correction_mode"], sort=False):
        group = group.sort_values("W")
        summary.append({
            "modes": modes,
            "d": int(group["d"].iloc[0]),
            "correction_mode": correction,
            "critical_W": critical_strength(group["W"].tolist(), group["S_d"].tolist()),
        })
    return summary


def validate_screens(config: ExperimentConfig,
                     n_screens: int = 200,
                     max_shift: Optional[int] = None,
                     progress: bool = True) -> pd.DataFrame:
    """
    Structure-function check of the screen generator

    Draws n_screens screens for the largest configured strength and compares
    the ensemble D(r) with 6.88 (r/r0_screen)^(5/3).

    Returns:
        pd.DataFrame: columns r, D_measured, D_theory, relative_error
    """
    grid = config.grid()
    W, params = max(config.channels(), key=lambda point: point[0])
    if W == 0:
        raise ConfigurationError("Screen validation needs a non-zero turbulence strength", field="turbulence.W")
    plan = plan_channel(params, grid, max_step_rytov=config.max_step_rytov, n_steps_override=config.n_steps,
                        max_l=config.max_l, min_steps=config.min_steps,
                        subharmonic_levels=config.subharmonic_levels, aperture_factor=config.aperture_factor)
    max_shift = max_shift or grid.n // 8

    screens = [
        generate_phase_screen(plan, screen_stream(config.seed, i, 0), realization=i, index=0)
        for i in tqdm(range(n_screens), desc="screens", disable=not progress, leave=False)
    ]
    r, measured = structure_function(screens, max_shift)
    theory = kolmogorov_structure_function(r, plan.r0_screen)
    frame = pd.DataFrame({
        "r": r,
        "D_measured": measured,
        "D_theory": theory,
        "relative_error": np.abs(measured - theory) / theory,
    })
    logger.info(f"Validated {n_screens} screens at W={W:.3f}, r0_screen={plan.r0_screen:.4g} m")
    return frame
