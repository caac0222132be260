"""
Experiment Module
Sweep configuration (JSON document + CLI overrides), validation with field
paths, and the result records emitted by a sweep
"""

import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

from config import settings
from backend.adaptive_optics import AOMode, Correction
from backend.entanglement import EncodingSubspace
from backend.errors import ConfigurationError
from backend.field_core import GridSpec, grid_for_aperture
from backend.oam_modes import spectrum_window
from backend.turbulence import (
    TurbulenceParams,
    aperture_radius_for,
    dimensionless_scales,
    from_dimensionless,
)

# Configure logging
logging.basicConfig(level=settings.LOG_LEVEL)
logger = logging.getLogger(__name__)

# JSON section -> {json key: ExperimentConfig attribute}
CONFIG_SCHEMA: Dict[str, Dict[str, str]] = {
    "grid": {"n": "grid_n", "extent": "grid_extent"},
    "optics": {"wavelength": "wavelength", "w0": "w0", "t": "t", "z": "z"},
    "turbulence": {
        "W": "strengths",
        "cn2": "cn2",
        "n_steps": "n_steps",
        "min_steps": "min_steps",
        "subharmonic_levels": "subharmonic_levels",
        "max_step_rytov": "max_step_rytov",
        "aperture_factor": "aperture_factor",
    },
    "subspaces": {},
    "spectra": {"l0": "spectrum_modes", "half_window": "spectrum_half_window"},
    "ao": {"modes": "ao_modes", "beacon_w0": "beacon_w0"},
    "run": {
        "realizations": "realizations",
        "seed": "seed",
        "workers": "workers",
        "bootstrap_resamples": "bootstrap_resamples",
        "linear_errors": "linear_errors",
    },
    "output": {"path": "output_dir", "format": "output_formats", "name": "name"},
}


@dataclass
class ExperimentConfig:
    """
    Everything needed to rerun one sweep.

    Turbulence is given either as a list of strengths W (with t, or z) or
    as a list of C_n² values with a physical path length.
    """
    grid_n: int = settings.GRID_N
    grid_extent: Optional[float] = None
    wavelength: float = settings.WAVELENGTH
    w0: float = settings.BEAM_WAIST
    t: Optional[float] = settings.PROPAGATION_T
    z: Optional[float] = None
    strengths: List[float] = field(default_factory=lambda: [0.0])
    cn2: Optional[List[float]] = None
    n_steps: Optional[int] = None
    min_steps: int = settings.N_STEPS
    subharmonic_levels: int = settings.SUBHARMONIC_LEVELS
    max_step_rytov: float = settings.MAX_STEP_RYTOV
    aperture_factor: float = settings.APERTURE_FACTOR
    subspaces: List[EncodingSubspace] = field(default_factory=list)
    spectrum_modes: List[int] = field(default_factory=list)
    spectrum_half_window: int = settings.SPECTRUM_HALF_WINDOW
    ao_modes: List[Correction] = field(default_factory=lambda: [Correction.NONE])
    beacon_w0: Optional[float] = None
    realizations: int = settings.DEFAULT_REALIZATIONS
    seed: int = settings.DEFAULT_SEED
    workers: int = settings.WORKERS
    bootstrap_resamples: int = settings.BOOTSTRAP_RESAMPLES
    linear_errors: bool = False
    output_dir: Path = settings.OUTPUT_FOLDER
    output_formats: List[str] = field(default_factory=lambda: ["csv", "json"])
    name: str = "sweep"

    def validate(self, require_workload: bool = True) -> "ExperimentConfig":
        """
        Raise one ConfigurationError listing every violation with its field path

        Without require_workload a document may leave subspaces and spectrum
        modes to the command that runs it.
        """
        try:
            problems = validation_errors(self, require_workload)
        except TypeError as e:
            raise ConfigurationError(f"Invalid experiment configuration: {e}")
        if problems:
            first_path = problems[0][0]
            message = "; ".join(f"{path}: {text}" for path, text in problems)
            raise ConfigurationError(f"Invalid experiment configuration: {message}", field=first_path)
        return self

    def with_overrides(self, reset: Sequence[str] = (), **overrides) -> "ExperimentConfig":
        """
        Copy with every non-None override applied

        Fields named in `reset` go back to their defaults first, so a value
        such as grid_extent can be cleared to None.
        """
        fields = {f.name: f for f in dataclasses.fields(self)}
        changes = {key: value for key, value in overrides.items() if value is not None}
        unknown = (set(changes) | set(reset)) - set(fields)
        if unknown:
            raise ConfigurationError(f"Unknown configuration fields: {sorted(unknown)}", field=sorted(unknown)[0])
        defaults = {
            name: fields[name].default_factory() if fields[name].default_factory is not dataclasses.MISSING
            else fields[name].default
            for name in reset
        }
        return dataclasses.replace(self, **{**defaults, **changes})

    def ao_settings(self) -> List[AOMode]:
        """One AOMode per requested correction, all sensing with the same beacon"""
        return [AOMode(correction, self.beacon_waist) for correction in self.ao_modes]

    @property
    def rayleigh_range(self) -> float:
        return math.pi * self.w0 ** 2 / self.wavelength

    @property
    def path_length(self) -> float:
        if self.z is not None:
            return self.z
        return self.t * self.rayleigh_range

    @property
    def beacon_waist(self) -> float:
        return self.beacon_w0 or self.w0

    def channels(self) -> List[Tuple[float, TurbulenceParams]]:
        """(W, physical parameters) for every sweep point, in sweep order"""
        if self.cn2 is not None:
            points = []
            for cn2 in self.cn2:
                params = TurbulenceParams(cn2=cn2, wavelength=self.wavelength, z=self.path_length, w0=self.w0)
                points.append((dimensionless_scales(params).W, params))
            return points
        t = self.path_length / self.rayleigh_range
        return [(float(W), from_dimensionless(t, W, self.wavelength, self.w0)) for W in self.strengths]

    def input_modes(self) -> List[int]:
        """Every azimuthal index sent through the channel"""
        modes = set(self.spectrum_modes)
        for subspace in self.subspaces:
            modes.update(subspace.bob_modes)
        return sorted(modes)

    def output_modes(self) -> List[int]:
        """Every azimuthal index projected onto at the receiver"""
        modes = set()
        for subspace in self.subspaces:
            modes.update(subspace.bob_modes)
        for l0 in self.spectrum_modes:
            modes.update(spectrum_window(l0, self.spectrum_half_window))
        return sorted(modes)

    @property
    def max_l(self) -> int:
        return max((abs(l) for l in self.input_modes()), default=0)

    def aperture_radius(self) -> float:
        params = TurbulenceParams(cn2=0.0, wavelength=self.wavelength, z=self.path_length, w0=self.w0)
        return aperture_radius_for(params, self.max_l, self.aperture_factor)

    def grid(self) -> GridSpec:
        if self.grid_extent is not None:
            return GridSpec(n=self.grid_n, extent=self.grid_extent)
        return grid_for_aperture(self.grid_n, self.aperture_radius())

    def to_dict(self) -> Dict[str, Any]:
        """Nested JSON document equivalent to this configuration"""
        document: Dict[str, Any] = {}
        for section, keys in CONFIG_SCHEMA.items():
            if section == "subspaces":
                document["subspaces"] = [list(s.modes) for s in self.subspaces]
                continue
            document[section] = {key: _plain(getattr(self, attr)) for key, attr in keys.items()}
        return document


def _plain(value: Any) -> Any:
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, Correction):
        return value.value
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def validation_errors(config: ExperimentConfig, require_workload: bool = True) -> List[Tuple[str, str]]:
    """Collect (field path, message) for every violated constraint"""
    problems = []
    if config.grid_n < 64 or config.grid_n & (config.grid_n - 1):
        problems.append(("grid.n", f"must be a power of two >= 64, got {config.grid_n}"))
    if config.grid_extent is not None and not config.grid_extent > 0:
        problems.append(("grid.extent", f"must be positive, got {config.grid_extent}"))
    if not config.wavelength > 0:
        problems.append(("optics.wavelength", f"must be positive, got {config.wavelength}"))
    if not config.w0 > 0:
        problems.append(("optics.w0", f"must be positive, got {config.w0}"))
    if config.z is None and (config.t is None or not config.t > 0):
        problems.append(("optics.t", "a positive t or z is required"))
    if config.z is not None and not config.z > 0:
        problems.append(("optics.z", f"must be positive, got {config.z}"))
    if config.cn2 is not None:
        if not config.cn2:
            problems.append(("turbulence.cn2", "must not be empty"))
        for i, value in enumerate(config.cn2):
            if value < 0:
                problems.append((f"turbulence.cn2[{i}]", f"must be >= 0, got {value}"))
    else:
        if not config.strengths:
            problems.append(("turbulence.W", "must not be empty"))
        for i, value in enumerate(config.strengths):
            if value < 0:
                problems.append((f"turbulence.W[{i}]", f"must be >= 0, got {value}"))
    if config.n_steps is not None and config.n_steps < 1:
        problems.append(("turbulence.n_steps", f"must be >= 1, got {config.n_steps}"))
    if config.min_steps < 1:
        problems.append(("turbulence.min_steps", f"must be >= 1, got {config.min_steps}"))
    if config.subharmonic_levels < 0:
        problems.append(("turbulence.subharmonic_levels", f"must be >= 0, got {config.subharmonic_levels}"))
    if not config.max_step_rytov > 0:
        problems.append(("turbulence.max_step_rytov", f"must be positive, got {config.max_step_rytov}"))
    if not config.aperture_factor > 0:
        problems.append(("turbulence.aperture_factor", f"must be positive, got {config.aperture_factor}"))
    if require_workload and not config.subspaces and not config.spectrum_modes:
        problems.append(("subspaces", "at least one subspace or spectrum mode is required"))
    for l0 in config.spectrum_modes:
        if abs(l0) > settings.MAX_AZIMUTHAL_INDEX:
            problems.append(("spectra.l0", f"|l0|={abs(l0)} exceeds {settings.MAX_AZIMUTHAL_INDEX}"))
    if config.spectrum_half_window < 0:
        problems.append(("spectra.half_window", f"must be >= 0, got {config.spectrum_half_window}"))
    if not config.ao_modes:
        problems.append(("ao.modes", "must not be empty"))
    if config.beacon_w0 is not None and not config.beacon_w0 > 0:
        problems.append(("ao.beacon_w0", f"must be positive, got {config.beacon_w0}"))
    if config.realizations < 1:
        problems.append(("run.realizations", f"must be >= 1, got {config.realizations}"))
    if config.workers < 1:
        problems.append(("run.workers", f"must be >= 1, got {config.workers}"))
    if config.bootstrap_resamples < 2:
        problems.append(("run.bootstrap_resamples", f"must be >= 2, got {config.bootstrap_resamples}"))
    unknown_formats = set(config.output_formats) - settings.OUTPUT_FORMATS
    if unknown_formats or not config.output_formats:
        problems.append(("output.format", f"must be a non-empty subset of {sorted(settings.OUTPUT_FORMATS)}"))
    return problems


def config_from_dict(document: Dict[str, Any]) -> ExperimentConfig:
    """
    Parse a nested JSON document into an ExperimentConfig

    Unknown sections or keys are reported with their path.
    """
    if not isinstance(document, dict):
        raise ConfigurationError("Experiment configuration must be a JSON object")

    values: Dict[str, Any] = {}
    problems: List[Tuple[str, str]] = []

    for section, content in document.items():
        if section not in CONFIG_SCHEMA:
            problems.append((section, "unknown section"))
            continue
        if section == "subspaces":
            try:
                values["subspaces"] = [_parse_subspace(item) for item in content]
            except ConfigurationError as e:
                problems.append(("subspaces", str(e)))
            continue
        if not isinstance(content, dict):
            problems.append((section, "must be an object"))
            continue
        for key, value in content.items():
            if key not in CONFIG_SCHEMA[section]:
                problems.append((f"{section}.{key}", "unknown key"))
                continue
            values[CONFIG_SCHEMA[section][key]] = value

    if problems:
        message = "; ".join(f"{path}: {text}" for path, text in problems)
        raise ConfigurationError(f"Invalid experiment configuration: {message}", field=problems[0][0])

    try:
        return _coerce(ExperimentConfig(**values))
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"Invalid experiment configuration: {e}")


def _parse_subspace(item: Union[str, Sequence[int]]) -> EncodingSubspace:
    if isinstance(item, str):
        return EncodingSubspace.parse(item)
    return EncodingSubspace(tuple(item))


def _as_int(value: Any) -> int:
    if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
        raise ValueError(f"expected an integer, got {value!r}")
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ValueError(f"expected an integer, got {value!r}")


def _as_float(value: Any) -> float:
    if isinstance(value, bool):
        raise ValueError(f"expected a number, got {value!r}")
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise ValueError(f"expected a number, got {value!r}")
    if not math.isfinite(number):
        raise ValueError(f"expected a finite number, got {value!r}")
    return number


def _as_bool(value: Any) -> bool:
    if not isinstance(value, bool):
        raise ValueError(f"expected true or false, got {value!r}")
    return value


INT_FIELDS = ("grid_n", "n_steps", "min_steps", "subharmonic_levels", "spectrum_half_window",
              "realizations", "seed", "workers", "bootstrap_resamples")
FLOAT_FIELDS = ("grid_extent", "wavelength", "w0", "t", "z", "max_step_rytov", "aperture_factor", "beacon_w0")
# ExperimentConfig attribute -> dotted document path
FIELD_PATHS = {attr: f"{section}.{key}" for section, keys in CONFIG_SCHEMA.items() for key, attr in keys.items()}


def _coerce(config: ExperimentConfig) -> ExperimentConfig:
    """
    Cast JSON scalars and strings into the dataclass field types

    Every field that cannot be cast is reported with its document path in
    one ConfigurationError.
    """
    problems: List[Tuple[str, str]] = []
    changes: Dict[str, Any] = {}

    def cast(attr: str, caster: Callable[[Any], Any]):
        value = getattr(config, attr)
        if value is None:
            return
        try:
            changes[attr] = caster(value)
        except (ValueError, ConfigurationError) as e:
            problems.append((FIELD_PATHS[attr], str(e)))

    def cast_each(attr: str, caster: Callable[[Any], Any]):
        value = getattr(config, attr)
        if value is None:
            return
        items = list(value) if isinstance(value, (list, tuple)) else [value]
        for i, item in enumerate(items):
            try:
                items[i] = caster(item)
            except (ValueError, ConfigurationError) as e:
                problems.append((f"{FIELD_PATHS[attr]}[{i}]", str(e)))
        changes[attr] = items

    for attr in INT_FIELDS:
        cast(attr, _as_int)
    for attr in FLOAT_FIELDS:
        cast(attr, _as_float)
    cast("linear_errors", _as_bool)
    cast("name", str)
    cast("output_dir", Path)
    cast_each("strengths", _as_float)
    cast_each("cn2", _as_float)
    cast_each("spectrum_modes", _as_int)
    cast_each("ao_modes", Correction.parse)
    cast_each("output_formats", lambda f: str(f).lower())

    if problems:
        message = "; ".join(f"{path}: {text}" for path, text in problems)
        raise ConfigurationError(f"Invalid experiment configuration: {message}", field=problems[0][0])
    return dataclasses.replace(config, **changes)


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """Read and validate a JSON experiment document"""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"Configuration file not found: {path}", field="config")
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"Configuration file {path} is not valid JSON: {e}", field="config")
    config = config_from_dict(document).validate(require_workload=False)
    logger.info(f"Loaded experiment configuration from {path}")
    return config


def build_id() -> str:
    """Short content hash of the simulator sources, in the style of a git revision"""
    digest = hashlib.sha1()
    for source in sorted((settings.PROJECT_ROOT / "backend").glob("*.py")):
        digest.update(source.name.encode())
        digest.update(source.read_bytes())
    return digest.hexdigest()[:12]


@dataclass(frozen=True)
class ResultRecord:
    """
    One emitted value with its sweep coordinates and provenance.

    kind is "spectrum", "entanglement" or "bell"; the fields that do not
    apply to a kind stay None.
    """
    kind: str
    W: float
    correction: str
    N: int
    metric: str
    value: float
    stderr: float
    d: Optional[int] = None
    modes: Optional[str] = None
    l0: Optional[int] = None
    l: Optional[int] = None
    trace: Optional[float] = None
    trace_stderr: Optional[float] = None
    linear_stderr: Optional[float] = None
    violated: Optional[bool] = None
    metadata: Dict[str, Any] = field(default_factory=dict, compare=False)

    def to_row(self) -> Dict[str, Any]:
        """Flat row with the documented column order for the record's kind"""
        if self.kind == "spectrum":
            row = {
                "l0": self.l0, "l": self.l, "P": self.value, "stderr_P": self.stderr,
                "W": self.W, "correction_mode": self.correction, "N": self.N,
            }
        elif self.kind == "entanglement":
            row = {
                "W": self.W, "d": self.d, "modes": self.modes, "correction_mode": self.correction,
                "measure": self.metric, "value": self.value, "stderr": self.stderr,
                "trace": self.trace, "trace_stderr": self.trace_stderr, "N": self.N,
            }
            if self.linear_stderr is not None:
                row["linear_stderr"] = self.linear_stderr
        elif self.kind == "bell":
            row = {
                "W": self.W, "d": self.d, "modes": self.modes, "correction_mode": self.correction,
                "S_d": self.value, "stderr": self.stderr, "violated": self.violated, "N": self.N,
            }
        else:
            raise ConfigurationError(f"Unknown record kind '{self.kind}'")
        row.update(self.metadata)
        return row

    def to_dict(self) -> Dict[str, Any]:
        data = dataclasses.asdict(self)
        data["metadata"] = dict(self.metadata)
        return data


def run_metadata(config: ExperimentConfig, grid: GridSpec, aperture_radius: float) -> Dict[str, Any]:
    """Provenance columns shared by every record of a sweep"""
    return {
        "build_id": build_id(),
        "version": settings.APP_VERSION,
        "seed": config.seed,
        "grid_n": grid.n,
        "grid_extent": grid.extent,
        "aperture_factor": config.aperture_factor,
        "aperture_radius": aperture_radius,
        "subharmonic_levels": config.subharmonic_levels,
        "spectrum_half_window": config.spectrum_half_window,
        "wavelength": config.wavelength,
        "w0": config.w0,
        "beacon_w0": config.beacon_waist,
        "z": config.path_length,
    }
