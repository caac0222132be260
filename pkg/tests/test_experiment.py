"""
Tests for the Experiment Module
Configuration documents, validation, sweep geometry and result records
"""

import json
import math
import sys
from pathlib import Path

import pytest

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from backend.adaptive_optics import Correction
from backend.entanglement import EncodingSubspace
from backend.errors import ConfigurationError
from backend.experiment import (
    ExperimentConfig,
    ResultRecord,
    build_id,
    config_from_dict,
    load_config,
    run_metadata,
    validation_errors,
)
from backend.turbulence import dimensionless_scales


@pytest.fixture
def config(tmp_path):
    return ExperimentConfig(
        grid_n=128,
        grid_extent=0.8,
        strengths=[0.0, 1.0, 2.0],
        subspaces=[EncodingSubspace.qubit(1)],
        spectrum_modes=[3],
        spectrum_half_window=1,
        ao_modes=[Correction.NONE, Correction.IDEAL],
        realizations=4,
        output_dir=tmp_path,
        name="unit",
    )


def test_valid_config_passes(config):
    assert config.validate() is config
    assert validation_errors(config) == []


def test_default_config_needs_something_to_measure():
    with pytest.raises(ConfigurationError) as excinfo:
        ExperimentConfig().validate()
    assert excinfo.value.field == "subspaces"


def test_validation_reports_every_field(config):
    broken = config.with_overrides(grid_n=100, realizations=0, strengths=[1.0, -2.0], output_formats=["xml"])
    paths = [path for path, _ in validation_errors(broken)]
    assert paths == ["grid.n", "turbulence.W[1]", "run.realizations", "output.format"]
    with pytest.raises(ConfigurationError) as excinfo:
        broken.validate()
    assert excinfo.value.field == "grid.n"
    assert "run.realizations" in str(excinfo.value)


def test_overrides(config):
    changed = config.with_overrides(seed=7, realizations=None)
    assert changed.seed == 7
    assert changed.realizations == 4
    assert changed is not config
    with pytest.raises(ConfigurationError):
        config.with_overrides(colour="blue")
    with pytest.raises(ConfigurationError):
        config.with_overrides(reset=["colour"])

    cleared = config.with_overrides(reset=["grid_extent", "spectrum_modes", "ao_modes"], seed=9)
    assert cleared.grid_extent is None
    assert cleared.spectrum_modes == []
    assert cleared.ao_modes == [Correction.NONE]
    assert cleared.seed == 9
    # an explicit value beats the reset
    assert config.with_overrides(reset=["realizations"], realizations=12).realizations == 12


def test_ao_settings_share_the_beacon(config):
    modes = config.with_overrides(beacon_w0=0.1).ao_settings()
    assert [mode.correction for mode in modes] == [Correction.NONE, Correction.IDEAL]
    assert {mode.beacon_w0 for mode in modes} == {0.1}
    assert {mode.beacon_w0 for mode in config.ao_settings()} == {config.w0}


def test_path_length_from_t_or_z(config):
    assert config.path_length == pytest.approx(0.19 * config.rayleigh_range)
    assert config.with_overrides(z=3000.0).path_length == 3000.0


def test_channels_from_strengths(config):
    channels = config.channels()
    assert [W for W, _ in channels] == [0.0, 1.0, 2.0]
    for W, params in channels:
        scales = dimensionless_scales(params)
        assert scales.W == pytest.approx(W, abs=1e-12)
        assert scales.t == pytest.approx(0.19)


def test_channels_from_cn2(config):
    physical = config.with_overrides(cn2=[0.0, 2.9e-14], z=3000.0)
    (w_vac, vac), (w_turb, turb) = physical.channels()
    assert w_vac == 0.0
    assert turb.cn2 == 2.9e-14
    assert w_turb == pytest.approx(dimensionless_scales(turb).W)


def test_modes_and_geometry(config):
    assert config.input_modes() == [-1, 1, 3]
    assert config.output_modes() == [-1, 1, 2, 3, 4]
    assert config.max_l == 3
    assert config.grid().extent == 0.8

    automatic = config.with_overrides(reset=["grid_extent"])
    assert automatic.grid_extent is None
    assert automatic.grid().extent == pytest.approx(4.0 * 2 * automatic.aperture_radius())
    assert automatic.beacon_waist == config.w0
    assert config.with_overrides(beacon_w0=0.1).beacon_waist == 0.1


def test_document_round_trip(config):
    document = json.loads(json.dumps(config.to_dict()))
    assert document["subspaces"] == [[-1, 1]]
    assert document["ao"]["modes"] == ["none", "ideal"]
    assert config_from_dict(document) == config


def test_document_accepts_strings_for_subspaces_and_formats():
    config = config_from_dict({
        "subspaces": ["{-1,1}", [-1, 0, 1]],
        "turbulence": {"W": [0, 1]},
        "ao": {"modes": ["tip-tilt"]},
        "output": {"format": "CSV"},
    })
    assert config.subspaces == [EncodingSubspace.qubit(1), EncodingSubspace.qutrit(1)]
    assert config.strengths == [0.0, 1.0]
    assert config.ao_modes == [Correction.TIPTILT]
    assert config.output_formats == ["csv"]


def test_document_numbers_are_cast():
    config = config_from_dict({
        "grid": {"n": "128", "extent": "0.8"},
        "turbulence": {"W": ["0", 1.5], "n_steps": 21.0},
        "run": {"realizations": "10", "seed": 3, "linear_errors": True},
        "spectra": {"l0": ["3"]},
    })
    assert config.grid_n == 128 and isinstance(config.grid_n, int)
    assert config.grid_extent == 0.8
    assert config.strengths == [0.0, 1.5]
    assert config.n_steps == 21 and isinstance(config.n_steps, int)
    assert config.realizations == 10 and isinstance(config.realizations, int)
    assert config.spectrum_modes == [3]
    assert config.validate() is config


def test_document_bad_numbers_are_reported_with_paths():
    with pytest.raises(ConfigurationError) as excinfo:
        config_from_dict({"run": {"realizations": "ten", "workers": 2.5, "linear_errors": "yes"},
                          "turbulence": {"W": [1.0, "strong"]}, "optics": {"w0": True}})
    assert excinfo.value.field == "run.realizations"
    message = str(excinfo.value)
    for path in ("optics.w0", "run.workers", "run.linear_errors", "turbulence.W[1]"):
        assert path in message
    with pytest.raises(ConfigurationError) as excinfo:
        config_from_dict({"grid": {"n": [128]}})
    assert excinfo.value.field == "grid.n"
    with pytest.raises(ConfigurationError) as excinfo:
        config_from_dict({"turbulence": {"cn2": [1e-14, "nan"]}})
    assert excinfo.value.field == "turbulence.cn2[1]"


def test_document_errors_carry_paths():
    with pytest.raises(ConfigurationError) as excinfo:
        config_from_dict({"turbulence": {"W": [1.0], "strength": 2}})
    assert excinfo.value.field == "turbulence.strength"
    with pytest.raises(ConfigurationError) as excinfo:
        config_from_dict({"plots": {}})
    assert excinfo.value.field == "plots"
    with pytest.raises(ConfigurationError) as excinfo:
        config_from_dict({"subspaces": [[1, 1]]})
    assert excinfo.value.field == "subspaces"
    with pytest.raises(ConfigurationError):
        config_from_dict({"ao": {"modes": ["zernike"]}})
    with pytest.raises(ConfigurationError):
        config_from_dict([1, 2])


def test_load_config(config, tmp_path):
    path = tmp_path / "experiment.json"
    path.write_text(json.dumps(config.to_dict()), encoding="utf-8")
    assert load_config(path) == config

    with pytest.raises(ConfigurationError) as excinfo:
        load_config(tmp_path / "missing.json")
    assert excinfo.value.field == "config"

    broken = tmp_path / "broken.json"
    broken.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigurationError) as excinfo:
        load_config(broken)
    assert excinfo.value.field == "config"

    invalid = tmp_path / "invalid.json"
    invalid.write_text(json.dumps({"run": {"realizations": 0}}), encoding="utf-8")
    with pytest.raises(ConfigurationError) as excinfo:
        load_config(invalid)
    assert excinfo.value.field == "run.realizations"

    partial = tmp_path / "partial.json"
    partial.write_text(json.dumps({"turbulence": {"W": [1.0]}}), encoding="utf-8")
    assert load_config(partial).subspaces == []


def test_build_id_is_a_stable_short_hash():
    first = build_id()
    assert len(first) == 12
    int(first, 16)
    assert build_id() == first


def test_record_rows_follow_the_column_order():
    meta = {"seed": 1}
    spectrum = ResultRecord(kind="spectrum", W=1.0, correction="none", N=5, metric="P", value=0.9,
                            stderr=0.01, l0=3, l=3, metadata=meta)
    assert list(spectrum.to_row()) == ["l0", "l", "P", "stderr_P", "W", "correction_mode", "N", "seed"]

    entanglement = ResultRecord(kind="entanglement", W=1.0, correction="ideal", N=5, metric="negativity",
                                value=0.8, stderr=0.02, d=3, modes="{-1,0,1}", trace=0.7, trace_stderr=0.01)
    assert list(entanglement.to_row()) == ["W", "d", "modes", "correction_mode", "measure", "value", "stderr",
                                           "trace", "trace_stderr", "N"]
    with_linear = ResultRecord(kind="entanglement", W=1.0, correction="none", N=5, metric="negativity",
                               value=0.8, stderr=0.02, linear_stderr=0.03)
    assert list(with_linear.to_row())[-1] == "linear_stderr"

    bell = ResultRecord(kind="bell", W=1.0, correction="none", N=5, metric="S_d", value=2.5, stderr=0.1,
                        d=2, modes="{-1,1}", violated=True)
    assert list(bell.to_row()) == ["W", "d", "modes", "correction_mode", "S_d", "stderr", "violated", "N"]

    with pytest.raises(ConfigurationError):
        ResultRecord(kind="image", W=0.0, correction="none", N=1, metric="x", value=0.0, stderr=0.0).to_row()


def test_run_metadata(config):
    metadata = run_metadata(config, config.grid(), 0.2)
    assert metadata["build_id"] == build_id()
    assert metadata["grid_n"] == 128
    assert metadata["aperture_radius"] == 0.2
    assert metadata["z"] == pytest.approx(config.path_length)
    assert not any("time" in key or "date" in key for key in metadata)
    assert all(not isinstance(v, float) or math.isfinite(v) for v in metadata.values())
