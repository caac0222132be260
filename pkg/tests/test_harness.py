"""
Tests for the Harness Module
Small end-to-end sweeps, worker determinism and the figure recipes
"""

import json
import math
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from backend import harness
from backend.adaptive_optics import Correction, vacuum_beacon
from backend.entanglement import EncodingSubspace
from backend.errors import ConfigurationError
from backend.experiment import ExperimentConfig, ResultRecord
from backend.harness import (
    ALL_CORRECTIONS,
    critical_strengths,
    figure_config,
    plan_vacuum_beacon,
    reproduce_figure,
    run_sweep,
    validate_screens,
)
from backend.results_writer import records_frame

# 128 samples over 0.8 m resolve w0 = 7.35 cm and fit modes up to |l| = 5
SMALL_GRID = dict(grid_n=128, grid_extent=0.8)


@pytest.fixture
def small(tmp_path):
    return ExperimentConfig(
        **SMALL_GRID,
        strengths=[0.0],
        subspaces=[EncodingSubspace.qubit(1)],
        ao_modes=[Correction.NONE],
        realizations=1,
        bootstrap_resamples=20,
        output_dir=tmp_path,
        name="small",
    )


def by_kind(records, kind):
    return [r for r in records if r.kind == kind]


def test_vacuum_link_keeps_the_input_state(small):
    config = small.with_overrides(ao_modes=list(ALL_CORRECTIONS))
    records = run_sweep(config, progress=False)
    assert len(records) == 9
    for record in by_kind(records, "entanglement"):
        assert record.value == pytest.approx(1.0, abs=0.01)
        assert record.trace == pytest.approx(1.0, abs=0.01)
        assert math.isnan(record.stderr)
    for record in by_kind(records, "bell"):
        assert record.value == pytest.approx(2.8284, abs=0.01)
        assert record.violated
    assert {r.correction for r in records} == {"none", "tiptilt", "ideal"}
    assert all(r.N == 1 for r in records)


def test_vacuum_link_for_a_qutrit(small):
    config = small.with_overrides(subspaces=[EncodingSubspace.qutrit(1)])
    records = run_sweep(config, progress=False)
    [entanglement] = by_kind(records, "entanglement")
    [bell] = by_kind(records, "bell")
    assert entanglement.metric == "negativity"
    assert entanglement.value == pytest.approx(1.0, abs=0.01)
    assert bell.value == pytest.approx(2.8729, abs=0.01)
    assert bell.d == 3 and bell.modes == "{-1,0,1}"


def test_vacuum_spectrum_is_a_single_line(small):
    config = small.with_overrides(subspaces=[], spectrum_modes=[1], spectrum_half_window=2, realizations=2)
    records = run_sweep(config, progress=False)
    spectrum = {r.l: r for r in by_kind(records, "spectrum")}
    assert sorted(spectrum) == [-1, 0, 1, 2, 3]
    assert spectrum[1].value == pytest.approx(1.0, abs=1e-3)
    assert all(spectrum[l].value < 1e-3 for l in (-1, 0, 2, 3))
    assert all(r.stderr == pytest.approx(0.0, abs=1e-12) for r in spectrum.values())
    assert all(r.l0 == 1 for r in spectrum.values())


def test_results_do_not_depend_on_worker_count(small):
    config = small.with_overrides(strengths=[1.0], realizations=3, ao_modes=[Correction.NONE, Correction.TIPTILT])
    serial = run_sweep(config, progress=False)
    parallel = run_sweep(config.with_overrides(workers=2), progress=False)
    for kind in ("entanglement", "bell"):
        pd.testing.assert_frame_equal(records_frame(serial, kind), records_frame(parallel, kind))


def test_vacuum_beacon_is_computed_once_per_strength(small, monkeypatch):
    calls = []

    def counting(plan, beacon_w0=None):
        calls.append(plan.params.cn2)
        return vacuum_beacon(plan, beacon_w0)

    monkeypatch.setattr(harness, "vacuum_beacon", counting)
    plan_vacuum_beacon.cache_clear()
    config = small.with_overrides(strengths=[1.0, 2.0], realizations=3, ao_modes=list(ALL_CORRECTIONS))
    try:
        run_sweep(config, progress=False)
    finally:
        plan_vacuum_beacon.cache_clear()
    assert len(calls) == 2
    assert calls[0] < calls[1]


def test_seed_changes_the_realizations(small):
    config = small.with_overrides(strengths=[2.0], realizations=2)
    first = run_sweep(config, progress=False)
    again = run_sweep(config, progress=False)
    other = run_sweep(config.with_overrides(seed=config.seed + 1), progress=False)
    assert [r.value for r in first] == [r.value for r in again]
    assert [r.value for r in first] != [r.value for r in other]


def test_turbulence_degrades_the_state(small):
    config = small.with_overrides(strengths=[0.0, 3.0], realizations=4)
    records = by_kind(run_sweep(config, progress=False), "entanglement")
    concurrence = {r.W: r.value for r in records if r.metric == "concurrence"}
    trace = {r.W: r.trace for r in records if r.metric == "concurrence"}
    assert concurrence[3.0] < concurrence[0.0]
    assert trace[3.0] < trace[0.0]


def test_error_bars_need_enough_realizations(small):
    config = small.with_overrides(strengths=[1.0], realizations=10, linear_errors=True)
    records = run_sweep(config, progress=False)
    for record in records:
        assert np.isfinite(record.stderr)
        assert record.stderr >= 0
        assert np.isfinite(record.linear_stderr)
    [bell] = by_kind(records, "bell")
    assert bell.N == 10
    assert bell.metadata["n_steps"] >= 1
    assert bell.metadata["t"] == pytest.approx(0.19)


def test_sweep_validates_first(small):
    with pytest.raises(ConfigurationError) as excinfo:
        run_sweep(small.with_overrides(realizations=0), progress=False)
    assert excinfo.value.field == "run.realizations"


def test_figure_recipes():
    fig3 = figure_config("fig3")
    assert [s.modes for s in fig3.subspaces] == [(-l, l) for l in range(1, 6)]
    assert fig3.strengths[0] == 0.0 and fig3.strengths[-1] == pytest.approx(4.9)
    assert len(fig3.strengths) == 8
    assert fig3.realizations == 50
    assert fig3.ao_modes == list(ALL_CORRECTIONS)

    assert [s.modes for s in figure_config("fig4").subspaces][0] == (-1, 0, 1)
    assert len(figure_config("ququarts").subspaces) == 10
    fig2 = figure_config("fig2", "full")
    assert fig2.spectrum_modes == [3, 5]
    assert fig2.strengths == [0.73, 2.45, 4.1]
    assert fig2.realizations == 500
    fig5 = figure_config("fig5", realizations=7)
    assert fig5.ao_modes == [Correction.NONE, Correction.TIPTILT]
    assert fig5.realizations == 7
    assert [s.d for s in fig5.subspaces] == [2, 3, 4]
    assert len(figure_config("fig3", "full").strengths) == 20

    with pytest.raises(ConfigurationError):
        figure_config("fig9")
    with pytest.raises(ConfigurationError):
        figure_config("fig3", "huge")


def test_figure_recipe_over_a_base_configuration(tmp_path):
    base = ExperimentConfig(grid_extent=0.9, seed=5, subharmonic_levels=1, cn2=[1e-14],
                            spectrum_modes=[2], subspaces=[EncodingSubspace.qubit(4)], output_dir=tmp_path)
    fig3 = figure_config("fig3", base=base, workers=2)
    assert fig3.grid_extent == 0.9
    assert fig3.seed == 5
    assert fig3.subharmonic_levels == 1
    assert fig3.output_dir == tmp_path
    assert fig3.workers == 2
    # the recipe owns the workload and the sweep axis
    assert fig3.cn2 is None
    assert fig3.spectrum_modes == []
    assert [s.modes for s in fig3.subspaces] == [(-l, l) for l in range(1, 6)]
    assert fig3.grid_n == 256
    assert fig3.name == "fig3_desk"


def test_reproduce_intensity_phase_rasters(tmp_path):
    paths = reproduce_figure("fig1", out_dir=tmp_path, progress=False, **SMALL_GRID)
    assert len(paths) == 8
    assert all(p.exists() for p in paths)
    names = {p.stem.rsplit("_", 1)[-1] for p in paths}
    assert names == {"vacuum", "none", "tiptilt", "ideal"}
    vacuum = np.load(next(p for p in paths if p.suffix == ".npz" and p.stem.endswith("vacuum")))
    assert np.sum(np.abs(vacuum["amplitude"]) ** 2) > 0


def test_reproduce_bell_figure(tmp_path):
    paths = reproduce_figure("fig5", out_dir=tmp_path, progress=False, strengths=[0.0, 1.0],
                             realizations=2, **SMALL_GRID)
    names = {p.name for p in paths}
    assert {"fig5_desk_entanglement.csv", "fig5_desk_bell.csv", "fig5_desk.json",
            "fig5_desk_plot.csv", "fig5_desk_critical.json"} <= names

    plot = pd.read_csv(tmp_path / "fig5_desk_plot.csv")
    assert list(plot["W"]) == [0.0, 1.0]
    assert "S_d|none|{-1,1}" in plot.columns
    assert "trace|tiptilt|{-2,-1,1,2}" in plot.columns

    critical = json.loads((tmp_path / "fig5_desk_critical.json").read_text())
    assert len(critical) == 6
    assert {row["d"] for row in critical} == {2, 3, 4}


def test_critical_strengths_summary():
    def bell(W, value, modes="{-1,1}", correction="none"):
        return ResultRecord(kind="bell", W=W, correction=correction, N=10, metric="S_d", value=value,
                            stderr=0.0, d=2, modes=modes, violated=value > 2)

    records = [bell(0.0, 2.8), bell(1.0, 2.4), bell(2.0, 1.8),
               bell(0.0, 2.8, correction="ideal"), bell(1.0, 2.7, correction="ideal")]
    summary = {row["correction_mode"]: row for row in critical_strengths(records)}
    assert summary["none"]["critical_W"] == pytest.approx(1 + 0.4 / 0.6)
    assert summary["ideal"]["critical_W"] is None
    assert critical_strengths([]) == []


def test_screen_validation_table(small):
    config = small.with_overrides(strengths=[2.0], grid_extent=2.0)
    frame = validate_screens(config, n_screens=20, progress=False)
    assert list(frame.columns) == ["r", "D_measured", "D_theory", "relative_error"]
    assert len(frame) == 16
    assert np.all(np.isfinite(frame["relative_error"]))
    assert np.all(np.diff(frame["D_theory"]) > 0)

    with pytest.raises(ConfigurationError):
        validate_screens(small, n_screens=2, progress=False)


# Desk-sized ensembles on the default aperture-derived grid
def desk(tmp_path, **changes):
    config = ExperimentConfig(grid_n=256, realizations=40, bootstrap_resamples=20, output_dir=tmp_path, name="desk")
    return config.with_overrides(**changes)


def spectra(records, correction="none"):
    """{(W, l0): {l: record}} of the spectrum records of one correction"""
    table = {}
    for r in by_kind(records, "spectrum"):
        if r.correction == correction:
            table.setdefault((r.W, r.l0), {})[r.l] = r
    return table


@pytest.mark.slow
def test_corrections_recover_the_trace_in_order(tmp_path):
    config = desk(tmp_path, strengths=[1.96], subspaces=[EncodingSubspace.qubit(1)], ao_modes=list(ALL_CORRECTIONS))
    records = by_kind(run_sweep(config, progress=False), "entanglement")
    trace = {r.correction: r.trace for r in records if r.metric == "concurrence"}
    assert trace["ideal"] >= trace["tiptilt"] >= trace["none"] > 0
    assert 2 / 1.5 <= trace["tiptilt"] / trace["none"] <= 2 * 1.5
    assert 10 / 1.5 <= trace["ideal"] / trace["none"] <= 10 * 1.5


@pytest.mark.slow
def test_spectra_of_opposite_inputs_mirror_each_other(tmp_path):
    config = desk(tmp_path, strengths=[0.5, 1.5, 3.0], spectrum_modes=[-2, 2], spectrum_half_window=4,
                  ao_modes=[Correction.NONE, Correction.IDEAL])
    records = run_sweep(config, progress=False)
    plain = spectra(records)
    for W in config.strengths:
        positive, negative = plain[(W, 2)], plain[(W, -2)]
        for shift in range(-4, 5):
            a, b = positive[2 + shift], negative[-2 - shift]
            assert abs(a.value - b.value) <= 4 * math.hypot(a.stderr, b.stderr) + 0.01

    # the uncorrected spectrum broadens with W, and the ideal correction keeps more of l0
    kept = [plain[(W, 2)][2].value for W in config.strengths]
    spread = [
        sum(r.value * (l - 2) ** 2 for l, r in plain[(W, 2)].items()) / sum(r.value for r in plain[(W, 2)].values())
        for W in config.strengths
    ]
    assert kept[0] > kept[1] > kept[2]
    assert spread[0] < spread[1] < spread[2]
    corrected = spectra(records, "ideal")
    for W in config.strengths:
        assert corrected[(W, 2)][2].value > plain[(W, 2)][2].value


@pytest.mark.slow
def test_strong_turbulence_spectrum_has_a_mirrored_side_peak(tmp_path):
    config = desk(tmp_path, strengths=[2.45], spectrum_modes=[3], spectrum_half_window=7, realizations=50)
    spectrum = {l: r.value for l, r in spectra(run_sweep(config, progress=False))[(2.45, 3)].items()}
    assert max(spectrum, key=spectrum.get) == 3
    side = max(range(-4, 0), key=spectrum.get)
    assert side in (-4, -3, -2)
    assert spectrum[side] > spectrum[0]


@pytest.mark.slow
def test_tip_tilt_delays_the_loss_of_violation(tmp_path):
    config = figure_config("fig5", realizations=30, bootstrap_resamples=20, output_dir=tmp_path,
                           strengths=[0.0, 0.85, 1.7, 2.55, 3.4, 4.25])
    summary = {(row["d"], row["correction_mode"]): row["critical_W"]
               for row in critical_strengths(run_sweep(config, progress=False))}
    uncorrected = summary[(2, "none")]
    assert uncorrected is not None and uncorrected <= 1.7
    tip_tilt = summary[(2, "tiptilt")]
    assert tip_tilt is None or tip_tilt > 2 * uncorrected
    # higher dimensions stop violating no later than the qubit, up to sampling noise
    for d in (3, 4):
        assert summary[(d, "none")] is not None
        assert summary[(d, "none")] <= uncorrected + 0.25
