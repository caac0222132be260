"""
Tests for the CLI Module
Subcommands, exit codes and the error report
"""

import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from backend.cli import EXIT_CONFIGURATION_ERROR, EXIT_OK, build_parser, main
from backend.adaptive_optics import Correction
from backend.entanglement import EncodingSubspace

SMALL_GRID = ["--grid-n", "128", "--grid-extent", "0.8"]


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_spectrum_command(capsys, tmp_path):
    code, out, _ = run(capsys, "spectrum", "--l0", "1", "--half-window", "1", "--W", "0",
                       "--realizations", "1", "--ao", "none", *SMALL_GRID,
                       "--out", str(tmp_path), "--name", "cli", "--quiet")
    assert code == EXIT_OK
    report = json.loads(out)
    assert report["success"] is True
    assert {Path(p).name for p in report["outputs"]} == {"cli_spectrum.csv", "cli.json"}

    table = pd.read_csv(tmp_path / "cli_spectrum.csv")
    assert table["l"].tolist() == [0, 1, 2]
    assert table.loc[table["l"] == 1, "P"].iloc[0] == pytest.approx(1.0, abs=1e-3)


def test_entanglement_command_with_negative_modes(capsys, tmp_path):
    code, out, _ = run(capsys, "entanglement", "--subspace=-1,1", "--subspace=-1,0,1", "--W", "0",
                       "--realizations", "1", "--ao", "none", "--format", "csv", *SMALL_GRID,
                       "--out", str(tmp_path), "--name", "cli", "--quiet")
    assert code == EXIT_OK
    assert [Path(p).name for p in json.loads(out)["outputs"]] == ["cli_entanglement.csv"]

    table = pd.read_csv(tmp_path / "cli_entanglement.csv")
    assert table["measure"].tolist() == ["concurrence", "negativity", "negativity"]
    assert table["modes"].tolist() == ["{-1,1}", "{-1,1}", "{-1,0,1}"]
    assert (table["value"] > 0.99).all()


def test_bell_command(capsys, tmp_path):
    code, _, _ = run(capsys, "bell", "--subspace=-1,1", "--W", "0", "--realizations", "1",
                     "--ao", "none,ideal", "--format", "csv", *SMALL_GRID,
                     "--out", str(tmp_path), "--name", "cli", "--quiet")
    assert code == EXIT_OK
    table = pd.read_csv(tmp_path / "cli_bell.csv")
    assert table["correction_mode"].tolist() == ["none", "ideal"]
    assert table["violated"].all()


def test_configuration_error_report(capsys, tmp_path):
    code, out, err = run(capsys, "entanglement", "--realizations", "0", "--out", str(tmp_path), "--quiet")
    assert code == EXIT_CONFIGURATION_ERROR
    assert out == ""
    report = json.loads(err.strip().splitlines()[-1])
    assert report["success"] is False
    assert report["error_type"] == "configuration_error"
    assert report["field"] == "run.realizations"


def test_missing_config_file(capsys, tmp_path):
    code, _, err = run(capsys, "bell", "--config", str(tmp_path / "nowhere.json"), "--quiet")
    assert code == EXIT_CONFIGURATION_ERROR
    assert json.loads(err.strip().splitlines()[-1])["field"] == "config"


def test_config_file_with_overrides(capsys, tmp_path):
    document = {
        "grid": {"n": 128, "extent": 0.8},
        "turbulence": {"W": [0.0]},
        "subspaces": [[-2, 2]],
        "run": {"realizations": 1},
        "ao": {"modes": ["none"]},
        "output": {"format": "csv", "name": "fromfile"},
    }
    path = tmp_path / "experiment.json"
    path.write_text(json.dumps(document), encoding="utf-8")

    code, _, _ = run(capsys, "entanglement", "--config", str(path), "--name", "override",
                     "--out", str(tmp_path), "--quiet")
    assert code == EXIT_OK
    table = pd.read_csv(tmp_path / "override_entanglement.csv")
    assert set(table["modes"]) == {"{-2,2}"}


def test_screen_validation_command(capsys, tmp_path):
    code, out, _ = run(capsys, "validate-screens", "--W", "2", "--grid-n", "128", "--grid-extent", "2.0",
                       "--n-screens", "5", "--out", str(tmp_path), "--name", "scr", "--quiet")
    assert code == EXIT_OK
    [output] = json.loads(out)["outputs"]
    assert Path(output).name == "scr_structure_function.csv"
    assert list(pd.read_csv(output).columns) == ["r", "D_measured", "D_theory", "relative_error"]


def test_parser_types():
    args = build_parser().parse_args(["bell", "--subspace=-2,-1,1,2", "--ao", "tip-tilt,ideal", "--W", "0,1.5"])
    assert args.subspace == [EncodingSubspace.ququart(1, 2)]
    assert args.ao == [Correction.TIPTILT, Correction.IDEAL]
    assert args.strengths == [0.0, 1.5]


@pytest.mark.parametrize("argv", [
    ["bell", "--ao", "zernike"],
    ["bell", "--subspace=1,1"],
    ["spectrum", "--W", "one"],
    ["reproduce", "fig9"],
])
def test_bad_arguments_exit_through_argparse(argv, capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(argv)
    assert excinfo.value.code == 2


def test_config_file_with_bad_number(capsys, tmp_path):
    path = tmp_path / "experiment.json"
    path.write_text(json.dumps({"subspaces": [[-1, 1]], "run": {"realizations": "ten"}}), encoding="utf-8")
    code, out, err = run(capsys, "bell", "--config", str(path), "--quiet")
    assert code == EXIT_CONFIGURATION_ERROR
    assert out == ""
    report = json.loads(err.strip().splitlines()[-1])
    assert report["error_type"] == "configuration_error"
    assert report["field"] == "run.realizations"


def test_config_file_numbers_given_as_strings(capsys, tmp_path):
    document = {
        "grid": {"n": "128", "extent": "0.8"},
        "turbulence": {"W": ["0"]},
        "subspaces": [[-1, 1]],
        "run": {"realizations": "1"},
        "output": {"format": "csv", "name": "strings"},
    }
    path = tmp_path / "experiment.json"
    path.write_text(json.dumps(document), encoding="utf-8")
    code, _, _ = run(capsys, "entanglement", "--config", str(path), "--ao", "none",
                     "--out", str(tmp_path), "--quiet")
    assert code == EXIT_OK
    assert (tmp_path / "strings_entanglement.csv").exists()


def test_reproduce_reads_the_config_file(capsys, tmp_path):
    document = {"grid": {"extent": 0.8}, "run": {"seed": 5}, "output": {"path": str(tmp_path / "from_file")}}
    path = tmp_path / "experiment.json"
    path.write_text(json.dumps(document), encoding="utf-8")
    code, out, _ = run(capsys, "reproduce", "fig1", "--config", str(path), "--grid-n", "128", "--quiet")
    assert code == EXIT_OK
    outputs = [Path(p) for p in json.loads(out)["outputs"]]
    assert len(outputs) == 8
    assert all(p.parent == tmp_path / "from_file" for p in outputs)
    raster = np.load(next(p for p in outputs if p.suffix == ".npz"))
    assert float(raster["extent"]) == pytest.approx(0.8)
    assert int(raster["n"]) == 128


def test_reproduce_reports_a_bad_config_file(capsys, tmp_path):
    path = tmp_path / "experiment.json"
    path.write_text(json.dumps({"run": {"workers": 0}}), encoding="utf-8")
    code, _, err = run(capsys, "reproduce", "fig3", "--config", str(path), "--quiet")
    assert code == EXIT_CONFIGURATION_ERROR
    assert json.loads(err.strip().splitlines()[-1])["field"] == "run.workers"
