"""CLI behaviour: exit codes, file outputs, command round trips."""

import argparse
import dataclasses
import json
import os
import subprocess
import sys

import pytest

from alkspace import active_learning as al
from alkspace import thermo
from alkspace.cli import _load_config, build_parser, main
from alkspace.molspace import parse_smiles, to_canonical_smiles
from alkspace.pipeline import read_predictions

CONFIG_RAW = {
    "chemical_space": {"min_carbons": 4, "max_carbons": 8},
    "kernel": {"lambda": 0.2},
    "active_learning": {"thresholds": [0.5, 0.4]},
    "evaluation": {"n_test": 20, "control_seeds": [0, 1]},
}


@pytest.fixture(scope="module")
def config_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "config.json"
    path.write_text(json.dumps(CONFIG_RAW))
    return str(path)


# -- exit codes ----------------------------------------------------------------


def test_no_command_is_a_usage_error(capsys):
    assert main([]) == 1
    assert "config error" in capsys.readouterr().err


def test_unknown_command_is_a_usage_error(capsys):
    assert main(["frobnicate"]) == 1


def test_bad_flag_value_is_a_usage_error():
    assert main(["enumerate", "--count", "not-a-number"]) == 1


def test_unreadable_config_exits_one(tmp_path):
    assert main(["enumerate", "4", "5", "--config", str(tmp_path / "nope.json")]) == 1


def test_inverted_carbon_range_exits_one():
    assert main(["enumerate", "9", "4"]) == 1


def test_runtime_failure_exits_two(tmp_path):
    missing = str(tmp_path / "missing.txt")
    out = str(tmp_path / "out.csv")
    assert main(["simulate", "--molecules", missing, "--out", out]) == 2


# -- enumerate -----------------------------------------------------------------


def test_enumerate_count(capsys):
    assert main(["enumerate", "4", "6", "--count"]) == 0
    assert capsys.readouterr().out.strip() == "10"


def test_enumerate_prints_one_molecule_per_line(capsys):
    assert main(["enumerate", "4", "5", "--count"]) == 0
    n = int(capsys.readouterr().out)
    assert main(["enumerate", "4", "5"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == n == 5
    assert to_canonical_smiles(parse_smiles("CCCC")) in lines


def test_enumerate_out_file_matches_stdout(tmp_path, capsys):
    out = str(tmp_path / "mols.txt")
    assert main(["enumerate", "4", "6", "--out", out]) == 0
    capsys.readouterr()
    assert main(["enumerate", "4", "6"]) == 0
    printed = capsys.readouterr().out
    assert open(out).read() == printed


def test_enumerate_uses_config_range(config_file, capsys):
    assert main(["enumerate", "--count", "--config", config_file]) == 0
    assert capsys.readouterr().out.strip() == "37"  # C4 through C8


# -- config plumbing --------------------------------------------------------------


def test_seed_flag_targets_the_right_field(config_file):
    parser = build_parser()

    def parsed(*argv: str) -> argparse.Namespace:
        return parser.parse_args([*argv, "--config", config_file, "--seed", "42"])

    sim = _load_config(parsed("simulate", "--molecules", "m", "--out", "o"))
    assert sim.oracle_seed == 42 and sim.al_seed == 1
    alc = _load_config(parsed("al"))
    assert alc.al_seed == 42 and alc.oracle_seed == 7


def test_out_dir_flag_overrides_config(config_file):
    parser = build_parser()
    args = parser.parse_args(["al", "--config", config_file, "--out-dir", "/tmp/elsewhere"])
    assert _load_config(args).out_dir == "/tmp/elsewhere"


# -- simulate / fit-predict / evaluate round trip ------------------------------------


def test_dataset_prediction_round_trip(tmp_path, config_file, capsys):
    train_list = tmp_path / "train.txt"
    train_list.write_text("CCCC\nCCCCC\nCCCCCC\nCC(C)C\n")
    query_list = tmp_path / "query.txt"
    query_list.write_text("CC(C)CC\n")
    train_csv = str(tmp_path / "train.csv")
    truth_csv = str(tmp_path / "truth.csv")
    pred_csv = str(tmp_path / "pred.csv")
    metrics_json = str(tmp_path / "metrics.json")

    assert main(["simulate", "--molecules", str(train_list), "--out", train_csv]) == 0
    rows = thermo.read_dataset(train_csv)
    assert len(rows) == 4 * thermo.GRID_POINTS

    assert main(["simulate", "--molecules", str(query_list), "--out", truth_csv]) == 0
    assert (
        main(
            [
                "fit-predict", "--train", train_csv,
                "--molecules", str(query_list), "--out", pred_csv,
                "--config", config_file,
            ]
        )
        == 0
    )
    preds = read_predictions(pred_csv)
    assert len(preds) == thermo.GRID_POINTS
    capsys.readouterr()

    assert (
        main(["evaluate", "--pred", pred_csv, "--truth", truth_csv, "--out", metrics_json])
        == 0
    )
    printed = json.loads(capsys.readouterr().out)
    assert set(printed) == {"density", "heat_capacity", "hov"}
    assert json.load(open(metrics_json)) == printed
    # interpolating one missing isomer from its neighbours should land close
    assert printed["density"]["rmse"] < 50.0


def test_evaluate_with_disjoint_truth_exits_two(tmp_path):
    a = tmp_path / "a.txt"
    a.write_text("CCCC\n")
    b = tmp_path / "b.txt"
    b.write_text("CCCCC\n")
    truth_a = str(tmp_path / "ta.csv")
    truth_b = str(tmp_path / "tb.csv")
    pred = str(tmp_path / "p.csv")
    assert main(["simulate", "--molecules", str(a), "--out", truth_a]) == 0
    assert main(["simulate", "--molecules", str(b), "--out", truth_b]) == 0
    assert main(["fit-predict", "--train", truth_a, "--molecules", str(a), "--out", pred]) == 0
    assert main(["evaluate", "--pred", pred, "--truth", truth_b]) == 2


# -- selection commands ---------------------------------------------------------------


def test_al_writes_a_terminal_checkpoint(tmp_path, config_file, capsys):
    ckpt = str(tmp_path / "stage1.json")
    code = main(
        [
            "al", "--config", config_file, "--out-dir", str(tmp_path),
            "--checkpoint", ckpt, "--threshold", "0.5",
        ]
    )
    assert code == 0
    assert "selected" in capsys.readouterr().out
    state = al.load_checkpoint(ckpt)
    assert state.is_terminal
    assert state.threshold == 0.5
    assert len(state.selected) > 0

    # second invocation reuses the finished checkpoint untouched
    stamp = os.stat(ckpt).st_mtime_ns
    assert (
        main(
            [
                "al", "--config", config_file, "--out-dir", str(tmp_path),
                "--checkpoint", ckpt, "--threshold", "0.5",
            ]
        )
        == 0
    )
    assert os.stat(ckpt).st_mtime_ns == stamp

    cont = str(tmp_path / "stage2.json")
    code = main(
        [
            "al-continue", "--config", config_file, "--out-dir", str(tmp_path),
            "--checkpoint", ckpt, "--threshold", "0.4", "--out", cont,
        ]
    )
    assert code == 0
    extended = al.load_checkpoint(cont)
    assert extended.is_terminal
    assert extended.threshold == 0.4
    assert set(extended.selected) >= set(state.selected)


def test_al_resumes_an_interrupted_checkpoint(tmp_path, config_file):
    from alkspace.pipeline import PipelineConfig, _Workspace

    cfg = PipelineConfig.from_json(config_file)
    cfg = dataclasses.replace(cfg, out_dir=str(tmp_path))
    ws = _Workspace(cfg)
    ids = ws.molecule_ids()
    matrix = ws.kernel_matrix(ids)
    mid = al.al_step(
        al.al_init(ids, 0.5, cfg.batch, cfg.al_seed), matrix, noise=cfg.gpr.al_noise
    )
    assert not mid.is_terminal
    ckpt = str(tmp_path / "interrupted.json")
    al.save_checkpoint(mid, ckpt)

    code = main(
        [
            "al", "--config", config_file, "--out-dir", str(tmp_path),
            "--checkpoint", ckpt,
        ]
    )
    assert code == 0
    finished = al.load_checkpoint(ckpt)
    assert finished.is_terminal
    assert set(finished.selected) >= set(mid.selected)


def test_al_continue_rejects_a_higher_threshold(tmp_path, config_file):
    ckpt = str(tmp_path / "s1.json")
    assert (
        main(
            [
                "al", "--config", config_file, "--out-dir", str(tmp_path),
                "--checkpoint", ckpt, "--threshold", "0.5",
            ]
        )
        == 0
    )
    assert (
        main(
            [
                "al-continue", "--config", config_file, "--out-dir", str(tmp_path),
                "--checkpoint", ckpt, "--threshold", "0.6",
            ]
        )
        == 2
    )


# -- full workflow ------------------------------------------------------------------


def test_run_all_and_compare_random(tmp_path, config_file, capsys):
    out_dir = str(tmp_path / "ws")
    assert main(["run-all", "--config", config_file, "--out-dir", out_dir]) == 0
    printed = capsys.readouterr().out
    assert "stage 1" in printed and "stage 2" in printed
    assert "report_" in printed
    reports = [n for n in os.listdir(out_dir) if n.startswith("report_")]
    assert len(reports) == 1

    assert main(["compare-random", "--config", config_file, "--out-dir", out_dir]) == 0
    printed = capsys.readouterr().out
    assert "median rmse" in printed
    assert any(n.startswith("comparison_") for n in os.listdir(out_dir))


# -- installed entry point ---------------------------------------------------------------


def test_console_script_runs():
    proc = subprocess.run(
        [sys.executable, "-c", "from alkspace.cli import main; raise SystemExit(main(['enumerate', '4', '6', '--count']))"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert proc.stdout.strip() == "10"
