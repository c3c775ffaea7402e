import json

import numpy as np
import pytest
import yaml

from src.cli import main
from src.ndmath import RngStream, load_matrix_csv, save_matrix_csv
from tools.published_mcc_stats import VAE_FINAL_MCC, VADE_FINAL_MCC

TINY_TCL = {"d": 2, "n_segments": 5, "samples_per_segment": 20, "n_mixing_layers": 2, "seed": 3}


def _experiment_doc(output_dir, **extra):
    return {
        "model_kind": "VAE",
        "d_z": 2,
        "encoder_hidden": [8, 6],
        "decoder_hidden": [6, 8],
        "dataset": TINY_TCL,
        "seeds": [0, 1],
        "training": {"steps": 20, "batch_size": 16, "eval_interval": 10},
        "output_dir": str(output_dir),
        **extra,
    }


def _run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def _error(err):
    return json.loads(err.strip().splitlines()[-1])


def test_gen_data_from_yaml(tmp_path, capsys):
    config = tmp_path / "tcl.yaml"
    config.write_text(yaml.safe_dump(TINY_TCL))
    code, out, _ = _run(capsys, "gen-data", str(config), str(tmp_path / "data"))
    assert code == 0
    assert json.loads(out)["n"] == 100
    assert load_matrix_csv(tmp_path / "data" / "X.csv").shape == (100, 2)


def test_experiment_then_report(tmp_path, capsys):
    config = tmp_path / "experiment.json"
    config.write_text(json.dumps(_experiment_doc(tmp_path / "out")))
    code, out, _ = _run(capsys, "experiment", str(config))
    assert code == 0
    summary = json.loads(out)
    assert summary["pairs"]["n_pairs"] == 1

    code, out, _ = _run(capsys, "report", str(tmp_path / "out"))
    assert code == 0
    assert json.loads(out) == summary


def test_train_single_seed(tmp_path, capsys):
    config = tmp_path / "experiment.yaml"
    config.write_text(yaml.safe_dump(_experiment_doc(tmp_path / "out")))
    code, out, _ = _run(capsys, "train", str(config), "--seed", "4")
    assert code == 0
    runs = json.loads(out)["runs"]
    assert [run["seed"] for run in runs] == [4]
    assert (tmp_path / "out" / "runs" / "seed_4" / "run.json").exists()


def test_extract_then_mcc(tmp_path, capsys):
    config = tmp_path / "experiment.json"
    config.write_text(json.dumps(_experiment_doc(tmp_path / "out")))
    assert _run(capsys, "train", str(config), "--seed", "0")[0] == 0

    x = save_matrix_csv(RngStream(5).normal((30, 2)), tmp_path / "x.csv")
    rep = tmp_path / "rep.csv"
    code, out, _ = _run(capsys, "extract", str(tmp_path / "out" / "runs" / "seed_0" / "model"), str(x), str(rep))
    assert code == 0
    assert json.loads(out) == {"out": str(rep), "rows": 30, "d_z": 2}

    flipped = save_matrix_csv(-3.0 * load_matrix_csv(rep)[:, ::-1], tmp_path / "flipped.csv")
    code, out, _ = _run(capsys, "mcc", str(rep), str(flipped))
    assert json.loads(out)[0]["final_mcc"] == pytest.approx(1.0)

    code, out, _ = _run(capsys, "mcc", str(rep), str(flipped), "--weak")
    reports = json.loads(out)
    assert [r["in_sample"] for r in reports] == [True, False]
    assert reports[1]["metadata"]["kind"] == "weak"


def test_wilcoxon_on_vectors(tmp_path, capsys):
    a = save_matrix_csv(np.array(VAE_FINAL_MCC)[:, None], tmp_path / "a.csv")
    b = save_matrix_csv(np.array(VADE_FINAL_MCC)[:, None], tmp_path / "b.csv")
    code, out, _ = _run(capsys, "wilcoxon", str(a), str(b))
    assert code == 0
    result = json.loads(out)
    assert result["method"] == "normal-approx"
    assert result["p_value"] == pytest.approx(0.039, abs=0.005)


def test_identical_vectors_report_a_json_error(tmp_path, capsys):
    a = save_matrix_csv(np.arange(6.0)[:, None], tmp_path / "a.csv")
    code, out, err = _run(capsys, "wilcoxon", str(a), str(a))
    assert code == 1
    assert out == ""
    assert _error(err)["error"] == "DegenerateInputError"


def test_failed_seeds_are_listed(tmp_path, capsys):
    config = tmp_path / "experiment.json"
    config.write_text(json.dumps(_experiment_doc(tmp_path / "out", decoder_log_var=-800.0)))
    code, out, err = _run(capsys, "train", str(config), "--seed", "0")
    assert code == 1
    assert _error(err)["error"] == "ExperimentError"
    result = json.loads(out)
    assert result["runs"] == []
    assert [(f["seed"], f["error"]) for f in result["failures"]] == [(0, "NonFiniteLossError")]
    assert "step 1" in result["failures"][0]["message"]


def test_bad_inputs_exit_with_an_error_document(tmp_path, capsys):
    code, _, err = _run(capsys, "gen-data", str(tmp_path / "missing.yaml"), str(tmp_path / "data"))
    assert code == 1
    assert _error(err)["error"] == "ConfigError"

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"model_kind": "VAE"}))
    code, _, err = _run(capsys, "experiment", str(bad))
    assert code == 1
    assert "dataset" in _error(err)["message"]

    code, _, err = _run(capsys, "report", str(tmp_path / "nowhere"))
    assert _error(err)["error"] == "FileNotFoundError"


def test_config_must_be_a_mapping(tmp_path, capsys):
    config = tmp_path / "scalar.yaml"
    config.write_text("5\n")
    code, out, err = _run(capsys, "gen-data", str(config), str(tmp_path / "data"))
    assert code == 1
    assert out == ""
    error = _error(err)
    assert error["error"] == "ConfigError"
    assert "mapping" in error["message"]


def test_report_rejects_an_incomplete_pair_file(tmp_path, capsys):
    config = tmp_path / "experiment.json"
    config.write_text(json.dumps(_experiment_doc(tmp_path / "out")))
    assert _run(capsys, "experiment", str(config))[0] == 0

    pair_file = tmp_path / "out" / "pairs" / "pair_0_1.json"
    record = json.loads(pair_file.read_text())
    del record["seed_a"]
    pair_file.write_text(json.dumps(record))

    code, out, err = _run(capsys, "report", str(tmp_path / "out"))
    assert code == 1
    assert out == ""
    error = _error(err)
    assert error["error"] == "CorruptArtifactError"
    assert error["path"] == str(pair_file)
    assert "seed_a" in error["message"]
