import json

import numpy as np
import pytest

from src.artifact_store import ArtifactStore
from src.errors import DegenerateInputError, ExperimentError, ShapeError
from src.experiment import (
    REPORT_KEYS,
    PairReport,
    aggregate,
    compare_models,
    curve_rows,
    fit_eval_rows,
    run_experiment,
    seed_pairs,
    write_report,
)
from src.metrics import MccReport
from src.settings import MetricsConfig
from tools.published_mcc_stats import IVAE_FINAL_MCC, VAE_FINAL_MCC, VADE_FINAL_MCC


def _report(final, length=2):
    curve = np.full(length, final)
    return MccReport(matched_corrs=curve.copy(), cumulative_means=curve, final_mcc=final, in_sample=True)


def _pair(seed_a, seed_b, final):
    return PairReport(seed_a, seed_b, **{key: _report(final) for key in REPORT_KEYS})


def test_seed_pair_counts():
    assert len(seed_pairs(range(10))) == 45
    assert len(seed_pairs(range(10), include_self_pairs=True)) == 55
    assert seed_pairs([3, 1, 2]) == [(1, 2), (1, 3), (2, 3)]


def test_pair_report_orders_seeds():
    with pytest.raises(ValueError):
        _pair(2, 1, 0.5)


def test_aggregate_arithmetic():
    summary = aggregate([_pair(0, 1, 0.4), _pair(0, 2, 0.6)])
    assert summary["n_pairs"] == 2
    for key in REPORT_KEYS:
        assert summary[key]["mean"] == pytest.approx(0.5)
        assert summary[key]["std"] == pytest.approx(0.1)
        assert summary[key]["curve_mean"] == pytest.approx([0.5, 0.5])


def test_aggregate_rejects_empty_and_ragged():
    with pytest.raises(DegenerateInputError):
        aggregate([])
    ragged = _pair(0, 2, 0.5)
    ragged.weak_out = _report(0.5, length=3)
    with pytest.raises(ShapeError):
        aggregate([_pair(0, 1, 0.5), ragged])


def test_curve_rows_cover_every_report():
    rows = curve_rows(aggregate([_pair(0, 1, 0.4)]))
    assert len(rows) == 4 * 2
    assert rows[0] == {"metric": "strong", "split": "in", "dim": 1, "mean": 0.4, "std": 0.0}


def test_fit_eval_rows_are_disjoint_halves():
    fit, held_out = fit_eval_rows(50, 0.5, dataset_seed=3)
    assert fit.size == held_out.size == 25
    assert np.union1d(fit, held_out).size == 50
    again, _ = fit_eval_rows(50, 0.5, dataset_seed=3)
    assert np.array_equal(fit, again)
    with pytest.raises(ShapeError):
        fit_eval_rows(1, 0.5)


def test_compare_models_on_published_columns():
    assert compare_models(VAE_FINAL_MCC, VADE_FINAL_MCC).p_value == pytest.approx(0.039, abs=0.005)
    assert compare_models(IVAE_FINAL_MCC, VAE_FINAL_MCC).p_value == pytest.approx(0.029, abs=0.005)
    with pytest.raises(DegenerateInputError):
        compare_models(IVAE_FINAL_MCC, IVAE_FINAL_MCC)


def test_run_experiment_writes_the_layout(tiny_experiment_config, tiny_dataset):
    cfg = tiny_experiment_config.model_copy(update={"seeds": [0, 1, 2]})
    result = run_experiment(cfg, dataset=tiny_dataset)
    root = ArtifactStore(cfg.output_dir).root

    assert [run.seed for run in result.runs] == [0, 1, 2]
    assert [(p.seed_a, p.seed_b) for p in result.pairs] == [(0, 1), (0, 2), (1, 2)]
    assert result.failures == []
    for name in ("config.json", "summary.json", "curves.csv", "failures.json"):
        assert (root / name).exists()
    assert len(list((root / "pairs").glob("pair_*.json"))) == 3
    summary = json.loads((root / "summary.json").read_text())
    assert summary["pairs"]["n_pairs"] == 3
    for key in REPORT_KEYS:
        assert 0.0 <= summary["pairs"][key]["mean"] <= 1.0
    assert (root / "curves.csv").read_text().splitlines()[0] == "metric,split,dim,mean,std"

    direct = [p.strong_out.final_mcc for p in result.pairs]
    assert summary["pairs"]["strong_out"]["mean"] == pytest.approx(np.mean(direct))
    assert summary["pairs"]["strong_out"]["std"] == pytest.approx(np.std(direct))

    rebuilt = write_report(root)
    assert rebuilt == summary


def test_self_pairs_score_one(tiny_experiment_config, tiny_dataset):
    metrics = MetricsConfig(include_self_pairs=True)
    cfg = tiny_experiment_config.model_copy(update={"metrics": metrics})
    result = run_experiment(cfg, dataset=tiny_dataset)
    self_pairs = [p for p in result.pairs if p.seed_a == p.seed_b]
    assert len(self_pairs) == 2
    for pair in self_pairs:
        assert pair.strong_out.final_mcc == pytest.approx(1.0, abs=1e-9)
        assert pair.weak_out.final_mcc == pytest.approx(1.0, abs=1e-9)
        assert pair.weak_in.final_mcc == pytest.approx(1.0, abs=1e-9)


def test_experiment_outputs_are_reproducible(tiny_experiment_config, tiny_dataset, tmp_path):
    first = tiny_experiment_config.model_copy(update={"output_dir": str(tmp_path / "first")})
    second = tiny_experiment_config.model_copy(update={"output_dir": str(tmp_path / "second")})
    run_experiment(first, dataset=tiny_dataset)
    run_experiment(second, dataset=tiny_dataset)
    for name in ("summary.json", "curves.csv", "pairs/pair_0_1.json", "runs/seed_0/representation.csv"):
        assert (tmp_path / "first" / name).read_bytes() == (tmp_path / "second" / name).read_bytes(), name


def test_too_few_surviving_runs(tiny_experiment_config, tiny_dataset):
    cfg = tiny_experiment_config.model_copy(update={"decoder_log_var": -800.0})
    with np.errstate(all="ignore"), pytest.raises(ExperimentError):
        run_experiment(cfg, dataset=tiny_dataset)
    failures = json.loads((ArtifactStore(cfg.output_dir).root / "failures.json").read_text())
    assert [f["error"] for f in failures] == ["NonFiniteLossError", "NonFiniteLossError"]


def test_compare_models_is_symmetric():
    forward = compare_models(IVAE_FINAL_MCC, VADE_FINAL_MCC)
    backward = compare_models(VADE_FINAL_MCC, IVAE_FINAL_MCC)
    assert forward.p_value == backward.p_value
    assert forward.statistic == backward.statistic


def test_single_pair_has_zero_spread():
    summary = aggregate([_pair(0, 1, 0.7)])
    assert summary["strong_out"]["std"] == 0.0
    assert summary["strong_out"]["curve_std"] == [0.0, 0.0]


def test_aggregate_pools_halves():
    first = [_pair(0, 1, 0.2), _pair(0, 2, 0.5)]
    second = [_pair(1, 2, 0.9)]
    pooled = aggregate(first + second)
    finals = np.array([0.2, 0.5, 0.9])
    assert pooled["weak_in"]["mean"] == pytest.approx(finals.mean())
    assert pooled["weak_in"]["std"] == pytest.approx(finals.std())
    assert pooled["weak_in"]["final_mccs"] == [0.2, 0.5, 0.9]
