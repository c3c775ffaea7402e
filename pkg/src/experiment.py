"""Multi-seed experiments: train every seed, compare every pair, aggregate."""

import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from itertools import combinations
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .artifact_store import ArtifactStore
from .datagen import LabeledDataset, generate_tcl_dataset, load_dataset
from .errors import DegenerateInputError, ExperimentError, ShapeError
from .metrics import MccReport, WilcoxonResult, strong_mcc_split, weak_mcc, wilcoxon_signed_rank
from .ndmath import Matrix, RngStream
from .settings import ExperimentConfig, MetricsConfig, max_workers
from .state import ExperimentResult, RunArtifact, RunFailure
from .training import TrainedRun, train_model

logger = logging.getLogger(__name__)

REPORT_KEYS = ("strong_in", "strong_out", "weak_in", "weak_out")

_PAIR_SPLIT_STREAM = 102


@dataclass
class PairReport:
    seed_a: int
    seed_b: int
    strong_in: MccReport
    strong_out: MccReport
    weak_in: MccReport
    weak_out: MccReport
    mcc_to_sources_a: Optional[float] = None
    mcc_to_sources_b: Optional[float] = None

    def __post_init__(self):
        if self.seed_a > self.seed_b:
            raise ValueError(f"pairs are ordered seed_a <= seed_b, got ({self.seed_a}, {self.seed_b})")

    def to_dict(self) -> Dict:
        record = {"seed_a": self.seed_a, "seed_b": self.seed_b}
        for key in REPORT_KEYS:
            record[key] = getattr(self, key).to_dict()
        record["mcc_to_sources_a"] = self.mcc_to_sources_a
        record["mcc_to_sources_b"] = self.mcc_to_sources_b
        return record

    @classmethod
    def from_dict(cls, data: Dict) -> "PairReport":
        return cls(
            seed_a=data["seed_a"],
            seed_b=data["seed_b"],
            mcc_to_sources_a=data.get("mcc_to_sources_a"),
            mcc_to_sources_b=data.get("mcc_to_sources_b"),
            **{key: MccReport.from_dict(data[key]) for key in REPORT_KEYS},
        )


def load_experiment_dataset(cfg: ExperimentConfig) -> LabeledDataset:
    if cfg.dataset is not None:
        return generate_tcl_dataset(cfg.dataset)
    return load_dataset(cfg.dataset_path)


def seed_pairs(seeds: Sequence[int], include_self_pairs: bool = False) -> List[Tuple[int, int]]:
    ordered = sorted(seeds)
    pairs = list(combinations(ordered, 2))
    if include_self_pairs:
        pairs += [(s, s) for s in ordered]
        pairs.sort()
    return pairs


def fit_eval_rows(n: int, fit_fraction: float, dataset_seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Disjoint halves of the evaluation set: alignment is fitted on the first."""
    if n < 2:
        raise ShapeError(f"cannot split {n} evaluation rows")
    order = RngStream(dataset_seed).fork(_PAIR_SPLIT_STREAM).permutation(n)
    cut = int(np.clip(round(fit_fraction * n), 1, n - 1))
    return np.sort(order[:cut]), np.sort(order[cut:])


def compare_pair(
    seed_a: int,
    rep_a: Matrix,
    seed_b: int,
    rep_b: Matrix,
    fit_rows: np.ndarray,
    eval_rows: np.ndarray,
    metrics_cfg: MetricsConfig,
) -> PairReport:
    strong_in, strong_out = strong_mcc_split(rep_a, rep_b, fit_rows, eval_rows, metrics_cfg.absolute_corr)
    weak_in, weak_out = weak_mcc(
        rep_a, rep_b, fit_rows, eval_rows, metrics_cfg.d_cca, metrics_cfg.ridge, metrics_cfg.absolute_corr
    )
    for report in (strong_in, strong_out, weak_in, weak_out):
        report.metadata.update({"seed_a": seed_a, "seed_b": seed_b})
    return PairReport(seed_a, seed_b, strong_in, strong_out, weak_in, weak_out)


def aggregate(pair_reports: Sequence[PairReport]) -> Dict:
    """Mean and population std of final MCCs, plus mean cumulative curves, over pairs."""
    if not pair_reports:
        raise DegenerateInputError("cannot aggregate an empty list of pair reports")
    summary = {"n_pairs": len(pair_reports)}
    for key in REPORT_KEYS:
        reports = [getattr(p, key) for p in pair_reports]
        finals = np.array([r.final_mcc for r in reports])
        lengths = {r.cumulative_means.size for r in reports}
        if len(lengths) != 1:
            raise ShapeError(f"{key}: cumulative curves have differing lengths {sorted(lengths)}")
        curves = np.vstack([r.cumulative_means for r in reports])
        summary[key] = {
            "mean": float(finals.mean()),
            "std": float(finals.std()),
            "final_mccs": finals.tolist(),
            "curve_mean": curves.mean(axis=0).tolist(),
            "curve_std": curves.std(axis=0).tolist(),
        }
    return summary


def compare_models(final_mccs_a: Sequence[float], final_mccs_b: Sequence[float], method: str = "auto") -> WilcoxonResult:
    """Two-sided paired test of two model families on the same experiment grid."""
    return wilcoxon_signed_rank(final_mccs_a, final_mccs_b, method=method)


def curve_rows(summary: Dict) -> List[Dict]:
    rows = []
    for key in REPORT_KEYS:
        metric, split = key.split("_")
        block = summary[key]
        for dim, (mean, std) in enumerate(zip(block["curve_mean"], block["curve_std"]), start=1):
            rows.append({"metric": metric, "split": split, "dim": dim, "mean": mean, "std": std})
    return rows


def _run_summary(
    model_kind: Optional[str], runs: List[RunArtifact], failures: List[RunFailure], pairs: Sequence[PairReport]
) -> Dict:
    return {
        "model_kind": model_kind,
        "seeds": [run.seed for run in runs],
        "failed_seeds": [f.seed for f in failures],
        "runs": [
            {
                "seed": run.seed,
                "final_eval_elbo": run.final_eval_elbo,
                "mcc_to_sources": run.mcc_to_sources,
                "baseline_mcc_to_sources": run.baseline_mcc_to_sources,
            }
            for run in runs
        ],
        "pairs": aggregate(pairs),
    }


def train_seeds(
    cfg: ExperimentConfig, dataset: LabeledDataset, store: ArtifactStore
) -> Tuple[List[TrainedRun], List[RunFailure]]:
    """Train every seed concurrently; a failing seed is recorded, not raised."""
    trained, failures = [], []
    with ThreadPoolExecutor(max_workers=max_workers()) as executor:
        futures = {executor.submit(train_model, cfg, dataset, seed, store): seed for seed in cfg.seeds}
        for future in as_completed(futures):
            seed = futures[future]
            try:
                trained.append(future.result())
            except Exception as e:
                logger.warning("seed %d failed: %s: %s", seed, type(e).__name__, e)
                failures.append(RunFailure(seed=seed, error=type(e).__name__, message=str(e)))
    trained.sort(key=lambda run: run.artifact.seed)
    failures.sort(key=lambda f: f.seed)
    return trained, failures


def run_experiment(
    cfg: ExperimentConfig, dataset: Optional[LabeledDataset] = None, store: Optional[ArtifactStore] = None
) -> ExperimentResult:
    store = store if store is not None else ArtifactStore(cfg.output_dir)
    store.save_config(cfg.model_dump(mode="json"))
    dataset = dataset if dataset is not None else load_experiment_dataset(cfg)

    trained, failures = train_seeds(cfg, dataset, store)
    store.save_failures(failures)
    if len(trained) < 2:
        raise ExperimentError(f"only {len(trained)} of {len(cfg.seeds)} seeds trained; need at least 2 to compare")

    by_seed = {run.artifact.seed: run for run in trained}
    n_eval = trained[0].representation.shape[0]
    dataset_seed = cfg.dataset.seed if cfg.dataset is not None else 0
    fit_rows, eval_rows = fit_eval_rows(n_eval, cfg.metrics.fit_fraction, dataset_seed)

    pairs = seed_pairs(by_seed, cfg.metrics.include_self_pairs)
    reports: List[PairReport] = []
    with ThreadPoolExecutor(max_workers=max_workers()) as executor:
        futures = [
            executor.submit(
                compare_pair,
                a,
                by_seed[a].representation,
                b,
                by_seed[b].representation,
                fit_rows,
                eval_rows,
                cfg.metrics,
            )
            for a, b in pairs
        ]
        for future in as_completed(futures):
            reports.append(future.result())
    reports.sort(key=lambda r: (r.seed_a, r.seed_b))

    for report in reports:
        report.mcc_to_sources_a = by_seed[report.seed_a].artifact.mcc_to_sources
        report.mcc_to_sources_b = by_seed[report.seed_b].artifact.mcc_to_sources
        store.save_pair_report(report.seed_a, report.seed_b, report.to_dict())

    runs = [run.artifact for run in trained]
    summary = _run_summary(cfg.model_kind.value, runs, failures, reports)
    store.save_summary(summary)
    store.save_curves_csv(curve_rows(summary["pairs"]))
    logger.info(
        "experiment done: %d runs, %d failures, %d pairs, strong out-of-sample MCC %.4f",
        len(runs),
        len(failures),
        len(reports),
        summary["pairs"]["strong_out"]["mean"],
    )
    return ExperimentResult(runs=runs, pairs=reports, summary=summary, failures=failures)


def write_report(experiment_dir) -> Dict:
    """Re-aggregate a finished experiment directory into summary.json and curves.csv."""
    store = ArtifactStore(experiment_dir)
    pairs = [PairReport.from_dict(record) for record in store.load_pair_reports()]
    if not pairs:
        raise ExperimentError(f"no pair reports under {experiment_dir}")
    config = store.load_config()
    failures = [RunFailure(**record) for record in store.load_failures()]
    summary = _run_summary(config.get("model_kind"), store.list_runs(), failures, pairs)
    store.save_summary(summary)
    store.save_curves_csv(curve_rows(summary["pairs"]))
    return summary
