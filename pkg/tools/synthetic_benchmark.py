"""MCC to ground-truth sources of iVAE and VaDE across synthetic dataset sizes."""

import csv
import json
import logging
import os
from typing import Dict, Iterable, Sequence

import numpy as np

from config.defaults import TCL_SWEEP_SIZES
from src.artifact_store import ArtifactStore
from src.experiment import load_experiment_dataset, train_seeds
from src.settings import ExperimentConfig, TclConfig, TrainingConfig
from src.state import ModelKind

logger = logging.getLogger(__name__)

BOXPLOT_FIELDS = ("min", "q1", "median", "q3", "max")


def boxplot_stats(values: Sequence[float]) -> Dict[str, float]:
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return {name: float("nan") for name in BOXPLOT_FIELDS}
    q = np.percentile(values, [0, 25, 50, 75, 100])
    return dict(zip(BOXPLOT_FIELDS, (float(v) for v in q)))


def generate_synthetic_benchmark(
    work_dir: str,
    sizes: Iterable[int] = TCL_SWEEP_SIZES,
    model_kinds: Iterable[ModelKind] = (ModelKind.IVAE, ModelKind.VADE),
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
    steps: int = 20_000,
    tcl_overrides: Dict = None,
) -> Dict[str, Dict[int, Dict]]:
    """
    Train every (model kind, dataset size) cell and collect MCC to the sources.

    Args:
        work_dir: Where each cell's runs are written
        sizes: Samples per segment; each size gets its own dataset seed
        model_kinds: Families to compare
        seeds: Training seeds per cell
        steps: Optimisation steps per run
        tcl_overrides: Extra TclConfig fields shared by every dataset

    Returns:
        ``{kind: {size: {"mcc", "baseline", "boxplot", "failures"}}}``
    """
    results: Dict[str, Dict[int, Dict]] = {}
    for kind in model_kinds:
        results[kind.value] = {}
        for size in sizes:
            tcl = TclConfig(samples_per_segment=size, seed=size, **(tcl_overrides or {}))
            cfg = ExperimentConfig(
                model_kind=kind,
                d_z=tcl.d,
                dataset=tcl,
                seeds=list(seeds),
                training=TrainingConfig(steps=steps),
                output_dir=os.path.join(work_dir, f"{kind.value}_{size}"),
            )
            trained, failures = train_seeds(cfg, load_experiment_dataset(cfg), ArtifactStore(cfg.output_dir))
            mccs = [run.artifact.mcc_to_sources for run in trained]
            baselines = [run.artifact.baseline_mcc_to_sources for run in trained]
            median = float(np.median(mccs)) if mccs else float("nan")
            logger.info("%s, %d per segment: median MCC %.4f", kind.value, size, median)
            results[kind.value][size] = {
                "mcc": mccs,
                "baseline": baselines,
                "boxplot": boxplot_stats(mccs),
                "failures": [f.seed for f in failures],
            }
    return results


def save_synthetic_benchmark(results: Dict[str, Dict[int, Dict]], output_dir: str = "output") -> str:
    """Save the raw results as JSON and the boxplot table as ``synthetic_benchmark.csv``."""
    os.makedirs(output_dir, exist_ok=True)
    with open(os.path.join(output_dir, "synthetic_benchmark.json"), "w", encoding="utf-8") as f:
        json.dump(results, f, indent=2)

    filepath = os.path.join(output_dir, "synthetic_benchmark.csv")
    with open(filepath, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(("model", "samples_per_segment", *BOXPLOT_FIELDS))
        for kind, by_size in results.items():
            for size, cell in by_size.items():
                writer.writerow((kind, size, *(cell["boxplot"][name] for name in BOXPLOT_FIELDS)))
    return filepath
