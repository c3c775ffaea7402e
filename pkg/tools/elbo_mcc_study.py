"""Does a better final ELBO go with a better recovery of the sources?"""

import csv
import json
import os
from typing import Dict, Sequence

from src.artifact_store import ArtifactStore
from src.experiment import load_experiment_dataset, train_seeds
from src.metrics import elbo_mcc_correlation
from src.settings import ExperimentConfig, TclConfig, TrainingConfig
from src.state import ModelKind


def generate_elbo_mcc_study(
    work_dir: str,
    seeds: Sequence[int] = tuple(range(8)),
    samples_per_segment: int = 100,
    steps: int = 20_000,
    model_kind: ModelKind = ModelKind.VADE,
    tcl_overrides: Dict = None,
) -> Dict:
    """Restart one model many times on the smallest dataset and correlate ELBO with MCC."""
    tcl = TclConfig(samples_per_segment=samples_per_segment, seed=samples_per_segment, **(tcl_overrides or {}))
    cfg = ExperimentConfig(
        model_kind=model_kind,
        d_z=tcl.d,
        dataset=tcl,
        seeds=list(seeds),
        training=TrainingConfig(steps=steps),
        output_dir=work_dir,
    )
    trained, failures = train_seeds(cfg, load_experiment_dataset(cfg), ArtifactStore(work_dir))
    restarts = [
        {
            "seed": run.artifact.seed,
            "final_eval_elbo": run.artifact.final_eval_elbo,
            "mcc_to_sources": run.artifact.mcc_to_sources,
        }
        for run in trained
    ]
    correlation = elbo_mcc_correlation(
        [r["final_eval_elbo"] for r in restarts], [r["mcc_to_sources"] for r in restarts]
    )
    return {
        "model_kind": model_kind.value,
        "restarts": restarts,
        "correlation": correlation,
        "failures": [f.seed for f in failures],
    }


def save_elbo_mcc_study(study: Dict, output_dir: str = "output") -> str:
    """Save the study as JSON plus a plot-ready ``elbo_mcc.csv``."""
    os.makedirs(output_dir, exist_ok=True)
    with open(os.path.join(output_dir, "elbo_mcc.json"), "w", encoding="utf-8") as f:
        json.dump(study, f, indent=2)

    filepath = os.path.join(output_dir, "elbo_mcc.csv")
    with open(filepath, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=("seed", "final_eval_elbo", "mcc_to_sources"))
        writer.writeheader()
        writer.writerows(study["restarts"])
    return filepath
