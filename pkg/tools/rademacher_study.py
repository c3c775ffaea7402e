"""Rademacher-hashed iVAE against a VaDE with the same number of components.

Both families train on one dataset and share its evaluation split, so their
representations can be aligned row for row. Each iVAE seed is compared with
each VaDE seed; VaDE seeds are offset so every pair keeps seed_a < seed_b.
"""

import json
import os
from typing import Dict, Sequence

from src.artifact_store import ArtifactStore
from src.errors import ExperimentError
from src.experiment import aggregate, compare_pair, fit_eval_rows, load_experiment_dataset, train_seeds
from src.settings import ExperimentConfig, TclConfig, TrainingConfig
from src.state import ModelKind, UTask

VADE_SEED_OFFSET = 1000


def generate_rademacher_study(
    work_dir: str,
    bits: int = 3,
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
    steps: int = 20_000,
    tcl: TclConfig = None,
) -> Dict:
    tcl = tcl or TclConfig()
    shared = dict(d_z=tcl.d, dataset=tcl, training=TrainingConfig(steps=steps))
    ivae_cfg = ExperimentConfig(
        model_kind=ModelKind.IVAE,
        u_task=UTask.RADEMACHER,
        rademacher_bits=bits,
        seeds=list(seeds),
        output_dir=os.path.join(work_dir, "ivae_rademacher"),
        **shared,
    )
    vade_cfg = ExperimentConfig(
        model_kind=ModelKind.VADE,
        K=2**bits,
        seeds=[VADE_SEED_OFFSET + s for s in seeds],
        output_dir=os.path.join(work_dir, "vade"),
        **shared,
    )
    dataset = load_experiment_dataset(ivae_cfg)
    ivae_runs, ivae_failures = train_seeds(ivae_cfg, dataset, ArtifactStore(ivae_cfg.output_dir))
    vade_runs, vade_failures = train_seeds(vade_cfg, dataset, ArtifactStore(vade_cfg.output_dir))

    if not ivae_runs or not vade_runs:
        raise ExperimentError("every seed of one family failed; nothing to compare")

    n_eval = ivae_runs[0].representation.shape[0]
    fit_rows, eval_rows = fit_eval_rows(n_eval, ivae_cfg.metrics.fit_fraction, tcl.seed)
    pairs = [
        compare_pair(
            a.artifact.seed, a.representation, b.artifact.seed, b.representation, fit_rows, eval_rows, ivae_cfg.metrics
        )
        for a in ivae_runs
        for b in vade_runs
    ]
    return {
        "bits": bits,
        "K": 2**bits,
        "pairs": [p.to_dict() for p in pairs],
        "summary": aggregate(pairs),
        "failures": {
            "ivae": [f.seed for f in ivae_failures],
            "vade": [f.seed for f in vade_failures],
        },
    }


def save_rademacher_study(study: Dict, output_dir: str = "output") -> str:
    """Save the cross-family comparison to ``rademacher_study.json``."""
    os.makedirs(output_dir, exist_ok=True)
    filepath = os.path.join(output_dir, "rademacher_study.json")
    with open(filepath, "w", encoding="utf-8") as f:
        json.dump(study, f, indent=2)
    return filepath
