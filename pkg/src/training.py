"""Single-seed training run: ADAM on the negative ELBO, plateau-scheduled by the eval ELBO."""

import logging
import time
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .artifact_store import ArtifactStore
from .datagen import LabeledDataset, split_dataset
from .errors import ConfigError, NonFiniteLossError, ShapeError
from .metrics import strong_mcc
from .models import GenerativeModel, build_model, elbo, elbo_gradients, encode
from .ndmath import Matrix, RngStream
from .nn import AdamState, PlateauScheduler, adam_step, plateau_update
from .priors import (
    IdentifiabilityCheck,
    build_L_matrix,
    build_rademacher_hasher,
    default_u_indices,
    enforce_identifiability,
    hash_u,
    penalized_objective,
)
from .settings import ExperimentConfig
from .state import ModelKind, RunArtifact, TraceEntry, UTask

logger = logging.getLogger(__name__)

# fork labels of a run's seed stream
_INIT_STREAM = 1
_BATCH_STREAM = 2
_NOISE_STREAM = 3
_EVAL_STREAM = 4
_REPAIR_STREAM = 5
_HASHER_STREAM = 6
_FINAL_STREAM = 7
# the evaluation split hangs off the dataset, not the run, so every seed sees the same rows
_SPLIT_STREAM = 101


@dataclass
class TrainedRun:
    artifact: RunArtifact
    model: GenerativeModel
    representation: Matrix


def split_for_evaluation(cfg: ExperimentConfig, dataset: LabeledDataset) -> Tuple[LabeledDataset, LabeledDataset]:
    """(train, eval) split shared by every seed of an experiment."""
    dataset_seed = cfg.dataset.seed if cfg.dataset is not None else 0
    eval_part, train_part = split_dataset(dataset, cfg.eval_fraction, RngStream(dataset_seed).fork(_SPLIT_STREAM))
    return train_part, eval_part


def conditioning_labels(model: GenerativeModel, cfg: ExperimentConfig, ds: LabeledDataset) -> Optional[np.ndarray]:
    """The u fed to the encoder: segment labels, hashed inputs, or nothing."""
    if model.kind is not ModelKind.IVAE:
        return None
    if cfg.u_task is UTask.RADEMACHER:
        return hash_u(model.hasher, ds.X)
    return ds.U


def extract_representations(model: GenerativeModel, X: Matrix, u: Optional[np.ndarray] = None) -> Matrix:
    """Posterior means over ``X`` with dropout off."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.d_x:
        raise ShapeError(f"inputs of shape {X.shape} do not match d_x={model.d_x}")
    if model.kind is ModelKind.IVAE and u is None and model.hasher is not None:
        u = hash_u(model.hasher, X)
    return encode(model, X, u, train_mode=False).mu


def mcc_to_sources(representation: Matrix, ds: LabeledDataset) -> Optional[float]:
    """Strong MCC against the ground-truth sources, when they exist and widths agree."""
    if ds.S is None:
        return None
    if ds.S.shape[1] != representation.shape[1]:
        logger.debug("d_z=%d differs from %d sources; no MCC to sources", representation.shape[1], ds.S.shape[1])
        return None
    return strong_mcc(representation, ds.S).final_mcc


def _check_compatible(cfg: ExperimentConfig, dataset: LabeledDataset) -> int:
    n_components = cfg.n_components(dataset.n_segments)
    if cfg.model_kind is ModelKind.IVAE and cfg.u_task is UTask.SEGMENTS:
        if cfg.K is not None and cfg.K != dataset.n_segments:
            raise ConfigError(f"iVAE K={cfg.K} but the dataset has {dataset.n_segments} segments")
    if dataset.n < 4:
        raise ShapeError(f"dataset has {dataset.n} rows; too few to split and train")
    return n_components


def _identifiability_window(
    model: GenerativeModel, cfg: ExperimentConfig, rng: RngStream, warned: List[bool]
) -> Optional[IdentifiabilityCheck]:
    ident = cfg.identifiability
    if model.kind is ModelKind.VAE or not (ident.check_L or ident.alpha > 0):
        return None
    u_indices = default_u_indices(model.prior)
    if not u_indices:
        if not warned[0]:
            logger.info(
                "prior has %d components; the L-matrix needs %d, skipping the check",
                model.prior.K,
                2 * model.d_z + 1,
            )
            warned[0] = True
        return None
    check = build_L_matrix(model.prior, u_indices)
    if ident.check_L and not check.satisfied:
        repaired = enforce_identifiability(model.prior, check, ident.noise_scale, rng)
        # write back in place: the optimiser holds references to these arrays
        np.copyto(model.prior.means, repaired.means)
        np.copyto(model.prior.log_vars, repaired.log_vars)
        check = build_L_matrix(model.prior, u_indices)
    return check


def train_model(
    cfg: ExperimentConfig,
    dataset: LabeledDataset,
    seed: int,
    store: Optional[ArtifactStore] = None,
) -> TrainedRun:
    """Train one seed and persist its model and evaluation-set representation."""
    started = time.perf_counter()
    store = store if store is not None else ArtifactStore(cfg.output_dir)
    n_components = _check_compatible(cfg, dataset)
    train_ds, eval_ds = split_for_evaluation(cfg, dataset)

    rng = RngStream(seed)
    model = build_model(
        cfg.model_kind,
        cfg.encoder_spec(dataset.d_x, n_components),
        cfg.decoder_spec(dataset.d_x),
        n_components,
        cfg.decoder_log_var,
        rng.fork(_INIT_STREAM),
        seed=seed,
    )
    if cfg.model_kind is ModelKind.IVAE and cfg.u_task is UTask.RADEMACHER:
        model.hasher = build_rademacher_hasher(cfg.rademacher_bits, dataset.d_x, rng.fork(_HASHER_STREAM))
    u_train = conditioning_labels(model, cfg, train_ds)
    u_eval = conditioning_labels(model, cfg, eval_ds)

    baseline_mcc = mcc_to_sources(extract_representations(model, eval_ds.X, u_eval), eval_ds)

    batch_rng = rng.fork(_BATCH_STREAM)
    noise_rng = rng.fork(_NOISE_STREAM)
    eval_rng = rng.fork(_EVAL_STREAM)
    repair_rng = rng.fork(_REPAIR_STREAM)

    training = cfg.training
    params = model.parameters()
    adam = AdamState(lr=training.lr)
    scheduler = PlateauScheduler(
        patience=training.plateau_patience,
        decay_factor=training.plateau_decay,
        min_improvement=training.plateau_min_improvement,
    )
    trace: List[TraceEntry] = []
    warned = [False]
    window_totals: List[float] = []

    def evaluate(step: int) -> None:
        eval_elbo = elbo(model, eval_ds.X, u_eval, eval_rng, train_mode=False).total
        train_elbo = float(np.mean(window_totals)) if window_totals else eval_elbo
        window_totals.clear()
        check = _identifiability_window(model, cfg, repair_rng, warned)
        cn = None
        objective = eval_elbo
        if check is not None:
            cn = check.condition_number if np.isfinite(check.condition_number) else None
            objective = penalized_objective(eval_elbo, check, cfg.identifiability.alpha)
        if step > 0:
            if np.isfinite(objective):
                adam.lr = plateau_update(scheduler, objective, adam.lr)
            else:
                logger.warning("seed %d step %d: non-finite objective, scheduler not updated", seed, step)
        trace.append(
            TraceEntry(
                step=step,
                train_elbo=train_elbo,
                eval_elbo=eval_elbo,
                lr=adam.lr,
                condition_number=cn,
                objective=float(objective),
            )
        )
        logger.info(
            "seed %d step %d: train ELBO %.4f, eval ELBO %.4f, lr %.3g", seed, step, train_elbo, eval_elbo, adam.lr
        )

    evaluate(0)
    n_train = train_ds.n
    for step in range(1, training.steps + 1):
        rows = batch_rng.integers(0, n_train, min(training.batch_size, n_train))
        u_batch = None if u_train is None else u_train[rows]
        breakdown, grads = elbo_gradients(model, train_ds.X[rows], u_batch, noise_rng)
        if not np.isfinite(breakdown.total):
            raise NonFiniteLossError(f"seed {seed}: ELBO became {breakdown.total} at step {step}", step=step)
        adam_step(adam, params, {name: -g for name, g in grads.items()})
        window_totals.append(breakdown.total)
        if step % training.eval_interval == 0 or step == training.steps:
            evaluate(step)

    final_rng = rng.fork(_FINAL_STREAM)
    final_train = elbo(model, train_ds.X, u_train, final_rng, train_mode=False).total
    final_eval = elbo(model, eval_ds.X, u_eval, final_rng, train_mode=False).total
    representation = extract_representations(model, eval_ds.X, u_eval)
    if not np.all(np.isfinite(representation)):
        raise NonFiniteLossError(f"seed {seed}: representation has non-finite entries", step=training.steps)

    model_path = store.save_model(seed, model)
    rep_path = store.save_representation(seed, representation)
    artifact = RunArtifact(
        seed=seed,
        model_path=str(model_path),
        representation_path=str(rep_path),
        final_train_elbo=final_train,
        final_eval_elbo=final_eval,
        elbo_trace=trace,
        wall_clock=time.perf_counter() - started,
        mcc_to_sources=mcc_to_sources(representation, eval_ds),
        baseline_mcc_to_sources=baseline_mcc,
    )
    store.save_run(artifact)
    return TrainedRun(artifact=artifact, model=model, representation=representation)
