"""Time-contrastive synthetic data with known sources.

Each segment draws its own per-dimension Gaussian (mean and std sampled once
per segment); sources are pushed through a random LeakyReLU MLP whose square
weight matrices are kept well away from singular.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from config.defaults import TCL_MAX_REJECTIONS
from .errors import RejectionSamplingError, ShapeError
from .ndmath import Matrix, RngStream, load_matrix_csv, sample_gaussian, sample_uniform, save_matrix_csv, svd
from .nn import MlpParams, MlpSpec, forward, load_mlp, save_mlp
from .settings import TclConfig

logger = logging.getLogger(__name__)

# fork labels, fixed so datasets stay reproducible
_SOURCES_STREAM = 1
_MIXING_STREAM = 2


@dataclass
class SegmentParams:
    means: Matrix  # n_segments x d
    stds: Matrix  # n_segments x d


@dataclass
class LabeledDataset:
    X: Matrix
    U: np.ndarray
    S: Optional[Matrix] = None
    mixing: Optional[MlpParams] = None

    def __post_init__(self):
        self.U = np.asarray(self.U, dtype=np.int64)
        if self.X.shape[0] != self.U.shape[0]:
            raise ShapeError(f"{self.X.shape[0]} observations but {self.U.shape[0]} labels")
        if self.S is not None and self.S.shape[0] != self.X.shape[0]:
            raise ShapeError(f"{self.X.shape[0]} observations but {self.S.shape[0]} sources")
        if self.U.size and self.U.min() < 0:
            raise ShapeError("labels must be non-negative")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d_x(self) -> int:
        return self.X.shape[1]

    @property
    def n_segments(self) -> int:
        return int(self.U.max()) + 1 if self.U.size else 0

    def subset(self, rows: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(
            X=self.X[rows],
            U=self.U[rows],
            S=None if self.S is None else self.S[rows],
            mixing=self.mixing,
        )


def mixing_spec(cfg: TclConfig) -> MlpSpec:
    return MlpSpec(
        layer_widths=(cfg.d,) * (cfg.n_mixing_layers + 1),
        activation_slope=cfg.mixing_slope,
        dropout_rate=0.0,
    )


def _segment_values(cfg: TclConfig, rng: RngStream, bounds: Tuple[float, float]) -> Matrix:
    # a collapsed range is a constant and draws nothing
    lo, hi = bounds
    if lo == hi:
        return np.full((cfg.n_segments, cfg.d), lo)
    return sample_uniform(rng, cfg.n_segments, cfg.d, lo, hi)


def generate_sources(cfg: TclConfig, rng: RngStream) -> Tuple[Matrix, np.ndarray, SegmentParams]:
    means = _segment_values(cfg, rng, cfg.mean_range)
    stds = _segment_values(cfg, rng, cfg.std_range)
    noise = sample_gaussian(rng, cfg.n_samples, cfg.d)
    labels = np.repeat(np.arange(cfg.n_segments), cfg.samples_per_segment)
    sources = means[labels] + stds[labels] * noise
    return sources, labels, SegmentParams(means=means, stds=stds)


def sample_mixing_mlp(cfg: TclConfig, rng: RngStream) -> MlpParams:
    """Square N(0, 1/d) weights, each redrawn until its smallest singular value clears the floor."""
    weights, biases = [], []
    for layer in range(cfg.n_mixing_layers):
        for attempt in range(1, TCL_MAX_REJECTIONS + 1):
            w = sample_gaussian(rng, cfg.d, cfg.d, std=1.0 / np.sqrt(cfg.d))
            _, s, _ = svd(w)
            if s[-1] >= cfg.min_singular_value:
                break
        else:
            raise RejectionSamplingError(
                f"layer {layer}: no weight matrix with sigma_min >= {cfg.min_singular_value} "
                f"after {TCL_MAX_REJECTIONS} draws",
                attempts=TCL_MAX_REJECTIONS,
            )
        if attempt > 1:
            logger.debug("mixing layer %d accepted after %d draws", layer, attempt)
        weights.append(w)
        biases.append(np.zeros(cfg.d))
    return MlpParams(weights, biases)


def apply_mixing(mixing: MlpParams, cfg: TclConfig, sources: Matrix) -> Matrix:
    observations, _ = forward(mixing, mixing_spec(cfg), sources, train_mode=False)
    return observations


def generate_tcl_dataset(cfg: TclConfig, rng: Optional[RngStream] = None) -> LabeledDataset:
    """Deterministic in ``cfg.seed`` unless an explicit stream is passed."""
    rng = rng if rng is not None else RngStream(cfg.seed)
    sources, labels, _ = generate_sources(cfg, rng.fork(_SOURCES_STREAM))
    mixing = sample_mixing_mlp(cfg, rng.fork(_MIXING_STREAM))
    return LabeledDataset(X=apply_mixing(mixing, cfg, sources), U=labels, S=sources, mixing=mixing)


def split_dataset(ds: LabeledDataset, fraction: float, rng: RngStream) -> Tuple[LabeledDataset, LabeledDataset]:
    """Stratified split; ``fraction`` of each segment (rounded) goes to the first part."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    first, second = [], []
    for label in np.unique(ds.U):
        rows = np.flatnonzero(ds.U == label)
        if rows.size < 2:
            raise ShapeError(f"segment {label} has {rows.size} point(s); need at least 2 to split")
        rows = rows[rng.permutation(rows.size)]
        cut = int(np.clip(round(fraction * rows.size), 1, rows.size - 1))
        first.append(rows[:cut])
        second.append(rows[cut:])
    first_rows = np.sort(np.concatenate(first))
    second_rows = np.sort(np.concatenate(second))
    return ds.subset(first_rows), ds.subset(second_rows)


def save_dataset(ds: LabeledDataset, directory, cfg: Optional[TclConfig] = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_matrix_csv(ds.X, directory / "X.csv")
    if ds.S is not None:
        save_matrix_csv(ds.S, directory / "S.csv")
    with open(directory / "U.csv", "w", encoding="utf-8") as f:
        f.writelines(f"{int(u)}\n" for u in ds.U)
    if cfg is not None:
        with open(directory / "config.json", "w", encoding="utf-8") as f:
            json.dump(cfg.model_dump(mode="json"), f, indent=2)
        if ds.mixing is not None:
            save_mlp(ds.mixing, mixing_spec(cfg), directory / "mixing")
    return directory


def load_dataset(directory) -> LabeledDataset:
    directory = Path(directory)
    X = load_matrix_csv(directory / "X.csv")
    with open(directory / "U.csv", "r", encoding="utf-8") as f:
        U = np.array([int(line) for line in f if line.strip()], dtype=np.int64)
    S = load_matrix_csv(directory / "S.csv") if (directory / "S.csv").exists() else None
    mixing = load_mlp(directory / "mixing")[0] if (directory / "mixing").is_dir() else None
    return LabeledDataset(X=X, U=U, S=S, mixing=mixing)
