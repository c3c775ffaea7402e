import pytest

from src.datagen import generate_tcl_dataset
from src.ndmath import RngStream
from src.settings import ExperimentConfig, TclConfig, TrainingConfig
from src.state import ModelKind


@pytest.fixture
def rng():
    return RngStream(1234)


@pytest.fixture
def tiny_tcl_config():
    return TclConfig(d=2, n_segments=5, samples_per_segment=20, n_mixing_layers=2, seed=3)


@pytest.fixture
def tiny_dataset(tiny_tcl_config):
    return generate_tcl_dataset(tiny_tcl_config)


@pytest.fixture
def tiny_experiment_config(tiny_tcl_config, tmp_path):
    """A two-seed VAE experiment that trains in well under a second per seed."""
    return ExperimentConfig(
        model_kind=ModelKind.VAE,
        d_z=2,
        encoder_hidden=(8, 6),
        decoder_hidden=(6, 8),
        dataset=tiny_tcl_config,
        seeds=[0, 1],
        training=TrainingConfig(steps=20, batch_size=16, eval_interval=10),
        output_dir=str(tmp_path / "experiment"),
    )
