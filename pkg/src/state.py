"""Shared enums and record types for runs, pair reports and summaries."""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, TypedDict


class ModelKind(Enum):
    """Which prior structure a generative model carries."""
    VAE = "VAE"
    IVAE = "iVAE"
    VADE = "VaDE"


class UTask(Enum):
    """Where an iVAE's conditioning variable u comes from."""
    SEGMENTS = "segments"  # ground-truth segment labels
    RADEMACHER = "rademacher"  # sign pattern of a fixed random projection


class TraceEntry(TypedDict):
    """One evaluation window of a training run."""
    step: int
    train_elbo: float
    eval_elbo: float
    lr: float
    condition_number: Optional[float]  # None when the L-matrix cannot be built
    objective: float  # eval ELBO, or its condition-number-penalised version


@dataclass
class RunArtifact:
    seed: int
    model_path: str
    representation_path: str
    final_train_elbo: float
    final_eval_elbo: float
    elbo_trace: List[TraceEntry]
    wall_clock: float
    mcc_to_sources: Optional[float] = None
    baseline_mcc_to_sources: Optional[float] = None

    def to_dict(self) -> Dict:
        return {
            "seed": self.seed,
            "model_path": self.model_path,
            "representation_path": self.representation_path,
            "final_train_elbo": self.final_train_elbo,
            "final_eval_elbo": self.final_eval_elbo,
            "elbo_trace": [dict(entry) for entry in self.elbo_trace],
            "wall_clock": self.wall_clock,
            "mcc_to_sources": self.mcc_to_sources,
            "baseline_mcc_to_sources": self.baseline_mcc_to_sources,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "RunArtifact":
        return cls(
            seed=data["seed"],
            model_path=data["model_path"],
            representation_path=data["representation_path"],
            final_train_elbo=data["final_train_elbo"],
            final_eval_elbo=data["final_eval_elbo"],
            elbo_trace=[TraceEntry(**entry) for entry in data.get("elbo_trace", [])],
            wall_clock=data.get("wall_clock", 0.0),
            mcc_to_sources=data.get("mcc_to_sources"),
            baseline_mcc_to_sources=data.get("baseline_mcc_to_sources"),
        )


@dataclass
class RunFailure:
    seed: int
    error: str
    message: str


@dataclass
class ExperimentResult:
    runs: List[RunArtifact]
    pairs: list  # PairReport, kept untyped here to avoid importing metrics
    summary: Dict
    failures: List[RunFailure] = field(default_factory=list)
