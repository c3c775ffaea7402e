"""On-disk layout of an experiment directory."""

import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from .errors import CorruptArtifactError
from .models import GenerativeModel, load_model, save_model
from .ndmath import Matrix, load_matrix_csv, save_matrix_csv
from .state import RunArtifact, RunFailure

logger = logging.getLogger(__name__)

PAIR_REPORT_FIELDS = ("seed_a", "seed_b", "strong_in", "strong_out", "weak_in", "weak_out")


class ArtifactStore:
    """Reads and writes everything an experiment produces under one root.

    Layout::

        config.json
        runs/seed_<s>/model/            model directory
        runs/seed_<s>/representation.csv
        runs/seed_<s>/run.json
        runs/seed_<s>/timing.json
        pairs/pair_<a>_<b>.json
        failures.json
        summary.json                    written atomically
        curves.csv
    """

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def run_dir(self, seed: int) -> Path:
        return self.root / "runs" / f"seed_{seed}"

    def save_config(self, config: Dict[str, Any]) -> Path:
        return self._write_json(self.root / "config.json", config)

    def load_config(self) -> Dict[str, Any]:
        path = self.root / "config.json"
        return self._read_json(path) if path.exists() else {}

    def save_model(self, seed: int, model: GenerativeModel) -> Path:
        return save_model(model, self.run_dir(seed) / "model")

    def load_model(self, seed: int) -> GenerativeModel:
        return load_model(self.run_dir(seed) / "model")

    def save_representation(self, seed: int, representation: Matrix) -> Path:
        return save_matrix_csv(representation, self.run_dir(seed) / "representation.csv")

    def load_representation(self, seed: int) -> Matrix:
        return load_matrix_csv(self.run_dir(seed) / "representation.csv")

    def save_run(self, artifact: RunArtifact) -> Path:
        """
        Write a run's record next to its model and representation.

        Args:
            artifact: Finished run

        Returns:
            Path of the written ``run.json``

        Wall-clock time goes to ``timing.json`` so ``run.json`` stays
        byte-identical across reruns of the same seed.
        """
        record = artifact.to_dict()
        self._write_json(self.run_dir(artifact.seed) / "timing.json", {"wall_clock": record.pop("wall_clock")})
        return self._write_json(self.run_dir(artifact.seed) / "run.json", record)

    def load_run(self, seed: int) -> Optional[RunArtifact]:
        run_dir = self.run_dir(seed)
        if not (run_dir / "run.json").exists():
            return None
        return self._load_run_dir(run_dir)

    def list_runs(self) -> List[RunArtifact]:
        """All recorded runs, ordered by seed."""
        runs_root = self.root / "runs"
        if not runs_root.exists():
            return []
        runs = [self._load_run_dir(run_file.parent) for run_file in runs_root.glob("seed_*/run.json")]
        runs.sort(key=lambda run: run.seed)
        return runs

    def _load_run_dir(self, run_dir: Path) -> RunArtifact:
        record = self._read_json(run_dir / "run.json")
        timing = run_dir / "timing.json"
        if timing.exists():
            record.update(self._read_json(timing))
        return RunArtifact.from_dict(record)

    def save_pair_report(self, seed_a: int, seed_b: int, report: Dict[str, Any]) -> Path:
        return self._write_json(self.root / "pairs" / f"pair_{seed_a}_{seed_b}.json", report)

    def load_pair_reports(self) -> List[Dict[str, Any]]:
        pairs_root = self.root / "pairs"
        if not pairs_root.exists():
            return []
        reports = []
        for path in pairs_root.glob("pair_*.json"):
            report = self._read_json(path)
            missing = [key for key in PAIR_REPORT_FIELDS if not isinstance(report, dict) or key not in report]
            if missing:
                raise CorruptArtifactError(f"{path.name} lacks {missing}", path=str(path))
            reports.append(report)
        reports.sort(key=lambda r: (r["seed_a"], r["seed_b"]))
        return reports

    def save_failures(self, failures: Sequence[RunFailure]) -> Path:
        records = [{"seed": f.seed, "error": f.error, "message": f.message} for f in failures]
        return self._write_json(self.root / "failures.json", records)

    def load_failures(self) -> List[Dict[str, Any]]:
        path = self.root / "failures.json"
        return self._read_json(path) if path.exists() else []

    def save_summary(self, summary: Dict[str, Any]) -> Path:
        """
        Replace ``summary.json`` in one step so readers never see a partial file.

        Args:
            summary: JSON-serializable aggregate

        Returns:
            Path of the summary
        """
        target = self.root / "summary.json"
        fd, tmp_path = tempfile.mkstemp(dir=self.root, prefix=".summary-", suffix=".json")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as f:
                json.dump(summary, f, indent=2)
            os.replace(tmp_path, target)
        except OSError:
            if os.path.exists(tmp_path):
                os.remove(tmp_path)
            raise
        return target

    def save_curves_csv(self, rows: Sequence[Dict[str, Any]]) -> Path:
        """Plot-ready cumulative curves: one ``metric,split,dim,mean,std`` row per point."""
        path = self.root / "curves.csv"
        with open(path, "w", encoding="utf-8") as f:
            f.write("metric,split,dim,mean,std\n")
            for row in rows:
                f.write(f"{row['metric']},{row['split']},{row['dim']},{row['mean']:.17g},{row['std']:.17g}\n")
        return path

    @staticmethod
    def _write_json(path: Path, payload: Any) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2)
        return path

    @staticmethod
    def _read_json(path: Path) -> Any:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
