"""Command-line entry point: ``python -m src <command> ...``.

Results go to stdout as JSON. Failures go to stderr as a JSON error document
and a non-zero exit code.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from config.defaults import FIT_FRACTION
from .artifact_store import ArtifactStore
from .datagen import generate_tcl_dataset, save_dataset
from .errors import ExperimentError, IdentVaeError
from .experiment import fit_eval_rows, load_experiment_dataset, run_experiment, train_seeds, write_report
from .metrics import strong_mcc, strong_mcc_split, weak_mcc, wilcoxon_signed_rank
from .models import load_model
from .ndmath import load_matrix_csv, save_matrix_csv
from .settings import load_experiment_config, load_tcl_config, log_level
from .training import extract_representations

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: Optional[str] = None) -> None:
    logging.basicConfig(level=level or log_level(), format=LOG_FORMAT, stream=sys.stderr, force=True)


def _emit(payload) -> None:
    json.dump(payload, sys.stdout, indent=2)
    sys.stdout.write("\n")


def _emit_error(e: Exception) -> None:
    error = {"error": type(e).__name__, "message": str(e)}
    if isinstance(e, IdentVaeError):
        error.update(e.details())
    json.dump(error, sys.stderr)
    sys.stderr.write("\n")


def _read_labels(path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as f:
        return np.array([int(line) for line in f if line.strip()], dtype=np.int64)


def _read_vector(path) -> np.ndarray:
    return load_matrix_csv(path).ravel()


def cmd_gen_data(args) -> int:
    cfg = load_tcl_config(args.config)
    dataset = generate_tcl_dataset(cfg)
    out = save_dataset(dataset, args.out_dir, cfg)
    logger.info("wrote %d x %d observations to %s", dataset.n, dataset.d_x, out)
    _emit({"out_dir": str(out), "n": dataset.n, "d_x": dataset.d_x, "n_segments": dataset.n_segments})
    return 0


def cmd_train(args) -> int:
    cfg = load_experiment_config(args.config)
    if args.seed is not None:
        cfg = cfg.model_copy(update={"seeds": [args.seed]})
    store = ArtifactStore(cfg.output_dir)
    trained, failures = train_seeds(cfg, load_experiment_dataset(cfg), store)
    store.save_failures(failures)
    _emit(
        {
            "runs": [run.artifact.to_dict() for run in trained],
            "failures": [{"seed": f.seed, "error": f.error, "message": f.message} for f in failures],
        }
    )
    if not trained:
        _emit_error(ExperimentError(f"all {len(failures)} seed(s) failed; see failures.json"))
        return 1
    return 0


def cmd_extract(args) -> int:
    model = load_model(args.model_dir)
    X = load_matrix_csv(args.X)
    u = _read_labels(args.u) if args.u else None
    representation = extract_representations(model, X, u)
    save_matrix_csv(representation, args.out)
    _emit({"out": str(args.out), "rows": representation.shape[0], "d_z": representation.shape[1]})
    return 0


def cmd_mcc(args) -> int:
    ra, rb = load_matrix_csv(args.rep_a), load_matrix_csv(args.rep_b)
    absolute = not args.signed
    if args.weak or args.in_out_split:
        fit_rows, eval_rows = fit_eval_rows(ra.shape[0], args.fit_fraction)
    if args.weak:
        reports = weak_mcc(ra, rb, fit_rows, eval_rows, args.d_cca, absolute=absolute)
    elif args.in_out_split:
        reports = strong_mcc_split(ra, rb, fit_rows, eval_rows, absolute)
    else:
        reports = (strong_mcc(ra, rb, absolute),)
    _emit([report.to_dict() for report in reports])
    return 0


def cmd_wilcoxon(args) -> int:
    result = wilcoxon_signed_rank(_read_vector(args.a), _read_vector(args.b), method=args.method)
    _emit(result.to_dict())
    return 0


def cmd_experiment(args) -> int:
    cfg = load_experiment_config(args.config)
    result = run_experiment(cfg)
    _emit(result.summary)
    return 0


def cmd_report(args) -> int:
    if not Path(args.experiment_dir).is_dir():
        raise FileNotFoundError(f"no experiment directory at {args.experiment_dir}")
    _emit(write_report(args.experiment_dir))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="idvae", description="Identifiability of VAE, iVAE and VaDE representations")
    parser.add_argument("--log-level", default=None, help="overrides IDVAE_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic TCL dataset")
    p.add_argument("config")
    p.add_argument("out_dir")
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser("train", help="train every seed of an experiment config")
    p.add_argument("config")
    p.add_argument("--seed", type=int, default=None, help="train only this seed")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("extract", help="posterior means of a saved model")
    p.add_argument("model_dir")
    p.add_argument("X")
    p.add_argument("out")
    p.add_argument("--u", default=None, help="u labels, one integer per line (iVAE)")
    p.set_defaults(handler=cmd_extract)

    p = sub.add_parser("mcc", help="strong or weak MCC between two representations")
    p.add_argument("rep_a")
    p.add_argument("rep_b")
    p.add_argument("--weak", action="store_true", help="CCA alignment instead of a permutation")
    p.add_argument("--d-cca", type=int, default=None)
    p.add_argument("--in-out-split", action="store_true", help="fit on one half, score both")
    p.add_argument("--fit-fraction", type=float, default=FIT_FRACTION)
    p.add_argument("--signed", action="store_true", help="match on signed correlations")
    p.set_defaults(handler=cmd_mcc)

    p = sub.add_parser("wilcoxon", help="two-sided signed-rank test on paired final MCCs")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--method", choices=("auto", "exact", "approx"), default="auto")
    p.set_defaults(handler=cmd_wilcoxon)

    p = sub.add_parser("experiment", help="train all seeds and compare all pairs")
    p.add_argument("config")
    p.set_defaults(handler=cmd_experiment)

    p = sub.add_parser("report", help="summary JSON and cumulative-curve CSV of an experiment")
    p.add_argument("experiment_dir")
    p.set_defaults(handler=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.handler(args)
    except (IdentVaeError, OSError, ValueError) as e:
        _emit_error(e)
        return 1
