"""Identifiability metrics between two sets of representations.

Strong MCC matches latent dimensions with an optimal permutation; weak MCC
first aligns both sides with CCA. Either alignment can be fitted on one half of
the data and scored on the other, which is what the in-sample/out-of-sample
reports compare. Paired final MCCs across model families are compared with a
two-sided Wilcoxon signed-rank test.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import norm, rankdata

from config.defaults import CCA_MAX_DIMS, CCA_RIDGE, WILCOXON_EXACT_MAX_N, WILCOXON_TIE_DECIMALS, ZERO_VARIANCE_GUARD
from .errors import ConfigError, DegenerateInputError, ShapeError
from .ndmath import Matrix, as_matrix, require_finite, svd

logger = logging.getLogger(__name__)

EXACT = "exact"
NORMAL_APPROX = "normal-approx"

# int64 counts of sign patterns stay exact up to this many differences
_EXACT_HARD_LIMIT = 62


@dataclass
class CorrelationMatrix:
    values: Matrix
    absolute: bool


@dataclass
class Assignment:
    """Matched (row, column) pairs, sorted by row."""

    rows: np.ndarray
    cols: np.ndarray
    total_score: float

    @property
    def mapping(self) -> np.ndarray:
        return self.cols


@dataclass
class MccReport:
    matched_corrs: np.ndarray
    cumulative_means: np.ndarray
    final_mcc: float
    in_sample: bool
    metadata: Dict = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {
            "matched_corrs": self.matched_corrs.tolist(),
            "cumulative_means": self.cumulative_means.tolist(),
            "final_mcc": self.final_mcc,
            "in_sample": self.in_sample,
            "metadata": dict(self.metadata),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "MccReport":
        return cls(
            matched_corrs=np.asarray(data["matched_corrs"], dtype=np.float64),
            cumulative_means=np.asarray(data["cumulative_means"], dtype=np.float64),
            final_mcc=float(data["final_mcc"]),
            in_sample=bool(data["in_sample"]),
            metadata=dict(data.get("metadata", {})),
        )


@dataclass
class CcaModel:
    d_cca: int
    mean_a: np.ndarray
    mean_b: np.ndarray
    proj_a: Matrix
    proj_b: Matrix
    canonical_correlations: np.ndarray

    def transform_a(self, ra: Matrix) -> Matrix:
        return (ra - self.mean_a) @ self.proj_a

    def transform_b(self, rb: Matrix) -> Matrix:
        return (rb - self.mean_b) @ self.proj_b


@dataclass
class WilcoxonResult:
    statistic: float
    p_value: float
    n_effective: int
    method: str
    w_plus: float
    w_minus: float

    def to_dict(self) -> Dict:
        return {
            "statistic": self.statistic,
            "p_value": self.p_value,
            "n_effective": self.n_effective,
            "method": self.method,
            "w_plus": self.w_plus,
            "w_minus": self.w_minus,
        }


def pearson_corr_matrix(a: Matrix, b: Matrix, absolute: bool = True) -> CorrelationMatrix:
    """Column-by-column Pearson correlations; zero-variance columns correlate 0."""
    a, b = as_matrix(a, "a"), as_matrix(b, "b")
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"row counts differ: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[0] < 3:
        raise ShapeError(f"need at least 3 rows for a correlation, got {a.shape[0]}")
    n = a.shape[0]
    ac = a - a.mean(axis=0)
    bc = b - b.mean(axis=0)
    var_a = (ac**2).sum(axis=0) / n
    var_b = (bc**2).sum(axis=0) / n
    live_a = var_a >= ZERO_VARIANCE_GUARD
    live_b = var_b >= ZERO_VARIANCE_GUARD
    sd_a = np.sqrt(np.where(live_a, var_a, 1.0))
    sd_b = np.sqrt(np.where(live_b, var_b, 1.0))
    corr = (ac.T @ bc / n) / np.outer(sd_a, sd_b)
    corr[~live_a, :] = 0.0
    corr[:, ~live_b] = 0.0
    corr = np.clip(corr, -1.0, 1.0)
    return CorrelationMatrix(values=np.abs(corr) if absolute else corr, absolute=absolute)


def hungarian(cost: Matrix) -> Assignment:
    """Minimum-cost injective assignment of rows to columns."""
    cost = as_matrix(cost, "cost")
    require_finite(cost, "cost")
    n_rows, n_cols = cost.shape
    size = max(n_rows, n_cols)
    padded = np.full((size, size), cost.max() if cost.size else 0.0)
    padded[:n_rows, :n_cols] = cost
    row_ind, col_ind = linear_sum_assignment(padded)
    real = (row_ind < n_rows) & (col_ind < n_cols)
    rows, cols = row_ind[real], col_ind[real]
    return Assignment(rows=rows, cols=cols, total_score=float(cost[rows, cols].sum()))


def _mcc_report(corrs: np.ndarray, in_sample: bool, metadata: Optional[Dict] = None) -> MccReport:
    matched = np.sort(np.asarray(corrs, dtype=np.float64))[::-1]
    cumulative = np.cumsum(matched) / np.arange(1, matched.size + 1)
    return MccReport(
        matched_corrs=matched,
        cumulative_means=cumulative,
        final_mcc=float(cumulative[-1]),
        in_sample=in_sample,
        metadata=dict(metadata or {}),
    )


def _check_pair(ra: Matrix, rb: Matrix) -> Tuple[Matrix, Matrix]:
    ra, rb = as_matrix(ra, "ra"), as_matrix(rb, "rb")
    if ra.shape != rb.shape:
        raise ShapeError(f"representations differ in shape: {ra.shape} vs {rb.shape}")
    return ra, rb


def _match(ra: Matrix, rb: Matrix, absolute: bool) -> Tuple[Assignment, Matrix]:
    corr = pearson_corr_matrix(ra, rb, absolute).values
    return hungarian(1.0 - corr), corr


def strong_mcc(ra: Matrix, rb: Matrix, absolute: bool = True) -> MccReport:
    """Permutation-aligned MCC, fitted and scored on the same rows."""
    ra, rb = _check_pair(ra, rb)
    assignment, corr = _match(ra, rb, absolute)
    return _mcc_report(corr[assignment.rows, assignment.cols], in_sample=True, metadata={"kind": "strong"})


def strong_mcc_split(
    ra: Matrix, rb: Matrix, fit_rows: np.ndarray, eval_rows: np.ndarray, absolute: bool = True
) -> Tuple[MccReport, MccReport]:
    """Permutation fitted on ``fit_rows``, then scored on both subsets."""
    ra, rb = _check_pair(ra, rb)
    _warn_overlap(fit_rows, eval_rows)
    assignment, fit_corr = _match(ra[fit_rows], rb[fit_rows], absolute)
    eval_corr = pearson_corr_matrix(ra[eval_rows], rb[eval_rows], absolute).values
    meta = {"kind": "strong"}
    return (
        _mcc_report(fit_corr[assignment.rows, assignment.cols], in_sample=True, metadata=meta),
        _mcc_report(eval_corr[assignment.rows, assignment.cols], in_sample=False, metadata=meta),
    )


def _inverse_sqrt(cov: Matrix) -> Matrix:
    eigvals, eigvecs = np.linalg.eigh(cov)
    eigvals = np.maximum(eigvals, ZERO_VARIANCE_GUARD)
    return (eigvecs / np.sqrt(eigvals)) @ eigvecs.T


def default_d_cca(d_a: int, d_b: int) -> int:
    return min(CCA_MAX_DIMS, d_a, d_b)


def fit_cca(ra: Matrix, rb: Matrix, d_cca: Optional[int] = None, ridge: float = CCA_RIDGE) -> CcaModel:
    """CCA by whitening each side and taking the SVD of the whitened cross-covariance."""
    ra, rb = as_matrix(ra, "ra"), as_matrix(rb, "rb")
    if ra.shape[0] != rb.shape[0]:
        raise ShapeError(f"row counts differ: {ra.shape[0]} vs {rb.shape[0]}")
    d_cca = default_d_cca(ra.shape[1], rb.shape[1]) if d_cca is None else int(d_cca)
    if not 1 <= d_cca <= min(ra.shape[1], rb.shape[1]):
        raise ConfigError(f"d_cca={d_cca} must be in [1, {min(ra.shape[1], rb.shape[1])}]")
    if ra.shape[0] < d_cca + 2:
        raise ShapeError(f"CCA with d_cca={d_cca} needs at least {d_cca + 2} rows, got {ra.shape[0]}")
    if ridge < 0:
        raise ConfigError(f"ridge must be non-negative, got {ridge}")

    n = ra.shape[0]
    mean_a, mean_b = ra.mean(axis=0), rb.mean(axis=0)
    ac, bc = ra - mean_a, rb - mean_b
    cov_aa = ac.T @ ac / (n - 1) + ridge * np.eye(ra.shape[1])
    cov_bb = bc.T @ bc / (n - 1) + ridge * np.eye(rb.shape[1])
    cov_ab = ac.T @ bc / (n - 1)
    white_a, white_b = _inverse_sqrt(cov_aa), _inverse_sqrt(cov_bb)
    u, s, v = svd(white_a @ cov_ab @ white_b)
    return CcaModel(
        d_cca=d_cca,
        mean_a=mean_a,
        mean_b=mean_b,
        proj_a=white_a @ u[:, :d_cca],
        proj_b=white_b @ v[:, :d_cca],
        canonical_correlations=np.clip(s[:d_cca], 0.0, 1.0),
    )


def _paired_corrs(pa: Matrix, pb: Matrix, absolute: bool) -> np.ndarray:
    return np.diag(pearson_corr_matrix(pa, pb, absolute).values).copy()


def _warn_overlap(fit_rows: np.ndarray, eval_rows: np.ndarray) -> None:
    if np.intersect1d(fit_rows, eval_rows).size:
        logger.warning("fit and eval rows overlap; out-of-sample scores are not held out")


def weak_mcc(
    ra: Matrix,
    rb: Matrix,
    fit_rows: np.ndarray,
    eval_rows: np.ndarray,
    d_cca: Optional[int] = None,
    ridge: float = CCA_RIDGE,
    absolute: bool = True,
) -> Tuple[MccReport, MccReport]:
    """CCA-aligned MCC. Canonical variates are already paired, so no matching step."""
    ra, rb = as_matrix(ra, "ra"), as_matrix(rb, "rb")
    if ra.shape[0] != rb.shape[0]:
        raise ShapeError(f"row counts differ: {ra.shape[0]} vs {rb.shape[0]}")
    _warn_overlap(fit_rows, eval_rows)
    cca = fit_cca(ra[fit_rows], rb[fit_rows], d_cca, ridge)
    meta = {"kind": "weak", "d_cca": cca.d_cca}
    reports = []
    for rows, in_sample in ((fit_rows, True), (eval_rows, False)):
        corrs = _paired_corrs(cca.transform_a(ra[rows]), cca.transform_b(rb[rows]), absolute)
        reports.append(_mcc_report(corrs, in_sample=in_sample, metadata=meta))
    return reports[0], reports[1]


def _signed_rank_counts(weights: np.ndarray) -> np.ndarray:
    """counts[t] = number of sign patterns whose positive-rank sum equals t."""
    counts = np.zeros(int(weights.sum()) + 1, dtype=np.int64)
    counts[0] = 1
    for w in weights:
        shifted = np.zeros_like(counts)
        shifted[w:] = counts[: counts.size - w]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(a: Sequence[float], b: Sequence[float], method: str = "auto") -> WilcoxonResult:
    """Two-sided paired signed-rank test of a against b.

    ``auto`` takes the exact null distribution for up to 25 untied non-zero
    differences and the tie- and continuity-corrected normal approximation
    otherwise.
    """
    if method not in ("auto", EXACT, "approx"):
        raise ConfigError(f"unknown method {method!r}; use auto, exact or approx")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"paired vectors must be 1-D and equal length, got {a.shape} and {b.shape}")
    if a.size < 5:
        raise ShapeError(f"need at least 5 pairs, got {a.size}")
    require_finite(a, "a")
    require_finite(b, "b")

    diffs = a - b
    magnitudes = np.round(np.abs(diffs), WILCOXON_TIE_DECIMALS)
    keep = magnitudes > 0
    diffs, magnitudes = diffs[keep], magnitudes[keep]
    n = int(diffs.size)
    if n == 0:
        raise DegenerateInputError("all paired differences are zero")

    ranks = rankdata(magnitudes)
    w_plus = float(ranks[diffs > 0].sum())
    w_minus = float(ranks[diffs < 0].sum())
    statistic = min(w_plus, w_minus)
    _, tie_sizes = np.unique(magnitudes, return_counts=True)
    has_ties = bool((tie_sizes > 1).any())

    use_exact = method == EXACT or (method == "auto" and n <= WILCOXON_EXACT_MAX_N and not has_ties)
    if use_exact:
        if n > _EXACT_HARD_LIMIT:
            raise ConfigError(f"exact test supports at most {_EXACT_HARD_LIMIT} differences, got {n}")
        # mid-ranks are multiples of 1/2, so doubled ranks are integer weights
        counts = _signed_rank_counts(np.rint(2.0 * ranks).astype(np.int64))
        at_most = int(counts[: int(np.rint(2.0 * statistic)) + 1].sum())
        p_value = min(1.0, 2.0 * at_most / 2.0**n)
        return WilcoxonResult(statistic, p_value, n, EXACT, w_plus, w_minus)

    mean = n * (n + 1) / 4.0
    variance = n * (n + 1) * (2 * n + 1) / 24.0 - float((tie_sizes**3 - tie_sizes).sum()) / 48.0
    if variance <= 0:
        raise DegenerateInputError("signed-rank statistic has zero variance")
    z = max(abs(statistic - mean) - 0.5, 0.0) / np.sqrt(variance)
    p_value = min(1.0, float(2.0 * norm.sf(z)))
    return WilcoxonResult(statistic, p_value, n, NORMAL_APPROX, w_plus, w_minus)


def elbo_mcc_correlation(elbos: Sequence[float], mccs: Sequence[float]) -> float:
    elbos = np.asarray(elbos, dtype=np.float64)
    mccs = np.asarray(mccs, dtype=np.float64)
    if elbos.ndim != 1 or elbos.shape != mccs.shape:
        raise ShapeError(f"need paired 1-D vectors, got {elbos.shape} and {mccs.shape}")
    if elbos.size < 3:
        raise ShapeError(f"need at least 3 restarts, got {elbos.size}")
    de = elbos - elbos.mean()
    dm = mccs - mccs.mean()
    denom = np.sqrt((de**2).sum() * (dm**2).sum())
    if denom < ZERO_VARIANCE_GUARD:
        raise DegenerateInputError("ELBOs or MCCs have zero variance")
    return float((de * dm).sum() / denom)
