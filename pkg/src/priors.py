"""Latent priors and the checks that make them identifiable.

A conditional Gaussian prior is an exponential family with sufficient
statistics (z, z^2), so each u value has natural parameters
(mu/var, -1/(2 var)) per latent dimension. The L-matrix stacks differences of
those vectors across 2*d_z + 1 u values; it must be invertible.
"""

import logging
from dataclasses import dataclass, replace
from typing import Dict, Sequence, Tuple, Union

import numpy as np

from config.defaults import IDENTIFIABILITY_RETRIES
from .errors import IdentifiabilityError, ShapeError
from .ndmath import Matrix, RngStream, condition_number

logger = logging.getLogger(__name__)

SUFFICIENT_STATS = 2  # k: z and z^2


@dataclass
class StandardNormalPrior:
    d_z: int

    def named_arrays(self) -> Dict[str, np.ndarray]:
        return {}


@dataclass
class ConditionalGaussianPrior:
    """Lookup table of diagonal Gaussians, one row per u value."""

    means: Matrix
    log_vars: Matrix

    def __post_init__(self):
        if self.means.shape != self.log_vars.shape or self.means.ndim != 2:
            raise ShapeError(f"means {self.means.shape} and log_vars {self.log_vars.shape} must match")
        if self.means.shape[0] < 1:
            raise ShapeError("a prior needs at least one component")

    @property
    def K(self) -> int:
        return self.means.shape[0]

    @property
    def d_z(self) -> int:
        return self.means.shape[1]

    def named_arrays(self) -> Dict[str, np.ndarray]:
        return {"prior.means": self.means, "prior.log_vars": self.log_vars}

    def copy(self) -> "ConditionalGaussianPrior":
        return replace(self, means=self.means.copy(), log_vars=self.log_vars.copy())


@dataclass
class GaussianMixturePrior:
    """Mixture of diagonal Gaussians with softmax-parameterised weights."""

    logits: np.ndarray
    means: Matrix
    log_vars: Matrix

    def __post_init__(self):
        if self.means.shape != self.log_vars.shape or self.means.ndim != 2:
            raise ShapeError(f"means {self.means.shape} and log_vars {self.log_vars.shape} must match")
        if self.logits.shape != (self.means.shape[0],):
            raise ShapeError(f"expected {self.means.shape[0]} logits, got {self.logits.shape}")

    @property
    def K(self) -> int:
        return self.means.shape[0]

    @property
    def d_z(self) -> int:
        return self.means.shape[1]

    @property
    def weights(self) -> np.ndarray:
        shifted = np.exp(self.logits - self.logits.max())
        return shifted / shifted.sum()

    def named_arrays(self) -> Dict[str, np.ndarray]:
        return {"prior.logits": self.logits, "prior.means": self.means, "prior.log_vars": self.log_vars}

    def copy(self) -> "GaussianMixturePrior":
        return replace(self, logits=self.logits.copy(), means=self.means.copy(), log_vars=self.log_vars.copy())


Prior = Union[StandardNormalPrior, ConditionalGaussianPrior, GaussianMixturePrior]
TablePrior = Union[ConditionalGaussianPrior, GaussianMixturePrior]


def _xavier_table(rng: RngStream, K: int, d_z: int) -> Matrix:
    bound = np.sqrt(6.0 / (K + d_z))
    return rng.uniform(-bound, bound, (K, d_z))


def init_conditional_prior(K: int, d_z: int, rng: RngStream) -> ConditionalGaussianPrior:
    return ConditionalGaussianPrior(means=_xavier_table(rng, K, d_z), log_vars=_xavier_table(rng, K, d_z))


def init_mixture_prior(K: int, d_z: int, rng: RngStream) -> GaussianMixturePrior:
    """Xavier-uniform means and log-variances, uniform mixing weights."""
    return GaussianMixturePrior(
        logits=np.zeros(K),
        means=_xavier_table(rng, K, d_z),
        log_vars=_xavier_table(rng, K, d_z),
    )


def natural_params(prior: TablePrior, u: int) -> np.ndarray:
    """lambda(u), interleaved per dimension as (mu_i / var_i, -1 / (2 var_i))."""
    if not 0 <= u < prior.K:
        raise ShapeError(f"u={u} outside [0, {prior.K})")
    var = np.exp(prior.log_vars[u])
    lam = np.empty(SUFFICIENT_STATS * prior.d_z)
    lam[0::2] = prior.means[u] / var
    lam[1::2] = -0.5 / var
    return lam


def moments_from_natural(lam: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Inverse of ``natural_params``: returns (means, variances)."""
    var = -0.5 / lam[1::2]
    return lam[0::2] * var, var


@dataclass
class IdentifiabilityCheck:
    L: Matrix
    condition_number: float
    required_u_count: int
    satisfied: bool
    u_indices: Tuple[int, ...]


def build_L_matrix(prior: TablePrior, u_indices: Sequence[int]) -> IdentifiabilityCheck:
    required = SUFFICIENT_STATS * prior.d_z + 1
    u_indices = tuple(int(u) for u in u_indices)
    if len(u_indices) != required:
        raise ShapeError(f"need exactly {required} u values, got {len(u_indices)}")
    if len(set(u_indices)) != required:
        raise ShapeError(f"u values must be distinct, got {u_indices}")
    base = natural_params(prior, u_indices[0])
    L = np.column_stack([natural_params(prior, u) - base for u in u_indices[1:]])
    cn = condition_number(L)
    return IdentifiabilityCheck(
        L=L,
        condition_number=cn,
        required_u_count=required,
        satisfied=bool(np.isfinite(cn)) and prior.K >= required,
        u_indices=u_indices,
    )


def default_u_indices(prior: TablePrior) -> Tuple[int, ...]:
    """The first 2*d_z + 1 components, or ``()`` when the prior has too few."""
    required = SUFFICIENT_STATS * prior.d_z + 1
    return tuple(range(required)) if prior.K >= required else ()


def enforce_identifiability(
    prior: TablePrior,
    check: IdentifiabilityCheck,
    noise_scale: float,
    rng: RngStream,
    retries: int = IDENTIFIABILITY_RETRIES,
) -> TablePrior:
    """Jitter the prior's parameters until the L-matrix is invertible again."""
    if check.satisfied:
        return prior
    candidate = prior
    for attempt in range(1, retries + 1):
        candidate = candidate.copy()
        candidate.means += noise_scale * rng.normal(candidate.means.shape)
        candidate.log_vars += noise_scale * rng.normal(candidate.log_vars.shape)
        if build_L_matrix(candidate, check.u_indices).satisfied:
            logger.info("L-matrix repaired after %d noise draw(s)", attempt)
            return candidate
    raise IdentifiabilityError(
        f"L-matrix still singular after {retries} noise draws of scale {noise_scale}", retries=retries
    )


def penalized_objective(elbo: float, check: IdentifiabilityCheck, alpha: float) -> float:
    if alpha < 0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    if alpha == 0:
        return elbo
    if not np.isfinite(check.condition_number):
        return float("-inf")
    return elbo - alpha * check.condition_number


@dataclass
class RademacherHasher:
    """Fixed +-1 projection whose sign pattern indexes 2^N components."""

    A: Matrix

    @property
    def N(self) -> int:
        return self.A.shape[0]

    @property
    def d_x(self) -> int:
        return self.A.shape[1]

    @property
    def K(self) -> int:
        return 2**self.N


def build_rademacher_hasher(N: int, d_x: int, rng: RngStream) -> RademacherHasher:
    if not 1 <= N <= 20:
        raise ValueError(f"N must be in [1, 20], got {N}")
    return RademacherHasher(A=2.0 * rng.integers(0, 2, (N, d_x)) - 1.0)


def hash_u(hasher: RademacherHasher, x: Matrix) -> np.ndarray:
    if x.ndim != 2 or x.shape[1] != hasher.d_x:
        raise ShapeError(f"inputs of shape {x.shape} do not match hasher width {hasher.d_x}")
    bits = (x @ hasher.A.T >= 0).astype(np.int64)  # sign(0) counts as +1
    return bits @ (1 << np.arange(hasher.N, dtype=np.int64))
