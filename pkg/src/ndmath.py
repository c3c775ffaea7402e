"""Dense matrix helpers, decompositions and seeded sampling.

A Matrix is a 2-D float64 ``numpy.ndarray``. Randomness always flows through
an ``RngStream`` so every artifact can be regenerated bit-for-bit.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from config.defaults import CSV_FORMAT, SINGULAR_FLOOR
from .errors import ShapeError, SvdConvergenceError

Matrix = np.ndarray

_MASK64 = (1 << 64) - 1


def as_matrix(values, name: str = "matrix") -> Matrix:
    """Coerce ``values`` to a 2-D float64 array, rejecting other ranks."""
    m = np.asarray(values, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def require_finite(m: np.ndarray, name: str = "matrix") -> None:
    if not np.all(np.isfinite(m)):
        raise ShapeError(f"{name} contains NaN or Inf entries")


@dataclass
class RngStream:
    """Counter-based random stream keyed by ``(seed, stream_id)``.

    Backed by Philox-4x64, whose output depends only on the key and the
    counter, so a given key yields the same numbers on every platform.
    """

    seed: int
    stream_id: int = 0
    _generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        key = np.array([self.seed & _MASK64, self.stream_id & _MASK64], dtype=np.uint64)
        self._generator = np.random.Generator(np.random.Philox(key=key))

    def fork(self, label: int) -> "RngStream":
        """Derive an independent child stream for a named purpose."""
        child = np.random.SeedSequence([self.stream_id & _MASK64, label & _MASK64])
        child_id = int(child.generate_state(1, dtype=np.uint64)[0])
        return RngStream(self.seed, child_id)

    def clone(self) -> "RngStream":
        """Copy including the current position, for replaying a draw."""
        twin = RngStream(self.seed, self.stream_id)
        twin._generator.bit_generator.state = self._generator.bit_generator.state
        return twin

    def normal(self, shape) -> np.ndarray:
        return self._generator.standard_normal(shape)

    def uniform(self, lo: float, hi: float, shape) -> np.ndarray:
        return self._generator.uniform(lo, hi, shape)

    def integers(self, lo: int, hi: int, shape=None) -> np.ndarray:
        return self._generator.integers(lo, hi, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._generator.permutation(n)


def matmul(a: Matrix, b: Matrix) -> Matrix:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def svd(m: Matrix) -> Tuple[Matrix, np.ndarray, Matrix]:
    """Thin SVD returning ``(U, S, V)`` with ``m == U @ diag(S) @ V.T``."""
    m = as_matrix(m)
    require_finite(m)
    try:
        u, s, vt = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as e:
        # LAPACK reports the number of superdiagonals that failed to converge
        # only through the message, so the iteration cap is the matrix size.
        raise SvdConvergenceError(f"SVD did not converge: {e}", iterations=max(m.shape)) from e
    return u, s, vt.T


def condition_number(m: Matrix) -> float:
    """Ratio of extreme singular values; ``inf`` for (numerically) singular input."""
    m = as_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise ShapeError(f"condition number needs a square matrix, got {m.shape}")
    _, s, _ = svd(m)
    if s[-1] < SINGULAR_FLOOR:
        return float("inf")
    # rank-deficient inputs leave a rounding-level smallest value behind
    if s[-1] <= s[0] * np.finfo(np.float64).eps * max(m.shape):
        return float("inf")
    return float(s[0] / s[-1])


def sample_gaussian(rng: RngStream, rows: int, cols: int, mean: float = 0.0, std: float = 1.0) -> Matrix:
    if std <= 0:
        raise ValueError(f"std must be positive, got {std}")
    return mean + std * rng.normal((rows, cols))


def sample_uniform(rng: RngStream, rows: int, cols: int, lo: float, hi: float) -> Matrix:
    if lo >= hi:
        raise ValueError(f"need lo < hi, got [{lo}, {hi})")
    return rng.uniform(lo, hi, (rows, cols))


PathLike = Union[str, Path]


def save_matrix_csv(m: Matrix, path: PathLike) -> Path:
    """Write ``rows,cols`` then one 17-significant-digit row per line."""
    m = as_matrix(m)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{m.shape[0]},{m.shape[1]}\n")
        for row in m:
            f.write(",".join(CSV_FORMAT % v for v in row) + "\n")
    return path


def load_matrix_csv(path: PathLike) -> Matrix:
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
        try:
            rows, cols = (int(v) for v in header.split(","))
        except ValueError as e:
            raise ShapeError(f"{path}: bad header {header!r}") from e
        body = [line for line in f.read().splitlines() if line.strip()]
    if len(body) != rows:
        raise ShapeError(f"{path}: header says {rows} rows, found {len(body)}")
    data = np.array([[float(v) for v in line.split(",")] for line in body], dtype=np.float64)
    return data.reshape(rows, cols)
