"""Self-learned and static adjacency matrices."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import DataError
from .tensor import Parameter, Tensor


@dataclass
class AdjacencyFactors:
    e1: Parameter  # (N, c) source-node factors
    e2: Parameter  # (N, c) target-node factors

    @classmethod
    def init(cls, n_nodes: int, factor_dim: int, rng: np.random.Generator, prefix: str = "",
             dtype=np.float64) -> "AdjacencyFactors":
        bound = 1.0 / np.sqrt(factor_dim)
        e1 = rng.uniform(-bound, bound, (n_nodes, factor_dim))
        e2 = rng.uniform(-bound, bound, (n_nodes, factor_dim))
        return cls(Parameter(e1, f"{prefix}e1", dtype=dtype), Parameter(e2, f"{prefix}e2", dtype=dtype))

    def parameters(self) -> list[Parameter]:
        return [self.e1, self.e2]


def adjacency(f: AdjacencyFactors) -> Tensor:
    """Row-stochastic A = softmax_rows(relu(E1 E2^T))."""
    return T.row_softmax(T.relu(T.matmul(f.e1, f.e2.T)))


def normalize_rows(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    sums = a.sum(axis=1, keepdims=True)
    out = np.where(sums > 0, a / np.where(sums > 0, sums, 1.0), 1.0 / a.shape[1])
    return out


def load_static_adjacency(path, n_nodes: int) -> np.ndarray:
    """Read an N x N non-negative matrix (header-less CSV) and renormalize its rows."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: adjacency file not found")
    try:
        a = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if a.shape != (n_nodes, n_nodes):
        raise DataError(f"{path}: expected {n_nodes}x{n_nodes} matrix, got {a.shape[0]}x{a.shape[1]}")
    if not np.all(np.isfinite(a)) or (a < 0).any():
        raise DataError(f"{path}: adjacency entries must be finite and non-negative")
    return normalize_rows(a)


def write_matrix(a: np.ndarray, path) -> None:
    # repr-precision floats so a reload is exact
    with open(path, "w") as fh:
        for row in np.asarray(a, dtype=np.float64):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def leading_block(a: np.ndarray, k: int) -> np.ndarray:
    """The k x k submatrix over the first k nodes (clipped to N)."""
    k = min(k, a.shape[0])
    return np.asarray(a)[:k, :k]
