"""Initial node embeddings and learnable scaler expansion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor

HOURS_PER_DAY = 24
DAYS_PER_WEEK = 7
STD_FLOOR = 1e-8


@dataclass
class EmbeddingParams:
    linear_w: Parameter  # (h, D)
    linear_b: Parameter  # (D,)
    variate_table: Parameter  # (N, D)
    hid_table: Parameter  # (24, D)
    diw_table: Parameter  # (7, D)
    use_hid: bool = True
    use_diw: bool = True

    @classmethod
    def init(cls, n_nodes: int, input_len: int, embed_dim: int, rng: np.random.Generator,
             use_variate: bool = True, use_hid: bool = True, use_diw: bool = True,
             dtype=np.float64) -> "EmbeddingParams":
        bound = 1.0 / np.sqrt(input_len)
        return cls(
            linear_w=Parameter(rng.uniform(-bound, bound, (input_len, embed_dim)), "embedding.linear_w", dtype=dtype),
            linear_b=Parameter(np.zeros(embed_dim), "embedding.linear_b", dtype=dtype),
            variate_table=Parameter(np.zeros((n_nodes, embed_dim)), "embedding.variate_table",
                                    trainable=use_variate, dtype=dtype),
            hid_table=Parameter(np.zeros((HOURS_PER_DAY, embed_dim)), "embedding.hid_table",
                                trainable=use_hid, dtype=dtype),
            diw_table=Parameter(np.zeros((DAYS_PER_WEEK, embed_dim)), "embedding.diw_table",
                                trainable=use_diw, dtype=dtype),
            use_hid=use_hid,
            use_diw=use_diw,
        )

    def parameters(self) -> list[Parameter]:
        return [self.linear_w, self.linear_b, self.variate_table, self.hid_table, self.diw_table]


@dataclass
class InstanceStats:
    mean: np.ndarray  # (..., N, 1)
    std: np.ndarray

    def denormalize(self, y: Tensor) -> Tensor:
        return y * self.std + self.mean


def instance_normalize(x: np.ndarray, enabled: bool = True) -> tuple[np.ndarray, InstanceStats]:
    """Per-variate z-score over each window's input steps (population std, floored)."""
    x = np.asarray(x)
    if not enabled:
        shape = x.shape[:-1] + (1,)
        return x, InstanceStats(np.zeros(shape, x.dtype), np.ones(shape, x.dtype))
    mean = x.mean(axis=-1, keepdims=True)
    std = np.maximum(x.std(axis=-1, keepdims=True), STD_FLOOR)
    return (x - mean) / std, InstanceStats(mean, std)


def _lookup(table: Parameter, index, size: int, batched: bool) -> Tensor:
    idx = np.atleast_1d(np.asarray(index, dtype=np.int64))
    if idx.size and (idx.min() < 0 or idx.max() >= size):
        raise IndexError(f"calendar index {index} outside [0, {size})")
    rows = T.take_rows(table, idx)  # (B, D)
    if batched:
        return rows.reshape(idx.shape[0], 1, table.shape[1])
    return rows.reshape(1, table.shape[1])


def embed(x, hid, diw, p: EmbeddingParams) -> Tensor:
    """Node embeddings: linear map of each variate's window plus lookup vectors.

    ``x`` is ``(N, h)`` with integer ``hid``/``diw``, or ``(B, N, h)`` with
    length-B index arrays. The hour and weekday vectors are shared by all
    nodes of a sample. Disabled tables contribute exactly zero.
    """
    x = T.as_tensor(x) if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=p.linear_w.dtype))
    batched = x.ndim == 3
    out = x @ p.linear_w + p.linear_b + p.variate_table
    if p.use_hid:
        out = out + _lookup(p.hid_table, hid, HOURS_PER_DAY, batched)
    if p.use_diw:
        out = out + _lookup(p.diw_table, diw, DAYS_PER_WEEK, batched)
    return out


def init_scalers(z: int, dtype=np.float64) -> Parameter:
    # evenly spaced so the groups differ from the first step
    values = np.linspace(0.2, 1.0, z) if z > 1 else np.ones(1)
    return Parameter(values, "scalers", dtype=dtype)


def expand_scalers(h0: Tensor, scalers: Tensor) -> Tensor:
    """Stack ``scalers[c] * h0`` along a new channel axis just before the node axis."""
    z = scalers.shape[0]
    lead = h0.shape[:-2]
    expanded = h0.reshape(lead + (1,) + h0.shape[-2:])
    return expanded * scalers.reshape((z, 1, 1))
