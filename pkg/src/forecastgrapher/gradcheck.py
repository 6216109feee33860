"""Finite-difference gradient checking against the reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .tensor import Parameter

# central-difference roundoff is about eps_machine * |loss| / eps (~1e-11 for
# unit-scale losses); gradients below this floor carry no relative information
ABS_FLOOR = 1e-9


@dataclass
class GradCheckRecord:
    name: str
    index: tuple
    analytic: float
    numeric: float

    @property
    def rel_error(self) -> float:
        denom = max(abs(self.analytic), abs(self.numeric))
        return 0.0 if denom == 0 else abs(self.analytic - self.numeric) / denom

    def ok(self, rtol: float, atol: float = ABS_FLOOR) -> bool:
        return abs(self.analytic - self.numeric) <= rtol * max(abs(self.analytic), abs(self.numeric)) + atol


def _loss_and_masks(loss_fn):
    with T.record_relu_masks() as masks:
        value = loss_fn().item()
    return value, masks


def _same_pattern(a: list, b: list) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def check_gradients(loss_fn: Callable[[], T.Tensor], params: Sequence[Parameter], n_checks: int,
                    rng: np.random.Generator, eps: float = 1e-5, max_tries: int = 20) -> list[GradCheckRecord]:
    """Compare analytic and central-difference gradients at ``n_checks`` random coordinates.

    Coordinates whose +-eps stencil changes any relu activation pattern sit
    on a kink where the derivative is undefined; they are redrawn.
    """
    params = [p for p in params if p.trainable]
    for p in params:
        p.zero_grad()
    loss_fn().backward()
    analytic = {id(p): p.grad.copy() for p in params}
    sizes = np.array([p.data.size for p in params], dtype=np.float64)
    records = []
    while len(records) < n_checks:
        for _ in range(max_tries):
            p = params[rng.choice(len(params), p=sizes / sizes.sum())]
            idx = tuple(int(rng.integers(0, s)) for s in p.shape)
            old = p.data[idx]
            p.data[idx] = old + eps
            plus, m_plus = _loss_and_masks(loss_fn)
            p.data[idx] = old - eps
            minus, m_minus = _loss_and_masks(loss_fn)
            p.data[idx] = old
            if _same_pattern(m_plus, m_minus):
                break
        else:
            raise RuntimeError("could not find a smooth coordinate for the gradient check")
        records.append(GradCheckRecord(p.name, idx, float(analytic[id(p)][idx]), (plus - minus) / (2 * eps)))
    for p in params:
        p.zero_grad()
    return records
