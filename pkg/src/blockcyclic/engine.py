"""Projected online/stochastic gradient descent chain.

Every training strategy in the package is a bookkeeping layer over
:func:`step`.  A step records ``f(w_t, z_t)`` and adds ``w_t`` to the running
sums *before* moving, so averages run over the ``T`` query points
``w_1..w_T`` and cumulative loss is exactly the left side of the online
regret inequality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import Sample, StochasticProblem
from .errors import ChainDivergedError


def project(w: np.ndarray, B: float) -> np.ndarray:
    """Euclidean projection onto the ball of radius ``B``: ``w / max(|w|/B, 1)``."""
    if B <= 0:
        raise ValueError("B must be positive")
    norm = math.sqrt(float(np.dot(w, w)))
    if norm <= B:
        return w
    return w / (norm / B)


@dataclass(frozen=True)
class SGDConfig:
    """Step-size rule and feasible set for a chain.

    ``step_rule="horizon"`` uses ``B / sqrt(2 * horizon)`` where ``horizon`` is
    the number of steps the chain will take; ``"constant"`` uses ``eta``.
    """

    B: float = 1.0
    step_rule: str = "horizon"
    eta: float | None = None
    use_projection: bool = True
    initial: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.B > 0:
            raise ValueError("B must be positive")
        if self.step_rule not in ("horizon", "constant"):
            raise ValueError(f"unknown step rule {self.step_rule!r}")
        if self.step_rule == "constant" and not (self.eta is not None and self.eta > 0):
            raise ValueError("constant step rule needs eta > 0")

    def step_size(self, horizon: int) -> float:
        if self.step_rule == "constant":
            return float(self.eta)
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        return self.B / math.sqrt(2.0 * horizon)

    @property
    def bound(self) -> float | None:
        return self.B if self.use_projection else None

    def initial_iterate(self, dim: int) -> np.ndarray:
        if self.initial is None:
            return np.zeros(dim)
        w = np.asarray(self.initial, dtype=float)
        if w.shape != (dim,):
            raise ValueError(f"initial iterate has shape {w.shape}, expected {(dim,)}")
        return w.copy()

    def with_eta(self, eta: float) -> "SGDConfig":
        return SGDConfig(B=self.B, step_rule="constant", eta=eta,
                         use_projection=self.use_projection, initial=self.initial)


@dataclass
class ChainState:
    w: np.ndarray
    num_blocks: int = 1
    t: int = 0
    block_sums: np.ndarray = field(default=None)
    block_counts: np.ndarray = field(default=None)
    total_sum: np.ndarray = field(default=None)
    cumulative_loss: float = 0.0

    def __post_init__(self):
        self.w = np.array(self.w, dtype=float)
        if not np.all(np.isfinite(self.w)):
            raise ValueError("initial iterate must be finite")
        d = self.w.shape[0]
        if self.block_sums is None:
            self.block_sums = np.zeros((self.num_blocks, d))
        if self.block_counts is None:
            self.block_counts = np.zeros(self.num_blocks, dtype=np.int64)
        if self.total_sum is None:
            self.total_sum = np.zeros(d)

    @classmethod
    def start(cls, cfg: SGDConfig, dim: int, num_blocks: int = 1) -> "ChainState":
        return cls(cfg.initial_iterate(dim), num_blocks=num_blocks)

    @property
    def average(self) -> np.ndarray:
        """Average of all query points so far."""
        if self.t == 0:
            raise ValueError("empty chain has no average")
        return self.total_sum / self.t


def step(state: ChainState, sample: Sample, block: int, problem: StochasticProblem,
         eta: float, bound: float | None = None) -> float:
    """Advance ``state`` in place by one (projected) gradient step.

    Returns ``f(w_t, z_t)`` at the pre-update iterate.  ``block`` is the
    1-based block whose running sum receives ``w_t``.
    """
    w = state.w
    loss, grad = problem.loss_and_subgradient(w, sample)
    nxt = w - eta * grad
    norm = math.sqrt(float(np.dot(nxt, nxt)))
    if not (math.isfinite(loss) and math.isfinite(norm)):
        raise ChainDivergedError(state.t + 1, float(np.linalg.norm(w)))
    state.cumulative_loss += loss
    state.block_sums[block - 1] += w
    state.block_counts[block - 1] += 1
    state.total_sum += w
    if bound is not None and norm > bound:
        nxt = nxt / (norm / bound)
    state.w = nxt
    state.t += 1
    return loss


def regret_against(state: ChainState, comparator: np.ndarray, replayed_losses: Sequence[float],
                   B: float | None = None) -> float:
    """``sum_t f(w_t, z_t) - sum_t f(w, z_t)`` for a fixed comparator ``w``."""
    replayed = np.asarray(replayed_losses, dtype=float)
    if replayed.shape != (state.t,):
        raise ValueError(f"need {state.t} replayed losses, got {replayed.shape[0] if replayed.ndim else 0}")
    if B is not None and np.linalg.norm(comparator) > B * (1 + 1e-12):
        raise ValueError("comparator lies outside the feasible ball")
    return state.cumulative_loss - float(replayed.sum())


def block_average(state: ChainState, i: int) -> np.ndarray:
    """Mean of the query points credited to block ``i`` (1-based)."""
    if not 1 <= i <= state.num_blocks:
        raise ValueError(f"block {i} outside 1..{state.num_blocks}")
    count = state.block_counts[i - 1]
    if count == 0:
        raise ValueError(f"block {i} has no iterates")
    return state.block_sums[i - 1] / count


def ogd_regret_bound(B: float, T: int) -> float:
    """``sqrt(2 B^2 T)``, the guarantee for the projected chain with ``eta = B/sqrt(2T)``."""
    return math.sqrt(2.0 * B * B * T)
