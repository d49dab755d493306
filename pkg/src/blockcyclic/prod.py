"""The Prod experts algorithm with a fixed-weight anchor expert.

Expert 0 is the anchor: its weight is set once to ``1 - eta`` and never
touched, the others start at ``eta / K`` and are multiplied by
``1 + eta * (loss_0 - loss_j)`` each round.  Weights are kept as logarithms
so long runs where one expert dominates do not overflow; all arrays may carry
leading batch dimensions (one independent Prod instance per batch entry).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation


@dataclass(frozen=True)
class ProdState:
    log_weights: np.ndarray  # (..., K + 1); entry 0 is the anchor
    eta: float
    loss_bound: float

    def __post_init__(self):
        if not self.loss_bound > 0:
            raise ValueError("loss bound must be positive")
        if not 0 < self.eta <= 1.0 / (4.0 * self.loss_bound) * (1 + 1e-12):
            raise ContractViolation(
                f"Prod rate {self.eta} outside (0, 1/(4M)] for M={self.loss_bound}")

    @classmethod
    def initial(cls, num_experts: int, eta: float, loss_bound: float,
                batch_shape: tuple[int, ...] = ()) -> "ProdState":
        """Anchor weight ``1 - eta``, each of the ``num_experts`` others ``eta / num_experts``."""
        if num_experts < 1:
            raise ValueError("need at least one non-anchor expert")
        logw = np.full(batch_shape + (num_experts + 1,), math.log(eta / num_experts))
        logw[..., 0] = math.log1p(-eta)
        return cls(logw, eta, loss_bound)

    @classmethod
    def from_weights(cls, weights, eta: float, loss_bound: float) -> "ProdState":
        weights = np.asarray(weights, dtype=float)
        if np.any(weights <= 0):
            raise ValueError("weights must be positive")
        return cls(np.log(weights), eta, loss_bound)

    @property
    def num_experts(self) -> int:
        return self.log_weights.shape[-1] - 1

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def probabilities(self) -> np.ndarray:
        shifted = self.log_weights - self.log_weights.max(axis=-1, keepdims=True)
        p = np.exp(shifted)
        return p / p.sum(axis=-1, keepdims=True)


def prod_update(state: ProdState, losses) -> ProdState:
    """One round of multiplicative updates relative to the anchor."""
    losses = np.asarray(losses, dtype=float)
    if losses.shape != state.log_weights.shape:
        raise ValueError(f"losses shape {losses.shape} != weights shape {state.log_weights.shape}")
    M = state.loss_bound
    if np.any(np.abs(losses) > M * (1 + 1e-12)):
        raise ContractViolation(f"loss magnitude {np.abs(losses).max():.6g} exceeds bound {M}")
    gaps = losses[..., :1] - losses
    factors = state.eta * gaps
    # gaps are within [-2M, 2M] and eta <= 1/(4M), so factors >= -1/2
    logw = state.log_weights + np.log1p(factors)
    logw[..., 0] = state.log_weights[..., 0]
    return ProdState(logw, state.eta, M)


def corollary_rate(num_experts: int, loss_bound: float, horizon: int) -> float:
    """``eta = sqrt(ln(K M T) / T) / (2M)``, the tuned rate for horizon ``T``."""
    arg = num_experts * loss_bound * horizon
    if arg <= 1:
        raise ValueError("tuned rate needs K*M*T > 1")
    return math.sqrt(math.log(arg) / horizon) / (2.0 * loss_bound)


def anchor_regret_bound(eta: float) -> float:
    return 1.0 + eta


def expert_regret_bound(eta: float, num_experts: int, loss_bound: float, horizon: int) -> float:
    """``4 eta M^2 T + ln(K / eta) / eta``."""
    return 4.0 * eta * loss_bound ** 2 * horizon + math.log(num_experts / eta) / eta


def log_lemma_gaps(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Slacks of ``z - z^2 <= ln(1+z) <= z``; both arrays are >= 0 where the bounds hold."""
    z = np.asarray(z, dtype=float)
    if np.any(z <= -0.5):
        raise ValueError("inequality only claimed for z > -1/2")
    log = np.log1p(z)
    return log - (z - z * z), z - log


@dataclass
class ProdRun:
    """Per-instance totals of a batched Prod run (expected-loss form)."""

    mixture_loss: np.ndarray   # sum_t sum_j p_t^j l_t(j)
    expert_losses: np.ndarray  # sum_t l_t(j), shape (..., K + 1)
    final: ProdState

    @property
    def anchor_regret(self) -> np.ndarray:
        return self.mixture_loss - self.expert_losses[..., 0]

    @property
    def expert_regret(self) -> np.ndarray:
        """Regret against each non-anchor expert, shape (..., K)."""
        return self.mixture_loss[..., None] - self.expert_losses[..., 1:]


def run_prod(loss_rounds, state: ProdState) -> ProdRun:
    """Feed an iterable of per-round loss arrays through Prod."""
    mixture = np.zeros(state.log_weights.shape[:-1])
    totals = np.zeros(state.log_weights.shape)
    for losses in loss_rounds:
        losses = np.asarray(losses, dtype=float)
        mixture += np.sum(state.probabilities() * losses, axis=-1)
        totals += losses
        state = prod_update(state, losses)
    return ProdRun(mixture, totals, state)


_FAMILIES = ("uniform", "biased", "expert_dominates", "anchor_dominates", "switching")


def random_loss_rounds(rng: np.random.Generator, batch: int, num_experts: int, horizon: int,
                       loss_bound: float = 1.0, chunk: int = 1000):
    """Yield ``horizon`` rounds of losses, shape ``(batch, num_experts + 1)``, within ``[-M, M]``.

    Each batch entry follows one family: i.i.d. uniform, fixed per-expert
    biases plus noise, one expert always beating the anchor by ``2M``, the
    anchor always winning by ``2M``, or leadership switching at random times.
    """
    M = loss_bound
    width = num_experts + 1
    family = rng.integers(0, len(_FAMILIES), size=batch)
    means = rng.uniform(-M, M, size=(batch, width))
    leader = rng.integers(1, width, size=batch)
    period = rng.integers(5, 500, size=batch)
    rows = np.arange(batch)
    for start in range(0, horizon, chunk):
        size = min(chunk, horizon - start)
        block = rng.uniform(-M, M, size=(size, batch, width))
        biased = np.clip(means + 0.3 * M * rng.standard_normal((size, batch, width)), -M, M)
        block = np.where((family == 1)[None, :, None], biased, block)
        dominated = np.full((size, batch, width), M)
        dominated[:, rows, leader] = -M
        block = np.where((family == 2)[None, :, None], dominated, block)
        anchored = np.full((size, batch, width), M)
        anchored[..., 0] = -M
        block = np.where((family == 3)[None, :, None], anchored, block)
        t = np.arange(start, start + size)[:, None]
        phase = (t // period[None, :]) % 2 == 0
        switching = np.where(phase[..., None], anchored, dominated)
        block = np.where((family == 4)[None, :, None], switching, block)
        yield from block


def prod_battery(runs: int = 1000, horizon: int = 10_000, num_experts: int = 1, loss_bound: float = 1.0,
                 seed=0, anchor_rate: float | None = None, expert_rate: float | None = None) -> dict:
    """Random-sequence check of both Prod guarantees.

    The anchor bound is checked at ``anchor_rate`` (default ``1/(4M)``), the
    expert bound at ``expert_rate`` (default :func:`corollary_rate`), each on
    its own batch of ``runs`` sequences.
    """
    from .core import make_rng

    M = loss_bound
    anchor_rate = 1.0 / (4.0 * M) if anchor_rate is None else anchor_rate
    expert_rate = corollary_rate(num_experts, M, horizon) if expert_rate is None else expert_rate
    out = {"runs": runs, "horizon": horizon, "num_experts": num_experts, "loss_bound": M}
    for name, eta, key in (("anchor", anchor_rate, 0), ("expert", expert_rate, 1)):
        rng = make_rng(seed, key)
        state = ProdState.initial(num_experts, eta, M, (runs,))
        result = run_prod(random_loss_rounds(rng, runs, num_experts, horizon, M), state)
        if name == "anchor":
            regret = result.anchor_regret
            bound = anchor_regret_bound(eta)
        else:
            regret = result.expert_regret.max(axis=-1)
            bound = expert_regret_bound(eta, num_experts, M, horizon)
        out[name] = {"eta": eta, "bound": bound, "max_regret": float(regret.max()),
                     "passed": int(np.count_nonzero(regret <= bound)), "regret": regret}
    return out
