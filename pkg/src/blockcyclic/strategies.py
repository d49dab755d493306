"""Training strategies over a block-cyclic stream.

All four strategies drive :func:`blockcyclic.engine.step`; they differ only in
which chains see which samples and in how iterates are aggregated:

* consensus: one chain, one model (last iterate or full average);
* per-component: ``m`` chains, chain ``i`` only sees block ``i``;
* pluralistic averaging: one chain, model ``i`` averages the iterates
  visited during block ``i``;
* pluralistic hedging: both of the above, mixed per block by a two-expert
  Prod instance whose anchor is the single chain.

Strategies given the same ``seed`` draw the same stream, so e.g. consensus and
pluralistic averaging follow bitwise-identical trajectories.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import Sample, ScheduleConfig, StochasticProblem, make_rng
from .engine import ChainState, SGDConfig, block_average, step
from .errors import ConfigError, ContractViolation
from .prod import ProdState, prod_update

STREAM_KEY = 0
COIN_KEY = 1
SHUFFLE_KEY = 2

Callback = Callable[[int, int, int, ChainState], None]


def draw_stream(problem: StochasticProblem, schedule: ScheduleConfig, seed=None) -> list[Sample]:
    """The ``T`` samples of a block-cyclic run, in stream order."""
    if problem.num_components != schedule.m:
        raise ConfigError(f"problem has {problem.num_components} components, schedule has m={schedule.m}")
    rng = make_rng(seed, STREAM_KEY) if not isinstance(seed, np.random.Generator) else seed
    stream: list[Sample] = []
    for _, i in schedule.iter_blocks():
        stream.extend(problem.sample_block(i, schedule.n, rng))
    return stream


def shuffled(stream: Sequence[Sample], seed=None) -> list[Sample]:
    """Same multiset of samples in uniformly random order (the i.i.d. control)."""
    rng = make_rng(seed, SHUFFLE_KEY) if not isinstance(seed, np.random.Generator) else seed
    order = rng.permutation(len(stream))
    return [stream[o] for o in order]


def _resolve_stream(problem, schedule, seed, stream, check_components):
    if stream is None:
        stream = draw_stream(problem, schedule, seed)
    elif len(stream) != schedule.T:
        raise ConfigError(f"stream has {len(stream)} samples, schedule needs {schedule.T}")
    if problem.num_components != schedule.m:
        raise ConfigError(f"problem has {problem.num_components} components, schedule has m={schedule.m}")
    if check_components:
        n = schedule.n
        for pos in range(0, len(stream), n):
            i = (pos // n) % schedule.m + 1
            if any(z.component != i for z in stream[pos:pos + n]):
                raise ConfigError(f"sample drawn from the wrong component in block starting at t={pos + 1}")
    return stream


@dataclass
class ConsensusResult:
    final: np.ndarray
    average: np.ndarray
    checkpoints: np.ndarray  # (K, m, d): iterate after block i of cycle k
    state: ChainState


@dataclass
class PluralisticModel:
    per_component: np.ndarray  # (m, d)
    strategy: str
    schedule: ScheduleConfig
    seed: object = None
    checkpoints: np.ndarray | None = None  # (K, m, d); meaning depends on the strategy
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.per_component.shape[0] != self.schedule.m:
            raise ValueError("need exactly one model per component")

    def __getitem__(self, i: int) -> np.ndarray:
        """Model for component ``i`` (1-based)."""
        return self.per_component[i - 1]


def _single_chain(problem, schedule, cfg, seed, stream, check_components, callback):
    stream = _resolve_stream(problem, schedule, seed, stream, check_components)
    state = ChainState.start(cfg, problem.dim, num_blocks=schedule.m)
    eta = cfg.step_size(schedule.T)
    bound = cfg.bound
    n = schedule.n
    checkpoints = np.empty((schedule.K, schedule.m, problem.dim))
    pos = 0
    for k, i in schedule.iter_blocks():
        for z in stream[pos:pos + n]:
            step(state, z, i, problem, eta, bound)
        pos += n
        checkpoints[k - 1, i - 1] = state.w
        if callback is not None:
            callback(k, i, pos, state)
    return state, checkpoints


def run_consensus(problem: StochasticProblem, schedule: ScheduleConfig, cfg: SGDConfig, seed=None,
                  stream: Sequence[Sample] | None = None, check_components: bool = True,
                  callback: Callback | None = None) -> ConsensusResult:
    """One chain over the stream; returns last iterate, full average and block-end checkpoints.

    ``callback(k, i, t, state)`` fires after every block.  Pass a shuffled
    stream with ``check_components=False`` for the i.i.d. control.
    """
    state, checkpoints = _single_chain(problem, schedule, cfg, seed, stream, check_components, callback)
    return ConsensusResult(state.w.copy(), state.average, checkpoints, state)


def run_pluralistic_averaging(problem: StochasticProblem, schedule: ScheduleConfig, cfg: SGDConfig,
                              seed=None, stream: Sequence[Sample] | None = None,
                              callback: Callback | None = None) -> PluralisticModel:
    """Same chain as :func:`run_consensus`; model ``i`` is the average of block ``i``'s iterates."""
    state, checkpoints = _single_chain(problem, schedule, cfg, seed, stream, True, callback)
    models = np.stack([block_average(state, i) for i in range(1, schedule.m + 1)])
    return PluralisticModel(models, "pluralistic", schedule, seed, checkpoints,
                            {"state": state, "final": state.w.copy()})


def run_sgd_average(problem: StochasticProblem, schedule: ScheduleConfig, cfg: SGDConfig, seed=None,
                    stream: Sequence[Sample] | None = None) -> np.ndarray:
    """Plain averaged SGD ``(1/T) sum_t w_t`` over the stream, ignoring block structure."""
    stream = _resolve_stream(problem, schedule, seed, stream, False)
    state = ChainState.start(cfg, problem.dim)
    eta = cfg.step_size(schedule.T)
    for z in stream:
        step(state, z, 1, problem, eta, cfg.bound)
    return state.average


def run_per_component(problem: StochasticProblem, schedule: ScheduleConfig, cfg: SGDConfig, seed=None,
                      stream: Sequence[Sample] | None = None) -> PluralisticModel:
    """``m`` independent chains; chain ``i`` advances only on block ``i`` (``K*n`` steps).

    Checkpoint ``[k-1, i-1]`` is chain ``i`` after its ``k``-th block.  Under the
    ``horizon`` step rule each chain is tuned to its own ``T/m`` steps.
    """
    stream = _resolve_stream(problem, schedule, seed, stream, True)
    chains = [ChainState.start(cfg, problem.dim) for _ in range(schedule.m)]
    eta = cfg.step_size(schedule.K * schedule.n)
    bound = cfg.bound
    n = schedule.n
    checkpoints = np.empty((schedule.K, schedule.m, problem.dim))
    pos = 0
    for k, i in schedule.iter_blocks():
        chain = chains[i - 1]
        for z in stream[pos:pos + n]:
            step(chain, z, 1, problem, eta, bound)
        pos += n
        checkpoints[k - 1, i - 1] = chain.w
    models = np.stack([c.average for c in chains])
    return PluralisticModel(models, "per_component", schedule, seed, checkpoints,
                            {"chains": chains, "final": np.stack([c.w for c in chains])})


def hedge_rate(B: float, T: int, m: int) -> float:
    """``nu = sqrt((m/T) ln(B T / m)) / (2B)``."""
    arg = B * T / m
    if arg <= 1:
        raise ConfigError(f"hedging rate undefined for B*T/m = {arg:.3g} <= 1")
    return math.sqrt((m / T) * math.log(arg)) / (2.0 * B)


def hedging_slack(B: float, T: int, m: int) -> float:
    """``4 sqrt(B^2 ln(BT/m) / (T/m))``, the per-component hedging guarantee."""
    return 4.0 * math.sqrt(B * B * math.log(B * T / m) / (T / m))


@dataclass
class HedgeState:
    full_chain: ChainState
    component_chains: list[ChainState]
    prods: list[ProdState]  # one two-expert instance per block; expert 0 = full chain
    hedge_rate: float
    mixed_block_sums: np.ndarray
    expected_block_sums: np.ndarray
    picks: np.ndarray  # 1 where u_t was the component chain, 0 where it was the full chain

    @property
    def anchor_weight(self) -> float:
        return float(self.prods[0].weights[0])

    @property
    def component_weights(self) -> np.ndarray:
        return np.array([p.weights[1] for p in self.prods])

    def mixing_probability(self, i: int) -> float:
        return float(self.prods[i - 1].probabilities()[1])


def run_pluralistic_hedging(problem: StochasticProblem, schedule: ScheduleConfig, cfg: SGDConfig,
                            seed=None, stream: Sequence[Sample] | None = None,
                            rate: float | None = None, loss_bound: float | None = None) -> PluralisticModel:
    """Hedge between the single chain and the per-component chains, per block.

    At each step of block ``i`` the reported point ``u_t`` is the component
    chain's iterate with probability ``p_t = q_t^i / (q_t^i + q)`` and the full
    chain's otherwise; ``q_t^i`` follows the Prod rule with losses of both
    chains at their pre-update iterates.  Model ``i`` averages ``u_t`` over
    block ``i``.  ``loss_bound`` defaults to ``B``; every observed loss must lie
    within it.  ``info["expected"]`` holds the ``p_t``-weighted averages.
    """
    stream = _resolve_stream(problem, schedule, seed, stream, True)
    T, m = schedule.T, schedule.m
    B = cfg.B
    M = B if loss_bound is None else loss_bound
    nu = hedge_rate(B, T, m) if rate is None else rate
    if nu > 1.0 / (4.0 * M):
        raise ConfigError(f"hedge rate {nu:.4g} exceeds 1/(4M) = {1 / (4 * M):.4g}")
    if m > B * B * schedule.K * schedule.n:
        warnings.warn(f"m={m} exceeds B^2 K n; the mixture guarantee does not apply", stacklevel=2)

    d = problem.dim
    full = ChainState.start(cfg, d, num_blocks=m)
    comps = [ChainState.start(cfg, d) for _ in range(m)]
    prods = [ProdState.initial(1, nu, M) for _ in range(m)]
    state = HedgeState(full, comps, prods, nu, np.zeros((m, d)), np.zeros((m, d)), np.zeros(T, dtype=np.int8))

    eta_full = cfg.step_size(T)
    eta_comp = cfg.step_size(schedule.K * schedule.n)
    bound = cfg.bound
    coins = make_rng(seed, COIN_KEY).random(T) if not isinstance(seed, np.random.Generator) else seed.random(T)
    n = schedule.n
    checkpoints = np.empty((schedule.K, m, d))
    pos = 0
    for k, i in schedule.iter_blocks():
        comp = comps[i - 1]
        prod = prods[i - 1]
        for z in stream[pos:pos + n]:
            p = float(prod.probabilities()[1])
            pick = coins[pos] < p
            u = comp.w if pick else full.w
            state.picks[pos] = pick
            state.mixed_block_sums[i - 1] += u
            last_u = u
            state.expected_block_sums[i - 1] += p * comp.w + (1.0 - p) * full.w
            loss_full = step(full, z, i, problem, eta_full, bound)
            loss_comp = step(comp, z, 1, problem, eta_comp, bound)
            try:
                prod = prod_update(prod, np.array([loss_full, loss_comp]))
            except ContractViolation as exc:
                raise ContractViolation(f"at t={pos + 1}: {exc}") from None
            pos += 1
        prods[i - 1] = prod
        checkpoints[k - 1, i - 1] = last_u

    per_block = schedule.K * n
    models = state.mixed_block_sums / per_block
    info = {"state": state, "expected": state.expected_block_sums / per_block, "rate": nu}
    return PluralisticModel(models, "hedging", schedule, seed, checkpoints, info)
