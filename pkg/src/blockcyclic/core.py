"""Shared domain types: the block-cyclic schedule, samples and stochastic problems.

Indices that appear in the schedule (cycle ``k``, block ``i``, step ``j``,
iteration ``t``) and ``Sample.component`` are 1-based, as in the usual
statement of the problem.  Arrays indexed by block use ``i - 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Iterator, NamedTuple, Sequence

import numpy as np


def make_rng(seed, *keys: int) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``.

    Streams for different key tuples are statistically independent, so a
    repetition index or a purpose tag (stream / coins / ...) can be folded in
    without coordinating draws between consumers.
    """
    if isinstance(seed, np.random.Generator):
        if keys:
            raise ValueError("cannot derive keyed streams from an existing Generator")
        return seed
    entropy = 0 if seed is None else int(seed)
    return np.random.default_rng(np.random.SeedSequence(entropy, spawn_key=tuple(int(k) for k in keys)))


@dataclass(frozen=True)
class ScheduleConfig:
    """``K`` cycles of ``m`` blocks with ``n`` samples each."""

    K: int
    m: int
    n: int

    def __post_init__(self):
        for name in ("K", "m", "n"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")

    @property
    def T(self) -> int:
        return self.K * self.m * self.n

    def iter_blocks(self) -> Iterator[tuple[int, int]]:
        """Yield ``(k, i)`` for every block in stream order."""
        for k in range(1, self.K + 1):
            for i in range(1, self.m + 1):
                yield k, i


def schedule_index(k: int, i: int, j: int, cfg: ScheduleConfig) -> int:
    """Global iteration ``t`` of step ``j`` in block ``i`` of cycle ``k``."""
    if not (1 <= k <= cfg.K and 1 <= i <= cfg.m and 1 <= j <= cfg.n):
        raise ValueError(f"(k={k}, i={i}, j={j}) outside schedule {cfg}")
    return (k - 1) * cfg.n * cfg.m + (i - 1) * cfg.n + j


def block_of_iteration(t: int, cfg: ScheduleConfig) -> tuple[int, int, int]:
    """Inverse of :func:`schedule_index`."""
    if not 1 <= t <= cfg.T:
        raise ValueError(f"t={t} outside 1..{cfg.T}")
    k, rem = divmod(t - 1, cfg.n * cfg.m)
    i, j = divmod(rem, cfg.n)
    return k + 1, i + 1, j + 1


def block_iterations(i: int, cfg: ScheduleConfig) -> np.ndarray:
    """All iterations ``t`` drawn from component ``i`` (sorted, length ``K*n``)."""
    if not 1 <= i <= cfg.m:
        raise ValueError(f"block {i} outside 1..{cfg.m}")
    starts = np.arange(cfg.K) * cfg.n * cfg.m + (i - 1) * cfg.n
    return (starts[:, None] + np.arange(1, cfg.n + 1)[None, :]).ravel()


class Sample(NamedTuple):
    payload: Any
    component: int


class StochasticProblem:
    """Convex stochastic objective ``F(w) = (1/m) sum_i E_{z~D_i} f(w, z)``.

    Subclasses provide ``sample``, ``loss`` and ``subgradient``; overriding
    ``loss_and_subgradient`` and ``sample_block`` is worthwhile for speed.
    Problems with finite component supports override ``support`` and then get
    exact expectations from :meth:`component_risk`.
    """

    dim: int
    num_components: int
    reference_optimum: np.ndarray | None = None

    def sample(self, i: int, rng: np.random.Generator) -> Sample:
        raise NotImplementedError

    def sample_block(self, i: int, size: int, rng: np.random.Generator) -> list[Sample]:
        return [self.sample(i, rng) for _ in range(size)]

    def loss(self, w: np.ndarray, z: Sample) -> float:
        raise NotImplementedError

    def subgradient(self, w: np.ndarray, z: Sample) -> np.ndarray:
        raise NotImplementedError

    def loss_and_subgradient(self, w: np.ndarray, z: Sample) -> tuple[float, np.ndarray]:
        return self.loss(w, z), self.subgradient(w, z)

    def support(self, i: int) -> tuple[Sequence[Sample], np.ndarray] | None:
        """``(samples, probabilities)`` of component ``i`` if finite, else ``None``."""
        return None

    def component_risk(self, w: np.ndarray, i: int, budget: int = 1000,
                       rng: np.random.Generator | None = None) -> float:
        """``F_i(w)``: exact for finite supports, Monte-Carlo with ``budget`` draws otherwise."""
        sup = self.support(i)
        if sup is not None:
            samples, probs = sup
            return float(sum(p * self.loss(w, z) for z, p in zip(samples, probs) if p > 0))
        if budget < 1:
            raise ValueError("budget must be >= 1")
        rng = make_rng(0, i) if rng is None else rng
        return float(np.mean([self.loss(w, z) for z in self.sample_block(i, budget, rng)]))


def mixture_objective(problem: StochasticProblem, w: np.ndarray, budget: int = 1000,
                      rng: np.random.Generator | None = None) -> float:
    """Uniform mixture ``F(w) = (1/m) sum_i F_i(w)``."""
    w = np.asarray(w, dtype=float)
    if w.shape != (problem.dim,):
        raise ValueError(f"expected a vector of dimension {problem.dim}, got shape {w.shape}")
    if budget < 1:
        raise ValueError("budget must be >= 1")
    m = problem.num_components
    return sum(problem.component_risk(w, i, budget, rng) for i in range(1, m + 1)) / m


def pluralistic_objective(problem: StochasticProblem, models: np.ndarray, budget: int = 1000,
                          rng: np.random.Generator | None = None) -> float:
    """``(1/m) sum_i F_i(w^i)`` for a stack of per-component models (shape ``(m, d)``)."""
    models = np.asarray(models, dtype=float)
    m = problem.num_components
    if models.shape != (m, problem.dim):
        raise ValueError(f"expected models of shape {(m, problem.dim)}, got {models.shape}")
    return sum(problem.component_risk(models[i - 1], i, budget, rng) for i in range(1, m + 1)) / m


def max_subgradient_norm(problem: StochasticProblem, radius: float, trials: int,
                         rng: np.random.Generator) -> float:
    """Largest subgradient norm seen at random points of the ``radius`` ball."""
    worst = 0.0
    for _ in range(trials):
        direction = rng.standard_normal(problem.dim)
        w = direction / np.linalg.norm(direction) * radius * rng.random() ** (1.0 / problem.dim)
        i = int(rng.integers(1, problem.num_components + 1))
        z = problem.sample(i, rng)
        worst = max(worst, float(np.linalg.norm(problem.subgradient(w, z))))
    return worst


def chord_violation(problem: StochasticProblem, radius: float, trials: int,
                    rng: np.random.Generator) -> float:
    """Largest ``f(lu + (1-l)v) - l f(u) - (1-l) f(v)`` over random chords (<= 0 if convex)."""
    worst = -math.inf
    for _ in range(trials):
        u, v = (rng.uniform(-radius, radius, problem.dim) for _ in range(2))
        lam = rng.random()
        z = problem.sample(int(rng.integers(1, problem.num_components + 1)), rng)
        gap = problem.loss(lam * u + (1 - lam) * v, z) - lam * problem.loss(u, z) - (1 - lam) * problem.loss(v, z)
        worst = max(worst, gap)
    return worst
