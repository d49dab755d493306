"""Two-label chain constructions on which block-cyclic SGD stalls.

Label 1 couples directions ``(v_2, v_3), (v_4, v_5), ...`` and pulls along
``v_1``; label 2 couples ``(v_1, v_2), (v_3, v_4), ...``.  The coupling
function ``phi`` is flat on ``[-a/2, a/2]``, so a gradient only "reveals"
``v_{r+1}`` once the iterate has a non-negligible ``v_r`` coordinate, and that
coupling lives in the other label.  One cycle over both labels therefore
uncovers at most two new directions, and after ``K`` cycles every iterate lies
in ``span{v_1..v_2K}``, where the objective is a constant times ``1/K`` above
its minimum.

The vectors default to the canonical basis of ``R^(4K+1)``.  Every method in
this package stays in the span of the gradients it has seen, so no random
high-dimensional embedding is needed to make the span argument bite;
``rotation_seed`` embeds the same instance along random orthonormal
directions when a basis-independent check is wanted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import Sample, ScheduleConfig, StochasticProblem, make_rng
from .engine import SGDConfig, project
from .errors import SolverError
from .strategies import draw_stream, run_consensus, shuffled


def phi(x, a: float, gamma: float):
    """Even, convex, C^1 coupling: 0, then ``2(|x|-a/2)^2``, ``x^2-a^2/2``, ``2 gamma |x| - gamma^2 - a^2/2``."""
    _check_breakpoints(a, gamma)
    ax = np.abs(np.asarray(x, dtype=float))
    out = np.where(
        ax <= a / 2, 0.0,
        np.where(ax <= a, 2.0 * (ax - a / 2) ** 2,
                 np.where(ax <= gamma, ax * ax - a * a / 2,
                          2.0 * gamma * ax - gamma * gamma - a * a / 2)))
    return out if out.ndim else float(out)


def phi_derivative(x, a: float, gamma: float):
    _check_breakpoints(a, gamma)
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    mag = np.where(ax <= a / 2, 0.0,
                   np.where(ax <= a, 4.0 * (ax - a / 2),
                            np.where(ax <= gamma, 2.0 * ax, 2.0 * gamma)))
    out = np.sign(x) * mag
    return out if out.ndim else float(out)


def _check_breakpoints(a, gamma):
    if not 0 < a <= gamma:
        raise ValueError(f"need 0 < a/2 < a <= gamma, got a={a}, gamma={gamma}")


@dataclass(frozen=True)
class HardInstanceConfig:
    B: float = 1.0
    K: int = 2
    m: int = 2
    n: int = 500
    variant: str = "lipschitz"
    dim: int | None = None
    rotation_seed: int | None = None

    def __post_init__(self):
        if self.m <= 1:
            raise ValueError("the construction needs m > 1 blocks")
        if self.K < 1 or self.n < 1:
            raise ValueError("K and n must be positive")
        if self.variant not in ("lipschitz", "smooth"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.dim is not None and self.dim < 4 * self.K + 1:
            raise ValueError(f"dimension must be at least 4K+1 = {4 * self.K + 1}")
        if not self.B > 0:
            raise ValueError("B must be positive")

    @property
    def dimension(self) -> int:
        return 4 * self.K + 1 if self.dim is None else self.dim

    @property
    def scale(self) -> float:
        """Overall multiplier (``4BK`` or ``B^2``)."""
        return 4.0 * self.B * self.K if self.variant == "lipschitz" else self.B ** 2

    @property
    def gamma(self) -> float:
        return 2.0 * self.B / (self.scale * math.sqrt(self.K))

    @property
    def a(self) -> float:
        return 1.0 / math.sqrt(64.0 * self.K ** 3)

    @property
    def schedule(self) -> ScheduleConfig:
        return ScheduleConfig(self.K, self.m, self.n)

    def stated_gap(self) -> float:
        """Gap constant quoted for span-restricted points: ``B/(96K)`` or ``B^2/(256K)``."""
        if self.variant == "lipschitz":
            return self.B / (96.0 * self.K)
        return self.B ** 2 / (256.0 * self.K)

    def closed_form_optima(self) -> tuple[float, float] | None:
        """``(F*, F*_restricted)`` when both minimisers are interior to the ball.

        In difference coordinates ``delta_r = w_r - w_{r+1}`` the objective is
        separable and every difference sits at ``a``; the restricted problem
        has half as many free differences.  Returns ``None`` when the
        unrestricted minimiser would leave the ball, or for ``m != 2``.
        """
        if self.m != 2:
            return None
        K, a = self.K, self.a
        n4 = 4 * K
        norm_sq = a * a * n4 * (n4 + 1) * (2 * n4 + 1) / 6.0
        if norm_sq > self.B ** 2:
            return None
        per_term = self.scale / 16.0 * (-2.0 * a * a + phi(a, a, self.gamma))
        return n4 * per_term, 2 * K * per_term


class HardInstance(StochasticProblem):
    """Deterministic two-label problem; block ``i`` always yields its label."""

    def __init__(self, config: HardInstanceConfig):
        self.config = config
        self.num_components = config.m
        self.dim = config.dimension
        K = config.K
        if config.rotation_seed is None:
            self.vectors = np.eye(4 * K, self.dim)
        else:
            raw = make_rng(config.rotation_seed).standard_normal((self.dim, 4 * K))
            q, _ = np.linalg.qr(raw)
            self.vectors = q.T.copy()
        self._c = config.scale / 8.0
        self._a = config.a
        self._gamma = config.gamma

    def label_of_block(self, i: int) -> int:
        """Label 1 for the first half of the blocks, 2 for the rest."""
        if not 1 <= i <= self.num_components:
            raise ValueError(f"block {i} outside 1..{self.num_components}")
        return 1 if (i - 1) < self.num_components / 2 else 2

    def sample(self, i, rng=None) -> Sample:
        return Sample(self.label_of_block(i), i)

    def sample_block(self, i, size, rng=None):
        z = Sample(self.label_of_block(i), i)
        return [z] * size

    def support(self, i):
        return [Sample(self.label_of_block(i), i)], np.ones(1)

    def _differences(self, coords: np.ndarray, label: int) -> np.ndarray:
        if label == 1:
            return coords[1:-1:2] - coords[2::2]
        return coords[0::2] - coords[1::2]

    def hard_loss(self, w: np.ndarray, label: int) -> float:
        if label not in (1, 2):
            raise ValueError(f"label must be 1 or 2, got {label}")
        coords = self.vectors @ w
        total = float(np.sum(phi(self._differences(coords, label), self._a, self._gamma)))
        if label == 1:
            total += -2.0 * self._a * coords[0] + phi(coords[-1], self._a, self._gamma)
        return self._c * total

    def hard_gradient(self, w: np.ndarray, label: int) -> np.ndarray:
        if label not in (1, 2):
            raise ValueError(f"label must be 1 or 2, got {label}")
        coords = self.vectors @ w
        dcoef = phi_derivative(self._differences(coords, label), self._a, self._gamma)
        g = np.zeros_like(coords)
        if label == 1:
            g[1:-1:2] += dcoef
            g[2::2] -= dcoef
            g[0] -= 2.0 * self._a
            g[-1] += phi_derivative(coords[-1], self._a, self._gamma)
        else:
            g[0::2] += dcoef
            g[1::2] -= dcoef
        return self._c * (self.vectors.T @ g)

    def loss(self, w, z):
        return self.hard_loss(w, z.payload)

    def subgradient(self, w, z):
        return self.hard_gradient(w, z.payload)

    def loss_and_subgradient(self, w, z):
        return self.hard_loss(w, z.payload), self.hard_gradient(w, z.payload)

    def label_weights(self) -> tuple[float, float]:
        m = self.num_components
        ones = sum(1 for i in range(1, m + 1) if self.label_of_block(i) == 1)
        return ones / m, (m - ones) / m

    def objective(self, w: np.ndarray) -> float:
        """Exact mixture objective."""
        p1, p2 = self.label_weights()
        return p1 * self.hard_loss(w, 1) + p2 * self.hard_loss(w, 2)

    def objective_gradient(self, w: np.ndarray) -> np.ndarray:
        p1, p2 = self.label_weights()
        return p1 * self.hard_gradient(w, 1) + p2 * self.hard_gradient(w, 2)

    def smoothness(self) -> float:
        """Upper bound on the Lipschitz constant of the objective gradient."""
        # phi'' <= 4, each coupling vector has squared norm 2, couplings of a label are disjoint
        return self._c * 8.0


@dataclass
class SolveResult:
    x: np.ndarray
    value: float
    gradient_mapping_norm: float
    iterations: int


def minimize_on_ball(value_and_grad, x0: np.ndarray, B: float, L: float, tol: float = 1e-8,
                     max_iter: int = 2_000_000) -> SolveResult:
    """Projected gradient descent with step ``1/L`` until ``L |x - P(x - g/L)| < tol``."""
    x = project(np.array(x0, dtype=float), B)
    for it in range(1, max_iter + 1):
        _, g = value_and_grad(x)
        nxt = project(x - g / L, B)
        mapping = L * float(np.linalg.norm(x - nxt))
        x = nxt
        if mapping < tol:
            return SolveResult(x, value_and_grad(x)[0], mapping, it)
    raise SolverError(f"projected gradient did not reach {tol:g} in {max_iter} iterations "
                      f"(last gradient-mapping norm {mapping:.3g})")


def solve_optimum(instance: HardInstance, span: int | None = None, x0: np.ndarray | None = None,
                  tol: float = 1e-8) -> SolveResult:
    """Minimise the mixture over the ``B`` ball, optionally restricted to ``span{v_1..v_span}``.

    Works in coordinates of the chosen orthonormal vectors, so the restricted
    problem is an ordinary ball-constrained problem of dimension ``span``.
    """
    basis = instance.vectors if span is None else instance.vectors[:span]

    def value_and_grad(c):
        w = basis.T @ c
        return instance.objective(w), basis @ instance.objective_gradient(w)

    start = np.zeros(basis.shape[0]) if x0 is None else x0
    res = minimize_on_ball(value_and_grad, start, instance.config.B, instance.smoothness(), tol)
    return SolveResult(basis.T @ res.x, res.value, res.gradient_mapping_norm, res.iterations)


def verified_optimum(instance: HardInstance, span: int | None, seed: int = 0, tol: float = 1e-8,
                     agree: float = 1e-9) -> SolveResult:
    """Solve from the origin and from a random start; both must agree on the value."""
    first = solve_optimum(instance, span, tol=tol)
    size = instance.vectors.shape[0] if span is None else span
    start = make_rng(seed).standard_normal(size)
    start *= 0.5 * instance.config.B / np.linalg.norm(start)
    second = solve_optimum(instance, span, x0=start, tol=tol)
    if abs(first.value - second.value) > agree:
        raise SolverError(f"optimum differs between starts: {first.value!r} vs {second.value!r}")
    return first if first.value <= second.value else second


@dataclass
class StallReport:
    config: HardInstanceConfig
    span_profile: np.ndarray         # (K, 4K): max |<v_r, w_t>| over the query points of each cycle
    excess_last: float
    excess_average: float
    optimum: float
    restricted_optimum: float
    restricted_gap: float
    stated_gap: float
    closed_form: tuple[float, float] | None
    iid_excess_last: np.ndarray      # per seed
    iid_excess_average: np.ndarray
    notes: list[str] = field(default_factory=list)

    def leaked_mass(self) -> np.ndarray:
        """Per cycle ``k``: largest coordinate on ``v_r`` for ``r > 2k+1`` (0 if none)."""
        K, width = self.span_profile.shape
        out = np.zeros(K)
        for k in range(1, K + 1):
            tail = self.span_profile[k - 1, 2 * k + 1:]
            out[k - 1] = tail.max() if tail.size else 0.0
        return out

    @property
    def stated_gap_holds(self) -> bool:
        return self.restricted_gap >= self.stated_gap

    def to_dict(self) -> dict:
        cfg = self.config
        return {
            "config": {"B": cfg.B, "K": cfg.K, "m": cfg.m, "n": cfg.n, "variant": cfg.variant,
                       "dim": cfg.dimension, "rotation_seed": cfg.rotation_seed},
            "constants": {"scale": cfg.scale, "gamma": cfg.gamma, "a": cfg.a},
            "span_profile": self.span_profile.tolist(),
            "leaked_mass_per_cycle": self.leaked_mass().tolist(),
            "excess_last": float(self.excess_last),
            "excess_average": float(self.excess_average),
            "optimum": self.optimum,
            "restricted_optimum": self.restricted_optimum,
            "restricted_gap": float(self.restricted_gap),
            "stated_gap": self.stated_gap,
            "stated_gap_holds": bool(self.stated_gap_holds),
            "closed_form_optima": list(self.closed_form) if self.closed_form else None,
            "iid_excess_last_mean": float(np.mean(self.iid_excess_last)) if self.iid_excess_last.size else None,
            "iid_excess_average_mean": float(np.mean(self.iid_excess_average)) if self.iid_excess_average.size else None,
            "notes": self.notes,
        }


def stall_demo(config: HardInstanceConfig, iid_seeds: int = 10, sgd: SGDConfig | None = None,
               solver_tol: float = 1e-8) -> StallReport:
    """Run block-cyclic consensus SGD on the instance and measure how far it stays from optimal."""
    instance = HardInstance(config)
    schedule = config.schedule
    sgd = SGDConfig(B=config.B) if sgd is None else sgd
    K = config.K
    profile = np.zeros((K, 4 * K))
    stream = draw_stream(instance, schedule, 0)
    result = run_consensus(_TrackingProblem(instance, schedule, profile), schedule, sgd, stream=stream)
    # the post-cycle iterate also counts toward the cycle that produced it
    for k in range(K):
        np.maximum(profile[k], np.abs(instance.vectors @ result.checkpoints[k, -1]), out=profile[k])

    full = verified_optimum(instance, None, tol=solver_tol)
    restricted = verified_optimum(instance, 2 * K, tol=solver_tol)
    excess_last = instance.objective(result.final) - full.value
    excess_avg = instance.objective(result.average) - full.value

    iid_last, iid_avg = [], []
    for seed in range(iid_seeds):
        res = run_consensus(instance, schedule, sgd, stream=shuffled(stream, seed), check_components=False)
        iid_last.append(instance.objective(res.final) - full.value)
        iid_avg.append(instance.objective(res.average) - full.value)

    notes = []
    closed = config.closed_form_optima()
    if config.variant == "smooth":
        notes.append("smooth variant: the span-restricted gap of this construction scales as B^2/K^2; "
                     "the B^2/(256K) constant is reported but not expected to hold")
    return StallReport(config, profile, excess_last, excess_avg, full.value, restricted.value,
                       restricted.value - full.value, config.stated_gap(), closed,
                       np.array(iid_last), np.array(iid_avg), notes)


class _TrackingProblem(StochasticProblem):
    """Wraps an instance and records per-cycle max |<v_r, w_t>| over query points."""

    def __init__(self, inner: HardInstance, schedule: ScheduleConfig, out: np.ndarray):
        self.inner = inner
        self.dim = inner.dim
        self.num_components = inner.num_components
        self._per_cycle = schedule.m * schedule.n
        self._out = out
        self._t = 0

    def loss_and_subgradient(self, w, z):
        k = self._t // self._per_cycle
        np.maximum(self._out[k], np.abs(self.inner.vectors @ w), out=self._out[k])
        self._t += 1
        return self.inner.loss_and_subgradient(w, z)

    def loss(self, w, z):
        return self.inner.loss(w, z)

    def subgradient(self, w, z):
        return self.inner.subgradient(w, z)
