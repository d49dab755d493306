"""Problems whose components have small explicit supports, so risks are exact."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import expit

from ..core import Sample, StochasticProblem
from ..hard_instances import HardInstance, HardInstanceConfig


def logistic_loss_and_gradient(w: np.ndarray, X, y: np.ndarray, scale: float = 1.0):
    """Mean log-loss of ``sigmoid(X w)`` against labels ``y`` in {0, 1}, and its gradient.

    ``X`` may be dense or scipy-sparse.  ``scale`` multiplies both outputs.
    """
    y = np.asarray(y)
    if y.shape[0] == 0:
        raise ValueError("empty minibatch")
    signs = 2.0 * y - 1.0
    z = -signs * (X @ w)
    loss = float(np.mean(np.logaddexp(0.0, z)))
    coef = -signs * expit(z) / y.shape[0]
    grad = np.asarray(X.T @ coef).ravel()
    return scale * loss, scale * grad


def ball_loss_scale(B: float, radius: float) -> float:
    """Factor mapping logistic loss into ``[0, B]`` on the ``B`` ball for ``|x| <= radius``."""
    return B / float(np.logaddexp(0.0, B * radius))


class FiniteSupportProblem(StochasticProblem):
    """Pooled support points with one probability vector per component.

    Sample payloads are indices into the support.  Subclasses implement
    ``support_losses(w)`` (loss at every support point) and the per-point
    ``loss_and_subgradient``.
    """

    def __init__(self, probs: np.ndarray):
        probs = np.asarray(probs, dtype=float)
        if probs.ndim != 2 or np.any(probs < 0) or not np.allclose(probs.sum(axis=1), 1.0):
            raise ValueError("probs must be an (m, S) row-stochastic matrix")
        self.probs = probs / probs.sum(axis=1, keepdims=True)
        self.num_components = probs.shape[0]
        self._cdf = np.cumsum(self.probs, axis=1)
        self._cdf[:, -1] = 1.0

    def sample(self, i, rng):
        return self.sample_block(i, 1, rng)[0]

    def sample_block(self, i, size, rng):
        idx = np.searchsorted(self._cdf[i - 1], rng.random(size), side="right")
        return [Sample(int(s), i) for s in idx]

    def support(self, i):
        row = self.probs[i - 1]
        nz = np.flatnonzero(row)
        return [Sample(int(s), i) for s in nz], row[nz]

    def support_losses(self, w: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def component_risk(self, w, i, budget=1000, rng=None):
        return float(self.probs[i - 1] @ self.support_losses(np.asarray(w, dtype=float)))

    def pooled_probs(self) -> np.ndarray:
        return self.probs.mean(axis=0)

    def loss(self, w, z):
        return self.loss_and_subgradient(w, z)[0]

    def subgradient(self, w, z):
        return self.loss_and_subgradient(w, z)[1]


class FiniteLogisticProblem(FiniteSupportProblem):
    """Logistic regression over labelled support points ``(x_s, y_s)``, scaled by ``scale``."""

    def __init__(self, X: np.ndarray, y: np.ndarray, probs: np.ndarray, scale: float = 1.0):
        super().__init__(probs)
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float)
        if self.X.shape[0] != self.y.shape[0] or self.probs.shape[1] != self.X.shape[0]:
            raise ValueError("support size mismatch")
        self.dim = self.X.shape[1]
        self.scale = scale
        self._signs = 2.0 * self.y - 1.0
        self._rows = [row for row in self.X]

    def support_losses(self, w):
        return self.scale * np.logaddexp(0.0, -self._signs * (self.X @ w))

    def support_gradients(self, w):
        coef = -self._signs * expit(-self._signs * (self.X @ w))
        return self.scale * coef[:, None] * self.X

    def loss_and_subgradient(self, w, z):
        s = z.payload
        x = self._rows[s]
        zz = -self._signs[s] * float(x @ w)
        if zz > 0:
            loss = zz + math.log1p(math.exp(-zz))
            sig = 1.0 / (1.0 + math.exp(-zz))
        else:
            e = math.exp(zz)
            loss = math.log1p(e)
            sig = e / (1.0 + e)
        return self.scale * loss, (-self.scale * self._signs[s] * sig) * x

    def component_gradient(self, w, i):
        return self.probs[i - 1] @ self.support_gradients(w)

    def positive_rate(self, i: int) -> float:
        return float(self.probs[i - 1] @ self.y)


class FiniteQuadraticProblem(FiniteSupportProblem):
    """``f(w, z) = |w - z|^2 / 2`` over finitely many targets ``z``."""

    def __init__(self, targets: np.ndarray, probs: np.ndarray):
        super().__init__(probs)
        self.targets = np.atleast_2d(np.asarray(targets, dtype=float))
        if self.targets.shape[0] != self.probs.shape[1]:
            self.targets = self.targets.T
        self.dim = self.targets.shape[1]

    def support_losses(self, w):
        diff = w[None, :] - self.targets
        return 0.5 * np.sum(diff * diff, axis=1)

    def loss_and_subgradient(self, w, z):
        diff = w - self.targets[z.payload]
        return 0.5 * float(diff @ diff), diff

    def component_mean(self, i: int) -> np.ndarray:
        return self.probs[i - 1] @ self.targets


def finite_logistic_task(points: np.ndarray, positive_prob: np.ndarray, point_weights: np.ndarray,
                         B: float = 1.0, normalize: bool = True) -> FiniteLogisticProblem:
    """Expand ``(m, P)`` point weights and ``P(y=1 | x_p)`` into a labelled finite problem.

    With ``normalize`` the loss is scaled so that ``0 <= f <= B`` on the
    ``B`` ball (points must then satisfy ``|x| <= 1``), which also keeps the
    loss 1-Lipschitz.
    """
    points = np.asarray(points, dtype=float)
    weights = np.atleast_2d(np.asarray(point_weights, dtype=float))
    weights = weights / weights.sum(axis=1, keepdims=True)
    pos = np.broadcast_to(np.asarray(positive_prob, dtype=float), weights.shape)
    radius = float(np.max(np.linalg.norm(points, axis=1)))
    if normalize and radius > 1 + 1e-12:
        raise ValueError("normalised tasks need |x| <= 1")
    X = np.vstack([points, points])
    y = np.concatenate([np.ones(len(points)), np.zeros(len(points))])
    probs = np.hstack([weights * pos, weights * (1.0 - pos)])
    scale = ball_loss_scale(B, max(radius, 1e-12)) if normalize else 1.0
    return FiniteLogisticProblem(X, y, probs, scale)


def _skew_points():
    # signal along e1 at four strengths, symmetric nuisance along e2 / e3
    levels = np.array([-1.0, -0.5, 0.5, 1.0])
    nuisance = np.array([[0.6, 0.0], [-0.6, 0.0], [0.0, 0.6], [0.0, -0.6]])
    pts = np.array([[0.8 * c, *e] for c in levels for e in nuisance])
    return pts, np.repeat(levels, len(nuisance))


def label_skew_task(m: int = 2, tilt: float = 1.5, sharpness: float = 4.0, B: float = 1.0,
                    identical: bool = False) -> FiniteLogisticProblem:
    """Covariate-shift label skew with a shared conditional ``P(y=1|x) = sigmoid(sharpness * x_1)``.

    Component ``i`` reweights the signal levels by ``exp(tau_i * level)`` with
    ``tau`` running linearly from ``+tilt`` to ``-tilt``, so early components
    are mostly positive and late ones mostly negative.  Because the
    conditional is shared and its parameter lies outside the ``B`` ball, every
    component (and the mixture) is minimised over the ball at ``B e_1``.
    ``identical`` drops the reweighting, so every component (for every
    ``m``) is the same balanced distribution.
    """
    pts, levels = _skew_points()
    taus = np.linspace(tilt, -tilt, m) if m > 1 and not identical else np.zeros(m)
    weights = np.exp(taus[:, None] * levels[None, :])
    weights /= weights.sum(axis=1, keepdims=True)
    pos = expit(sharpness * 0.8 * levels)
    problem = finite_logistic_task(pts, pos, weights, B)
    if sharpness * 0.8 > B:
        problem.reference_optimum = np.array([B, 0.0, 0.0])
    return problem


def conflicting_task(m: int = 6, sharpness: float = 4.0, B: float = 1.0) -> FiniteLogisticProblem:
    """First half of the components label by ``sign(x_1)``-ish, the second half by its opposite."""
    pts, levels = _skew_points()
    signs = np.where(np.arange(m) < m / 2, 1.0, -1.0)
    pos = expit(signs[:, None] * sharpness * 0.8 * levels[None, :])
    weights = np.ones((m, len(pts)))
    return finite_logistic_task(pts, pos, weights, B)


def quadratic_task(targets=(-0.3, 0.0, 0.2, 0.5), probs=(0.1, 0.2, 0.3, 0.4), m: int = 1) -> FiniteQuadraticProblem:
    """1-D squared loss; 1-Lipschitz on ``|w| <= 0.5`` for targets in ``[-0.5, 0.5]``."""
    probs = np.tile(np.asarray(probs, dtype=float), (m, 1))
    problem = FiniteQuadraticProblem(np.asarray(targets, dtype=float)[:, None], probs)
    problem.reference_optimum = problem.component_mean(1)
    return problem


def two_point_conflict_task(B: float = 1.0, K: int = 2, variant: str = "lipschitz") -> HardInstance:
    """Two deterministic components whose objectives are the two hard-instance labels."""
    return HardInstance(HardInstanceConfig(B=B, K=K, m=2, n=1, variant=variant))
