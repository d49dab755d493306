import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from blockcyclic.core import Sample, StochasticProblem
from blockcyclic.engine import (ChainState, SGDConfig, block_average, ogd_regret_bound, project, regret_against,
                                step)
from blockcyclic.errors import ChainDivergedError
from blockcyclic.tasks import quadratic_task

vectors = arrays(np.float64, st.integers(1, 6), elements=st.floats(-1e3, 1e3))


@given(vectors, st.floats(0.01, 100))
def test_projection_lands_in_ball_and_is_idempotent(w, B):
    p = project(w, B)
    assert np.linalg.norm(p) <= B * (1 + 1e-12)
    np.testing.assert_allclose(project(p, B), p, rtol=1e-12, atol=1e-12)
    if np.linalg.norm(w) <= B:
        assert p is w


def test_projection_example():
    np.testing.assert_allclose(project(np.array([3.0, 4.0]), 1.0), [0.6, 0.8])
    with pytest.raises(ValueError):
        project(np.ones(2), 0.0)


def test_step_sizes():
    cfg = SGDConfig(B=2.0)
    assert cfg.step_size(50) == pytest.approx(2.0 / math.sqrt(100))
    assert cfg.with_eta(0.3).step_size(10) == 0.3
    assert SGDConfig(use_projection=False).bound is None
    with pytest.raises(ValueError):
        SGDConfig(step_rule="constant")
    with pytest.raises(ValueError):
        SGDConfig(step_rule="cosine")
    with pytest.raises(ValueError):
        SGDConfig(B=-1)
    with pytest.raises(ValueError):
        cfg.step_size(0)


def test_initial_iterate():
    assert np.array_equal(SGDConfig().initial_iterate(3), np.zeros(3))
    assert np.array_equal(SGDConfig(initial=(1.0, 2.0)).initial_iterate(2), [1.0, 2.0])
    with pytest.raises(ValueError):
        SGDConfig(initial=(1.0,)).initial_iterate(2)


class Linear(StochasticProblem):
    dim = 2
    num_components = 1

    def loss_and_subgradient(self, w, z):
        return float(z.payload @ w), z.payload


def test_step_records_pre_update_point():
    state = ChainState(np.array([0.5, 0.0]), num_blocks=2)
    loss = step(state, Sample(np.array([1.0, 0.0]), 1), 2, Linear(), eta=0.25, bound=1.0)
    assert loss == 0.5
    assert state.t == 1
    np.testing.assert_allclose(state.w, [0.25, 0.0])
    np.testing.assert_allclose(state.block_sums[1], [0.5, 0.0])
    assert state.block_counts.tolist() == [0, 1]
    np.testing.assert_allclose(block_average(state, 2), [0.5, 0.0])
    with pytest.raises(ValueError):
        block_average(state, 1)
    with pytest.raises(ValueError):
        block_average(state, 3)


def test_step_projects():
    state = ChainState(np.zeros(2))
    step(state, Sample(np.array([-10.0, 0.0]), 1), 1, Linear(), eta=1.0, bound=2.0)
    np.testing.assert_allclose(state.w, [2.0, 0.0])


def test_divergence_raises():
    state = ChainState(np.zeros(2))
    with pytest.raises(ChainDivergedError) as info, np.errstate(invalid="ignore"):
        step(state, Sample(np.array([np.inf, 0.0]), 1), 1, Linear(), eta=1.0)
    assert info.value.category == "divergence"
    assert state.t == 0


def test_regret_against_and_bound():
    p = quadratic_task()
    cfg = SGDConfig(B=0.5)
    T = 400
    eta = cfg.step_size(T)
    rng = np.random.default_rng(0)
    state = ChainState.start(cfg, 1)
    seq = p.sample_block(1, T, rng)
    for z in seq:
        step(state, z, 1, p, eta, cfg.bound)
    comparator = p.reference_optimum
    regret = regret_against(state, comparator, [p.loss(comparator, z) for z in seq], 0.5)
    assert regret <= ogd_regret_bound(0.5, T)
    with pytest.raises(ValueError):
        regret_against(state, comparator, [0.0] * (T - 1))
    with pytest.raises(ValueError):
        regret_against(state, np.array([2.0]), [0.0] * T, B=0.5)
    assert ogd_regret_bound(1.0, 50) == pytest.approx(10.0)


def test_chain_average():
    state = ChainState(np.zeros(1))
    with pytest.raises(ValueError):
        state.average
    with pytest.raises(ValueError):
        ChainState(np.array([np.nan]))
