import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blockcyclic.core import (ScheduleConfig, block_iterations, block_of_iteration, chord_violation, make_rng,
                              max_subgradient_norm, mixture_objective, pluralistic_objective, schedule_index)
from blockcyclic.tasks import label_skew_task, quadratic_task

schedules = st.builds(ScheduleConfig, st.integers(1, 6), st.integers(1, 6), st.integers(1, 6))


def test_schedule_index_examples():
    cfg = ScheduleConfig(K=3, m=4, n=5)
    assert cfg.T == 60
    assert schedule_index(1, 1, 1, cfg) == 1
    assert schedule_index(1, 2, 1, cfg) == 6
    assert schedule_index(2, 1, 1, cfg) == 21
    assert schedule_index(3, 4, 5, cfg) == 60


@given(schedules)
def test_schedule_is_a_bijection(cfg):
    seen = [schedule_index(k, i, j, cfg) for k in range(1, cfg.K + 1) for i in range(1, cfg.m + 1)
            for j in range(1, cfg.n + 1)]
    assert seen == list(range(1, cfg.T + 1))
    for t in seen:
        assert schedule_index(*block_of_iteration(t, cfg), cfg) == t


@given(schedules)
def test_block_iterations_partition_the_stream(cfg):
    parts = np.concatenate([block_iterations(i, cfg) for i in range(1, cfg.m + 1)])
    assert sorted(parts.tolist()) == list(range(1, cfg.T + 1))
    for i in range(1, cfg.m + 1):
        assert all(block_of_iteration(int(t), cfg)[1] == i for t in block_iterations(i, cfg))


@pytest.mark.parametrize("bad", [(0, 1, 1), (1, 0, 1), (1, 1, 0), (2.5, 1, 1), (-1, 2, 2)])
def test_schedule_rejects_non_positive(bad):
    with pytest.raises(ValueError):
        ScheduleConfig(*bad)


def test_out_of_range_indices():
    cfg = ScheduleConfig(2, 2, 2)
    with pytest.raises(ValueError):
        schedule_index(3, 1, 1, cfg)
    with pytest.raises(ValueError):
        block_of_iteration(0, cfg)
    with pytest.raises(ValueError):
        block_of_iteration(9, cfg)
    with pytest.raises(ValueError):
        block_iterations(3, cfg)


def test_make_rng_keys_are_independent_and_reproducible():
    a = make_rng(5, 0).random(4)
    assert np.array_equal(a, make_rng(5, 0).random(4))
    assert not np.array_equal(a, make_rng(5, 1).random(4))
    assert not np.array_equal(a, make_rng(6, 0).random(4))
    gen = np.random.default_rng(1)
    assert make_rng(gen) is gen
    with pytest.raises(ValueError):
        make_rng(gen, 1)


def test_mixture_is_mean_of_components():
    p = label_skew_task(4, tilt=1.0)
    w = np.array([0.3, -0.2, 0.1])
    comps = [p.component_risk(w, i) for i in range(1, 5)]
    assert mixture_objective(p, w) == pytest.approx(np.mean(comps), rel=1e-14)
    assert pluralistic_objective(p, np.tile(w, (4, 1))) == pytest.approx(mixture_objective(p, w), rel=1e-14)


def test_exact_risk_matches_monte_carlo():
    p = quadratic_task()
    w = np.array([0.1])
    exact = p.component_risk(w, 1)
    rng = make_rng(0, 1)
    mc = np.mean([p.loss(w, z) for z in p.sample_block(1, 20_000, rng)])
    assert mc == pytest.approx(exact, rel=0.02)


def test_objective_shape_checks():
    p = quadratic_task(m=2)
    with pytest.raises(ValueError):
        mixture_objective(p, np.zeros(2))
    with pytest.raises(ValueError):
        pluralistic_objective(p, np.zeros((3, 1)))
    with pytest.raises(ValueError):
        mixture_objective(p, np.zeros(1), budget=0)


def test_property_helpers_on_convex_lipschitz_task():
    p = label_skew_task(2)
    rng = make_rng(0)
    assert max_subgradient_norm(p, 1.0, 500, rng) <= 1.0 + 1e-12
    assert chord_violation(p, 1.0, 1000, rng) <= 1e-12


@settings(max_examples=50)
@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(0, 1))
def test_quadratic_loss_chord(u, v, lam):
    p = quadratic_task()
    z = p.sample(1, make_rng(0))
    mid = p.loss(np.array([lam * u + (1 - lam) * v]), z)
    assert mid <= lam * p.loss(np.array([u]), z) + (1 - lam) * p.loss(np.array([v]), z) + 1e-12
