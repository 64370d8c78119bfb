from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advcmdp.envmodel import (
    JOB_PRESET_ID,
    FeatureMap,
    LossSchedule,
    draw_loss_params,
    job_scheduling_config,
    job_scheduling_spec,
    mean_cost,
    preset_config,
    sample_cost,
    sample_transition,
    spec_from_config,
    tabular_features,
)
from advcmdp.errors import ConfigError

from .oracles import random_tiny_cmdp


@pytest.fixture(scope="module")
def job_spec():
    return job_scheduling_spec(num_episodes=1000)


# ---------------------------------------------------------------------------
# job-scheduling preset: frozen transition and cost values


def test_job_sizes(job_spec):
    assert job_spec.horizon == 10
    assert job_spec.num_states == 10
    assert job_spec.num_actions == 2
    assert job_spec.dim == 20
    assert job_spec.states[job_spec.initial_state] == 9
    assert job_spec.budget == 5.6


def test_job_transition_rows_from_full_stack(job_spec):
    # processing from 9: down two w.p. 0.8, one w.p. 0.1, hold w.p. 0.1
    row = job_spec.P[0, 9, 1]
    expected = np.zeros(10)
    expected[7], expected[8], expected[9] = 0.8, 0.1, 0.1
    np.testing.assert_allclose(row, expected, atol=1e-15)
    # idling holds the stack with certainty
    np.testing.assert_allclose(job_spec.P[4, 9, 0], np.eye(10)[9], atol=1e-15)


def test_job_transition_clips_at_empty_stack(job_spec):
    # from one remaining job, both possible drops land on zero: P(0) = 0.9
    row = job_spec.P[0, 1, 1]
    assert row[0] == pytest.approx(0.9, abs=1e-15)
    assert row[1] == pytest.approx(0.1, abs=1e-15)
    assert row[2:].max() == 0.0
    # from an empty stack, processing is a self-loop
    np.testing.assert_allclose(job_spec.P[0, 0, 1], np.eye(10)[0], atol=1e-15)


def test_job_mean_costs_frozen(job_spec):
    # full stack, processing: 0.8 * 0 + 0.1 * 0.5 + 0.1 * 1 = 0.15
    assert mean_cost(job_spec, 0, 9, 1) == pytest.approx(0.15, abs=1e-12)
    # one job left: 0.9 * 0.5 + 0.1 * 1 = 0.55
    assert mean_cost(job_spec, 3, 1, 1) == pytest.approx(0.55, abs=1e-12)
    # idling or processing an empty stack makes no progress: cost 1
    assert mean_cost(job_spec, 0, 5, 0) == pytest.approx(1.0, abs=1e-12)
    assert mean_cost(job_spec, 0, 0, 1) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(
        job_spec.mean_cost_table[2, 9, 1], 0.15, atol=1e-12
    )


def test_job_loss_tables_frozen(job_spec):
    f1 = job_spec.loss_table(job_spec.loss_schedule.f1)
    f2 = job_spec.loss_table(job_spec.loss_schedule.f2)
    # idling always costs the full unit loss
    assert np.all(f1[:, :, 0] == 1.0)
    assert np.all(f2[:, :, 0] == 1.0)
    # first profile penalizes processing on steps 3-6 (1-based) at 0.55
    assert f1[2, 4, 1] == pytest.approx(0.55)
    assert f1[5, 0, 1] == pytest.approx(0.55)
    assert f1[0, 4, 1] == pytest.approx(0.2)
    assert f1[6, 4, 1] == pytest.approx(0.2)
    # second profile penalizes steps 4-6 at 0.6
    assert f2[3, 7, 1] == pytest.approx(0.6)
    assert f2[2, 7, 1] == pytest.approx(0.2)
    assert f2[6, 7, 1] == pytest.approx(0.2)


def test_job_slater_gap_frozen(job_spec):
    """Cheapest policy is always-process; its value follows from the drop identity.

    Total cost of any trajectory is H - (9 - s_final)/2, so the cheapest
    expected value comes from propagating the always-process chain forward.
    """
    T = job_spec.P[0, :, 1, :]
    dist = np.zeros(10)
    dist[9] = 1.0
    for _ in range(10):
        dist = dist @ T
    e_final = dist @ np.arange(10)
    min_vg = 10 - (9 - e_final) / 2
    assert min_vg == pytest.approx(5.50020874485, abs=1e-10)
    assert job_spec.budget - min_vg == pytest.approx(0.09979125515, abs=1e-10)


# ---------------------------------------------------------------------------
# loss drift schedule


def test_drift_probability_endpoints():
    sched = job_scheduling_spec(num_episodes=100000).loss_schedule
    assert sched.drift_probability(1) == pytest.approx(0.9)
    assert sched.drift_probability(100000) == pytest.approx(0.0, abs=1e-15)
    mid = sched.drift_probability(50000)
    assert 0.44 < mid < 0.46
    with pytest.raises(ValueError):
        sched.drift_probability(0)
    with pytest.raises(ValueError):
        sched.drift_probability(100001)


def test_drift_single_episode_convention():
    sched = job_scheduling_spec(num_episodes=1).loss_schedule
    assert sched.drift_probability(1) == pytest.approx(0.9)


def test_fixed_schedule_always_f1(rng):
    f1 = np.full((2, 4), 0.25)
    sched = LossSchedule(variant="fixed", f1=f1, f2=None, num_episodes=5)
    assert sched.drift_probability(3) == 1.0
    for k in range(1, 6):
        assert draw_loss_params(sched, k, rng) is sched.f1


def test_draw_frequencies_match_drift(job_spec):
    """Empirical f1 frequency at the midpoint stays within 4 sigma of p_k."""
    rng = np.random.default_rng(7)
    sched = job_spec.loss_schedule
    k = (sched.num_episodes + 1) // 2
    p = sched.drift_probability(k)
    n = 4000
    hits = sum(draw_loss_params(sched, k, rng) is sched.f1 for _ in range(n))
    sigma = np.sqrt(p * (1 - p) / n)
    assert abs(hits / n - p) < 4 * sigma


def test_draw_uses_exactly_one_uniform(job_spec):
    r1 = np.random.default_rng(99)
    r2 = np.random.default_rng(99)
    draw_loss_params(job_spec.loss_schedule, 10, r1)
    r2.random()
    assert r1.random() == r2.random()


# ---------------------------------------------------------------------------
# sampling


def test_sample_transition_frequencies(job_spec):
    rng = np.random.default_rng(3)
    n = 20000
    counts = np.zeros(10)
    for _ in range(n):
        counts[sample_transition(job_spec, 0, 9, 1, rng)] += 1
    freq = counts / n
    assert counts[:7].sum() == 0  # only 7, 8, 9 are reachable from a full stack
    for target, p in ((7, 0.8), (8, 0.1), (9, 0.1)):
        sigma = np.sqrt(p * (1 - p) / n)
        assert abs(freq[target] - p) < 4 * sigma


def test_sample_cost_matches_progress(job_spec):
    assert sample_cost(job_spec, 0, 9, 1, 7) == pytest.approx(0.0)
    assert sample_cost(job_spec, 0, 9, 1, 8) == pytest.approx(0.5)
    assert sample_cost(job_spec, 0, 9, 1, 9) == pytest.approx(1.0)
    assert sample_cost(job_spec, 0, 4, 0, 4) == pytest.approx(1.0)


def test_bernoulli_cost_mean(rng):
    spec, _, _ = random_tiny_cmdp(np.random.default_rng(11))
    h, s, a = 0, 0, 1
    m = spec.mean_cost_table[h, s, a]
    n = 8000
    draws = [sample_cost(spec, h, s, a, 0, rng) for _ in range(n)]
    assert set(draws) <= {0.0, 1.0}
    sigma = np.sqrt(max(m * (1 - m), 1e-9) / n)
    assert abs(np.mean(draws) - m) < 5 * sigma


# ---------------------------------------------------------------------------
# linear structure invariants


def test_one_hot_features(job_spec):
    table = job_spec.features.table
    flat = table.reshape(20, 20)
    np.testing.assert_array_equal(flat, np.eye(20))
    np.testing.assert_allclose(np.linalg.norm(table, axis=2), 1.0)


def test_linear_factorization_exact(job_spec):
    P = np.einsum("sad,hxd->hsax", job_spec.features.table, job_spec.psi)
    np.testing.assert_allclose(P, job_spec.P, atol=1e-14)
    costs = np.einsum("sad,hd->hsa", job_spec.features.table, job_spec.theta_g)
    np.testing.assert_allclose(costs, job_spec.mean_cost_table, atol=1e-14)


def test_norm_bounds_hold(job_spec):
    d = job_spec.dim
    assert np.linalg.norm(job_spec.features.table, axis=2).max() <= 1.0 + 1e-12
    psi_norm = np.linalg.norm(np.abs(job_spec.psi).sum(axis=1), axis=1).max()
    assert psi_norm <= np.sqrt(d) + 1e-9
    assert np.linalg.norm(job_spec.theta_g, axis=1).max() <= np.sqrt(d) + 1e-9


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_random_tabular_specs_are_consistent(seed):
    spec, theta_f, budget = random_tiny_cmdp(np.random.default_rng(seed))
    np.testing.assert_allclose(spec.P.sum(axis=3), 1.0, atol=1e-9)
    assert spec.P.min() >= 0.0
    assert 0.0 <= budget <= spec.horizon
    loss = spec.loss_table(theta_f)
    assert loss.min() >= -1e-9 and loss.max() <= 1.0 + 1e-9
    assert spec.mean_cost_table.min() >= -1e-9
    assert spec.mean_cost_table.max() <= 1.0 + 1e-9


# ---------------------------------------------------------------------------
# config plumbing and validation


def test_preset_roundtrip():
    a = spec_from_config(JOB_PRESET_ID, num_episodes=50)
    b = spec_from_config({"preset": JOB_PRESET_ID}, num_episodes=50)
    c = spec_from_config(job_scheduling_config(), num_episodes=50)
    for other in (b, c):
        np.testing.assert_array_equal(a.P, other.P)
        np.testing.assert_array_equal(a.theta_g, other.theta_g)
        assert a.budget == other.budget


def test_unknown_preset_rejected():
    with pytest.raises(ConfigError):
        preset_config("no-such-environment")


def test_missing_key_rejected():
    cfg = job_scheduling_config()
    del cfg["budget"]
    with pytest.raises(ConfigError, match="budget"):
        spec_from_config(cfg, num_episodes=10)


def test_bad_initial_state_rejected():
    cfg = job_scheduling_config()
    cfg["initial_state"] = 42
    with pytest.raises(ConfigError, match="initial state"):
        spec_from_config(cfg, num_episodes=10)


def test_budget_out_of_range_rejected():
    cfg = job_scheduling_config()
    cfg["budget"] = 11.0
    with pytest.raises(ConfigError, match="budget"):
        spec_from_config(cfg, num_episodes=10)
    cfg["budget"] = -0.5
    with pytest.raises(ConfigError):
        spec_from_config(cfg, num_episodes=10)


def test_non_stochastic_table_rejected():
    spec, _, _ = random_tiny_cmdp(np.random.default_rng(0))
    H, S, A = spec.horizon, spec.num_states, spec.num_actions
    probs = spec.P.copy()
    probs[0, 0, 0, 0] += 0.2
    cfg = {
        "horizon": H,
        "states": list(range(S)),
        "actions": list(range(A)),
        "transition": {"id": "table", "params": {"probs": probs.tolist()}},
        "cost": {"id": "bernoulli-mean", "params": {"mean": spec.mean_cost_table.tolist()}},
        "loss_schedule": {"id": "fixed", "params": {"f": spec.mean_cost_table.tolist()}},
        "budget": 1.0,
        "initial_state": 0,
    }
    with pytest.raises(ConfigError, match="sum to 1|outside"):
        spec_from_config(cfg, num_episodes=5)


def test_cost_mean_out_of_range_rejected():
    spec, _, _ = random_tiny_cmdp(np.random.default_rng(1))
    H, S, A = spec.horizon, spec.num_states, spec.num_actions
    bad = np.full((H, S, A), 1.5)
    cfg = {
        "horizon": H,
        "states": list(range(S)),
        "actions": list(range(A)),
        "transition": {"id": "table", "params": {"probs": spec.P.tolist()}},
        "cost": {"id": "bernoulli-mean", "params": {"mean": bad.tolist()}},
        "loss_schedule": {"id": "fixed", "params": {"f": (bad * 0).tolist()}},
        "budget": 1.0,
        "initial_state": 0,
    }
    with pytest.raises(ConfigError):
        spec_from_config(cfg, num_episodes=5)


def test_feature_norm_rejected():
    with pytest.raises(ConfigError, match="norm"):
        FeatureMap(dim=2, table=np.full((1, 1, 2), 1.0))


def test_tabular_features_shape():
    fm = tabular_features(3, 2)
    assert fm.dim == 6
    np.testing.assert_array_equal(fm.vector(1, 0), np.eye(6)[2])


def test_unknown_rule_ids_rejected():
    cfg = job_scheduling_config()
    cfg["transition"] = {"id": "mystery", "params": {}}
    with pytest.raises(ConfigError, match="transition"):
        spec_from_config(cfg, num_episodes=5)
    cfg = job_scheduling_config()
    cfg["cost"] = {"id": "mystery", "params": {}}
    with pytest.raises(ConfigError, match="cost"):
        spec_from_config(cfg, num_episodes=5)
    cfg = job_scheduling_config()
    cfg["loss_schedule"] = {"id": "mystery", "params": {}}
    with pytest.raises(ConfigError, match="loss"):
        spec_from_config(cfg, num_episodes=5)
