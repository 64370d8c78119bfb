from __future__ import annotations

import numpy as np
import pytest

from advcmdp.envmodel import job_scheduling_spec, spec_from_config
from advcmdp.errors import InfeasibleError
from advcmdp.oracle import (
    ConstrainedOptimum,
    constrained_optimum,
    dp_policy_value,
    dual_value,
    greedy_min_value,
    slater_margin,
)

from .oracles import (
    brute_force_constrained,
    deterministic_policy_values,
    mc_policy_value,
    random_tiny_cmdp,
)


@pytest.fixture(scope="module")
def job_spec():
    return job_scheduling_spec(num_episodes=100)


def _uniform(spec):
    return np.full((spec.horizon, spec.num_states, spec.num_actions),
                   1.0 / spec.num_actions)


# ---------------------------------------------------------------------------
# policy evaluation


def test_dp_unit_reward_gives_horizon(job_spec):
    v = dp_policy_value(job_spec, _uniform(job_spec), np.ones((10, 10, 2)))
    np.testing.assert_allclose(v[0], 10.0, atol=1e-12)
    np.testing.assert_allclose(v[10], 0.0)


def test_dp_single_step_is_average():
    spec, theta_f, _ = random_tiny_cmdp(np.random.default_rng(2))
    pi = _uniform(spec)
    reward = spec.loss_table(theta_f)
    v = dp_policy_value(spec, pi, reward)
    np.testing.assert_allclose(
        v[spec.horizon - 1],
        np.sum(pi[spec.horizon - 1] * reward[spec.horizon - 1], axis=1),
        atol=1e-13,
    )


def test_dp_accepts_callables(job_spec):
    table = _uniform(job_spec)
    v_table = dp_policy_value(job_spec, table, job_spec.mean_cost_table)
    v_call = dp_policy_value(
        job_spec,
        lambda h, s: table[h, s],
        lambda h, s, a: job_spec.mean_cost_table[h, s, a],
    )
    np.testing.assert_allclose(v_call, v_table, atol=1e-12)


def test_dp_matches_monte_carlo_quick(job_spec):
    rng = np.random.default_rng(8)
    logits = rng.normal(size=(10, 10, 2))
    pi = np.exp(logits)
    pi /= pi.sum(axis=2, keepdims=True)
    v = dp_policy_value(job_spec, pi, job_spec.mean_cost_table)
    mean, se = mc_policy_value(job_spec, pi, job_spec.mean_cost_table,
                               n_rollouts=100_000, seed=60)
    assert abs(v[0, job_spec.initial_state] - mean) <= 3.0 * se


def test_greedy_min_lower_bounds_all_policies(job_spec):
    rng = np.random.default_rng(4)
    reward = rng.uniform(0, 1, size=(10, 10, 2))
    vmin = greedy_min_value(job_spec, reward)
    for _ in range(10):
        logits = rng.normal(size=(10, 10, 2))
        pi = np.exp(logits)
        pi /= pi.sum(axis=2, keepdims=True)
        v = dp_policy_value(job_spec, pi, reward)
        assert np.all(vmin <= v + 1e-10)


# ---------------------------------------------------------------------------
# Slater margin


def test_job_slater_margin_frozen(job_spec):
    assert slater_margin(job_spec) == pytest.approx(0.09979125515, abs=1e-10)


def test_slater_margin_budget_override(job_spec):
    base = slater_margin(job_spec)
    assert slater_margin(job_spec, budget=6.6) == pytest.approx(base + 1.0, abs=1e-12)


def test_slater_margin_signs():
    spec, _, _ = random_tiny_cmdp(np.random.default_rng(3))
    min_vg = greedy_min_value(spec, spec.mean_cost_table)[0, spec.initial_state]
    assert slater_margin(spec, budget=float(min_vg)) == pytest.approx(0.0, abs=1e-12)
    assert slater_margin(spec, budget=float(min_vg) - 0.25) == pytest.approx(
        -0.25, abs=1e-12
    )


# ---------------------------------------------------------------------------
# dual function geometry


def test_dual_value_concave_midpoints():
    rng = np.random.default_rng(14)
    for seed in range(5):
        spec, theta_f, budget = random_tiny_cmdp(np.random.default_rng(seed))
        f_table = spec.loss_table(theta_f)
        lams = np.sort(rng.uniform(0.0, 5.0, size=3))
        d = [dual_value(spec, f_table, float(l), budget)[0] for l in lams]
        if lams[2] - lams[0] > 1e-9:
            t = (lams[1] - lams[0]) / (lams[2] - lams[0])
            chord = (1 - t) * d[0] + t * d[2]
            assert d[1] >= chord - 1e-9


def test_dual_subgradient_is_policy_cost_gap():
    spec, theta_f, budget = random_tiny_cmdp(np.random.default_rng(21))
    f_table = spec.loss_table(theta_f)
    d, sub = dual_value(spec, f_table, 0.0, budget)
    # at lambda = 0 the dual value is the unconstrained greedy minimum
    assert d == pytest.approx(
        float(greedy_min_value(spec, f_table)[0, spec.initial_state]), abs=1e-12
    )
    assert sub >= float(
        greedy_min_value(spec, spec.mean_cost_table)[0, spec.initial_state]
    ) - budget - 1e-9


# ---------------------------------------------------------------------------
# constrained optimum


def test_slack_budget_reduces_to_greedy(job_spec):
    """With budget = H every policy is safe: V* is the unconstrained minimum."""
    f_table = job_spec.loss_table(job_spec.loss_schedule.f1)
    out = constrained_optimum(job_spec, job_spec.loss_schedule.f1, budget=10.0)
    assert isinstance(out, ConstrainedOptimum)
    assert out.lambda_star == 0.0
    assert out.value == pytest.approx(
        float(greedy_min_value(job_spec, f_table)[0, job_spec.initial_state]),
        abs=1e-12,
    )
    assert out.slater_gamma == pytest.approx(10.0 - 5.50020874485, abs=1e-9)


def test_infeasible_budget_raises():
    spec, theta_f, _ = random_tiny_cmdp(np.random.default_rng(17))
    min_vg = greedy_min_value(spec, spec.mean_cost_table)[0, spec.initial_state]
    with pytest.raises(InfeasibleError):
        constrained_optimum(spec, theta_f, budget=float(min_vg) - 0.1)


def test_zero_margin_budget_warns_but_solves(caplog):
    spec, theta_f, _ = random_tiny_cmdp(np.random.default_rng(23))
    min_vg = float(greedy_min_value(spec, spec.mean_cost_table)[0, spec.initial_state])
    with caplog.at_level("WARNING", logger="advcmdp"):
        out = constrained_optimum(spec, theta_f, budget=min_vg)
    assert any("Slater" in r.message for r in caplog.records)
    assert np.isfinite(out.value)


def test_bisection_matches_brute_force_small_batch():
    """Module-level smoke version of the exhaustive-enumeration comparison."""
    for seed in (100, 101):
        spec, theta_f, budget = random_tiny_cmdp(np.random.default_rng(seed))
        out = constrained_optimum(spec, theta_f)
        brute = brute_force_constrained(spec, spec.loss_table(theta_f), budget)
        assert out.value == pytest.approx(brute, abs=1e-4)
        assert out.lambda_star >= 0.0


def test_optimum_never_below_unconstrained_minimum():
    for seed in range(6):
        spec, theta_f, budget = random_tiny_cmdp(np.random.default_rng(200 + seed))
        f_table = spec.loss_table(theta_f)
        out = constrained_optimum(spec, theta_f)
        free = float(greedy_min_value(spec, f_table)[0, spec.initial_state])
        assert out.value >= free - 1e-9
        # and never above the best feasible deterministic policy
        vf = deterministic_policy_values(spec, f_table)
        vg = deterministic_policy_values(spec, spec.mean_cost_table)
        feasible = vf[vg <= budget + 1e-12]
        if feasible.size:
            assert out.value <= feasible.min() + 1e-6


def test_lambda_zero_iff_cheapest_policy_safe():
    for seed in range(8):
        spec, theta_f, budget = random_tiny_cmdp(np.random.default_rng(300 + seed))
        f_table = spec.loss_table(theta_f)
        out = constrained_optimum(spec, theta_f)
        _, sub0 = dual_value(spec, f_table, 0.0, budget)
        if sub0 <= 1e-12:
            assert out.lambda_star == 0.0
        else:
            assert out.lambda_star > 0.0
