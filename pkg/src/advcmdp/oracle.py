"""Exact ground-truth computations on tabular models.

Everything here is a cold-path reference: plain numpy recursions independent
of the accelerated kernel backends, so tests can cross-check the hot path
against this module.

The constrained baseline V* = min_pi { V_fbar(s1) : V_g(s1) <= budget } is
solved by Lagrangian bisection. With a single constraint the dual function

    d(lambda) = min_pi V_{fbar + lambda g, 1}(s1) - lambda budget

is concave and piecewise linear in lambda with subgradient
V_g^{pi_lambda}(s1) - budget, where pi_lambda is the (deterministic,
unconstrained) minimizer of the scalarized objective. Strong LP duality for
the occupancy-measure program gives V* = max_lambda d(lambda), so bisection
on the subgradient sign to a lambda tolerance of 1e-6 pins V* to well inside
1e-4 (the subgradient is bounded by the horizon).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .envmodel import LinearCmdpSpec
from .errors import InfeasibleError

log = logging.getLogger("advcmdp")

LAMBDA_TOL = 1e-6
_MAX_BRACKET_DOUBLINGS = 60


@dataclass(frozen=True)
class ConstrainedOptimum:
    """Optimal constrained value at s1, its multiplier, and the Slater margin."""

    value: float
    lambda_star: float
    slater_gamma: float


def _as_policy_matrix(spec: LinearCmdpSpec, policy) -> np.ndarray:
    """Accept an (H, S, A) array, an object with .policy_matrix(), or a callable."""
    H, S, A = spec.horizon, spec.num_states, spec.num_actions
    if hasattr(policy, "policy_matrix"):
        pi = np.asarray(policy.policy_matrix(), dtype=np.float64)
    elif callable(policy):
        pi = np.empty((H, S, A))
        for h in range(H):
            for s in range(S):
                pi[h, s] = policy(h, s)
    else:
        pi = np.asarray(policy, dtype=np.float64)
    if pi.shape != (H, S, A):
        raise ValueError(f"policy must evaluate to shape {(H, S, A)}, got {pi.shape}")
    if pi.min() < -1e-12 or np.abs(pi.sum(axis=2) - 1.0).max() > 1e-9:
        raise ValueError("policy rows must be probability distributions")
    return pi


def _as_reward_table(spec: LinearCmdpSpec, reward) -> np.ndarray:
    H, S, A = spec.horizon, spec.num_states, spec.num_actions
    if callable(reward):
        table = np.empty((H, S, A))
        for h in range(H):
            for s in range(S):
                for a in range(A):
                    table[h, s, a] = reward(h, s, a)
        return table
    table = np.asarray(reward, dtype=np.float64)
    if table.shape != (H, S, A):
        raise ValueError(f"reward must have shape {(H, S, A)}, got {table.shape}")
    return table


def dp_policy_value(spec: LinearCmdpSpec, policy, reward) -> np.ndarray:
    """Exact policy evaluation; returns the (H+1, S) value table.

    V_h(s) = sum_a pi(a|h,s) [ r_h(s,a) + sum_s' P_h(s'|s,a) V_{h+1}(s') ],
    with V_H identically zero (0-based steps; row H is the terminal level).
    """
    pi = _as_policy_matrix(spec, policy)
    r = _as_reward_table(spec, reward)
    H, S = spec.horizon, spec.num_states
    v = np.zeros((H + 1, S))
    for h in range(H - 1, -1, -1):
        q = r[h] + spec.P[h] @ v[h + 1]
        v[h] = np.sum(pi[h] * q, axis=1)
    return v


def greedy_min_value(spec: LinearCmdpSpec, reward) -> np.ndarray:
    """min over all policies of the value table (attained deterministically)."""
    r = _as_reward_table(spec, reward)
    H, S = spec.horizon, spec.num_states
    v = np.zeros((H + 1, S))
    for h in range(H - 1, -1, -1):
        q = r[h] + spec.P[h] @ v[h + 1]
        v[h] = q.min(axis=1)
    return v


def slater_margin(spec: LinearCmdpSpec, budget: float | None = None) -> float:
    """gamma = budget - min_pi V_g,1(s1); positive iff a strictly safe policy exists."""
    b = spec.budget if budget is None else budget
    min_cost = greedy_min_value(spec, spec.mean_cost_table)[0, spec.initial_state]
    return float(b - min_cost)


def dual_value(spec: LinearCmdpSpec, f_table: np.ndarray, lam: float,
               budget: float) -> tuple[float, float]:
    """d(lambda) and its subgradient V_g(pi_lambda) - budget.

    pi_lambda is the greedy minimizer of f + lambda g; its g-value is computed
    by running the same backward sweep while tracking the argmin actions.
    """
    g_table = spec.mean_cost_table
    H, S = spec.horizon, spec.num_states
    v_mix = np.zeros(S)
    v_g = np.zeros(S)
    for h in range(H - 1, -1, -1):
        q_mix = f_table[h] + lam * g_table[h] + spec.P[h] @ v_mix
        best = np.argmin(q_mix, axis=1)
        rows = np.arange(S)
        q_g = g_table[h] + spec.P[h] @ v_g
        v_mix = q_mix[rows, best]
        v_g = q_g[rows, best]
    s1 = spec.initial_state
    d = float(v_mix[s1]) - lam * budget
    return d, float(v_g[s1]) - budget


def constrained_optimum(spec: LinearCmdpSpec, avg_loss_params: np.ndarray,
                        budget: float | None = None) -> ConstrainedOptimum:
    """Best fixed safe policy's value for the average loss parameters.

    Raises InfeasibleError when even the cheapest policy exceeds the budget.
    A zero Slater margin (budget exactly attainable, never beatable) is
    flagged but still solved with a capped bracket.
    """
    b = spec.budget if budget is None else budget
    f_table = spec.loss_table(np.asarray(avg_loss_params, dtype=np.float64))
    gamma = slater_margin(spec, b)
    if gamma < -1e-9:
        raise InfeasibleError(
            f"minimum achievable expected cost exceeds the budget by {-gamma:.6g}"
        )
    if gamma <= 0.0:
        log.warning("Slater margin is zero: the budget is only just attainable")

    evaluated: list[tuple[float, float]] = []  # (lambda, d(lambda))

    def probe(lam: float) -> float:
        d, sub = dual_value(spec, f_table, lam, b)
        evaluated.append((lam, d))
        return sub

    if probe(0.0) <= 1e-12:
        # unconstrained minimizer is already safe; complementary slackness
        d0 = evaluated[0][1]
        return ConstrainedOptimum(value=d0, lambda_star=0.0, slater_gamma=gamma)

    hi = 2.0 * spec.horizon / max(gamma, LAMBDA_TOL)
    lo = 0.0
    for _ in range(_MAX_BRACKET_DOUBLINGS):
        if probe(hi) <= 0.0:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise InfeasibleError(
            f"no multiplier up to {hi:.3g} drives the constraint subgradient below zero"
        )

    while hi - lo > LAMBDA_TOL:
        mid = 0.5 * (lo + hi)
        if probe(mid) > 0.0:
            lo = mid
        else:
            hi = mid

    lam_star, value = max(evaluated, key=lambda t: t[1])
    return ConstrainedOptimum(value=float(value), lambda_star=float(lam_star),
                              slater_gamma=gamma)
