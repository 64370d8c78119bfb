"""Vectorized numpy implementations of the per-episode hot kernels.

This module is the fallback backend and the semantic reference: the numba
backend in ``_kernels_nb`` implements the same functions with explicit loops
and is pinned to these outputs by the test suite. All kernels operate on
plain float64 arrays; shape conventions (0-based step index h):

    phi       (S, A, d)   feature table
    sigma     (H, S, A)   epoch-anchored contraction factors
    nu_bar    (H, S, A)   contracted-feature anchor norms
    inv       (H, d, d)   inverses of the current design matrices
    prefix_log(H, S, A)   normalized log-policy after all closed segments
    pi        (H, S, A)   policy probabilities
    v tables  (H+1, S)    values per step, row H is the terminal zero level
"""

from __future__ import annotations

import numpy as np


def rank_one_update(lam: np.ndarray, inv: np.ndarray, phi: np.ndarray) -> float:
    """Add phi phi^T to lam, update inv by Sherman-Morrison, return delta-logdet.

    lam and inv are modified in place; inv is re-symmetrized after the update.
    The determinant ratio 1 + phi^T inv phi is >= 1 whenever lam >= I, so the
    returned log is always well defined.
    """
    lam += np.outer(phi, phi)
    u = inv @ phi
    denom = 1.0 + float(phi @ u)
    inv -= np.outer(u, u) / denom
    inv[:] = (inv + inv.T) * 0.5
    return float(np.log(denom))


def rank_one_update_batch(
    lam: np.ndarray, inv: np.ndarray, logdet: np.ndarray, phis: np.ndarray
) -> None:
    """Apply rank_one_update at every step h; logdet is updated in place."""
    for h in range(phis.shape[0]):
        logdet[h] += rank_one_update(lam[h], inv[h], phis[h])


def policy_from_prefix(
    prefix_log: np.ndarray,
    open_mixed: np.ndarray,
    phi: np.ndarray,
    sigma: np.ndarray,
    nu_bar: np.ndarray,
    w_open: np.ndarray,
    b_open: np.ndarray,
    theta: float,
) -> np.ndarray:
    """Evaluate the policy at every (h, s): one fold stage on top of the prefix.

    The open segment contributes exponent sigma*(phi.w) + B*nu_bar; if it was
    opened by a mixing mark the prefix is first mixed with uniform at weight
    theta. Log-space with per-row max subtraction throughout.
    """
    num_h, num_s, num_a = prefix_log.shape
    pi = np.empty((num_h, num_s, num_a))
    log_keep = np.log1p(-theta)
    log_unif = np.log(theta) - np.log(num_a)
    for h in range(num_h):
        expo = sigma[h] * (phi @ w_open[h]) + b_open[h] * nu_bar[h]
        lp = prefix_log[h]
        if open_mixed[h]:
            lp = np.logaddexp(log_keep + lp, log_unif)
        t = lp + expo
        t = t - t.max(axis=1, keepdims=True)
        z = np.exp(t)
        pi[h] = z / z.sum(axis=1, keepdims=True)
    return pi


def backward_pass(
    phi: np.ndarray,
    sigma: np.ndarray,
    nu_bar: np.ndarray,
    inv: np.ndarray,
    b_g: np.ndarray,
    agg: np.ndarray,
    theta_f: np.ndarray,
    pi: np.ndarray,
    beta_b: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """One episode's backward estimation sweep over h = H..1.

    Regression targets are read from the unique-next-state aggregates ``agg``
    (rows for unvisited states are zero, so a dense value table is exact) and
    the bandit-cost right-hand sides ``b_g``; design-matrix inverses reflect
    data through the previous episode. Returns the weight vectors w_f, w_g per
    step, dense value tables for both objectives, and per-step max |Q| for the
    soft magnitude monitor.
    """
    num_h, num_s, num_a = sigma.shape
    dim = phi.shape[2]
    w_f = np.empty((num_h, dim))
    w_g = np.empty((num_h, dim))
    v_f = np.zeros((num_h + 1, num_s))
    v_g = np.zeros((num_h + 1, num_s))
    q_absmax = np.empty((num_h, 2))
    for h in range(num_h - 1, -1, -1):
        target_f = agg[h].T @ v_f[h + 1]
        target_g = b_g[h] + agg[h].T @ v_g[h + 1]
        w_f[h] = theta_f[h] + inv[h] @ target_f
        w_g[h] = inv[h] @ target_g
        bonus = beta_b * nu_bar[h]
        q_f = sigma[h] * (phi @ w_f[h]) - bonus
        q_g = sigma[h] * (phi @ w_g[h]) - bonus
        v_f[h] = np.sum(pi[h] * q_f, axis=1)
        v_g[h] = np.sum(pi[h] * q_g, axis=1)
        q_absmax[h, 0] = np.abs(q_f).max()
        q_absmax[h, 1] = np.abs(q_g).max()
    return w_f, w_g, v_f, v_g, q_absmax


def dp_values(P: np.ndarray, reward: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """Exact policy evaluation: V_h(s) = sum_a pi (r + sum_s' P V_{h+1})."""
    num_h, num_s = P.shape[0], P.shape[1]
    v = np.zeros((num_h + 1, num_s))
    for h in range(num_h - 1, -1, -1):
        q = reward[h] + P[h] @ v[h + 1]
        v[h] = np.sum(pi[h] * q, axis=1)
    return v


def accumulate_episode(
    b_g: np.ndarray,
    agg: np.ndarray,
    phi: np.ndarray,
    s_idx: np.ndarray,
    a_idx: np.ndarray,
    snext_idx: np.ndarray,
    costs: np.ndarray,
) -> None:
    """Fold one trajectory into the regression accumulators (in place)."""
    for h in range(s_idx.shape[0]):
        feat = phi[s_idx[h], a_idx[h]]
        b_g[h] += feat * costs[h]
        agg[h, snext_idx[h]] += feat
