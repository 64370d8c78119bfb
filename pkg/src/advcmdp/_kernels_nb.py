"""Numba-compiled implementations of the per-episode hot kernels.

Same signatures and semantics as ``_kernels_np``; explicit loops instead of
vectorized numpy so the whole episode body compiles to machine code. Compiled
artifacts are cached on disk (``cache=True``), so the one-time compile cost is
paid once per environment. No fastmath: IEEE ordering is kept so both backends
agree to rounding error.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _logaddexp(x: float, y: float) -> float:
    if x < y:
        x, y = y, x
    return x + np.log1p(np.exp(y - x))


@njit(cache=True)
def rank_one_update(lam: np.ndarray, inv: np.ndarray, phi: np.ndarray) -> float:
    d = phi.shape[0]
    u = np.empty(d)
    for i in range(d):
        acc = 0.0
        for j in range(d):
            acc += inv[i, j] * phi[j]
        u[i] = acc
    denom = 1.0
    for i in range(d):
        denom += phi[i] * u[i]
    for i in range(d):
        ui = u[i]
        pi_ = phi[i]
        for j in range(d):
            lam[i, j] += pi_ * phi[j]
            inv[i, j] -= ui * u[j] / denom
    for i in range(d):
        for j in range(i + 1, d):
            m = 0.5 * (inv[i, j] + inv[j, i])
            inv[i, j] = m
            inv[j, i] = m
    return np.log(denom)


@njit(cache=True)
def rank_one_update_batch(
    lam: np.ndarray, inv: np.ndarray, logdet: np.ndarray, phis: np.ndarray
) -> None:
    for h in range(phis.shape[0]):
        logdet[h] += rank_one_update(lam[h], inv[h], phis[h])


@njit(cache=True)
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
    num_h, num_s, num_a = prefix_log.shape
    dim = phi.shape[2]
    pi = np.empty((num_h, num_s, num_a))
    log_keep = np.log1p(-theta)
    log_unif = np.log(theta) - np.log(num_a)
    t = np.empty(num_a)
    for h in range(num_h):
        for s in range(num_s):
            for a in range(num_a):
                dot = 0.0
                for j in range(dim):
                    dot += phi[s, a, j] * w_open[h, j]
                expo = sigma[h, s, a] * dot + b_open[h] * nu_bar[h, s, a]
                lp = prefix_log[h, s, a]
                if open_mixed[h]:
                    lp = _logaddexp(log_keep + lp, log_unif)
                t[a] = lp + expo
            m = t[0]
            for a in range(1, num_a):
                if t[a] > m:
                    m = t[a]
            total = 0.0
            for a in range(num_a):
                z = np.exp(t[a] - m)
                pi[h, s, a] = z
                total += z
            for a in range(num_a):
                pi[h, s, a] /= total
    return pi


@njit(cache=True)
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
):
    num_h, num_s, num_a = sigma.shape
    dim = phi.shape[2]
    w_f = np.empty((num_h, dim))
    w_g = np.empty((num_h, dim))
    v_f = np.zeros((num_h + 1, num_s))
    v_g = np.zeros((num_h + 1, num_s))
    q_absmax = np.empty((num_h, 2))
    target_f = np.empty(dim)
    target_g = np.empty(dim)
    for h in range(num_h - 1, -1, -1):
        for j in range(dim):
            acc_f = 0.0
            acc_g = b_g[h, j]
            for s in range(num_s):
                acc_f += agg[h, s, j] * v_f[h + 1, s]
                acc_g += agg[h, s, j] * v_g[h + 1, s]
            target_f[j] = acc_f
            target_g[j] = acc_g
        for i in range(dim):
            acc_f = theta_f[h, i]
            acc_g = 0.0
            for j in range(dim):
                acc_f += inv[h, i, j] * target_f[j]
                acc_g += inv[h, i, j] * target_g[j]
            w_f[h, i] = acc_f
            w_g[h, i] = acc_g
        qmax_f = 0.0
        qmax_g = 0.0
        for s in range(num_s):
            val_f = 0.0
            val_g = 0.0
            for a in range(num_a):
                dot_f = 0.0
                dot_g = 0.0
                for j in range(dim):
                    p = phi[s, a, j]
                    dot_f += p * w_f[h, j]
                    dot_g += p * w_g[h, j]
                bonus = beta_b * nu_bar[h, s, a]
                q_f = sigma[h, s, a] * dot_f - bonus
                q_g = sigma[h, s, a] * dot_g - bonus
                val_f += pi[h, s, a] * q_f
                val_g += pi[h, s, a] * q_g
                if abs(q_f) > qmax_f:
                    qmax_f = abs(q_f)
                if abs(q_g) > qmax_g:
                    qmax_g = abs(q_g)
            v_f[h, s] = val_f
            v_g[h, s] = val_g
        q_absmax[h, 0] = qmax_f
        q_absmax[h, 1] = qmax_g
    return w_f, w_g, v_f, v_g, q_absmax


@njit(cache=True)
def dp_values(P: np.ndarray, reward: np.ndarray, pi: np.ndarray) -> np.ndarray:
    num_h, num_s, num_a = reward.shape
    v = np.zeros((num_h + 1, num_s))
    for h in range(num_h - 1, -1, -1):
        for s in range(num_s):
            val = 0.0
            for a in range(num_a):
                q = reward[h, s, a]
                for sp in range(num_s):
                    q += P[h, s, a, sp] * v[h + 1, sp]
                val += pi[h, s, a] * q
            v[h, s] = val
    return v


@njit(cache=True)
def accumulate_episode(
    b_g: np.ndarray,
    agg: np.ndarray,
    phi: np.ndarray,
    s_idx: np.ndarray,
    a_idx: np.ndarray,
    snext_idx: np.ndarray,
    costs: np.ndarray,
) -> None:
    dim = phi.shape[2]
    for h in range(s_idx.shape[0]):
        s = s_idx[h]
        a = a_idx[h]
        sn = snext_idx[h]
        c = costs[h]
        for j in range(dim):
            feat = phi[s, a, j]
            b_g[h, j] += feat * c
            agg[h, sn, j] += feat
