"""Least-squares estimation, feature contraction, and optimistic Q/V values.

Per episode k the learner solves ridge regressions against the design matrix
of data through episode k-1: the cost parameter from bandit observations, and
the transition-measure-applied value vector psi-hat V from next-state value
targets aggregated by unique next state (that aggregation is what makes the
per-episode cost O(|S| d + d^2) instead of O(k d)). Q estimates are built in
the epoch-anchored contracted geometry: features are shrunk by a sigmoid of
their anchor Mahalanobis norm, and a pessimistic bonus proportional to the
contracted-feature anchor norm is subtracted.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from .errors import ConfigError, InternalConsistencyError
from .linalg import DesignMatrix

log = logging.getLogger("advcmdp")

THEORY_PRESET_ID = "theory"
FIG1_PRESET_ID = "paper-fig1"


# ---------------------------------------------------------------------------
# hyperparameters


@dataclass(frozen=True)
class HyperParams:
    """Step sizes, bonus/contraction coefficients, and the mixing cadence.

    num_episodes is the planned K used by the wiring formulas; runs may
    execute fewer episodes. The constructor rejects 4 alpha eta H^3 > 1 (the
    dual shrink factor must stay a contraction); other out-of-regime settings
    (H^2 > K, mixing_period > K) run but are logged.
    """

    num_episodes: int
    horizon: int
    delta: float
    alpha: float
    eta: float
    theta: float
    beta_b: float
    beta_w: float
    mixing_period: int

    def __post_init__(self):
        K, H = self.num_episodes, self.horizon
        if K < 1 or H < 1:
            raise ConfigError("num_episodes and horizon must be >= 1")
        if not 0.0 < self.delta < 1.0:
            raise ConfigError(f"delta must lie in (0, 1), got {self.delta}")
        if not 0.0 < self.theta < 1.0:
            raise ConfigError(f"theta must lie in (0, 1), got {self.theta}")
        if self.alpha <= 0.0 or self.eta <= 0.0:
            raise ConfigError("alpha and eta must be positive")
        if self.beta_w < 1.0:
            raise ConfigError(f"beta_w must be >= 1, got {self.beta_w}")
        if self.beta_b < 0.0:
            raise ConfigError("beta_b must be nonnegative")
        if self.mixing_period < 1:
            raise ConfigError("mixing_period must be >= 1")
        if self.dual_shrink > 1.0 + 1e-12:
            raise ConfigError(
                f"4 alpha eta H^3 = {self.dual_shrink:.4g} > 1; dual update would not contract"
            )
        if H * H > K:
            log.warning("theory regime H^2 <= K not met (H=%d, K=%d)", H, K)
        if self.mixing_period > K:
            log.warning("mixing_period %d exceeds K=%d; no mixing after episode 1", self.mixing_period, K)

    @property
    def dual_shrink(self) -> float:
        """4 alpha eta H^3, the dual update's shrink coefficient."""
        return 4.0 * self.alpha * self.eta * self.horizon**3

    @property
    def dual_step_bound(self) -> float:
        """Hard bound on |Y_{k+1} - Y_k| per dual update."""
        K, H = self.num_episodes, self.horizon
        return (
            44.0 * self.eta**2 * self.alpha * H**6 * K
            + 3.0 * self.eta * H
            + 4.0 * self.eta * self.alpha * H**3
            + 4.0 * self.eta * self.theta * H**2
        )

    @property
    def dual_soft_bound(self) -> float:
        """Soft bound on the dual variable itself: 11 eta H^3 K."""
        return 11.0 * self.eta * self.horizon**3 * self.num_episodes


def default_wiring(num_episodes: int, horizon: int) -> dict:
    """Step sizes and mixing cadence as functions of (K, H).

    alpha = 1/(H K^{3/4}), eta = 1/(H^2 K^{3/4}), theta = 1/K (1/2 for the
    degenerate K = 1 so theta stays inside (0, 1)), period = floor(K^{3/4}).
    """
    K, H = num_episodes, horizon
    scale = K**0.75
    return {
        "alpha": 1.0 / (H * scale),
        "eta": 1.0 / (H * H * scale),
        "theta": 1.0 / max(K, 2),
        "mixing_period": max(int(math.floor(scale)), 1),
    }


def theory_beta_b(num_episodes: int, horizon: int, dim: int, num_actions: int,
                  delta: float) -> float:
    """Confidence-width bonus: regression term plus value-regression term."""
    K, H, d = num_episodes, horizon, dim
    reg = 2.0 * math.sqrt(2.0 * d * math.log(6.0 * K * H / delta))
    val = 50.0 * (K**0.25 + 1.0) * d * H * math.sqrt(
        math.log(5.0 * H * H * K * K * num_actions / delta)
    )
    return reg + val


def theory_hyperparams(num_episodes: int, horizon: int, dim: int, num_actions: int,
                       delta: float = 0.1) -> HyperParams:
    """Full analysis-prescribed wiring including beta_b's closed form."""
    beta_b = theory_beta_b(num_episodes, horizon, dim, num_actions, delta)
    return HyperParams(
        num_episodes=num_episodes,
        horizon=horizon,
        delta=delta,
        beta_b=beta_b,
        beta_w=4.0 * beta_b * math.log(num_episodes),
        **default_wiring(num_episodes, horizon),
    )


def fig1_hyperparams(num_episodes: int, horizon: int, delta: float = 0.1) -> HyperParams:
    """The reference experiment's parameter set: alpha = 0.1, beta_b = K^{1/4},
    beta_w = beta_b ln K, everything else on the default wiring."""
    beta_b = num_episodes**0.25
    wiring = default_wiring(num_episodes, horizon)
    wiring["alpha"] = 0.1
    return HyperParams(
        num_episodes=num_episodes,
        horizon=horizon,
        delta=delta,
        beta_b=beta_b,
        beta_w=beta_b * math.log(num_episodes),
        **wiring,
    )


def hyperparams_preset(name: str, num_episodes: int, horizon: int, dim: int,
                       num_actions: int, delta: float = 0.1,
                       overrides: Mapping[str, float] | None = None) -> HyperParams:
    """Build a named preset, then apply explicit field overrides."""
    if name == THEORY_PRESET_ID:
        hp = theory_hyperparams(num_episodes, horizon, dim, num_actions, delta)
    elif name == FIG1_PRESET_ID:
        hp = fig1_hyperparams(num_episodes, horizon, delta)
    else:
        raise ConfigError(
            f"unknown hyperparameter preset {name!r}; known: "
            f"{[THEORY_PRESET_ID, FIG1_PRESET_ID]}"
        )
    if overrides:
        allowed = {"alpha", "eta", "theta", "beta_b", "beta_w", "mixing_period", "delta"}
        unknown = set(overrides) - allowed
        if unknown:
            raise ConfigError(f"unknown hyperparameter overrides {sorted(unknown)}")
        hp = replace(hp, **dict(overrides))
    return hp


# ---------------------------------------------------------------------------
# regression accumulators


class RegressionAccumulator:
    """Running regression data per step h (single learner, single writer).

    b_g[h] is the bandit-cost right-hand side sum phi * cost; agg[h][s'] is
    the sum of features over episodes whose step-h transition landed in s'.
    Summing agg over next states recovers the total feature sum exactly.
    """

    __slots__ = ("horizon", "num_states", "dim", "b_g", "agg", "visited")

    def __init__(self, horizon: int, num_states: int, dim: int):
        self.horizon = horizon
        self.num_states = num_states
        self.dim = dim
        self.b_g = np.zeros((horizon, dim))
        self.agg = np.zeros((horizon, num_states, dim))
        self.visited = np.zeros((horizon, num_states), dtype=bool)

    def add(self, h: int, phi: np.ndarray, cost: float, s_next: int) -> None:
        self.b_g[h] += phi * cost
        self.agg[h, s_next] += phi
        self.visited[h, s_next] = True

    def aggregated(self, h: int) -> dict[int, np.ndarray]:
        """Map next-state index -> aggregated feature vector (visited only)."""
        return {int(s): self.agg[h, s] for s in np.flatnonzero(self.visited[h])}


# ---------------------------------------------------------------------------
# epoch-anchored contracted features


def contraction_factor(nu, beta_w: float, num_episodes: int):
    """sigmoid(-beta_w nu + ln K) = 1 / (1 + exp(beta_w nu - ln K)).

    Strictly decreasing in nu and beta_w; equals K/(K+1) at nu = 0. Computed
    through logaddexp so large arguments underflow to 0 instead of overflowing.
    """
    nu_arr = np.asarray(nu, dtype=np.float64)
    if nu_arr.min(initial=0.0) < 0.0 or (nu_arr.ndim == 0 and float(nu_arr) < 0.0):
        raise ValueError("Mahalanobis norms must be nonnegative")
    x = beta_w * nu_arr - math.log(num_episodes)
    out = np.exp(-np.logaddexp(0.0, x))
    return float(out) if np.isscalar(nu) or nu_arr.ndim == 0 else out


@dataclass(frozen=True)
class EpochFeatureCache:
    """Frozen epoch geometry: anchor inverses plus contracted-feature tables.

    Built once per epoch from the design matrices at the anchor episode and
    held fixed until the next determinant-doubling reset.
    """

    anchor_id: str
    beta_w: float
    num_episodes: int
    phi: np.ndarray           # (S, A, d), shared with the model
    anchor_inv: np.ndarray    # (H, d, d) copies
    anchor_logdet: np.ndarray  # (H,)
    nu: np.ndarray            # (H, S, A) raw anchor Mahalanobis norms
    sigma: np.ndarray         # (H, S, A) contraction factors in (0, 1)
    nu_bar: np.ndarray        # (H, S, A) = sigma * nu

    @property
    def phi_bar(self) -> np.ndarray:
        """Contracted features sigma * phi, materialized on demand."""
        return self.sigma[..., None] * self.phi[None, ...]

    @staticmethod
    def build(phi: np.ndarray, anchor_inv: np.ndarray, anchor_logdet: np.ndarray,
              beta_w: float, num_episodes: int, anchor_id: str) -> "EpochFeatureCache":
        quad = np.einsum("sad,hde,sae->hsa", phi, anchor_inv, phi)
        low = quad.min()
        if low < -1e-12:
            raise InternalConsistencyError(f"negative quadratic form {low:.3e} in epoch cache")
        nu = np.sqrt(np.clip(quad, 0.0, None))
        sigma = contraction_factor(nu, beta_w, num_episodes)
        return EpochFeatureCache(
            anchor_id=anchor_id,
            beta_w=beta_w,
            num_episodes=num_episodes,
            phi=phi,
            anchor_inv=np.ascontiguousarray(anchor_inv.copy()),
            anchor_logdet=np.asarray(anchor_logdet, dtype=np.float64).copy(),
            nu=nu,
            sigma=sigma,
            nu_bar=sigma * nu,
        )


# ---------------------------------------------------------------------------
# estimation operations


def cost_param_estimate(design: DesignMatrix, b_g: np.ndarray) -> np.ndarray:
    """Ridge solution inv(Lambda) b_g for the mean-cost parameter."""
    return design.inv @ b_g


def loss_param_passthrough(observed_theta_f: np.ndarray) -> np.ndarray:
    """Full-information feedback: the estimate is the observation itself."""
    return np.array(observed_theta_f, dtype=np.float64, copy=True)


def value_regression(design: DesignMatrix, aggregated: Mapping[int, np.ndarray],
                     value_table: Mapping[int, float]) -> np.ndarray:
    """inv(Lambda) sum_s' agg[s'] V(s') over unique observed next states.

    Every aggregated next state must have a value; a missing key means the
    caller's backward sweep lost track of its own support.
    """
    target = np.zeros(design.dim)
    for s_next, feat in aggregated.items():
        if s_next not in value_table:
            raise InternalConsistencyError(f"value table missing next state {s_next}")
        target += feat * value_table[s_next]
    return design.inv @ target


def q_row(cache: EpochFeatureCache, h: int, s: int, w: np.ndarray, beta_b: float) -> np.ndarray:
    """Q estimates for all actions at (h, s): sigma (phi . w) - beta_b nu_bar."""
    return cache.sigma[h, s] * (cache.phi[s] @ w) - beta_b * cache.nu_bar[h, s]


def q_estimate(cache: EpochFeatureCache, h: int, s: int, a: int, w: np.ndarray,
               beta_b: float) -> float:
    """Scalar Q estimate at (h, s, a) in the contracted anchor geometry."""
    return float(cache.sigma[h, s, a] * (cache.phi[s, a] @ w)
                 - beta_b * cache.nu_bar[h, s, a])


def v_estimate(pi_row: np.ndarray, q_values: np.ndarray) -> float:
    """Policy-averaged value: inner product of a distribution with a Q row."""
    return float(np.dot(pi_row, q_values))


def q_soft_bound(horizon: int, h: int) -> float:
    """Expected |Q| ceiling at 0-based step h under healthy estimates."""
    return 2.0 * (horizon - h)
