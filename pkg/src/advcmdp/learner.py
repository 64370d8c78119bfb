"""Primal-dual episodic learner: the full per-episode loop.

Each episode k (1-based), in order:

  1. epoch check: at k = 1 or when any step's design-matrix determinant has
     doubled since the epoch anchor, re-anchor — rebuild the contracted
     feature cache from the current inverses, reset the policy to uniform,
     and reset the dual variable to zero;
  2. reveal the episode's loss parameters (full information), roll out one
     trajectory under the current policy (bandit cost feedback);
  3. backward estimation sweep using data through episode k-1 only;
  4. mixing mark when (k - k_e) is a multiple of the mixing period, then fold
     the episode's exponential-weights update into the policy with the
     current dual value;
  5. regularized dual ascent step (hard-monitored per-step change);
  6. only now fold episode k's features and cost sample into the design
     matrices and regression accumulators.

Step 6 after step 3 keeps strict online causality: the policy played in
episode k never depends on episode-k observations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterator, Mapping

import numpy as np

from . import kernels
from .envmodel import LinearCmdpSpec, draw_loss_params, sample_cost, sample_transition
from .errors import ConfigError, MonitorViolation
from .estimate import EpochFeatureCache, HyperParams, RegressionAccumulator, q_soft_bound
from .linalg import epoch_count_bound, epoch_trigger, DesignMatrix
from .policy import EpochPolicy

log = logging.getLogger("advcmdp")


@dataclass
class EpisodeRecord:
    """Everything observable about one episode, yielded to the harness.

    y is the dual value in effect during the episode (before its update);
    pi is the deployed policy's full action-distribution table, valid as a
    snapshot because the policy fold allocates a fresh matrix per version.
    Diagnostics fields are populated only when the learner was built with
    diagnostics=True.
    """

    k: int
    epoch: int
    y: float
    v_f_hat: float
    v_g_hat: float
    states: np.ndarray       # (H,) int
    actions: np.ndarray      # (H,) int
    next_states: np.ndarray  # (H,) int
    costs: np.ndarray        # (H,) float
    theta_f: np.ndarray      # (H, d) revealed loss parameters
    pi: np.ndarray           # (H, S, A) deployed policy
    mixed: bool
    reset: bool
    w_f: np.ndarray | None = None
    w_g: np.ndarray | None = None


def dual_update(y: float, v_hat_g_at_s1: float, hyper: HyperParams, budget: float) -> float:
    """One regularized ascent step on the dual variable.

    y' = [ (1 - 4 alpha eta H^3) y
           + eta (v_hat - budget - 4 alpha H^3 - 4 theta H^2) ]_+
    """
    H = hyper.horizon
    drive = v_hat_g_at_s1 - budget - 4.0 * hyper.alpha * H**3 - 4.0 * hyper.theta * H * H
    return max(0.0, (1.0 - hyper.dual_shrink) * y + hyper.eta * drive)


class LearnerState:
    """Mutable per-run state; strictly single-threaded, shares nothing."""

    def __init__(self, spec: LinearCmdpSpec, hyper: HyperParams, diagnostics: bool = False):
        if hyper.horizon != spec.horizon:
            raise ConfigError(
                f"hyperparameter horizon {hyper.horizon} != model horizon {spec.horizon}"
            )
        if spec.loss_schedule.num_episodes < hyper.num_episodes:
            raise ConfigError(
                "loss schedule planned for fewer episodes than the hyperparameters"
            )
        self.spec = spec
        self.hyper = hyper
        self.diagnostics = diagnostics
        H, d = spec.horizon, spec.dim
        self.lam = np.tile(np.eye(d), (H, 1, 1))
        self.inv = np.tile(np.eye(d), (H, 1, 1))
        self.logdet = np.zeros(H)
        self.accum = RegressionAccumulator(H, spec.num_states, d)
        self.cache: EpochFeatureCache | None = None
        self.policy: EpochPolicy | None = None
        self.y = 0.0
        self.k_e = 0
        self.epoch_index = 0
        self.episodes_run = 0
        self.soft_q_count = 0
        self.soft_y_count = 0
        self.trigger_counts = np.zeros(H, dtype=np.int64)
        self._epoch_budget = epoch_count_bound(d, H, hyper.num_episodes)
        self._q_bounds = np.array([q_soft_bound(H, h) for h in range(H)])
        self._warned_q = False
        self._warned_y = False

    def design_matrix(self, h: int) -> DesignMatrix:
        """Copy of step h's current design matrix (inspection/testing)."""
        return DesignMatrix(self.spec.dim, lam=self.lam[h].copy(),
                            inv=self.inv[h].copy(), logdet=float(self.logdet[h]))

    # -- epoch management -----------------------------------------------------

    def maybe_start_epoch(self, k: int) -> bool:
        """Re-anchor at k=1 or on any step's determinant doubling."""
        if k == 1 or self.cache is None:
            self._start_epoch(k, triggered=None)
            return True
        fired = [h for h in range(self.spec.horizon)
                 if epoch_trigger(float(self.logdet[h]), float(self.cache.anchor_logdet[h]))]
        if not fired:
            return False
        self._start_epoch(k, triggered=fired)
        return True

    def _start_epoch(self, k: int, triggered: list[int] | None) -> None:
        self.epoch_index += 1
        if self.epoch_index > self._epoch_budget + 1e-9:
            raise MonitorViolation(
                f"epoch count {self.epoch_index} exceeds bound {self._epoch_budget:.2f}",
                episode=k,
            )
        if triggered:
            self.trigger_counts[triggered] += 1
        self.k_e = k
        self.y = 0.0
        self.cache = EpochFeatureCache.build(
            self.spec.features.table, self.inv, self.logdet,
            self.hyper.beta_w, self.hyper.num_episodes,
            anchor_id=f"epoch-{self.epoch_index}",
        )
        self.policy = EpochPolicy(self.cache, self.spec.num_actions,
                                  self.hyper.theta, self.hyper.mixing_period)

    # -- monitors --------------------------------------------------------------

    def _check_q_magnitudes(self, q_absmax: np.ndarray, k: int) -> None:
        over = int(np.count_nonzero(q_absmax > self._q_bounds[:, None] + 1e-9))
        if over:
            self.soft_q_count += over
            if not self._warned_q:
                self._warned_q = True
                log.warning(
                    "episode %d: |Q| exceeds the 2(H-h) soft bound at %d step/objective "
                    "pairs (further occurrences counted silently)", k, over,
                )

    def _checked_dual_step(self, v_g_hat: float, k: int) -> float:
        new_y = dual_update(self.y, v_g_hat, self.hyper, self.spec.budget)
        step = abs(new_y - self.y)
        limit = self.hyper.dual_step_bound
        if step > limit + 1e-12:
            raise MonitorViolation(
                f"dual step {step:.6g} exceeds per-update bound {limit:.6g}", episode=k,
            )
        if new_y > self.hyper.dual_soft_bound + 1e-12:
            self.soft_y_count += 1
            if not self._warned_y:
                self._warned_y = True
                log.warning(
                    "episode %d: dual value %.6g exceeds the 11 eta H^3 K soft bound %.6g "
                    "(further occurrences counted silently)", k, new_y, self.hyper.dual_soft_bound,
                )
        return new_y


def _sample_action(pi_row: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw from one action distribution."""
    cum = np.cumsum(pi_row)
    idx = int(np.searchsorted(cum, rng.random(), side="right"))
    return min(idx, pi_row.shape[0] - 1)


def run(state: LearnerState, streams: Mapping[str, np.random.Generator],
        num_episodes: int | None = None) -> Iterator[EpisodeRecord]:
    """Generate EpisodeRecords for episodes 1..num_episodes (default: planned K).

    streams must provide independent generators under the keys "losses",
    "actions", "transitions", and "costs" (see rngs.stream_bundle); keeping the
    roles separate makes trajectories reproducible even if one sampling site
    changes its draw count.
    """
    spec, hp = state.spec, state.hyper
    K = hp.num_episodes if num_episodes is None else num_episodes
    if K > hp.num_episodes:
        raise ConfigError(
            f"cannot run {K} episodes: wiring and drift schedule are planned for "
            f"{hp.num_episodes}"
        )
    phi = spec.features.table
    H, s1 = spec.horizon, spec.initial_state
    rng_losses = streams["losses"]
    rng_actions = streams["actions"]
    rng_trans = streams["transitions"]
    rng_costs = streams["costs"]

    for k in range(1, K + 1):
        reset = state.maybe_start_epoch(k)
        cache, policy = state.cache, state.policy

        theta_f = draw_loss_params(spec.loss_schedule, k, rng_losses)
        pi = policy.policy_matrix()

        s_idx = np.empty(H, dtype=np.int64)
        a_idx = np.empty(H, dtype=np.int64)
        snext_idx = np.empty(H, dtype=np.int64)
        costs = np.empty(H)
        s = s1
        for h in range(H):
            a = _sample_action(pi[h, s], rng_actions)
            s_next = sample_transition(spec, h, s, a, rng_trans)
            costs[h] = sample_cost(spec, h, s, a, s_next, rng_costs)
            s_idx[h], a_idx[h], snext_idx[h] = s, a, s_next
            s = s_next

        w_f, w_g, v_f, v_g, q_absmax = kernels.backward_pass(
            phi, cache.sigma, cache.nu_bar, state.inv,
            state.accum.b_g, state.accum.agg, theta_f, pi, hp.beta_b,
        )
        if not (np.isfinite(v_f[0, s1]) and np.isfinite(v_g[0, s1])):
            raise MonitorViolation("backward pass produced non-finite values", episode=k)
        v_f_hat, v_g_hat = float(v_f[0, s1]), float(v_g[0, s1])
        state._check_q_magnitudes(q_absmax, k)

        mixed = (k - state.k_e) % hp.mixing_period == 0
        if mixed:
            for h in range(H):
                policy.mark_mixing(h)
        y_used = state.y
        for h in range(H):
            policy.append_episode(h, w_f[h], w_g[h], y_used, hp.alpha, hp.beta_b)
        state.y = state._checked_dual_step(v_g_hat, k)

        # episode-k data enters the regressions only after all estimation
        kernels.rank_one_update_batch(state.lam, state.inv, state.logdet,
                                      phi[s_idx, a_idx])
        kernels.accumulate_episode(state.accum.b_g, state.accum.agg, phi,
                                   s_idx, a_idx, snext_idx, costs)
        state.accum.visited[np.arange(H), snext_idx] = True
        state.episodes_run = k

        yield EpisodeRecord(
            k=k,
            epoch=state.epoch_index,
            y=y_used,
            v_f_hat=v_f_hat,
            v_g_hat=v_g_hat,
            states=s_idx,
            actions=a_idx,
            next_states=snext_idx,
            costs=costs,
            theta_f=theta_f,
            pi=pi,
            mixed=mixed,
            reset=reset,
            w_f=w_f if state.diagnostics else None,
            w_g=w_g if state.diagnostics else None,
        )


def run_all(state: LearnerState, streams: Mapping[str, np.random.Generator],
            num_episodes: int | None = None) -> list[EpisodeRecord]:
    """Materialized run; prefer iterating run() for long experiments."""
    return list(run(state, streams, num_episodes))
