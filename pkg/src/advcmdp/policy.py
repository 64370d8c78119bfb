"""Segment-compressed multiplicative-weights policy over an epoch.

Within an epoch the policy at step h is a product of exponential-weight
updates applied to a uniform start, with an occasional uniform mixing step:
pi <- (1 - theta) pi + theta/|A|. Because every update between two mixing
events commutes, the whole history compresses to one (w, b) segment per
mixing interval: the accumulated exponent at (s, a) is

    sigma_h(s, a) * (phi(s, a) . W) + B * nu_bar_h(s, a)

where W sums -alpha (w_f + Y w_g) and B sums alpha beta_b (1 + Y) over the
segment's episodes (B >= 0, so the bonus term raises the exponent). Closed
segments are folded incrementally into a per-(h, s) log-weight table at each
mixing event; only the open segment is applied on demand. Replay evaluation
recomputes probabilities episode by episode from the raw per-episode record
and must agree with the compressed fold to floating-point accuracy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .errors import InternalConsistencyError, MonitorViolation
from .estimate import EpochFeatureCache


@dataclass(frozen=True)
class PolicySegment:
    """One mixing interval's accumulated update at a single step h.

    mixed is True when a uniform mixing step precedes this segment's updates.
    """

    w: np.ndarray  # (d,)
    b: float
    mixed: bool

    def exponent(self, cache: EpochFeatureCache, h: int, s: int) -> np.ndarray:
        return cache.sigma[h, s] * (cache.phi[s] @ self.w) + self.b * cache.nu_bar[h, s]


class EpochPolicy:
    """Product-form policy for one epoch, one segment list per step h.

    State per h: a staged log-weight table holding all closed segments
    (prefix_log), the open segment (open_w, open_b), and whether the open
    segment began with a mixing step (open_mixed). mark_mixing folds the open
    segment into the table and opens a fresh mixed segment; append_episode
    only touches the open segment. The full action distribution is produced
    by the active kernel backend and memoized per version.
    """

    def __init__(self, cache: EpochFeatureCache, num_actions: int, theta: float,
                 mixing_period: int):
        if not 0.0 < theta < 1.0:
            raise ValueError(f"theta must lie in (0, 1), got {theta}")
        self.cache = cache
        self.horizon = cache.nu.shape[0]
        self.num_states = cache.nu.shape[1]
        self.num_actions = num_actions
        self.theta = theta
        self.mixing_period = mixing_period
        H, S, A, d = self.horizon, self.num_states, num_actions, cache.phi.shape[-1]
        self.closed: list[list[PolicySegment]] = [[] for _ in range(H)]
        self.open_w = np.zeros((H, d))
        self.open_b = np.zeros(H)
        self.open_mixed = np.zeros(H, dtype=bool)
        self.prefix_log = np.full((H, S, A), -math.log(A))
        self.version = 0
        self._matrix: np.ndarray | None = None
        self._matrix_version = -1

    # -- update path --------------------------------------------------------

    def mark_mixing(self, h: int) -> None:
        """Close the open segment at step h and start a fresh mixed one.

        Folds mixing (if the open segment was mixed) and the open exponent
        into prefix_log, then pushes the segment onto the closed list.
        """
        seg = PolicySegment(self.open_w[h].copy(), float(self.open_b[h]),
                            bool(self.open_mixed[h]))
        lp = self.prefix_log[h]
        if seg.mixed:
            np.logaddexp(math.log1p(-self.theta) + lp,
                         math.log(self.theta) - math.log(self.num_actions),
                         out=lp)
        for s in range(self.num_states):
            lp[s] += seg.exponent(self.cache, h, s)
        lp -= _logsumexp_rows(lp)[:, None]
        self.closed[h].append(seg)
        max_segments = self._segment_budget()
        if len(self.closed[h]) > max_segments:
            raise InternalConsistencyError(
                f"{len(self.closed[h])} closed segments at step {h} exceeds budget {max_segments}"
            )
        self.open_w[h] = 0.0
        self.open_b[h] = 0.0
        self.open_mixed[h] = True
        self.version += 1

    def append_episode(self, h: int, w_f: np.ndarray, w_g: np.ndarray, y: float,
                       alpha: float, beta_b: float) -> None:
        """Fold episode k's update at step h into the open segment."""
        self.open_w[h] += -alpha * (w_f + y * w_g)
        self.open_b[h] += alpha * beta_b * (1.0 + y)
        self.version += 1

    def _segment_budget(self) -> int:
        return int(math.ceil(self.cache.num_episodes / self.mixing_period)) + 1

    # -- evaluation paths ----------------------------------------------------

    def policy_matrix(self) -> np.ndarray:
        """Action distributions for all (h, s), shape (H, S, A)."""
        if self._matrix_version != self.version:
            pi = kernels.policy_from_prefix(
                self.prefix_log, self.open_mixed, self.cache.phi, self.cache.sigma,
                self.cache.nu_bar, self.open_w, self.open_b, self.theta,
            )
            if not np.all(np.isfinite(pi)):
                raise MonitorViolation("policy fold produced non-finite probabilities")
            self._matrix = pi
            self._matrix_version = self.version
        return self._matrix

    def action_distribution(self, h: int, s: int) -> np.ndarray:
        return self.policy_matrix()[h, s]

    def evaluate(self, h: int, s: int) -> np.ndarray:
        """Reference fold at one (h, s), recomputed from the raw segments.

        Walks closed segments plus the open one in probability space,
        asserting the post-mixing floor theta/|A| after every mixed segment's
        mixing step. Used by tests to cross-check the staged fold.
        """
        A = self.num_actions
        pi = np.full(A, 1.0 / A)
        segments = list(self.closed[h]) + [
            PolicySegment(self.open_w[h].copy(), float(self.open_b[h]),
                          bool(self.open_mixed[h]))
        ]
        for seg in segments:
            if seg.mixed:
                pi = (1.0 - self.theta) * pi + self.theta / A
                if pi.min() < self.theta / A - 1e-15:
                    raise InternalConsistencyError("post-mixing probability floor violated")
            expo = seg.exponent(self.cache, h, s)
            weights = pi * np.exp(expo - expo.max())
            total = weights.sum()
            if not np.isfinite(total) or total <= 0.0:
                raise MonitorViolation(f"degenerate policy weights at (h={h}, s={s})")
            pi = weights / total
        return pi

    # -- serialization -------------------------------------------------------

    def snapshot(self) -> dict:
        """JSON-able record of the epoch's segments (excludes the cache)."""
        return {
            "anchor_id": self.cache.anchor_id,
            "theta": self.theta,
            "num_actions": self.num_actions,
            "mixing_period": self.mixing_period,
            "steps": [
                {
                    "closed": [
                        {"w": seg.w.tolist(), "b": seg.b, "mixed": seg.mixed}
                        for seg in self.closed[h]
                    ],
                    "open": {
                        "w": self.open_w[h].tolist(),
                        "b": float(self.open_b[h]),
                        "mixed": bool(self.open_mixed[h]),
                    },
                }
                for h in range(self.horizon)
            ],
        }

    @staticmethod
    def from_snapshot(payload: Mapping, cache: EpochFeatureCache) -> "EpochPolicy":
        if payload["anchor_id"] != cache.anchor_id:
            raise ValueError(
                f"snapshot anchor {payload['anchor_id']!r} does not match cache {cache.anchor_id!r}"
            )
        pol = EpochPolicy(cache, payload["num_actions"], payload["theta"],
                          payload["mixing_period"])
        for h, step in enumerate(payload["steps"]):
            for seg in step["closed"]:
                pol.open_w[h] = np.asarray(seg["w"], dtype=np.float64)
                pol.open_b[h] = seg["b"]
                pol.open_mixed[h] = seg["mixed"]
                pol.mark_mixing(h)
                # mark_mixing leaves open_mixed True; the snapshot decides it
            pol.open_w[h] = np.asarray(step["open"]["w"], dtype=np.float64)
            pol.open_b[h] = step["open"]["b"]
            pol.open_mixed[h] = step["open"]["mixed"]
        pol.version += 1
        return pol


def evaluate_by_replay(episodes: Sequence[Mapping], h: int, s: int,
                       cache: EpochFeatureCache, theta: float, alpha: float,
                       beta_b: float, num_actions: int) -> np.ndarray:
    """Recompute the step-h action distribution at s by literal replay.

    episodes is the epoch's per-episode log, each entry holding the step-h
    regression vectors and dual value: keys "w_f" (d,), "w_g" (d,), "y",
    "mixed" (True when a uniform mixing step precedes that episode's update).
    Applies the exponential-weights recursion one episode at a time; the
    compressed EpochPolicy must reproduce this to ~1e-10 total variation.
    """
    A = num_actions
    pi = np.full(A, 1.0 / A)
    sig = cache.sigma[h, s]
    nub = cache.nu_bar[h, s]
    phi_s = cache.phi[s]
    for ep in episodes:
        if ep["mixed"]:
            pi = (1.0 - theta) * pi + theta / A
        w = -alpha * (np.asarray(ep["w_f"]) + ep["y"] * np.asarray(ep["w_g"]))
        b = alpha * beta_b * (1.0 + ep["y"])
        expo = sig * (phi_s @ w) + b * nub
        weights = pi * np.exp(expo - expo.max())
        pi = weights / weights.sum()
    return pi


def _logsumexp_rows(log_weights: np.ndarray) -> np.ndarray:
    """Row-wise logsumexp for a 2-D array."""
    peak = log_weights.max(axis=1)
    return peak + np.log(np.exp(log_weights - peak[:, None]).sum(axis=1))
