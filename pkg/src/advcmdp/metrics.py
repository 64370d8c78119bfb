"""Regret and violation accounting, CSV output, and summary statistics.

True per-episode values are exact dynamic-programming evaluations of the
deployed policy (not empirical returns), so the accounting adds no rollout
noise:

    regret(K)    = sum_k V_{f^k}(pi^k) - K V*
    violation(K) = [ sum_k (V_g(pi^k) - budget) ]_+

The positive-part clamp is applied once, to each cumulative prefix sum;
per-episode gaps may be negative. V* comes from the oracle module on the
realized average loss parameters and is supplied at finalize time; without
it the regret column is omitted from outputs (never zero-filled).
"""

from __future__ import annotations

import csv
import math
from typing import IO, Mapping

import numpy as np

from . import kernels
from .envmodel import LinearCmdpSpec
from .estimate import HyperParams

CSV_COLUMNS = (
    "k", "epoch", "Y", "v_f_hat", "v_g_hat", "v_f_true", "v_g_true",
    "cum_regret", "cum_violation", "mixed_flag", "reset_flag",
)


class RunMetrics:
    """Per-run accumulator; one instance per (config, seed), merged later."""

    def __init__(self, spec: LinearCmdpSpec, hyper: HyperParams):
        self.spec = spec
        self.hyper = hyper
        self.k: list[int] = []
        self.epoch: list[int] = []
        self.y: list[float] = []
        self.v_f_hat: list[float] = []
        self.v_g_hat: list[float] = []
        self.v_f_true: list[float] = []
        self.v_g_true: list[float] = []
        self.mixed: list[bool] = []
        self.reset: list[bool] = []
        self._theta_sum = np.zeros((spec.horizon, spec.dim))
        # identity-keyed cache: the drift schedule recycles the same parameter
        # arrays, so each distinct array pays the einsum once; keys stay valid
        # because the params object itself is pinned alongside its table
        self._loss_tables: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    # -- recording -------------------------------------------------------------

    def _loss_table(self, loss_params: np.ndarray) -> np.ndarray:
        entry = self._loss_tables.get(id(loss_params))
        if entry is not None and entry[0] is loss_params:
            return entry[1]
        table = self.spec.loss_table(loss_params)
        if len(self._loss_tables) < 16:
            self._loss_tables[id(loss_params)] = (loss_params, table)
        return table

    def record_episode(self, policy_snapshot, loss_params: np.ndarray, k: int, *,
                       y: float = 0.0, epoch: int = 0,
                       v_f_hat: float = math.nan, v_g_hat: float = math.nan,
                       mixed: bool = False, reset: bool = False) -> None:
        """Append one episode: exact DP under the deployed policy, twice."""
        pi = (policy_snapshot.policy_matrix()
              if hasattr(policy_snapshot, "policy_matrix") else policy_snapshot)
        s1 = self.spec.initial_state
        v_f = kernels.dp_values(self.spec.P, self._loss_table(loss_params), pi)
        v_g = kernels.dp_values(self.spec.P, self.spec.mean_cost_table, pi)
        self.k.append(int(k))
        self.epoch.append(int(epoch))
        self.y.append(float(y))
        self.v_f_hat.append(float(v_f_hat))
        self.v_g_hat.append(float(v_g_hat))
        self.v_f_true.append(float(v_f[0, s1]))
        self.v_g_true.append(float(v_g[0, s1]))
        self.mixed.append(bool(mixed))
        self.reset.append(bool(reset))
        self._theta_sum += loss_params

    def record(self, rec) -> None:
        """Append one learner EpisodeRecord."""
        self.record_episode(rec.pi, rec.theta_f, rec.k, y=rec.y, epoch=rec.epoch,
                            v_f_hat=rec.v_f_hat, v_g_hat=rec.v_g_hat,
                            mixed=rec.mixed, reset=rec.reset)

    # -- derived curves ----------------------------------------------------------

    @property
    def episodes(self) -> int:
        return len(self.k)

    @property
    def avg_loss_params(self) -> np.ndarray:
        """(1/K) sum_k theta_f^k of the realized schedule."""
        if not self.k:
            raise ValueError("no episodes recorded")
        return self._theta_sum / self.episodes

    def cum_regret(self, v_star: float) -> np.ndarray:
        """Prefix sums of per-episode gaps against the fixed baseline."""
        gains = np.asarray(self.v_f_true)
        return np.cumsum(gains) - v_star * np.arange(1, self.episodes + 1)

    def cum_violation(self) -> np.ndarray:
        """Clamped prefix sums of (V_g(pi^k) - budget)."""
        gaps = np.asarray(self.v_g_true) - self.spec.budget
        return np.maximum(np.cumsum(gaps), 0.0)


def fit_loglog_slope(k: np.ndarray, y: np.ndarray, lo_frac: float = 0.5) -> float | None:
    """Least-squares slope of log y vs log k over k >= lo_frac * max(k).

    Only strictly positive y enter the fit; returns None when fewer than two
    points qualify.
    """
    k = np.asarray(k, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    mask = (k >= lo_frac * k.max()) & (y > 0.0)
    if mask.sum() < 2:
        return None
    slope = np.polyfit(np.log(k[mask]), np.log(y[mask]), 1)[0]
    return float(slope)


def finalize(metrics: RunMetrics, v_star: float | None = None,
             num_windows: int = 10) -> dict:
    """Summary statistics plus post-hoc mirrors of the learner's monitors.

    The dual-step mirror skips episodes flagged as epoch resets (the dual is
    reassigned to zero there, not stepped).
    """
    n = metrics.episodes
    if n == 0:
        raise ValueError("no episodes recorded")
    y = np.asarray(metrics.y)
    v_g_true = np.asarray(metrics.v_g_true)
    gaps = v_g_true - metrics.spec.budget
    cum_violation = metrics.cum_violation()
    reset = np.asarray(metrics.reset, dtype=bool)

    edges = np.linspace(0, n, num_windows + 1).astype(int)
    window_means = [float(gaps[a:b].mean()) if b > a else math.nan
                    for a, b in zip(edges[:-1], edges[1:])]
    tail = max(1, n // 10)

    steps = np.abs(np.diff(y))
    within_epoch = ~reset[1:]
    max_step = float(steps[within_epoch].max()) if within_epoch.any() else 0.0

    summary = {
        "episodes": n,
        "final_violation": float(cum_violation[-1]),
        "violation_window_means": window_means,
        "violation_final_window_mean": float(gaps[-tail:].mean()),
        "max_y": float(y.max()),
        "min_y": float(y.min()),
        "epoch_count": int(max(metrics.epoch)),
        "max_within_epoch_dual_step": max_step,
        "dual_step_bound": metrics.hyper.dual_step_bound,
        "dual_soft_bound": metrics.hyper.dual_soft_bound,
        "soft_y_count": int(np.count_nonzero(y > metrics.hyper.dual_soft_bound + 1e-12)),
        "v_star": v_star,
        "final_regret": None,
        "regret_slope_second_half": None,
    }
    if v_star is not None:
        cum_regret = metrics.cum_regret(v_star)
        summary["final_regret"] = float(cum_regret[-1])
        summary["regret_slope_second_half"] = fit_loglog_slope(
            np.asarray(metrics.k), cum_regret
        )
    return summary


def write_csv(path_or_file, metrics: RunMetrics, v_star: float | None = None) -> None:
    """One row per episode in the fixed column order, header mandatory.

    Floats are written in shortest round-trip form so identical runs produce
    byte-identical files; flags are 0/1. Without v_star the cum_regret column
    is omitted entirely.
    """
    columns = list(CSV_COLUMNS)
    cum_violation = metrics.cum_violation()
    cum_regret = metrics.cum_regret(v_star) if v_star is not None else None
    if cum_regret is None:
        columns.remove("cum_regret")

    def _write(fh: IO[str]) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for i in range(metrics.episodes):
            row = [
                metrics.k[i],
                metrics.epoch[i],
                repr(metrics.y[i]),
                repr(metrics.v_f_hat[i]),
                repr(metrics.v_g_hat[i]),
                repr(metrics.v_f_true[i]),
                repr(metrics.v_g_true[i]),
            ]
            if cum_regret is not None:
                row.append(repr(float(cum_regret[i])))
            row.append(repr(float(cum_violation[i])))
            row.append(1 if metrics.mixed[i] else 0)
            row.append(1 if metrics.reset[i] else 0)
            writer.writerow(row)

    if hasattr(path_or_file, "write"):
        _write(path_or_file)
    else:
        with open(path_or_file, "w", newline="") as fh:
            _write(fh)


def read_csv_columns(path) -> dict[str, np.ndarray]:
    """Load a metrics CSV back into named float/int arrays (tests, aggregation)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    out: dict[str, np.ndarray] = {}
    for j, name in enumerate(header):
        col = [row[j] for row in rows]
        if name in ("k", "epoch", "mixed_flag", "reset_flag"):
            out[name] = np.array([int(x) for x in col], dtype=np.int64)
        else:
            out[name] = np.array([float(x) for x in col], dtype=np.float64)
    return out
