"""Finite-horizon constrained MDPs with linear structure.

A model is a tuple (H, S, A, P, f, g, b, s1) where transitions, per-episode
loss functions, and the mean cost are all linear in a known feature map
phi(s, a) of dimension d:

    P_h(s' | s, a) = phi(s, a) . psi_h(s')
    f_h^k(s, a)    = phi(s, a) . theta_f[h, k]     (full-information feedback)
    g_h(s, a)      = phi(s, a) . theta_g[h]        (bandit feedback, sampled)

Shipped instances are tabular with one-hot features (d = |S| |A|). The module
also defines the job-scheduling instance used by the experiment harness: a
stack of jobs is processed over H = 10 steps; processing advances the stack
stochastically and is cheap, idling costs full loss; the cost function charges
1 - (progress)/2 per step and total expected cost is budgeted.

Step indices h are 0-based throughout the code; episode indices k are 1-based.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .errors import ConfigError

_PROB_TOL = 1e-9
_RANGE_TOL = 1e-9

JOB_PRESET_ID = "job-scheduling-v1"


# ---------------------------------------------------------------------------
# feature maps


@dataclass(frozen=True)
class FeatureMap:
    """Tabular feature map: one vector of length dim per (state, action)."""

    dim: int
    table: np.ndarray  # (S, A, dim) float64

    def __post_init__(self):
        table = np.ascontiguousarray(np.asarray(self.table, dtype=np.float64))
        object.__setattr__(self, "table", table)
        if table.ndim != 3 or table.shape[2] != self.dim:
            raise ConfigError(f"feature table must be (S, A, {self.dim}), got {table.shape}")
        norms = np.linalg.norm(table, axis=2)
        if norms.max(initial=0.0) > 1.0 + _RANGE_TOL:
            raise ConfigError(f"feature norms must be <= 1, max is {norms.max():.6g}")

    def vector(self, s: int, a: int) -> np.ndarray:
        return self.table[s, a]


def tabular_features(num_states: int, num_actions: int) -> FeatureMap:
    """One-hot featurization: phi(s, a) = e_{s * num_actions + a}, d = |S| |A|."""
    if num_states < 1 or num_actions < 1:
        raise ConfigError("need at least one state and one action")
    dim = num_states * num_actions
    table = np.zeros((num_states, num_actions, dim))
    for s in range(num_states):
        for a in range(num_actions):
            table[s, a, s * num_actions + a] = 1.0
    return FeatureMap(dim=dim, table=table)


# ---------------------------------------------------------------------------
# loss schedules


@dataclass(frozen=True)
class LossSchedule:
    """Per-episode loss parameters theta_f[h] in R^d.

    variant "fixed": every episode uses f1.
    variant "two-function-drift": episode k draws f1 with probability
    p_k = 0.9 - 0.9 (k-1)/(K-1) and f2 otherwise, shifting mass from f1 to f2
    over the planned horizon of K episodes. For K = 1, p_1 = 0.9 by the
    convention (k-1)/(K-1) = 0.
    """

    variant: str
    f1: np.ndarray  # (H, d)
    f2: np.ndarray | None
    num_episodes: int

    def __post_init__(self):
        if self.variant not in ("fixed", "two-function-drift"):
            raise ConfigError(f"unknown loss schedule variant {self.variant!r}")
        object.__setattr__(self, "f1", np.ascontiguousarray(self.f1, dtype=np.float64))
        if self.variant == "two-function-drift":
            if self.f2 is None:
                raise ConfigError("two-function-drift requires f2")
            f2 = np.ascontiguousarray(self.f2, dtype=np.float64)
            if f2.shape != self.f1.shape:
                raise ConfigError("f1 and f2 must have equal shapes")
            object.__setattr__(self, "f2", f2)
        if self.num_episodes < 1:
            raise ConfigError("planned episode count must be >= 1")

    @property
    def horizon(self) -> int:
        return self.f1.shape[0]

    def drift_probability(self, k: int) -> float:
        """P[episode k uses f1]; in [0, 0.9] for every 1 <= k <= K."""
        if not 1 <= k <= self.num_episodes:
            raise ValueError(f"episode index {k} outside 1..{self.num_episodes}")
        if self.variant == "fixed":
            return 1.0
        if self.num_episodes == 1:
            return 0.9
        return 0.9 - 0.9 * (k - 1) / (self.num_episodes - 1)

    def param_sets(self) -> list[np.ndarray]:
        return [self.f1] if self.f2 is None else [self.f1, self.f2]


def draw_loss_params(schedule: LossSchedule, k: int, rng: np.random.Generator) -> np.ndarray:
    """The loss parameters revealed in episode k (one rng draw for the drift)."""
    if schedule.variant == "fixed":
        return schedule.f1
    p = schedule.drift_probability(k)
    return schedule.f1 if rng.random() < p else schedule.f2


# ---------------------------------------------------------------------------
# cost rules


class CostRule(Protocol):
    """Samples a cost in [0, 1] whose conditional mean given (h, s, a) is
    the linear mean phi(s, a) . theta_g[h]."""

    rule_id: str

    def sample(self, h: int, s: int, a: int, s_next: int,
               rng: np.random.Generator | None) -> float: ...


@dataclass(frozen=True)
class StackProgressCost:
    """Deterministic given the transition: 1 - (label(s) - label(s')) / scale.

    Randomness enters only through s', so the cost is stochastic given (s, a)
    with mean equal to the transition-weighted average.
    """

    labels: tuple[float, ...]
    scale: float = 2.0
    rule_id: str = field(default="stack-progress", init=False)

    def sample(self, h, s, a, s_next, rng=None) -> float:
        return 1.0 - (self.labels[s] - self.labels[s_next]) / self.scale


@dataclass(frozen=True)
class BernoulliMeanCost:
    """Bernoulli(mean[h, s, a]) sample; mean table must match theta_g."""

    mean: np.ndarray  # (H, S, A)
    rule_id: str = field(default="bernoulli-mean", init=False)

    def sample(self, h, s, a, s_next, rng=None) -> float:
        if rng is None:
            raise ValueError("bernoulli-mean cost rule needs an rng")
        return 1.0 if rng.random() < self.mean[h, s, a] else 0.0


# ---------------------------------------------------------------------------
# the model


@dataclass(frozen=True)
class LinearCmdpSpec:
    """Immutable ground-truth model; safe to share across concurrent runs."""

    horizon: int
    states: tuple  # state labels; indices 0..S-1 are used everywhere else
    actions: tuple
    features: FeatureMap
    psi: np.ndarray       # (H, S, d): transition measure per step and next state
    theta_g: np.ndarray   # (H, d): mean-cost parameters
    cost_rule: CostRule
    loss_schedule: LossSchedule
    budget: float
    initial_state: int    # index into states

    # derived, filled by __post_init__
    P: np.ndarray = field(init=False, repr=False)        # (H, S, A, S)
    cum_P: np.ndarray = field(init=False, repr=False)    # cumulative over s'
    mean_cost_table: np.ndarray = field(init=False, repr=False)  # (H, S, A)

    def __post_init__(self):
        H, S, A = self.horizon, len(self.states), len(self.actions)
        d = self.features.dim
        psi = np.ascontiguousarray(self.psi, dtype=np.float64)
        theta_g = np.ascontiguousarray(self.theta_g, dtype=np.float64)
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "theta_g", theta_g)
        if psi.shape != (H, S, d):
            raise ConfigError(f"psi must be (H={H}, S={S}, d={d}), got {psi.shape}")
        if theta_g.shape != (H, d):
            raise ConfigError(f"theta_g must be (H={H}, d={d}), got {theta_g.shape}")
        if self.features.table.shape[:2] != (S, A):
            raise ConfigError("feature table does not match state/action counts")
        if not 0 <= self.initial_state < S:
            raise ConfigError(f"initial state index {self.initial_state} out of range")
        if not 0.0 <= self.budget <= H + _RANGE_TOL:
            raise ConfigError(f"budget must lie in [0, H]={H}, got {self.budget}")
        if self.loss_schedule.horizon != H or self.loss_schedule.f1.shape[1] != d:
            raise ConfigError("loss schedule shape does not match the model")

        phi = self.features.table
        P = np.einsum("sad,hxd->hsax", phi, psi)
        if P.min() < -_PROB_TOL or P.max() > 1.0 + _PROB_TOL:
            raise ConfigError("transition probabilities fall outside [0, 1]")
        row_err = np.abs(P.sum(axis=3) - 1.0).max()
        if row_err > _PROB_TOL:
            raise ConfigError(f"transition rows must sum to 1 (max error {row_err:.3g})")
        P = np.clip(P, 0.0, None)
        object.__setattr__(self, "P", np.ascontiguousarray(P))
        object.__setattr__(self, "cum_P", np.cumsum(P, axis=3))

        mean_table = np.einsum("sad,hd->hsa", phi, theta_g)
        if mean_table.min() < -_RANGE_TOL or mean_table.max() > 1.0 + _RANGE_TOL:
            raise ConfigError("mean costs fall outside [0, 1]")
        object.__setattr__(self, "mean_cost_table", np.ascontiguousarray(mean_table))

        # norm bounds required by the linear structure
        sqrt_d = math.sqrt(d) + _RANGE_TOL
        abs_psi_norm = np.linalg.norm(np.abs(psi).sum(axis=1), axis=1).max()
        if abs_psi_norm > sqrt_d:
            raise ConfigError(f"sum_s' |psi_h(s')| norm {abs_psi_norm:.6g} exceeds sqrt(d)")
        if np.linalg.norm(theta_g, axis=1).max() > sqrt_d:
            raise ConfigError("theta_g norm exceeds sqrt(d)")
        for params in self.loss_schedule.param_sets():
            if np.linalg.norm(params, axis=1).max() > sqrt_d:
                raise ConfigError("loss parameter norm exceeds sqrt(d)")
            values = np.einsum("sad,hd->hsa", phi, params)
            if values.min() < -_RANGE_TOL or values.max() > 1.0 + _RANGE_TOL:
                raise ConfigError("loss values fall outside [0, 1]")

    # convenience sizes
    @property
    def num_states(self) -> int:
        return len(self.states)

    @property
    def num_actions(self) -> int:
        return len(self.actions)

    @property
    def dim(self) -> int:
        return self.features.dim

    def loss_table(self, theta_f: np.ndarray) -> np.ndarray:
        """Realized loss values (H, S, A) for one episode's parameters."""
        return np.einsum("sad,hd->hsa", self.features.table, theta_f)


def mean_cost(spec: LinearCmdpSpec, h: int, s: int, a: int) -> float:
    """Expected cost phi(s, a) . theta_g[h]."""
    return float(spec.features.vector(s, a) @ spec.theta_g[h])


def sample_transition(spec: LinearCmdpSpec, h: int, s: int, a: int,
                      rng: np.random.Generator) -> int:
    """Draw s' from the categorical row P_h(. | s, a) by inverse CDF."""
    row = spec.cum_P[h, s, a]
    if abs(row[-1] - 1.0) > _PROB_TOL:
        raise ConfigError(f"transition row at (h={h}, s={s}, a={a}) sums to {row[-1]}")
    return int(np.searchsorted(row, rng.random(), side="right"))


def sample_cost(spec: LinearCmdpSpec, h: int, s: int, a: int, s_next: int,
                rng: np.random.Generator | None = None) -> float:
    """One bandit-feedback cost observation for the realized transition."""
    c = float(spec.cost_rule.sample(h, s, a, s_next, rng))
    if not -_RANGE_TOL <= c <= 1.0 + _RANGE_TOL:
        raise ConfigError(f"cost rule produced {c} outside [0, 1]")
    return min(max(c, 0.0), 1.0)


# ---------------------------------------------------------------------------
# declarative configs and the job-scheduling preset


def job_scheduling_config() -> dict:
    """The built-in job-scheduling instance as a declarative config.

    Ten jobs on a stack, H = 10 steps, action 1 processes (advance by two jobs
    w.p. 0.8, by one w.p. 0.1, none w.p. 0.1, clipped at zero), action 0 idles.
    Losses drift between two step-profiles over the run; cost charges
    1 - progress/2 per step; total expected cost is budgeted at 5.6.
    """
    H = 10
    # step windows where processing is expensive, 1-based step numbering
    f1_window = {3, 4, 5, 6}
    f2_window = {4, 5, 6}

    def loss_values(window: set[int], active: float) -> list:
        vals = np.empty((H, 10, 2))
        for h in range(H):
            vals[h, :, 0] = 1.0
            vals[h, :, 1] = active if (h + 1) in window else 0.2
        return vals.tolist()

    return {
        "horizon": H,
        "states": list(range(10)),
        "actions": [0, 1],
        "transition": {"id": "job-stack", "params": {"advance_two": 0.8, "advance_one": 0.1}},
        "cost": {"id": "stack-progress", "params": {"scale": 2.0}},
        "loss_schedule": {
            "id": "two-function-drift",
            "params": {
                "f1": loss_values(f1_window, 0.55),
                "f2": loss_values(f2_window, 0.6),
            },
        },
        "budget": 5.6,
        "initial_state": 9,
    }


_PRESETS = {JOB_PRESET_ID: job_scheduling_config}


def preset_config(name: str) -> dict:
    if name not in _PRESETS:
        raise ConfigError(f"unknown environment preset {name!r}; known: {sorted(_PRESETS)}")
    return _PRESETS[name]()


def _job_stack_transitions(states: list, actions: list, H: int, params: dict) -> np.ndarray:
    """P (H, S, A, S) for the job-stack rule. States must be job counts."""
    if list(actions) != [0, 1]:
        raise ConfigError("job-stack transitions require actions [0, 1]")
    labels = [int(s) for s in states]
    if labels != sorted(labels) or len(set(labels)) != len(labels):
        raise ConfigError("job-stack transitions require distinct increasing integer states")
    index_of = {lab: i for i, lab in enumerate(labels)}
    p2 = float(params.get("advance_two", 0.8))
    p1 = float(params.get("advance_one", 0.1))
    p0 = 1.0 - p2 - p1
    if min(p2, p1, p0) < 0.0:
        raise ConfigError("job-stack branch probabilities must be nonnegative")
    S = len(labels)
    P = np.zeros((H, S, 2, S))
    for s, lab in enumerate(labels):
        P[:, s, 0, s] = 1.0
        for prob, drop in ((p2, 2), (p1, 1), (p0, 0)):
            target = max(lab - drop, labels[0])
            if target not in index_of:
                raise ConfigError(f"job-stack target state {target} missing from state list")
            P[:, s, 1, index_of[target]] += prob
    return P


def _psi_from_table(P: np.ndarray, num_actions: int) -> np.ndarray:
    """One-hot psi realizing an explicit kernel: psi_h(s')[idx(s,a)] = P."""
    H, S = P.shape[0], P.shape[1]
    d = S * num_actions
    psi = np.zeros((H, S, d))
    for h in range(H):
        for s in range(S):
            for a in range(num_actions):
                psi[h, :, s * num_actions + a] = P[h, s, a, :]
    return psi


def _theta_from_table(values: np.ndarray, num_actions: int) -> np.ndarray:
    """One-hot theta realizing explicit (H, S, A) values."""
    H, S, A = values.shape
    theta = np.zeros((H, S * A))
    for s in range(S):
        for a in range(A):
            theta[:, s * num_actions + a] = values[:, s, a]
    return theta


def _require(cfg: dict, key: str):
    if key not in cfg:
        raise ConfigError(f"environment config missing required key {key!r}")
    return cfg[key]


def spec_from_config(cfg: dict | str, num_episodes: int) -> LinearCmdpSpec:
    """Build a model from a declarative config (or preset id/preset dict).

    num_episodes is the planned K of the run; the drift schedule needs it.
    """
    if isinstance(cfg, str):
        cfg = preset_config(cfg)
    elif "preset" in cfg:
        cfg = preset_config(cfg["preset"])
    if num_episodes < 1:
        raise ConfigError("num_episodes must be >= 1")

    H = int(_require(cfg, "horizon"))
    if H < 1:
        raise ConfigError("horizon must be >= 1")
    states = list(_require(cfg, "states"))
    actions = list(_require(cfg, "actions"))
    S, A = len(states), len(actions)
    if S < 1 or A < 1:
        raise ConfigError("need at least one state and one action")
    features = tabular_features(S, A)

    trans = _require(cfg, "transition")
    tid, tparams = trans.get("id"), trans.get("params", {})
    if tid == "job-stack":
        P = _job_stack_transitions(states, actions, H, tparams)
    elif tid == "table":
        P = np.asarray(_require(tparams, "probs"), dtype=np.float64)
        if P.shape != (H, S, A, S):
            raise ConfigError(f"transition table must be (H,S,A,S)={(H,S,A,S)}, got {P.shape}")
    else:
        raise ConfigError(f"unknown transition rule id {tid!r}")
    psi = _psi_from_table(P, A)

    cost = _require(cfg, "cost")
    cid, cparams = cost.get("id"), cost.get("params", {})
    if cid == "stack-progress":
        labels = tuple(float(s) for s in states)
        rule: CostRule = StackProgressCost(labels=labels, scale=float(cparams.get("scale", 2.0)))
        # conditional expectation over s' keeps the mean linear in phi
        mean_table = np.empty((H, S, A))
        for h in range(H):
            for s in range(S):
                for a in range(A):
                    costs = np.array([rule.sample(h, s, a, sn) for sn in range(S)])
                    mean_table[h, s, a] = float(P[h, s, a] @ costs)
    elif cid == "bernoulli-mean":
        mean_table = np.asarray(_require(cparams, "mean"), dtype=np.float64)
        if mean_table.shape != (H, S, A):
            raise ConfigError(f"cost mean table must be (H,S,A)={(H,S,A)}, got {mean_table.shape}")
        rule = BernoulliMeanCost(mean=np.ascontiguousarray(mean_table))
    else:
        raise ConfigError(f"unknown cost rule id {cid!r}")
    theta_g = _theta_from_table(mean_table, A)

    loss = _require(cfg, "loss_schedule")
    lid, lparams = loss.get("id"), loss.get("params", {})
    if lid == "two-function-drift":
        f1 = np.asarray(_require(lparams, "f1"), dtype=np.float64)
        f2 = np.asarray(_require(lparams, "f2"), dtype=np.float64)
        if f1.shape != (H, S, A) or f2.shape != (H, S, A):
            raise ConfigError(f"loss tables must be (H,S,A)={(H,S,A)}")
        schedule = LossSchedule(
            variant="two-function-drift",
            f1=_theta_from_table(f1, A),
            f2=_theta_from_table(f2, A),
            num_episodes=num_episodes,
        )
    elif lid == "fixed":
        f1 = np.asarray(_require(lparams, "f"), dtype=np.float64)
        if f1.shape != (H, S, A):
            raise ConfigError(f"loss table must be (H,S,A)={(H,S,A)}")
        schedule = LossSchedule(
            variant="fixed", f1=_theta_from_table(f1, A), f2=None, num_episodes=num_episodes
        )
    else:
        raise ConfigError(f"unknown loss schedule id {lid!r}")

    initial_label = _require(cfg, "initial_state")
    try:
        initial_index = states.index(initial_label)
    except ValueError:
        raise ConfigError(f"initial state {initial_label!r} not in the state list") from None

    return LinearCmdpSpec(
        horizon=H,
        states=tuple(states),
        actions=tuple(actions),
        features=features,
        psi=psi,
        theta_g=theta_g,
        cost_rule=rule,
        loss_schedule=schedule,
        budget=float(_require(cfg, "budget")),
        initial_state=initial_index,
    )


def job_scheduling_spec(num_episodes: int) -> LinearCmdpSpec:
    """The built-in job-scheduling instance for a planned run of num_episodes."""
    return spec_from_config(job_scheduling_config(), num_episodes)
