"""Experiment runner: JSON configs, multi-seed execution, aggregation.

A config names an environment (preset id or inline dict), an episode count,
a seed list, and a hyperparameter preset with optional field overrides. Each
seed is an independent run sharing nothing mutable; parallel and serial
execution produce identical outputs because every run is fully determined by
(config, seed). Per-seed outputs are one metrics CSV and one summary JSON;
the aggregate CSV holds the per-episode mean and 95% confidence band
(mean +/- 1.96 * sample std / sqrt(n), width zero for one seed) of
cumulative regret and violation, recomputed from the per-seed files.
"""

from __future__ import annotations

import csv
import json
import multiprocessing
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels, learner, metrics, oracle
from .envmodel import spec_from_config
from .errors import ConfigError, InfeasibleError
from .estimate import FIG1_PRESET_ID, hyperparams_preset
from .rngs import stream_bundle

_CONFIG_KEYS = {"environment", "episodes", "seeds", "hyper", "output_dir", "parallelism"}
_HYPER_KEYS = {"preset", "delta", "overrides"}

AGGREGATE_COLUMNS = (
    "k", "n_seeds",
    "cum_regret_mean", "cum_regret_lo", "cum_regret_hi",
    "cum_violation_mean", "cum_violation_lo", "cum_violation_hi",
)


@dataclass(frozen=True)
class ExperimentConfig:
    environment: object            # preset id (str) or inline environment dict
    episodes: int
    seeds: tuple[int, ...]
    hyper_preset: str = FIG1_PRESET_ID
    delta: float = 0.1
    overrides: dict = field(default_factory=dict)
    output_dir: str = "results"
    parallelism: int = 1

    def __post_init__(self):
        if self.episodes < 1:
            raise ConfigError("episodes must be >= 1")
        if not self.seeds:
            raise ConfigError("seeds must be a non-empty list")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("experiment config must be a JSON object")
    unknown = set(raw) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}; allowed: {sorted(_CONFIG_KEYS)}")
    for key in ("environment", "episodes", "seeds"):
        if key not in raw:
            raise ConfigError(f"config missing required key {key!r}")
    hyper = raw.get("hyper", {})
    if not isinstance(hyper, dict):
        raise ConfigError("'hyper' must be an object")
    unknown = set(hyper) - _HYPER_KEYS
    if unknown:
        raise ConfigError(f"unknown hyper keys {sorted(unknown)}; allowed: {sorted(_HYPER_KEYS)}")
    try:
        seeds = tuple(int(s) for s in raw["seeds"])
    except (TypeError, ValueError):
        raise ConfigError("seeds must be a list of integers") from None
    try:
        episodes = int(raw["episodes"])
        delta = float(hyper.get("delta", 0.1))
        parallelism = int(raw.get("parallelism", 1))
    except (TypeError, ValueError) as err:
        raise ConfigError(f"malformed numeric config field: {err}") from None
    return ExperimentConfig(
        environment=raw["environment"],
        episodes=episodes,
        seeds=seeds,
        hyper_preset=str(hyper.get("preset", FIG1_PRESET_ID)),
        delta=delta,
        overrides=dict(hyper.get("overrides", {})),
        output_dir=str(raw.get("output_dir", "results")),
        parallelism=parallelism,
    )


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"config file {path} is not valid JSON: {err}") from None
    return config_from_dict(raw)


def build_run(config: ExperimentConfig):
    """Instantiate the (model, hyperparameters) pair a seed run needs."""
    spec = spec_from_config(config.environment, config.episodes)
    hyper = hyperparams_preset(
        config.hyper_preset, config.episodes, spec.horizon, spec.dim,
        spec.num_actions, config.delta, config.overrides,
    )
    return spec, hyper


def seed_csv_path(out_dir: str, seed: int) -> str:
    return os.path.join(out_dir, f"seed-{seed}.csv")


def run_seed(config: ExperimentConfig, seed: int, out_dir: str) -> dict:
    """One full learner run: metrics CSV, summary JSON, summary dict."""
    start = time.perf_counter()
    spec, hyper = build_run(config)
    state = learner.LearnerState(spec, hyper)
    acc = metrics.RunMetrics(spec, hyper)
    for rec in learner.run(state, stream_bundle(seed)):
        acc.record(rec)
    opt = oracle.constrained_optimum(spec, acc.avg_loss_params)
    summary = metrics.finalize(acc, opt.value)
    summary.update(
        seed=seed,
        lambda_star=opt.lambda_star,
        slater_gamma=opt.slater_gamma,
        learner_soft_y_count=state.soft_y_count,
        learner_soft_q_count=state.soft_q_count,
        backend=kernels.get_backend(),
        elapsed_seconds=round(time.perf_counter() - start, 3),
    )
    metrics.write_csv(seed_csv_path(out_dir, seed), acc, opt.value)
    with open(os.path.join(out_dir, f"seed-{seed}-summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def _seed_task(args) -> dict:
    config, seed, out_dir = args
    try:
        summary = run_seed(config, seed, out_dir)
        return {"seed": seed, "status": "ok", "summary": summary}
    except Exception as err:  # reported per seed; surviving seeds still aggregate
        return {"seed": seed, "status": "failed",
                "error": f"{type(err).__name__}: {err}"}


def aggregate_seed_csvs(csv_paths: list[str], out_path: str) -> None:
    """Mean and 95% band of both cumulative curves across per-seed files."""
    if not csv_paths:
        raise ConfigError("nothing to aggregate: no completed seed files")
    runs = [metrics.read_csv_columns(p) for p in csv_paths]
    k = runs[0]["k"]
    for path, cols in zip(csv_paths[1:], runs[1:]):
        if not np.array_equal(cols["k"], k):
            raise ConfigError(f"{path} has a different episode axis; cannot aggregate")
    n = len(runs)

    def band(name: str):
        stack = np.stack([cols[name] for cols in runs])
        mean = stack.mean(axis=0)
        half = np.zeros_like(mean)
        if n > 1:
            half = 1.96 * stack.std(axis=0, ddof=1) / np.sqrt(n)
        return mean, mean - half, mean + half

    r_mean, r_lo, r_hi = band("cum_regret")
    v_mean, v_lo, v_hi = band("cum_violation")

    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(AGGREGATE_COLUMNS)
        for i in range(k.shape[0]):
            writer.writerow([
                int(k[i]), n,
                repr(float(r_mean[i])), repr(float(r_lo[i])), repr(float(r_hi[i])),
                repr(float(v_mean[i])), repr(float(v_lo[i])), repr(float(v_hi[i])),
            ])


def run_experiment(config: ExperimentConfig, out_dir: str | None = None,
                   parallelism: int | None = None) -> dict:
    """Run every seed, write per-seed CSVs, the aggregate, and a plot script.

    Failures are recorded per seed; the aggregate covers completed seeds only.
    Returns the run report (also written to run-report.json).
    """
    # fail fast on malformed or infeasible configs before any seed launches
    # (ConfigError / InfeasibleError from here map to exit codes 1 / 3)
    validate_config(config)

    out = out_dir if out_dir is not None else config.output_dir
    os.makedirs(out, exist_ok=True)
    workers = parallelism if parallelism is not None else config.parallelism

    tasks = [(config, seed, out) for seed in config.seeds]
    if workers > 1 and len(tasks) > 1:
        with multiprocessing.Pool(min(workers, len(tasks))) as pool:
            results = pool.map(_seed_task, tasks)
    else:
        results = [_seed_task(t) for t in tasks]

    completed = [r["seed"] for r in results if r["status"] == "ok"]
    report = {
        "output_dir": out,
        "episodes": config.episodes,
        "environment": config.environment if isinstance(config.environment, str) else "inline",
        "hyper_preset": config.hyper_preset,
        "seeds_completed": completed,
        "seeds_failed": {str(r["seed"]): r["error"] for r in results if r["status"] == "failed"},
        "results": results,
    }
    if completed:
        aggregate_path = os.path.join(out, "aggregate.csv")
        aggregate_seed_csvs([seed_csv_path(out, s) for s in completed], aggregate_path)
        report["aggregate_csv"] = aggregate_path
        report["plot_script"] = emit_plot_script(aggregate_path)
    with open(os.path.join(out, "run-report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report


_PLOT_TEMPLATE = '''\
"""Render cumulative regret and violation curves with 95% confidence bands.

Standalone: reads {csv_name!r} from this script's directory and needs only
matplotlib. Generated file; regenerate rather than edit.
"""

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

path = os.path.join(os.path.dirname(os.path.abspath(__file__)), {csv_name!r})
cols = {{name: [] for name in {columns!r}}}
with open(path, newline="") as fh:
    for row in csv.DictReader(fh):
        for name in cols:
            cols[name].append(float(row[name]))

k = cols["k"]
fig, (ax_r, ax_v) = plt.subplots(1, 2, figsize=(11, 4))
ax_r.plot(k, cols["cum_regret_mean"], color="tab:blue")
ax_r.fill_between(k, cols["cum_regret_lo"], cols["cum_regret_hi"],
                  color="tab:blue", alpha=0.25, linewidth=0)
ax_r.set_xlabel("episode k")
ax_r.set_ylabel("cumulative regret")
ax_v.plot(k, cols["cum_violation_mean"], color="tab:red")
ax_v.fill_between(k, cols["cum_violation_lo"], cols["cum_violation_hi"],
                  color="tab:red", alpha=0.25, linewidth=0)
ax_v.set_xlabel("episode k")
ax_v.set_ylabel("cumulative constraint violation")
n = int(cols["n_seeds"][0]) if cols["n_seeds"] else 0
fig.suptitle(f"mean over {{n}} seeds, 95% confidence band")
fig.tight_layout()
out = os.path.splitext(path)[0] + ".png"
fig.savefig(out, dpi=150)
print(f"wrote {{out}}")
'''


def emit_plot_script(aggregate_path: str, out_path: str | None = None) -> str:
    """Write a standalone plotting script next to the aggregate CSV.

    The script is generated data, not a runtime dependency: this package does
    not import matplotlib.
    """
    if not os.path.exists(aggregate_path):
        raise ConfigError(f"aggregate file not found: {aggregate_path}")
    target = out_path or os.path.join(os.path.dirname(os.path.abspath(aggregate_path)),
                                      "plot_results.py")
    script = _PLOT_TEMPLATE.format(csv_name=os.path.basename(aggregate_path),
                                   columns=tuple(AGGREGATE_COLUMNS))
    with open(target, "w") as fh:
        fh.write(script)
    return target


def validate_config(config: ExperimentConfig) -> dict:
    """Static checks plus exact feasibility analysis; returns the report.

    Raises ConfigError for malformed settings and InfeasibleError when no
    policy can meet the budget.
    """
    spec, hyper = build_run(config)
    gamma = oracle.slater_margin(spec)
    if gamma < -1e-9:
        raise InfeasibleError(
            f"budget {spec.budget} is below the minimum achievable expected cost "
            f"{spec.budget - gamma:.6g}"
        )
    K, H = hyper.num_episodes, hyper.horizon
    return {
        "environment": config.environment if isinstance(config.environment, str) else "inline",
        "episodes": K,
        "seeds": list(config.seeds),
        "horizon": H,
        "num_states": spec.num_states,
        "num_actions": spec.num_actions,
        "feature_dim": spec.dim,
        "budget": spec.budget,
        "slater_gamma": gamma,
        "slater_ok": gamma > 0.0,
        "theory_regime": H * H <= K,
        "hyper": {
            "preset": config.hyper_preset,
            "alpha": hyper.alpha,
            "eta": hyper.eta,
            "theta": hyper.theta,
            "beta_b": hyper.beta_b,
            "beta_w": hyper.beta_w,
            "mixing_period": hyper.mixing_period,
            "delta": hyper.delta,
        },
        "derived": {
            "dual_shrink_4_alpha_eta_H3": hyper.dual_shrink,
            "dual_step_bound": hyper.dual_step_bound,
            "dual_soft_bound_11_eta_H3_K": hyper.dual_soft_bound,
            "epoch_count_bound": 1.5 * spec.dim * H * float(np.log(2 * K)),
        },
    }


def format_validation_report(report: dict) -> str:
    lines = ["experiment configuration", "-" * 24]
    for key in ("environment", "episodes", "seeds", "horizon", "num_states",
                "num_actions", "feature_dim", "budget"):
        lines.append(f"{key:>22}: {report[key]}")
    lines.append(f"{'slater_gamma':>22}: {report['slater_gamma']:.6g} "
                 f"({'ok' if report['slater_ok'] else 'BOUNDARY/VIOLATED'})")
    lines.append(f"{'theory regime H^2<=K':>22}: "
                 f"{'yes' if report['theory_regime'] else 'NO (warned)'}")
    lines.append("")
    lines.append("hyperparameters")
    lines.append("-" * 24)
    for key, val in report["hyper"].items():
        lines.append(f"{key:>22}: {val}")
    lines.append("")
    lines.append("derived bounds")
    lines.append("-" * 24)
    for key, val in report["derived"].items():
        lines.append(f"{key:>22}: {val:.6g}")
    return "\n".join(lines)
