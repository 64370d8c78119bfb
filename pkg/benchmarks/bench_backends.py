"""Compare the compiled and pure-numpy kernel backends on a full learner run.

Runs the job-scheduling experiment once per backend with identical seeds and
reports wall time per backend plus the bitwise agreement of the resulting
learner trajectories. Compiled-kernel warmup (JIT) is excluded by a short
throwaway run before timing.

Usage:
    python3 benchmarks/bench_backends.py [--episodes 20000] [--seed 0]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from advcmdp import kernels, learner
from advcmdp.envmodel import job_scheduling_spec
from advcmdp.estimate import hyperparams_preset
from advcmdp.rngs import stream_bundle


def run_once(episodes: int, seed: int) -> tuple[float, np.ndarray, np.ndarray]:
    spec = job_scheduling_spec(num_episodes=episodes)
    hyper = hyperparams_preset(
        "paper-fig1", num_episodes=episodes, horizon=spec.horizon,
        dim=spec.dim, num_actions=spec.num_actions,
    )
    state = learner.LearnerState(spec, hyper)
    v_f = np.empty(episodes)
    y = np.empty(episodes)
    start = time.perf_counter()
    for i, rec in enumerate(learner.run(state, stream_bundle(seed))):
        v_f[i] = rec.v_f_hat
        y[i] = rec.y
    return time.perf_counter() - start, v_f, y


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--episodes", type=int, default=20_000,
                        help="episodes per timed run (default 20000)")
    parser.add_argument("--seed", type=int, default=0, help="run seed (default 0)")
    args = parser.parse_args()

    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)}")
    results: dict[str, tuple[float, np.ndarray, np.ndarray]] = {}
    for name in backends:
        kernels.set_backend(name)
        run_once(min(200, args.episodes), args.seed)  # warmup, untimed
        elapsed, v_f, y = run_once(args.episodes, args.seed)
        results[name] = (elapsed, v_f, y)
        rate = args.episodes / elapsed
        print(f"{name:>8}: {elapsed:8.2f}s  ({rate:,.0f} episodes/s)")

    if len(results) > 1:
        names = list(results)
        base = results[names[0]]
        for other in names[1:]:
            dv = float(np.abs(base[1] - results[other][1]).max())
            dy = float(np.abs(base[2] - results[other][2]).max())
            ratio = results[other][0] / base[0]
            print(f"{names[0]} vs {other}: max |dV|={dv:.2e}, max |dY|={dy:.2e}; "
                  f"{other} took {ratio:.2f}x the {names[0]} time")


if __name__ == "__main__":
    main()
