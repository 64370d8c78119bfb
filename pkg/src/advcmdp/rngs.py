"""Named random-number streams.

Each run seed fans out into one independent generator per randomness role,
so changing how one role consumes draws (e.g. a different cost rule) never
perturbs the draws seen by the others. Streams are per-run and never shared
across seeds or runs.
"""

from __future__ import annotations

import numpy as np

# Role -> spawn key. Order is part of the determinism contract.
ROLES = {
    "transitions": 0,  # next-state draws
    "losses": 1,       # adversarial loss-schedule draws
    "costs": 2,        # cost-noise draws (unused by deterministic cost rules)
    "actions": 3,      # the learner's action sampling
}


def named_stream(run_seed: int, role: str) -> np.random.Generator:
    """Return the dedicated generator for one role of one run."""
    if role not in ROLES:
        raise KeyError(f"unknown rng role {role!r}; expected one of {sorted(ROLES)}")
    seq = np.random.SeedSequence(entropy=run_seed, spawn_key=(ROLES[role],))
    return np.random.Generator(np.random.PCG64(seq))


def stream_bundle(run_seed: int) -> dict[str, np.random.Generator]:
    """All role streams for one run, keyed by role name."""
    return {role: named_stream(run_seed, role) for role in ROLES}
