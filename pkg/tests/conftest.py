from __future__ import annotations

import numpy as np
import pytest

from advcmdp import kernels
from advcmdp.envmodel import job_scheduling_spec
from advcmdp.estimate import hyperparams_preset
from advcmdp.learner import LearnerState, run_all
from advcmdp.rngs import stream_bundle


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Run a tiny episode loop once so JIT compilation never lands in a timed test."""
    spec = job_scheduling_spec(num_episodes=30)
    hyper = hyperparams_preset(
        "paper-fig1", num_episodes=30, horizon=spec.horizon,
        dim=spec.dim, num_actions=spec.num_actions,
    )
    state = LearnerState(spec, hyper)
    run_all(state, stream_bundle(0))
    return kernels.get_backend()


@pytest.fixture(params=sorted(kernels.available_backends()))
def each_backend(request):
    """Parametrize a test over every compiled backend, restoring the default after."""
    previous = kernels.get_backend()
    kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(previous)


@pytest.fixture
def rng():
    return np.random.default_rng(20260816)
