"""Backend dispatch for the hot kernels.

Two interchangeable implementations exist: a numba-compiled one
(``_kernels_nb``) and a vectorized pure-numpy fallback (``_kernels_np``).
Selection order:

1. The environment variable ``ADVCMDP_BACKEND`` — ``numba``, ``numpy``, or
   ``auto`` (default). Requesting ``numba`` without numba installed raises.
2. Under ``auto``, numba is used when importable, numpy otherwise.

``set_backend`` switches at runtime (used by tests and the benchmark); the
learner resolves kernels through this module at call time, so a switch takes
effect immediately. Numerical results of the two backends agree to rounding
error; byte-level output determinism is guaranteed per backend.
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _kernels_np
from .errors import ConfigError

_ENV_FLAG = "ADVCMDP_BACKEND"

_impls: dict[str, ModuleType] = {"numpy": _kernels_np}
try:
    from . import _kernels_nb

    _impls["numba"] = _kernels_nb
except ImportError:  # numba not installed; numpy fallback only
    pass


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_impls))


def _resolve_default() -> str:
    want = os.environ.get(_ENV_FLAG, "auto").strip().lower()
    if want in ("numpy", "np"):
        return "numpy"
    if want in ("numba", "nb"):
        if "numba" not in _impls:
            raise ConfigError(
                f"{_ENV_FLAG}=numba requested but numba is not importable"
            )
        return "numba"
    if want in ("auto", ""):
        return "numba" if "numba" in _impls else "numpy"
    raise ConfigError(f"unrecognized {_ENV_FLAG}={want!r}; use numba, numpy, or auto")


_active_name = _resolve_default()


def set_backend(name: str) -> None:
    """Select the active backend by name ('numba' or 'numpy')."""
    global _active_name
    if name not in _impls:
        raise ConfigError(
            f"backend {name!r} unavailable; installed: {available_backends()}"
        )
    _active_name = name


def get_backend() -> str:
    return _active_name


def backend_module(name: str | None = None) -> ModuleType:
    """The implementation module for ``name`` (default: the active backend)."""
    return _impls[_active_name if name is None else name]


def rank_one_update(lam, inv, phi) -> float:
    return _impls[_active_name].rank_one_update(lam, inv, phi)


def rank_one_update_batch(lam, inv, logdet, phis) -> None:
    _impls[_active_name].rank_one_update_batch(lam, inv, logdet, phis)


def policy_from_prefix(prefix_log, open_mixed, phi, sigma, nu_bar, w_open, b_open, theta):
    return _impls[_active_name].policy_from_prefix(
        prefix_log, open_mixed, phi, sigma, nu_bar, w_open, b_open, theta
    )


def backward_pass(phi, sigma, nu_bar, inv, b_g, agg, theta_f, pi, beta_b):
    return _impls[_active_name].backward_pass(
        phi, sigma, nu_bar, inv, b_g, agg, theta_f, pi, beta_b
    )


def dp_values(P, reward, pi):
    return _impls[_active_name].dp_values(P, reward, pi)


def accumulate_episode(b_g, agg, phi, s_idx, a_idx, snext_idx, costs) -> None:
    _impls[_active_name].accumulate_episode(b_g, agg, phi, s_idx, a_idx, snext_idx, costs)
