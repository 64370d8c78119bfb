"""Incremental regularized Gram-matrix maintenance.

A DesignMatrix tracks Lambda = I + sum_t phi_t phi_t^T together with its
inverse (via Sherman-Morrison rank-one updates) and log-determinant, which is
all the learner ever reads: inverses for least-squares estimates, Mahalanobis
norms under the inverse metric, and the determinant-doubling epoch trigger.
Since Lambda >= I, the update denominator 1 + phi^T inv phi is >= 1 and the
log-determinant never decreases.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels
from .errors import ConfigError, InternalConsistencyError

LN2 = math.log(2.0)
# determinant-doubling test tolerance: counts exact boundary hits as triggers
TRIGGER_TOL = 1e-12
# quadratic forms this far below zero indicate numerical drift, not roundoff
NEGATIVE_FORM_TOL = -1e-12


class DesignMatrix:
    """Lambda, its maintained inverse, and logdet for one step h."""

    __slots__ = ("dim", "lam", "inv", "logdet")

    def __init__(self, dim: int, lam: np.ndarray | None = None,
                 inv: np.ndarray | None = None, logdet: float = 0.0):
        if dim <= 0:
            raise ConfigError(f"design matrix dimension must be positive, got {dim}")
        self.dim = dim
        self.lam = np.eye(dim) if lam is None else lam
        self.inv = np.eye(dim) if inv is None else inv
        self.logdet = logdet

    def update(self, phi: np.ndarray) -> None:
        """Rank-one update with one feature vector (norm at most 1)."""
        self.logdet += kernels.rank_one_update(self.lam, self.inv, np.asarray(phi, dtype=np.float64))

    def mahalanobis(self, phi: np.ndarray) -> float:
        """nu = sqrt(phi^T inv phi); 0 <= nu <= ||phi|| because Lambda >= I."""
        q = float(phi @ self.inv @ phi)
        if q < 0.0:
            if q < NEGATIVE_FORM_TOL:
                raise InternalConsistencyError(
                    f"negative quadratic form {q:.3e} in Mahalanobis norm"
                )
            q = 0.0
        return math.sqrt(q)

    def copy(self) -> "DesignMatrix":
        return DesignMatrix(self.dim, self.lam.copy(), self.inv.copy(), self.logdet)


def new_identity(dim: int) -> DesignMatrix:
    """Fresh Lambda = I (logdet 0, inverse I)."""
    return DesignMatrix(dim)


def epoch_trigger(current: DesignMatrix | float, logdet_anchor: float) -> bool:
    """True when det(current) >= 2 det(anchor), i.e. logdet grew by ln 2.

    Inclusive at the boundary (within TRIGGER_TOL), matching the >= in the
    determinant-doubling rule.
    """
    logdet_current = current.logdet if isinstance(current, DesignMatrix) else float(current)
    return logdet_current - logdet_anchor >= LN2 - TRIGGER_TOL


def epoch_count_bound(dim: int, horizon: int, num_episodes: int) -> float:
    """Hard cap on determinant-doubling events over a run: (3/2) d H ln(2K)."""
    return 1.5 * dim * horizon * math.log(2.0 * num_episodes)
