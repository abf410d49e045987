"""Two-state Markov chain machinery for server idle/busy dynamics.

A server is idle (0) or busy (1). One-step behaviour is captured by the pair
(phi, psi): phi is the idle->idle probability, psi the busy->busy one. The
multi-step entries have a closed form through the second eigenvalue
r = phi + psi - 1, which keeps repeated lookups O(1) and free of accumulated
matrix-product error.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class TransitionMatrix:
    """One server's two-state dynamics. Both entries must lie strictly in (0, 1)."""

    phi: float
    psi: float

    def __post_init__(self):
        if not (0.0 < self.phi < 1.0):
            raise ValidationError(f"phi must be in the open interval (0,1), got {self.phi}")
        if not (0.0 < self.psi < 1.0):
            raise ValidationError(f"psi must be in the open interval (0,1), got {self.psi}")

    @property
    def r(self) -> float:
        """Second eigenvalue of the one-step matrix; |r| < 1 for valid chains."""
        return self.phi + self.psi - 1.0


@dataclass(frozen=True)
class StationaryDist:
    pi0: float
    pi1: float


@dataclass(frozen=True)
class StepEntries:
    """Diagonal entries of the delta-step transition matrix."""

    phi_delta: float
    psi_delta: float


def stationary(P: TransitionMatrix) -> StationaryDist:
    """Unique stationary distribution of the chain.

    pi0 = (1 - psi) / ((1 - phi) + (1 - psi)), and pi1 is its complement.
    """
    denom = (1.0 - P.phi) + (1.0 - P.psi)
    pi0 = (1.0 - P.psi) / denom
    return StationaryDist(pi0=pi0, pi1=1.0 - pi0)


def step_entries(P: TransitionMatrix, delta: int) -> StepEntries:
    """Diagonal entries of the delta-step matrix, in closed form.

    phi(delta) = pi0 + pi1 * r^delta and psi(delta) = pi1 + pi0 * r^delta.
    delta must be >= 1: an age of zero does not occur in this model.
    """
    if delta < 1:
        raise ValidationError(f"delta must be >= 1, got {delta}")
    pi = stationary(P)
    rd = P.r ** delta
    return StepEntries(phi_delta=pi.pi0 + pi.pi1 * rd, psi_delta=pi.pi1 + pi.pi0 * rd)


def idle_prob(P: TransitionMatrix, last_status: int, delta: int) -> float:
    """Probability the server is idle now, given it was `last_status` `delta` slots ago."""
    e = step_entries(P, delta)
    if last_status == 0:
        return e.phi_delta
    return 1.0 - e.psi_delta


@lru_cache(maxsize=None)
def idle_prob_table(P: TransitionMatrix, delta_max: int) -> np.ndarray:
    """Idle probabilities for all (last_status, delta) pairs with delta in 1..delta_max.

    Returns a read-only (2, delta_max) array; row 0 conditions on an idle
    observation, row 1 on a busy one. Cached per (P, delta_max) because
    solver and simulator loops hit these constantly.
    """
    if delta_max < 1:
        raise ValidationError(f"delta_max must be >= 1, got {delta_max}")
    pi = stationary(P)
    rd = P.r ** np.arange(1, delta_max + 1)
    table = np.empty((2, delta_max))
    table[0] = pi.pi0 + pi.pi1 * rd
    table[1] = 1.0 - (pi.pi1 + pi.pi0 * rd)
    table.setflags(write=False)
    return table
