"""Per-server information state and the dispatcher-level assignment rule.

A dispatcher knows each of its servers only through the pair (last observed
status, age of that observation). The pair is a sufficient statistic for the
two-state Markov model, so richer posteriors are unnecessary.
"""

from typing import NamedTuple, Optional, Sequence

from .chain import TransitionMatrix, idle_prob


class InfoState(NamedTuple):
    last_status: int  # 0 idle, 1 busy, as observed
    aoi: int          # slots since that observation, saturated upstream


DispatcherBelief = tuple[InfoState, ...]

DEFAULT_AOI_MAX = 20


def advance(info: InfoState, observed: Optional[int], aoi_max: int = DEFAULT_AOI_MAX) -> InfoState:
    """One-slot update of an information state.

    An observation (query result or execution ACK/NAK, already consolidated
    to one bit by the caller) resets the age to 1; otherwise the age grows,
    saturating at aoi_max.
    """
    if observed is not None:
        return InfoState(observed, 1)
    return InfoState(info.last_status, min(info.aoi + 1, aoi_max))


def assign_server(beliefs: DispatcherBelief, P_list: Sequence[TransitionMatrix]) -> int:
    """Index of the server most likely idle; ties go to the lowest index."""
    best_k = 0
    best_p = -1.0
    for k, info in enumerate(beliefs):
        p = idle_prob(P_list[k], info.last_status, info.aoi)
        if p > best_p:
            best_p = p
            best_k = k
    return best_k


def dispatcher_reward(beliefs: DispatcherBelief, P_list: Sequence[TransitionMatrix]) -> float:
    """Success probability of assigning an arriving job under the current beliefs.

    Equals the idle probability of the server `assign_server` picks.
    """
    return max(
        idle_prob(P_list[k], info.last_status, info.aoi) for k, info in enumerate(beliefs)
    )
