"""Belief-driven query scheduling for edge-server monitoring.

Dispatchers track two-state Markov server statuses through aging
observations, price explicit status queries through a Lagrangian dual, and
schedule the queries with the largest net value under a per-slot budget.
"""

from .belief import DEFAULT_AOI_MAX, InfoState, advance, assign_server, dispatcher_reward
from .chain import StationaryDist, StepEntries, TransitionMatrix, idle_prob, stationary, step_entries
from .dual import DualConfig, DualSolution, DualTrace, empirical_query_rate, solve_mu
from .errors import ConfigError, ConvergenceError, ValidationError
from .mdp import (
    MdpSpec,
    QTable,
    decode_state,
    encode_state,
    expected_reward,
    greedy_action,
    load_qtable,
    net_gain,
    relative_value_iteration,
    save_qtable,
    successors,
)
from .policy import NetGain, NeverQuery, RoundRobin, ScheduleDecision
from .sim import RunConfig, SimMetrics, run

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_AOI_MAX",
    "ConfigError",
    "ConvergenceError",
    "DualConfig",
    "DualSolution",
    "DualTrace",
    "InfoState",
    "MdpSpec",
    "NetGain",
    "NeverQuery",
    "QTable",
    "RoundRobin",
    "RunConfig",
    "ScheduleDecision",
    "SimMetrics",
    "StationaryDist",
    "StepEntries",
    "TransitionMatrix",
    "ValidationError",
    "advance",
    "assign_server",
    "decode_state",
    "dispatcher_reward",
    "empirical_query_rate",
    "encode_state",
    "expected_reward",
    "greedy_action",
    "idle_prob",
    "load_qtable",
    "net_gain",
    "relative_value_iteration",
    "run",
    "save_qtable",
    "solve_mu",
    "stationary",
    "step_entries",
    "successors",
]
