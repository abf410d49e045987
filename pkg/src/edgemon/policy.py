"""Per-slot query schedulers.

Three ways to spend the per-slot query budget M: net-gain maximisation
driven by solved subproblem tables, a round-robin walk over every
(dispatcher, server) pair, and querying nothing at all. Every scheduler
returns a ScheduleDecision that respects both budget invariants: at most M
queries in total and at most one per dispatcher.

Dispatcher and server indices in decisions are 0-based; the action index
net_gain expects is the 0-based server index plus one.
"""

from dataclasses import dataclass

import numpy as np

from .belief import DispatcherBelief
from .errors import ValidationError
from .mdp import QTable, encode_state

MU_MATCH_TOL = 1e-12


@dataclass(frozen=True)
class ScheduleDecision:
    """The (dispatcher, server) pairs queried this slot."""

    queries: frozenset[tuple[int, int]]

    def __len__(self):
        return len(self.queries)


EMPTY_DECISION = ScheduleDecision(queries=frozenset())


def validate_decision(decision: ScheduleDecision, N: int, K: int, M: int) -> None:
    """Raise unless the decision satisfies every scheduling constraint."""
    if len(decision.queries) > M:
        raise ValidationError(f"{len(decision.queries)} queries exceed the per-slot budget {M}")
    dispatchers = [n for n, _ in decision.queries]
    if len(set(dispatchers)) != len(dispatchers):
        raise ValidationError("a dispatcher appears twice in one decision")
    for n, k in decision.queries:
        if not (0 <= n < N and 0 <= k < K):
            raise ValidationError(f"query pair ({n}, {k}) out of range for N={N}, K={K}")


def ngm_decide(
    beliefs: list[DispatcherBelief],
    qtables: list[QTable],
    mu_star: float,
    M: int,
) -> ScheduleDecision:
    """Schedule up to M dispatchers with the highest non-negative net gains.

    Each dispatcher contributes its single best server (ties: lowest server
    index), so the per-dispatcher constraint holds by construction; the
    cross-dispatcher pick keeps the M largest candidate gains, ties going to
    the lower dispatcher index. Negative gains are never scheduled; an exact
    zero is schedulable.
    """
    if M < 0:
        raise ValidationError(f"M must be >= 0, got {M}")
    if len(beliefs) != len(qtables):
        raise ValidationError(f"{len(beliefs)} beliefs but {len(qtables)} tables")
    ranked = []
    for n, (state, table) in enumerate(zip(beliefs, qtables)):
        if abs(table.spec.mu - mu_star) > MU_MATCH_TOL:
            raise ValidationError(
                f"table for dispatcher {n} solved at mu={table.spec.mu}, expected {mu_star}"
            )
        row = table.q[encode_state(state, table.spec.aoi_max)]
        gains = row[1:] - row[0]
        k = int(np.argmax(gains))
        alpha = float(gains[k])
        if alpha >= 0.0:
            ranked.append((-alpha, n, k))
    ranked.sort()
    return ScheduleDecision(queries=frozenset((n, k) for _, n, k in ranked[:M]))


def initial_cursor(N: int, K: int) -> tuple[tuple[int, int], ...]:
    """Lexicographic starting order of the round-robin walk."""
    return tuple((n, k) for n in range(N) for k in range(K))


def round_robin_decide(
    cursor: tuple[tuple[int, int], ...],
    N: int,
    K: int,
    M: int,
) -> tuple[ScheduleDecision, tuple[tuple[int, int], ...]]:
    """One slot of the cyclic walk over all (dispatcher, server) pairs.

    Scans the pending order from the front, picking up to M pairs while
    honouring one-query-per-dispatcher; blocked pairs keep their place in
    line (a deferred turn is not lost), and picked pairs rejoin at the back.
    Every pair is therefore queried with the same long-run frequency.
    """
    if M < 0:
        raise ValidationError(f"M must be >= 0, got {M}")
    if len(cursor) != N * K:
        raise ValidationError(f"cursor holds {len(cursor)} pairs, expected N*K={N * K}")
    picked: list[tuple[int, int]] = []
    deferred: list[tuple[int, int]] = []
    used: set[int] = set()
    for pair in cursor:
        if len(picked) < M and pair[0] not in used:
            picked.append(pair)
            used.add(pair[0])
        else:
            deferred.append(pair)
    return (
        ScheduleDecision(queries=frozenset(picked)),
        tuple(deferred) + tuple(picked),
    )


def never_query_decide() -> ScheduleDecision:
    return EMPTY_DECISION


# -- stateful wrappers with a common decide() interface ------------------------

class NeverQuery:
    """Relies purely on execution feedback; issues no queries."""

    name = "never_query"
    engine_code = 0

    def decide(self, beliefs) -> ScheduleDecision:
        return never_query_decide()


class RoundRobin:
    """Uniform cyclic querying, blind to beliefs."""

    name = "round_robin"
    engine_code = 1

    def __init__(self, N: int, K: int, M: int):
        if N < 1 or K < 1:
            raise ValidationError(f"need N >= 1 and K >= 1, got N={N}, K={K}")
        if M < 0:
            raise ValidationError(f"M must be >= 0, got {M}")
        self.N, self.K, self.M = N, K, M
        self.cursor = initial_cursor(N, K)

    def decide(self, beliefs) -> ScheduleDecision:
        decision, self.cursor = round_robin_decide(self.cursor, self.N, self.K, self.M)
        return decision


class NetGain:
    """Prices queries with solved tables and spends the budget on the best ones."""

    name = "net_gain"
    engine_code = 2

    def __init__(self, qtables: list[QTable], mu_star: float, M: int):
        if M < 0:
            raise ValidationError(f"M must be >= 0, got {M}")
        for n, t in enumerate(qtables):
            if abs(t.spec.mu - mu_star) > MU_MATCH_TOL:
                raise ValidationError(
                    f"table for dispatcher {n} solved at mu={t.spec.mu}, expected {mu_star}"
                )
        self.qtables = list(qtables)
        self.mu_star = mu_star
        self.M = M

    def decide(self, beliefs) -> ScheduleDecision:
        return ngm_decide(beliefs, self.qtables, self.mu_star, self.M)
