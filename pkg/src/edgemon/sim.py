"""Ground-truth discrete-time simulator.

Servers evolve as independent two-state chains; dispatchers see them only
through the observation channel (query answers and execution ACK/NAK, all
reporting the pre-transition status of the current slot). Within one slot:
queries are decided from current beliefs, arrivals realise, each arriving
job goes to the believed-most-idle server and succeeds iff that server is
truly idle, observations come back, chains step, information states age.

Two execution paths share one random layout: a numba block kernel for long
horizons and a plain-python `step` used as the reference implementation.
Every (dispatcher, server) chain, every arrival process and every initial
draw owns an independent Philox stream keyed by (seed, purpose, indices),
so both paths consume identical numbers and produce identical trajectories.
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .belief import DispatcherBelief, InfoState
from .chain import TransitionMatrix, idle_prob_table, stationary
from .errors import ValidationError
from .policy import ScheduleDecision, validate_decision

_INIT, _CHAIN, _ARRIVAL = 0, 1, 2  # stream purpose tags
_BLOCK = 65_536


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy=(seed, *key))))


def _broadcast(value, count: int) -> tuple[float, ...]:
    if isinstance(value, (int, float)):
        return (float(value),) * count
    return tuple(float(x) for x in value)


@dataclass(frozen=True)
class RunConfig:
    """One simulation run: fleet shape, dynamics, horizon, and seeding.

    lam may be a scalar (shared by all N dispatchers) or a length-N
    sequence; phi/psi likewise scalar or length-K. warmup slots are excluded
    from every metric (default: T // 10).
    """

    N: int
    K: int
    M: int
    T: int
    lam: float | Sequence[float] = 0.3
    phi: float | Sequence[float] = 0.85
    psi: float | Sequence[float] = 0.90
    aoi_max: int = 20
    seed: int = 0
    warmup: Optional[int] = None

    def __post_init__(self):
        problems = []
        if self.N < 1:
            problems.append(f"N must be >= 1, got {self.N}")
        if self.K < 1:
            problems.append(f"K must be >= 1, got {self.K}")
        if self.M < 0:
            problems.append(f"M must be >= 0, got {self.M}")
        if self.T < 1:
            problems.append(f"T must be >= 1, got {self.T}")
        if self.aoi_max < 1:
            problems.append(f"aoi_max must be >= 1, got {self.aoi_max}")
        for lam in self.lam_by_n:
            if not (0.0 <= lam <= 1.0):
                problems.append(f"lambda must be in [0,1], got {lam}")
        if not (0 <= self.warmup_slots < self.T):
            problems.append(f"warmup must be in [0, T), got {self.warmup_slots}")
        if problems:
            raise ValidationError("; ".join(problems))
        self.P_list  # validates phi/psi ranges via TransitionMatrix

    @property
    def lam_by_n(self) -> tuple[float, ...]:
        lam = _broadcast(self.lam, self.N)
        if len(lam) != self.N:
            raise ValidationError(f"lambda has length {len(lam)}, expected N={self.N}")
        return lam

    @property
    def P_list(self) -> tuple[TransitionMatrix, ...]:
        phi = _broadcast(self.phi, self.K)
        psi = _broadcast(self.psi, self.K)
        if len(phi) != self.K or len(psi) != self.K:
            raise ValidationError(
                f"phi/psi have lengths {len(phi)}/{len(psi)}, expected K={self.K}"
            )
        return tuple(TransitionMatrix(p, s) for p, s in zip(phi, psi))

    @property
    def warmup_slots(self) -> int:
        return self.T // 10 if self.warmup is None else self.warmup


@dataclass
class SimMetrics:
    """Post-warmup counters of one run; rates derive from them."""

    slots: int
    arrivals: int
    successes: int
    drops: int
    queries_used: int
    expected_sum: float
    series: Optional[list[float]] = None
    calib_visits: Optional[np.ndarray] = None  # (K, 2, aoi_max) visit counts
    calib_idle: Optional[np.ndarray] = None    # (K, 2, aoi_max) truly-idle counts

    @property
    def success_rate(self) -> float:
        return self.successes / self.arrivals if self.arrivals else float("nan")

    @property
    def queries_per_slot(self) -> float:
        return self.queries_used / self.slots if self.slots else float("nan")

    @property
    def expected_success_rate(self) -> float:
        """Model-expected success rate along the visited belief trajectory."""
        return self.expected_sum / self.slots if self.slots else float("nan")


@dataclass
class SlotEvents:
    """What one reference-path slot did, for inspection in tests."""

    arrivals: np.ndarray            # (N,) bool
    assigned: np.ndarray            # (N,) server index or -1
    succeeded: np.ndarray           # (N,) bool
    decision: ScheduleDecision
    observations: dict[tuple[int, int], int]


@dataclass
class WorldState:
    config: RunConfig
    true_status: np.ndarray        # (N, K) 0 idle / 1 busy
    beliefs: list[DispatcherBelief]
    t: int
    chain_gens: list[list[np.random.Generator]]
    arrival_gens: list[np.random.Generator]


def init(config: RunConfig) -> WorldState:
    """Stationary initial statuses; each belief starts fresh at the truth.

    Every server's X(0) is drawn from its chain's stationary distribution
    and handed to the dispatcher as a synthetic age-1 observation, so runs
    begin calibrated instead of spending slots discovering the fleet.
    """
    pi0 = [stationary(P).pi0 for P in config.P_list]
    status = np.empty((config.N, config.K), dtype=np.int64)
    beliefs = []
    for n in range(config.N):
        row = []
        for k in range(config.K):
            u = _stream(config.seed, _INIT, n, k).random()
            x = 0 if u < pi0[k] else 1
            status[n, k] = x
            row.append(InfoState(x, 1))
        beliefs.append(tuple(row))
    chain_gens = [
        [_stream(config.seed, _CHAIN, n, k) for k in range(config.K)] for n in range(config.N)
    ]
    arrival_gens = [_stream(config.seed, _ARRIVAL, n) for n in range(config.N)]
    return WorldState(
        config=config,
        true_status=status,
        beliefs=beliefs,
        t=0,
        chain_gens=chain_gens,
        arrival_gens=arrival_gens,
    )


def step(world: WorldState, decision: ScheduleDecision) -> tuple[WorldState, SlotEvents]:
    """Advance the world one slot under the given query decision (in place).

    Reference implementation: consumes exactly one uniform per arrival
    process and one per server chain, in the same stream layout as the
    block engine, so trajectories are bit-identical across the two paths.
    """
    cfg = world.config
    validate_decision(decision, cfg.N, cfg.K, cfg.M)
    N, K = cfg.N, cfg.K
    ptab = [idle_prob_table(P, cfg.aoi_max) for P in cfg.P_list]

    arrivals = np.zeros(N, dtype=bool)
    assigned = np.full(N, -1, dtype=np.int64)
    succeeded = np.zeros(N, dtype=bool)
    observations: dict[tuple[int, int], int] = {}

    for n in range(N):
        arrivals[n] = world.arrival_gens[n].random() < cfg.lam_by_n[n]
        if arrivals[n]:
            best_k, best_p = 0, -1.0
            for k, (b, d) in enumerate(world.beliefs[n]):
                p = ptab[k][b, d - 1]
                if p > best_p:
                    best_k, best_p = k, p
            assigned[n] = best_k
            succeeded[n] = world.true_status[n, best_k] == 0
            observations[(n, best_k)] = int(world.true_status[n, best_k])
    for n, k in decision.queries:
        observations[(n, k)] = int(world.true_status[n, k])

    for n in range(N):
        for k in range(K):
            u = world.chain_gens[n][k].random()
            P = cfg.P_list[k]
            if world.true_status[n, k] == 0:
                world.true_status[n, k] = 0 if u < P.phi else 1
            else:
                world.true_status[n, k] = 1 if u < P.psi else 0

    for n in range(N):
        world.beliefs[n] = tuple(
            InfoState(observations[(n, k)], 1)
            if (n, k) in observations
            else InfoState(b, min(d + 1, cfg.aoi_max))
            for k, (b, d) in enumerate(world.beliefs[n])
        )
    world.t += 1
    return world, SlotEvents(arrivals, assigned, succeeded, decision, observations)


# -- block engine ---------------------------------------------------------------

@njit(cache=True)
def _run_block(
    policy_code, M, t0, warmup, aoi_max,
    true_status, last, aoi,
    lam, lam_w, phi, psi, ptab,
    chain_u, arr_u,
    rr_n, rr_k,
    alpha, kstar, table_of, pows,
    counters, acc,
    calib_visits, calib_idle, collect_calib,
):
    N, K = true_status.shape
    B = arr_u.shape[1]
    NK = rr_n.shape[0]
    query_k = np.full(N, -1, dtype=np.int64)
    used = np.zeros(N, dtype=np.bool_)
    obs_bit = np.full((N, K), -1, dtype=np.int64)
    jstar = np.zeros(N, dtype=np.int64)
    rbest = np.zeros(N, dtype=np.float64)
    cand = np.zeros(N, dtype=np.float64)
    tmp_n = np.zeros(NK, dtype=np.int64)
    tmp_k = np.zeros(NK, dtype=np.int64)

    for i in range(B):
        t = t0 + i
        counting = t >= warmup

        for n in range(N):
            query_k[n] = -1
            used[n] = False
            for k in range(K):
                obs_bit[n, k] = -1

        # decide queries from the beliefs standing at slot start
        if policy_code == 1:
            picked = 0
            w = 0
            for j in range(NK):
                n = rr_n[j]
                if picked < M and not used[n]:
                    query_k[n] = rr_k[j]
                    used[n] = True
                    picked += 1
                else:
                    tmp_n[w] = n
                    tmp_k[w] = rr_k[j]
                    w += 1
            for j in range(NK):
                if rr_n[j] >= 0 and used[rr_n[j]] and query_k[rr_n[j]] == rr_k[j]:
                    tmp_n[w] = rr_n[j]
                    tmp_k[w] = rr_k[j]
                    w += 1
            for j in range(NK):
                rr_n[j] = tmp_n[j]
                rr_k[j] = tmp_k[j]
        elif policy_code == 2 or policy_code == 3:
            for n in range(N):
                code = 0
                for k in range(K):
                    code += (last[n, k] * aoi_max + aoi[n, k] - 1) * pows[k]
                u = table_of[n]
                cand[n] = alpha[u, code]
                query_k[n] = -1
                if policy_code == 3 and cand[n] > 0.0:
                    query_k[n] = kstar[u, code]
            if policy_code == 2:
                for _ in range(min(M, N)):
                    best_n = -1
                    best_a = -1.0
                    for n in range(N):
                        if not used[n] and cand[n] >= 0.0 and (best_n < 0 or cand[n] > best_a):
                            best_n = n
                            best_a = cand[n]
                    if best_n < 0:
                        break
                    used[best_n] = True
                    code = 0
                    for k in range(K):
                        code += (last[best_n, k] * aoi_max + aoi[best_n, k] - 1) * pows[k]
                    query_k[best_n] = kstar[table_of[best_n], code]

        # never more than M queries, never two on one dispatcher
        nq = 0
        for n in range(N):
            if query_k[n] >= 0:
                nq += 1
        assert policy_code == 3 or nq <= M

        if collect_calib and counting:
            for n in range(N):
                for k in range(K):
                    calib_visits[k, last[n, k], aoi[n, k] - 1] += 1
                    if true_status[n, k] == 0:
                        calib_idle[k, last[n, k], aoi[n, k] - 1] += 1

        for n in range(N):
            bk = 0
            bp = -1.0
            for k in range(K):
                p = ptab[k, last[n, k], aoi[n, k] - 1]
                if p > bp:
                    bk = k
                    bp = p
            jstar[n] = bk
            rbest[n] = bp
            if counting:
                acc[0] += lam_w[n] * bp

        for n in range(N):
            if arr_u[n, i] < lam[n]:
                j = jstar[n]
                ok = true_status[n, j] == 0
                if counting:
                    counters[0] += 1
                    if ok:
                        counters[1] += 1
                    else:
                        counters[2] += 1
                obs_bit[n, j] = true_status[n, j]
            if query_k[n] >= 0:
                obs_bit[n, query_k[n]] = true_status[n, query_k[n]]
                if counting:
                    counters[3] += 1

        for n in range(N):
            for k in range(K):
                u = chain_u[n, k, i]
                if true_status[n, k] == 0:
                    true_status[n, k] = 0 if u < phi[k] else 1
                else:
                    true_status[n, k] = 1 if u < psi[k] else 0

        for n in range(N):
            for k in range(K):
                if obs_bit[n, k] >= 0:
                    last[n, k] = obs_bit[n, k]
                    aoi[n, k] = 1
                elif aoi[n, k] < aoi_max:
                    aoi[n, k] += 1

        if counting:
            counters[4] += 1


def _engine_tables(policy, config):
    """Map a policy object onto the kernel's table arrays."""
    code = getattr(policy, "engine_code", None)
    if code is None:
        raise ValidationError(f"policy {policy!r} cannot run on the block engine")
    NK = config.N * config.K
    rr_n = np.full(NK, -1, dtype=np.int64)
    rr_k = np.full(NK, -1, dtype=np.int64)
    alpha = np.zeros((1, 1))
    kstar = np.zeros((1, 1), dtype=np.int64)
    table_of = np.zeros(config.N, dtype=np.int64)
    if code == 1:
        if len(policy.cursor) != NK:
            raise ValidationError("round-robin cursor does not match N*K")
        for j, (n, k) in enumerate(policy.cursor):
            rr_n[j], rr_k[j] = n, k
    elif code in (2, 3):
        tables = policy.qtables
        if len(tables) != config.N:
            raise ValidationError(f"{len(tables)} tables for N={config.N} dispatchers")
        uniq: list = []
        for n, t in enumerate(tables):
            if t.spec.K != config.K or t.spec.aoi_max != config.aoi_max:
                raise ValidationError(f"table {n} shape does not match the run config")
            if t.spec.P_list != config.P_list:
                raise ValidationError(f"table {n} was solved for different server dynamics")
            for i, u in enumerate(uniq):
                if u is t:
                    table_of[n] = i
                    break
            else:
                table_of[n] = len(uniq)
                uniq.append(t)
        gains = [t.q[:, 1:] - t.q[:, :1] for t in uniq]
        kstar = np.stack([np.argmax(g, axis=1) for g in gains]).astype(np.int64)
        alpha = np.stack([g[np.arange(g.shape[0]), ks] for g, ks in zip(gains, kstar)])
    return code, rr_n, rr_k, alpha, kstar, table_of


def run(
    config: RunConfig,
    policy,
    collect_calibration: bool = False,
    series_window: int = 0,
) -> SimMetrics:
    """Simulate T slots on the block engine and return post-warmup metrics.

    series_window > 0 additionally records the success rate of each full
    window of that many slots lying past the warmup boundary.
    """
    code, rr_n, rr_k, alpha, kstar, table_of = _engine_tables(policy, config)
    N, K, T = config.N, config.K, config.T
    P_list = config.P_list
    pi0 = [stationary(P).pi0 for P in P_list]

    true_status = np.empty((N, K), dtype=np.int64)
    last = np.empty((N, K), dtype=np.int64)
    aoi = np.ones((N, K), dtype=np.int64)
    for n in range(N):
        for k in range(K):
            x = 0 if _stream(config.seed, _INIT, n, k).random() < pi0[k] else 1
            true_status[n, k] = x
            last[n, k] = x

    lam = np.array(config.lam_by_n)
    lam_w = lam / lam.sum() if lam.sum() > 0 else np.zeros_like(lam)
    phi = np.array([P.phi for P in P_list])
    psi = np.array([P.psi for P in P_list])
    ptab = np.stack([idle_prob_table(P, config.aoi_max) for P in P_list])
    pows = (2 * config.aoi_max) ** np.arange(K, dtype=np.int64)

    counters = np.zeros(5, dtype=np.int64)
    acc = np.zeros(1)
    calib_shape = (K, 2, config.aoi_max) if collect_calibration else (1, 1, 1)
    calib_visits = np.zeros(calib_shape, dtype=np.int64)
    calib_idle = np.zeros(calib_shape, dtype=np.int64)

    chain_gens = [[_stream(config.seed, _CHAIN, n, k) for k in range(K)] for n in range(N)]
    arrival_gens = [_stream(config.seed, _ARRIVAL, n) for n in range(N)]

    block = series_window if series_window > 0 else _BLOCK
    series: list[float] = []
    prev = (0, 0)
    t0 = 0
    while t0 < T:
        B = min(block, T - t0)
        chain_u = np.empty((N, K, B))
        arr_u = np.empty((N, B))
        for n in range(N):
            arr_u[n] = arrival_gens[n].random(B)
            for k in range(K):
                chain_u[n, k] = chain_gens[n][k].random(B)
        _run_block(
            code, config.M, t0, config.warmup_slots, config.aoi_max,
            true_status, last, aoi,
            lam, lam_w, phi, psi, ptab,
            chain_u, arr_u,
            rr_n, rr_k,
            alpha, kstar, table_of, pows,
            counters, acc,
            calib_visits, calib_idle, collect_calibration,
        )
        t0 += B
        if series_window > 0 and t0 - B >= config.warmup_slots and B == series_window:
            da = counters[0] - prev[0]
            ds = counters[1] - prev[1]
            series.append(ds / da if da else float("nan"))
        prev = (int(counters[0]), int(counters[1]))

    if code == 1:
        policy.cursor = tuple((int(n), int(k)) for n, k in zip(rr_n, rr_k))

    metrics = SimMetrics(
        slots=int(counters[4]),
        arrivals=int(counters[0]),
        successes=int(counters[1]),
        drops=int(counters[2]),
        queries_used=int(counters[3]),
        expected_sum=float(acc[0]),
        series=series if series_window > 0 else None,
        calib_visits=calib_visits if collect_calibration else None,
        calib_idle=calib_idle if collect_calibration else None,
    )
    assert metrics.successes + metrics.drops == metrics.arrivals
    return metrics
