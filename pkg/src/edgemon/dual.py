"""Subgradient search for the query price.

Relaxing the shared channel constraint decouples the dispatchers; a single
multiplier mu prices every query. The dual ascends mu by the projected rule
mu <- [mu + beta_l * (rate(mu) - M)]_+ with beta_l = beta / (1 + gamma * l),
where rate(mu) is the empirical per-slot query total when every dispatcher
plays its subproblem-greedy policy with no budget. Left unset, beta scales
itself to the problem (see DualConfig). Evaluations reuse one
seed across iterations (common random numbers), and homogeneous fleets are
evaluated through a single dispatcher scaled by N.

Stopping: the final iterate must come in under M * (1 + feasibility_slack),
and if it does not,
the schedule keeps running (the gap keeps pushing mu up) for up to
extra_iters more updates before giving up with the trace attached.
"""

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .errors import ConvergenceError, ValidationError
from .mdp import MdpSpec, QTable, encode_state, relative_value_iteration
from .policy import ScheduleDecision
from .sim import RunConfig, run

DEFAULT_EVAL_SEED = 9_173


@dataclass(frozen=True)
class DualConfig:
    """Step schedule and evaluation protocol of the price search.

    beta=None scales the initial step to the problem: the price competes
    with rewards of size max_n lambda_n / lambda_sum, while the gap is a
    query count of size N, so the step defaults to half the reward scale
    divided by N. A fixed beta must match the reward scale itself or the
    iterates will either stall below the budget crossing or leapfrog it.
    """

    beta: Optional[float] = None
    gamma: float = 0.1
    iters: int = 50
    eval_horizon: int = 20_000
    eval_seed: int = DEFAULT_EVAL_SEED
    mu0: float = 0.0
    feasibility_slack: float = 0.05
    extra_iters: Optional[int] = None  # default: 3 * iters

    def __post_init__(self):
        if self.beta is not None and self.beta <= 0.0:
            raise ValidationError(f"beta must be > 0, got {self.beta}")
        if self.gamma < 0.0:
            raise ValidationError(f"gamma must be >= 0, got {self.gamma}")
        if self.iters < 1:
            raise ValidationError(f"iters must be >= 1, got {self.iters}")
        if self.eval_horizon < 1:
            raise ValidationError(f"eval_horizon must be >= 1, got {self.eval_horizon}")
        if self.mu0 < 0.0:
            raise ValidationError(f"mu0 must be >= 0, got {self.mu0}")
        if self.feasibility_slack < 0.0:
            raise ValidationError(f"feasibility_slack must be >= 0, got {self.feasibility_slack}")
        if self.extra_iters is not None and self.extra_iters < 0:
            raise ValidationError(f"extra_iters must be >= 0, got {self.extra_iters}")

    @property
    def extra_budget(self) -> int:
        return 3 * self.iters if self.extra_iters is None else self.extra_iters


class DualRecord(NamedTuple):
    iteration: int
    mu: float
    query_rate: float
    gap: float  # query_rate - M


@dataclass
class DualTrace:
    records: list[DualRecord]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "mu", "query_rate", "gap"])
            for rec in self.records:
                writer.writerow([rec.iteration, repr(rec.mu), repr(rec.query_rate), repr(rec.gap)])

    @property
    def mus(self) -> list[float]:
        return [rec.mu for rec in self.records]


@dataclass
class DualSolution:
    """Final price, the tables solved at it, and the search history."""

    mu_star: float
    qtables: list[QTable]  # one per dispatcher
    query_rate: float      # empirical rate at mu_star
    trace: DualTrace


class UnbudgetedGreedy:
    """Each dispatcher plays its own subproblem-greedy action, no budget.

    The dual's measurement instrument, not a deployable scheduler: with the
    channel constraint relaxed, every dispatcher whose best net gain is
    strictly positive queries (exact ties keep action 0).
    """

    name = "unbudgeted_greedy"
    engine_code = 3

    def __init__(self, qtables: list[QTable]):
        self.qtables = list(qtables)

    def decide(self, beliefs) -> ScheduleDecision:
        picked = []
        for n, (state, table) in enumerate(zip(beliefs, self.qtables)):
            row = table.q[encode_state(state, table.spec.aoi_max)]
            gains = row[1:] - row[0]
            k = int(np.argmax(gains))
            if gains[k] > 0.0:
                picked.append((n, k))
        return ScheduleDecision(queries=frozenset(picked))


def empirical_query_rate(
    qtables: list[QTable],
    config: RunConfig,
    horizon: int,
    seed: int,
) -> float:
    """Time-average queries per slot under unbudgeted greedy play.

    Simulates all N dispatchers of `config` for `horizon` slots (no warmup)
    and returns total queries / horizon.
    """
    eval_config = RunConfig(
        N=config.N,
        K=config.K,
        M=0,
        T=horizon,
        lam=config.lam_by_n,
        phi=tuple(P.phi for P in config.P_list),
        psi=tuple(P.psi for P in config.P_list),
        aoi_max=config.aoi_max,
        seed=seed,
        warmup=0,
    )
    return run(eval_config, UnbudgetedGreedy(qtables)).queries_per_slot


def solve_mu(config: RunConfig, dual: DualConfig = DualConfig()) -> DualSolution:
    """Find the query price whose greedy response respects the budget.

    Runs the pinned number of subgradient updates, then verifies the final
    iterate empirically; an over-budget final rate keeps the schedule going
    for up to extra_budget more updates. The returned trace carries every
    evaluation, ending with the accepted (or rejected) final iterate.
    """
    if config.M < 1:
        raise ValidationError(f"the price search needs M >= 1, got M={config.M}")
    lam_by_n = config.lam_by_n
    lam_sum = sum(lam_by_n)
    if lam_sum <= 0.0:
        raise ValidationError("the price search needs a positive total arrival rate")
    unique_lams = tuple(dict.fromkeys(lam_by_n))
    homogeneous = len(unique_lams) == 1
    beta = dual.beta if dual.beta is not None else 0.5 * max(lam_by_n) / lam_sum / config.N

    warm: dict[float, np.ndarray] = {}
    memo: dict[float, tuple[dict[float, QTable], float]] = {}

    def eval_at(mu: float) -> tuple[dict[float, QTable], float]:
        if mu in memo:
            return memo[mu]
        tables = {}
        for lam_n in unique_lams:
            spec = MdpSpec(
                K=config.K,
                aoi_max=config.aoi_max,
                P_list=config.P_list,
                lam=lam_n,
                lam_sum=lam_sum,
                mu=mu,
            )
            table = relative_value_iteration(spec, v0=warm.get(lam_n))
            warm[lam_n] = table.q.max(axis=1)
            tables[lam_n] = table
        if homogeneous:
            single = RunConfig(
                N=1,
                K=config.K,
                M=0,
                T=dual.eval_horizon,
                lam=unique_lams[0],
                phi=tuple(P.phi for P in config.P_list),
                psi=tuple(P.psi for P in config.P_list),
                aoi_max=config.aoi_max,
                seed=dual.eval_seed,
                warmup=0,
            )
            rate = config.N * run(single, UnbudgetedGreedy([tables[unique_lams[0]]])).queries_per_slot
        else:
            rate = empirical_query_rate(
                [tables[lam_n] for lam_n in lam_by_n], config, dual.eval_horizon, dual.eval_seed
            )
        memo[mu] = (tables, rate)
        return tables, rate

    records: list[DualRecord] = []
    mu = dual.mu0
    for l in range(dual.iters):
        _, rate = eval_at(mu)
        records.append(DualRecord(l, mu, rate, rate - config.M))
        beta_l = beta / (1.0 + dual.gamma * l)
        mu = max(0.0, mu + beta_l * (rate - config.M))

    bound = config.M * (1.0 + dual.feasibility_slack)
    l = dual.iters
    tables, rate = eval_at(mu)
    while rate > bound and l < dual.iters + dual.extra_budget:
        records.append(DualRecord(l, mu, rate, rate - config.M))
        beta_l = beta / (1.0 + dual.gamma * l)
        mu = max(0.0, mu + beta_l * (rate - config.M))
        tables, rate = eval_at(mu)
        l += 1

    records.append(DualRecord(l, mu, rate, rate - config.M))
    trace = DualTrace(records)
    if rate > bound:
        raise ConvergenceError(
            f"price search stopped at mu={mu:.6g} with rate {rate:.4f} > {bound:.4f} "
            f"after {l} updates",
            residual=rate - bound,
            trace=trace,
        )
    qtables = [tables[lam_n] for lam_n in lam_by_n]
    return DualSolution(mu_star=mu, qtables=qtables, query_rate=rate, trace=trace)
