"""Experiment harness and command-line entry point.

Subcommands: `solve` prices queries and exports the resulting table, `run`
simulates one policy once, `sweep` produces the full comparison experiment
(CSV + summary + chart), `plot` re-renders the chart from an existing CSV.
Parameters come from defaults, then an optional key=value config file, then
command-line flags, in that order of precedence.

Exit codes: 0 on success, 1 for configuration or validation problems, 2
when an iterative solver fails to converge.
"""

import argparse
import csv
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import stats

from .belief import DEFAULT_AOI_MAX
from .dual import DualConfig, solve_mu
from .errors import ConfigError, ConvergenceError, ValidationError
from .mdp import MdpSpec, relative_value_iteration, save_qtable
from .policy import NetGain, NeverQuery, RoundRobin
from .sim import RunConfig, run
from .svgchart import Series, line_chart

CANONICAL_POLICIES = ("ngm", "round_robin", "never_query")
POLICY_ALIASES = {
    "ngm": "ngm",
    "net_gain": "ngm",
    "rr": "round_robin",
    "round_robin": "round_robin",
    "nq": "never_query",
    "never_query": "never_query",
}
POLICY_LABELS = {"ngm": "NGM", "round_robin": "Round-Robin", "never_query": "Never-Query"}

# A K=5 fleet with the full age cap of 20 means (2*20)^5 ~ 1e8 solver states,
# hours of work; net-gain runs at K=5 drop to this cap unless --full-scale
# or an explicit aoi_max asks otherwise.
DESK_SCALE_K = 5
DESK_SCALE_AOI = 10

CSV_HEADER = (
    "policy,n,k,m,lambda,aoi_max,seed,t,success_rate,queries_per_slot,mu_star"
)


def _parse_int(lo, name):
    def conv(text: str) -> int:
        try:
            v = int(text)
        except ValueError:
            raise ConfigError(f"expected an integer, got {text!r}", key=name)
        if v < lo:
            raise ConfigError(f"must be >= {lo}, got {v}", key=name)
        return v

    return conv


def _parse_float(lo, hi, name, open_interval=False):
    def conv(text: str) -> float:
        try:
            v = float(text)
        except ValueError:
            raise ConfigError(f"expected a number, got {text!r}", key=name)
        ok = lo < v < hi if open_interval else lo <= v <= hi
        if not ok:
            bounds = f"({lo}, {hi})" if open_interval else f"[{lo}, {hi}]"
            raise ConfigError(f"must lie in {bounds}, got {v}", key=name)
        return v

    return conv


def _parse_sweep(text: str) -> str:
    v = text.strip().lower()
    if v not in ("none", "n", "m"):
        raise ConfigError(f"expected one of none, n, m; got {text!r}", key="sweep")
    return v


def _parse_sweep_values(text: str) -> tuple[int, ...]:
    vals = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            v = int(part)
        except ValueError:
            raise ConfigError(f"expected integers, got {part!r}", key="sweep_values")
        if v < 1:
            raise ConfigError(f"sweep values must be positive, got {v}", key="sweep_values")
        vals.append(v)
    if not vals:
        raise ConfigError("no values given", key="sweep_values")
    return tuple(vals)


def _parse_policies(text: str) -> tuple[str, ...]:
    out = []
    for part in text.split(","):
        part = part.strip().lower()
        if not part:
            continue
        if part not in POLICY_ALIASES:
            raise ConfigError(
                f"unknown policy {part!r} (choose from {sorted(set(POLICY_ALIASES))})",
                key="policies",
            )
        canonical = POLICY_ALIASES[part]
        if canonical not in out:
            out.append(canonical)
    if not out:
        raise ConfigError("no policies given", key="policies")
    return tuple(out)


def _parse_outdir(text: str) -> str:
    if not text.strip():
        raise ConfigError("empty path", key="outdir")
    return text.strip()


PARSERS = {
    "n": _parse_int(1, "n"),
    "k": _parse_int(1, "k"),
    "m": _parse_int(0, "m"),
    "t": _parse_int(1, "t"),
    "lambda": _parse_float(0.0, 1.0, "lambda"),
    "phi": _parse_float(0.0, 1.0, "phi", open_interval=True),
    "psi": _parse_float(0.0, 1.0, "psi", open_interval=True),
    "aoi_max": _parse_int(1, "aoi_max"),
    "seed": _parse_int(0, "seed"),
    "reps": _parse_int(1, "reps"),
    "sweep": _parse_sweep,
    "sweep_values": _parse_sweep_values,
    "policies": _parse_policies,
    "outdir": _parse_outdir,
}

DEFAULTS = {
    "n": 15,
    "k": 5,
    "m": 5,
    "t": 200_000,
    "lambda": 0.3,
    "phi": 0.85,
    "psi": 0.90,
    "aoi_max": None,  # None: resolve per run, honouring the desk-scale rule
    "seed": 0,
    "reps": 10,
    "sweep": "none",
    "sweep_values": (),
    "policies": CANONICAL_POLICIES,
    "outdir": "results",
}


@dataclass(frozen=True)
class ExperimentSpec:
    """Fully merged experiment parameters (aoi_max may stay unresolved)."""

    n: int
    k: int
    m: int
    t: int
    lam: float
    phi: float
    psi: float
    aoi_max: Optional[int]
    seed: int
    reps: int
    sweep: str
    sweep_values: tuple[int, ...]
    policies: tuple[str, ...]
    outdir: str

    def __post_init__(self):
        if self.sweep == "none" and self.sweep_values:
            raise ConfigError("sweep_values given but sweep=none", key="sweep_values")
        if self.sweep != "none" and not self.sweep_values:
            raise ConfigError(f"sweep={self.sweep} needs sweep_values", key="sweep_values")

    def effective_aoi_max(self, full_scale: bool, policies: Optional[tuple] = None) -> int:
        if self.aoi_max is not None:
            return self.aoi_max
        involved = self.policies if policies is None else policies
        if not full_scale and self.k == DESK_SCALE_K and "ngm" in involved:
            return DESK_SCALE_AOI
        return DEFAULT_AOI_MAX


def parse_config_values(text: str) -> dict:
    """Read the line-oriented key=value grammar into a validated dict."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected key=value, got {line!r}", line=lineno)
        key, _, val = line.partition("=")
        key = key.strip().lower()
        val = val.strip()
        if key not in PARSERS:
            raise ConfigError("unknown key", line=lineno, key=key)
        try:
            values[key] = PARSERS[key](val)
        except ConfigError as err:
            raise ConfigError(str(err).split(": ", 1)[-1], line=lineno, key=key) from None
    return values


def build_spec(values: dict) -> ExperimentSpec:
    merged = {**DEFAULTS, **values}
    return ExperimentSpec(
        n=merged["n"],
        k=merged["k"],
        m=merged["m"],
        t=merged["t"],
        lam=merged["lambda"],
        phi=merged["phi"],
        psi=merged["psi"],
        aoi_max=merged["aoi_max"],
        seed=merged["seed"],
        reps=merged["reps"],
        sweep=merged["sweep"],
        sweep_values=merged["sweep_values"],
        policies=merged["policies"],
        outdir=merged["outdir"],
    )


def parse_config(text: str) -> ExperimentSpec:
    return build_spec(parse_config_values(text))


@dataclass(frozen=True)
class ResultRow:
    """One (policy, sweep point, seed) measurement; mirrors the CSV schema."""

    policy: str
    n: int
    k: int
    m: int
    lam: float
    aoi_max: int
    seed: int
    t: int
    success_rate: float
    queries_per_slot: float
    mu_star: Optional[float]

    def to_cells(self) -> list[str]:
        return [
            self.policy,
            str(self.n),
            str(self.k),
            str(self.m),
            repr(self.lam),
            str(self.aoi_max),
            str(self.seed),
            str(self.t),
            repr(self.success_rate),
            repr(self.queries_per_slot),
            "" if self.mu_star is None else repr(self.mu_star),
        ]

    @classmethod
    def from_cells(cls, cells: list[str]) -> "ResultRow":
        return cls(
            policy=cells[0],
            n=int(cells[1]),
            k=int(cells[2]),
            m=int(cells[3]),
            lam=float(cells[4]),
            aoi_max=int(cells[5]),
            seed=int(cells[6]),
            t=int(cells[7]),
            success_rate=float(cells[8]),
            queries_per_slot=float(cells[9]),
            mu_star=None if cells[10] == "" else float(cells[10]),
        )


def read_results(path) -> list[ResultRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER.split(","):
            raise ValidationError(f"{path}: unexpected results header {header}")
        return [ResultRow.from_cells(cells) for cells in reader if cells]


def ci95_halfwidth(xs) -> float:
    if len(xs) < 2:
        return 0.0
    spread = np.std(xs, ddof=1) / math.sqrt(len(xs))
    return float(stats.t.ppf(0.975, len(xs) - 1) * spread)


def _ngm_tables(config: RunConfig, dual: DualConfig):
    """Tables and price for a net-gain run; M=0 needs no price search."""
    if config.M == 0:
        spec = MdpSpec(
            K=config.K,
            aoi_max=config.aoi_max,
            P_list=config.P_list,
            lam=config.lam_by_n[0],
            lam_sum=sum(config.lam_by_n),
            mu=0.0,
        )
        table = relative_value_iteration(spec)
        return [table] * config.N, 0.0
    sol = solve_mu(config, dual)
    return sol.qtables, sol.mu_star


def _policy_instance(name: str, config: RunConfig, tables, mu_star):
    if name == "never_query":
        return NeverQuery()
    if name == "round_robin":
        return RoundRobin(config.N, config.K, config.M)
    return NetGain(tables, mu_star, config.M)


def summarize(rows: list[ResultRow]) -> list[dict]:
    """Per (sweep point, policy) means and confidence half-widths."""
    groups: dict[tuple, list[ResultRow]] = {}
    for row in rows:
        groups.setdefault((row.n, row.m, row.policy), []).append(row)
    out = []
    for (n, m, policy) in sorted(groups, key=lambda g: (g[0], g[1], CANONICAL_POLICIES.index(g[2]))):
        rs = groups[(n, m, policy)]
        sr = [r.success_rate for r in rs]
        qps = [r.queries_per_slot for r in rs]
        out.append(
            {
                "policy": policy,
                "n": n,
                "m": m,
                "reps": len(rs),
                "success_mean": float(np.mean(sr)),
                "success_ci95": ci95_halfwidth(sr),
                "queries_mean": float(np.mean(qps)),
                "mu_star": rs[0].mu_star,
            }
        )
    return out


def _summary_text(rows: list[ResultRow]) -> str:
    lines = []
    for g in summarize(rows):
        mu = "" if g["mu_star"] is None else f" mu_star={g['mu_star']:.6f}"
        lines.append(
            f"policy={g['policy']} n={g['n']} m={g['m']} reps={g['reps']} "
            f"success_rate_mean={g['success_mean']:.6f} "
            f"ci95_halfwidth={g['success_ci95']:.6f} "
            f"queries_per_slot_mean={g['queries_mean']:.4f}{mu}"
        )
    return "\n".join(lines) + "\n"


def chart_from_rows(rows: list[ResultRow]) -> str:
    """Success-rate figure for a result set; x axis inferred from the rows."""
    if not rows:
        raise ValidationError("no result rows to plot")
    ns = sorted({r.n for r in rows})
    ms = sorted({r.m for r in rows})
    if len(ns) > 1 and len(ms) > 1:
        raise ValidationError("results vary in both n and m; cannot infer the sweep axis")
    axis, x_values = ("n", ns) if len(ns) > 1 or len(ms) == 1 else ("m", ms)
    stats_by = {(g["n"], g["m"], g["policy"]): g for g in summarize(rows)}
    policies = [p for p in CANONICAL_POLICIES if any(r.policy == p for r in rows)]
    series = []
    for policy in policies:
        y, err = [], []
        for x in x_values:
            key = (x, ms[0], policy) if axis == "n" else (ns[0], x, policy)
            if key not in stats_by:
                raise ValidationError(f"missing rows for policy={policy} at {axis}={x}")
            y.append(stats_by[key]["success_mean"])
            err.append(stats_by[key]["success_ci95"])
        series.append(Series(label=POLICY_LABELS[policy], y=y, y_err=err))
    x_label = "number of dispatchers N" if axis == "n" else "query budget M"
    return line_chart(x_values, series, x_label, "job success rate", title="")


def run_experiment(
    spec: ExperimentSpec,
    full_scale: bool = False,
    dual: Optional[DualConfig] = None,
    log=lambda msg: None,
) -> list[ResultRow]:
    """Execute the sweep and write results.csv, summary.txt, and chart.svg.

    Rows are flushed to disk as they are produced, so an aborted sweep
    leaves a readable partial CSV behind. Replication r of every policy and
    sweep point runs under seed spec.seed + r, pairing the comparisons.
    """
    dual = dual or DualConfig()
    aoi = spec.effective_aoi_max(full_scale)
    points = list(spec.sweep_values) if spec.sweep != "none" else [None]
    outdir = Path(spec.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    rows: list[ResultRow] = []

    with open(outdir / "results.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER.split(","))
        fh.flush()
        for point in points:
            n = point if spec.sweep == "n" else spec.n
            m = point if spec.sweep == "m" else spec.m
            base = RunConfig(
                N=n, K=spec.k, M=m, T=spec.t,
                lam=spec.lam, phi=spec.phi, psi=spec.psi,
                aoi_max=aoi, seed=spec.seed,
            )
            tables, mu_star = (None, None)
            if "ngm" in spec.policies:
                log(f"point {spec.sweep}={point}: pricing queries" if point is not None
                    else "pricing queries")
                tables, mu_star = _ngm_tables(base, dual)
                log(f"  mu_star={mu_star:.6f}")
            for policy_name in spec.policies:
                for r in range(spec.reps):
                    config = RunConfig(
                        N=n, K=spec.k, M=m, T=spec.t,
                        lam=spec.lam, phi=spec.phi, psi=spec.psi,
                        aoi_max=aoi, seed=spec.seed + r,
                    )
                    policy = _policy_instance(policy_name, config, tables, mu_star)
                    metrics = run(config, policy)
                    row = ResultRow(
                        policy=policy_name,
                        n=n, k=spec.k, m=m, lam=spec.lam, aoi_max=aoi,
                        seed=config.seed, t=spec.t,
                        success_rate=metrics.success_rate,
                        queries_per_slot=metrics.queries_per_slot,
                        mu_star=mu_star if policy_name == "ngm" else None,
                    )
                    rows.append(row)
                    writer.writerow(row.to_cells())
                    fh.flush()
                log(f"  {policy_name}: {spec.reps} replications done")

    (outdir / "summary.txt").write_text(_summary_text(rows))
    (outdir / "chart.svg").write_text(chart_from_rows(rows))
    return rows


# -- command-line interface -----------------------------------------------------

class _Parser(argparse.ArgumentParser):
    """Argument errors are validation errors (exit 1), not usage crashes."""

    def error(self, message):
        raise ConfigError(message)


def _add_param_flags(sp, keys):
    flag_of = {"lambda": "--lambda"}
    dest_of = {"lambda": "lam_flag"}
    for key in keys:
        flag = flag_of.get(key, "--" + key.replace("_", "-"))
        dest = dest_of.get(key, key + "_flag")
        sp.add_argument(flag, dest=dest, metavar="V", default=None,
                        help=f"override config key {key}")
    sp.add_argument("config", nargs="?", default=None,
                    help="key=value config file (optional)")
    sp.add_argument("--full-scale", action="store_true",
                    help="keep aoi_max=20 for K=5 net-gain work (slow)")


PARAM_KEYS = ("n", "k", "m", "t", "lambda", "phi", "psi", "aoi_max",
              "seed", "reps", "sweep", "sweep_values", "policies", "outdir")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="edgemon",
                     description="Belief-driven query scheduling experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    solve_p = sub.add_parser("solve", help="price queries and export the solved table")
    _add_param_flags(solve_p, PARAM_KEYS)
    solve_p.add_argument("--out", default=None, help="table output path (.npz)")
    solve_p.add_argument("--trace", default=None, help="price-search trace CSV path")

    run_p = sub.add_parser("run", help="simulate one policy once")
    _add_param_flags(run_p, PARAM_KEYS)
    run_p.add_argument("--policy", default="ngm", help="ngm, round_robin/rr, or never_query/nq")

    sweep_p = sub.add_parser("sweep", help="full comparison experiment")
    _add_param_flags(sweep_p, PARAM_KEYS)

    plot_p = sub.add_parser("plot", help="re-render the chart from results.csv")
    plot_p.add_argument("results", help="path to results.csv")
    plot_p.add_argument("--out", default=None, help="output SVG path")
    return parser


def _spec_from_args(args) -> ExperimentSpec:
    values = {}
    if args.config is not None:
        values.update(parse_config_values(Path(args.config).read_text()))
    for key in PARAM_KEYS:
        dest = "lam_flag" if key == "lambda" else key + "_flag"
        raw = getattr(args, dest, None)
        if raw is not None:
            values[key] = PARSERS[key](raw)
    return build_spec(values)


def _cmd_solve(args) -> int:
    spec = _spec_from_args(args)
    aoi = spec.effective_aoi_max(args.full_scale, policies=("ngm",))
    config = RunConfig(N=spec.n, K=spec.k, M=spec.m, T=spec.t,
                       lam=spec.lam, phi=spec.phi, psi=spec.psi,
                       aoi_max=aoi, seed=spec.seed)
    sol = solve_mu(config)
    outdir = Path(spec.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    table_path = Path(args.out) if args.out else outdir / "qtable.npz"
    trace_path = Path(args.trace) if args.trace else outdir / "dual_trace.csv"
    save_qtable(table_path, sol.qtables[0])
    sol.trace.write_csv(trace_path)
    print(f"mu_star={sol.mu_star!r}")
    print(f"query_rate={sol.query_rate!r}")
    print(f"qtable={table_path}")
    print(f"trace={trace_path}")
    return 0


def _cmd_run(args) -> int:
    spec = _spec_from_args(args)
    name = POLICY_ALIASES.get(args.policy.strip().lower())
    if name is None:
        raise ConfigError(f"unknown policy {args.policy!r}", key="policy")
    aoi = spec.effective_aoi_max(args.full_scale, policies=(name,))
    config = RunConfig(N=spec.n, K=spec.k, M=spec.m, T=spec.t,
                       lam=spec.lam, phi=spec.phi, psi=spec.psi,
                       aoi_max=aoi, seed=spec.seed)
    tables, mu_star = (None, None)
    if name == "ngm":
        tables, mu_star = _ngm_tables(config, DualConfig())
    metrics = run(config, _policy_instance(name, config, tables, mu_star))
    print(f"policy={name}")
    print(f"success_rate={metrics.success_rate!r}")
    print(f"expected_success_rate={metrics.expected_success_rate!r}")
    print(f"queries_per_slot={metrics.queries_per_slot!r}")
    print(f"arrivals={metrics.arrivals}")
    print(f"successes={metrics.successes}")
    print(f"drops={metrics.drops}")
    print(f"queries_used={metrics.queries_used}")
    if mu_star is not None:
        print(f"mu_star={mu_star!r}")
    return 0


def _cmd_sweep(args) -> int:
    spec = _spec_from_args(args)
    run_experiment(spec, full_scale=args.full_scale, log=lambda msg: print(msg))
    outdir = Path(spec.outdir)
    print(f"results={outdir / 'results.csv'}")
    print(f"summary={outdir / 'summary.txt'}")
    print(f"chart={outdir / 'chart.svg'}")
    return 0


def _cmd_plot(args) -> int:
    rows = read_results(args.results)
    out = Path(args.out) if args.out else Path(args.results).parent / "chart.svg"
    out.write_text(chart_from_rows(rows))
    print(f"chart={out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "solve":
            return _cmd_solve(args)
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        return _cmd_plot(args)
    except (ConfigError, ValidationError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except ConvergenceError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
