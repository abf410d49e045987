"""Shared reference implementations and acceptance reporting."""

import numpy as np
import pytest

from edgemon.chain import idle_prob_table
from edgemon.sim import SimMetrics, init, step

# One line per acceptance criterion, filled in by tests/test_acceptance.py and
# echoed after the pytest summary so the verdicts survive output capture.
acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if acceptance_lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in sorted(acceptance_lines):
            terminalreporter.write_line(line)


def python_run(config, policy, collect_calibration=False):
    """Slot-by-slot reference loop; must reproduce the block engine exactly."""
    world = init(config)
    ptab = [idle_prob_table(P, config.aoi_max) for P in config.P_list]
    lam = np.array(config.lam_by_n)
    lam_w = lam / lam.sum() if lam.sum() else lam * 0.0
    arrivals = successes = drops = queries = slots = 0
    acc = 0.0
    shape = (config.K, 2, config.aoi_max)
    calib_v = np.zeros(shape, dtype=np.int64)
    calib_i = np.zeros(shape, dtype=np.int64)
    for t in range(config.T):
        decision = policy.decide(world.beliefs)
        counting = t >= config.warmup_slots
        if counting:
            if collect_calibration:
                for n in range(config.N):
                    for k, (b, d) in enumerate(world.beliefs[n]):
                        calib_v[k, b, d - 1] += 1
                        calib_i[k, b, d - 1] += int(world.true_status[n, k] == 0)
            for n in range(config.N):
                acc += lam_w[n] * max(
                    ptab[k][b, d - 1] for k, (b, d) in enumerate(world.beliefs[n])
                )
        world, ev = step(world, decision)
        if counting:
            slots += 1
            arrivals += int(ev.arrivals.sum())
            successes += int(ev.succeeded.sum())
            drops += int(ev.arrivals.sum()) - int(ev.succeeded.sum())
            queries += len(ev.decision.queries)
    return SimMetrics(
        slots=slots,
        arrivals=arrivals,
        successes=successes,
        drops=drops,
        queries_used=queries,
        expected_sum=float(acc),
        calib_visits=calib_v if collect_calibration else None,
        calib_idle=calib_i if collect_calibration else None,
    )


def assert_same_metrics(a: SimMetrics, b: SimMetrics):
    assert (a.slots, a.arrivals, a.successes, a.drops, a.queries_used) == (
        b.slots,
        b.arrivals,
        b.successes,
        b.drops,
        b.queries_used,
    )
    assert a.expected_sum == pytest.approx(b.expected_sum, abs=1e-10)
