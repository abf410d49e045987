"""Subproblem solver checks against brute-force oracles.

The oracle here is deliberately independent of the package internals: it
enumerates joint true-status outcomes exhaustively (2^K bit patterns per
arrival branch) and runs plain finite-horizon value iteration over dict
states. The package path uses marginalised successor lists and a vectorised
kernel, so agreement is meaningful.
"""

from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgemon.belief import InfoState
from edgemon.chain import TransitionMatrix, idle_prob
from edgemon.errors import ConvergenceError, ValidationError
from edgemon.mdp import (
    MdpSpec,
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
from edgemon import mdp as mdp_mod

CANON = TransitionMatrix(phi=0.85, psi=0.90)


def small_spec(K=1, aoi_max=3, lam=0.5, mu=0.05, lam_sum=None, P=None):
    P_list = (P or CANON,) * K if not isinstance(P, tuple) else P
    return MdpSpec(K=K, aoi_max=aoi_max, P_list=P_list, lam=lam,
                   lam_sum=lam if lam_sum is None else lam_sum, mu=mu)


def all_states(spec):
    grid = [InfoState(b, d) for b in (0, 1) for d in range(1, spec.aoi_max + 1)]
    return [s for s in product(grid, repeat=spec.K)]


# -- oracle: exhaustive joint-outcome enumeration ------------------------------

def oracle_reward(state, action, spec):
    p = [idle_prob(spec.P_list[k], b, d) for k, (b, d) in enumerate(state)]
    return (spec.lam / spec.lam_sum) * max(p) - (spec.mu if action > 0 else 0.0)


def oracle_successors(state, action, spec):
    p = [idle_prob(spec.P_list[k], b, d) for k, (b, d) in enumerate(state)]
    jstar = p.index(max(p))
    out = {}
    for z in (0, 1):
        pz = spec.lam if z else 1.0 - spec.lam
        if pz == 0.0:
            continue
        observed = set()
        if action > 0:
            observed.add(action - 1)
        if z == 1:
            observed.add(jstar)
        for bits in product((0, 1), repeat=spec.K):
            w = pz
            for k in range(spec.K):
                w *= p[k] if bits[k] == 0 else 1.0 - p[k]
            nxt = tuple(
                InfoState(bits[k], 1)
                if k in observed
                else InfoState(state[k].last_status, min(state[k].aoi + 1, spec.aoi_max))
                for k in range(spec.K)
            )
            out[nxt] = out.get(nxt, 0.0) + w
    return out


def finite_horizon_oracle(spec, horizon, acts=None):
    """Differential value iteration over `horizon` steps, dict-based.

    Restricting `acts` evaluates a fixed-action policy instead of optimising.
    """
    states = all_states(spec)
    acts = range(spec.K + 1) if acts is None else acts
    R = {(s, a): oracle_reward(s, a, spec) for s in states for a in acts}
    T = {(s, a): oracle_successors(s, a, spec) for s in states for a in acts}
    ref = tuple(InfoState(0, 1) for _ in range(spec.K))
    V = {s: 0.0 for s in states}
    gain = 0.0
    for _ in range(horizon):
        Vn = {
            s: max(R[s, a] + sum(w * V[t] for t, w in T[s, a].items()) for a in acts)
            for s in states
        }
        gain = Vn[ref] - V[ref]
        V = Vn
    rel = {s: V[s] - V[ref] for s in states}
    q = {
        (s, a): R[s, a] + sum(w * rel[t] for t, w in T[s, a].items()) - gain
        for s in states
        for a in acts
    }
    return gain, rel, q


# -- state coding --------------------------------------------------------------

def test_reference_state_encodes_to_zero():
    assert encode_state((InfoState(0, 1), InfoState(0, 1)), aoi_max=20) == 0


def test_encode_frozen_example():
    # digits: server0 (1,2) -> 21, server1 (0,3) -> 2; radix 40.
    assert encode_state((InfoState(1, 2), InfoState(0, 3)), aoi_max=20) == 21 + 2 * 40


@given(
    K=st.integers(1, 3),
    aoi_max=st.integers(1, 5),
    data=st.data(),
)
def test_encode_decode_roundtrip(K, aoi_max, data):
    s = tuple(
        InfoState(
            data.draw(st.integers(0, 1)),
            data.draw(st.integers(1, aoi_max)),
        )
        for _ in range(K)
    )
    code = encode_state(s, aoi_max)
    assert 0 <= code < (2 * aoi_max) ** K
    assert decode_state(code, K, aoi_max) == s


def test_decode_covers_every_code():
    seen = {encode_state(decode_state(c, 2, 3), 3) for c in range(36)}
    assert seen == set(range(36))


def test_encode_rejects_out_of_range():
    with pytest.raises(ValidationError):
        encode_state((InfoState(0, 0),), aoi_max=20)
    with pytest.raises(ValidationError):
        encode_state((InfoState(0, 21),), aoi_max=20)
    with pytest.raises(ValidationError):
        encode_state((InfoState(2, 1),), aoi_max=20)


# -- rewards and successors ----------------------------------------------------

def test_expected_reward_frozen_example():
    spec = small_spec(K=2, aoi_max=20, lam=0.3, lam_sum=0.9, mu=0.05)
    state = (InfoState(1, 1), InfoState(0, 5))
    # idle prob of server 1 at age 5: 0.4 + 0.6 * 0.75^5 = 0.5423828125,
    # scaled by this dispatcher's arrival share 0.3 / 0.9.
    assert expected_reward(state, 0, spec) == pytest.approx(0.5423828125 / 3.0, abs=1e-12)
    assert expected_reward(state, 2, spec) == pytest.approx(0.5423828125 / 3.0 - 0.05, abs=1e-12)


def test_reward_oracle_agreement():
    spec = small_spec(K=2, aoi_max=4, lam=0.3, lam_sum=0.9, mu=0.02)
    for s in all_states(spec):
        for a in range(spec.K + 1):
            assert expected_reward(s, a, spec) == pytest.approx(
                oracle_reward(s, a, spec), abs=1e-14
            )


def test_successors_idle_slot_just_ages():
    spec = small_spec(K=2, aoi_max=3, lam=0.0, mu=0.0, lam_sum=1.0)
    s = (InfoState(1, 2), InfoState(0, 3))
    assert successors(s, 0, spec) == {(InfoState(1, 3), InfoState(0, 3)): 1.0}


def test_successors_query_without_arrival():
    spec = small_spec(K=2, aoi_max=3, lam=0.0, mu=0.0, lam_sum=1.0)
    s = (InfoState(0, 2), InfoState(1, 1))
    p0 = idle_prob(CANON, 0, 2)
    got = successors(s, 1, spec)
    assert got == pytest.approx(
        {
            (InfoState(0, 1), InfoState(1, 2)): p0,
            (InfoState(1, 1), InfoState(1, 2)): 1.0 - p0,
        }
    )


def test_successors_query_on_assignment_target_consolidates():
    # Certain arrival, single server: ACK and query report the same bit,
    # so the support has two points, not four.
    spec = small_spec(K=1, aoi_max=4, lam=1.0, mu=0.0)
    s = (InfoState(1, 3),)
    p = idle_prob(CANON, 1, 3)
    got = successors(s, 1, spec)
    assert set(got) == {(InfoState(0, 1),), (InfoState(1, 1),)}
    assert got[(InfoState(0, 1),)] == pytest.approx(p, abs=1e-15)
    assert got[(InfoState(1, 1),)] == pytest.approx(1.0 - p, abs=1e-15)


def test_successors_query_distinct_from_assignment():
    spec = small_spec(K=2, aoi_max=3, lam=1.0, mu=0.0, lam_sum=1.0)
    s = (InfoState(0, 1), InfoState(1, 1))  # assignment goes to server 0
    pa = idle_prob(CANON, 0, 1)
    pq = idle_prob(CANON, 1, 1)
    got = successors(s, 2, spec)
    assert len(got) == 4
    assert got[(InfoState(0, 1), InfoState(0, 1))] == pytest.approx(pa * pq, abs=1e-15)
    assert got[(InfoState(1, 1), InfoState(1, 1))] == pytest.approx(
        (1 - pa) * (1 - pq), abs=1e-15
    )


@given(
    K=st.integers(1, 2),
    aoi_max=st.integers(1, 4),
    lam=st.floats(0.0, 1.0),
    action_seed=st.integers(0, 10),
    data=st.data(),
)
@settings(max_examples=200)
def test_successors_match_oracle(K, aoi_max, lam, action_seed, data):
    spec = small_spec(K=K, aoi_max=aoi_max, lam=lam, mu=0.0, lam_sum=1.0)
    s = tuple(
        InfoState(data.draw(st.integers(0, 1)), data.draw(st.integers(1, aoi_max)))
        for _ in range(K)
    )
    a = action_seed % (K + 1)
    got = successors(s, a, spec)
    want = oracle_successors(s, a, spec)
    assert set(got) == set(want)
    for t in want:
        assert got[t] == pytest.approx(want[t], abs=1e-12)
    assert sum(got.values()) == pytest.approx(1.0, abs=1e-12)


def test_kernel_matches_successor_enumeration():
    spec = small_spec(K=2, aoi_max=3, lam=0.3, lam_sum=0.9, mu=0.04)
    tabs = mdp_mod._server_tables(spec.P_list, spec.aoi_max)
    codes = np.arange(spec.num_states, dtype=np.int64)
    reward, idx, prb = mdp_mod._kernel_chunk(spec, tabs, codes)
    for code in codes:
        s = decode_state(int(code), spec.K, spec.aoi_max)
        for a in range(spec.num_actions):
            assert reward[code, a] == pytest.approx(expected_reward(s, a, spec), abs=1e-14)
            merged = {}
            for e in range(idx.shape[2]):
                if prb[code, a, e] > 0.0:
                    t = decode_state(int(idx[code, a, e]), spec.K, spec.aoi_max)
                    merged[t] = merged.get(t, 0.0) + prb[code, a, e]
            want = successors(s, a, spec)
            assert set(merged) == set(want)
            for t in want:
                assert merged[t] == pytest.approx(want[t], abs=1e-13)


# -- relative value iteration --------------------------------------------------

def test_rvi_matches_finite_horizon_oracle():
    spec = small_spec(K=1, aoi_max=3, lam=0.5, mu=0.05)
    table = relative_value_iteration(spec, tol=1e-12)
    gain_o, rel_o, q_o = finite_horizon_oracle(spec, horizon=10_000)
    assert table.gain == pytest.approx(gain_o, abs=1e-6)
    for s in all_states(spec):
        code = encode_state(s, spec.aoi_max)
        for a in range(spec.K + 1):
            assert table.q[code, a] == pytest.approx(q_o[s, a], abs=1e-6)
        assert table.q[code].max() == pytest.approx(rel_o[s], abs=1e-6)


def test_rvi_two_server_oracle_agreement():
    spec = small_spec(K=2, aoi_max=2, lam=0.4, lam_sum=0.8, mu=0.01)
    table = relative_value_iteration(spec, tol=1e-12)
    gain_o, _, q_o = finite_horizon_oracle(spec, horizon=8_000)
    assert table.gain == pytest.approx(gain_o, abs=1e-6)
    for s in all_states(spec):
        code = encode_state(s, spec.aoi_max)
        for a in range(spec.K + 1):
            assert table.q[code, a] == pytest.approx(q_o[s, a], abs=1e-6)


def test_rvi_certain_arrival_zero_price_gains_vanish():
    # One server, a job every slot: the ACK already reveals the status the
    # query would, so at zero price every net gain is exactly zero.
    spec = small_spec(K=1, aoi_max=4, lam=1.0, mu=0.0)
    table = relative_value_iteration(spec)
    assert np.array_equal(table.q[:, 1], table.q[:, 0])
    for s in all_states(spec):
        assert net_gain(table, s, 1) == 0.0
        assert greedy_action(table, s) == 0


def test_rvi_certain_arrival_positive_price_never_queries():
    spec = small_spec(K=1, aoi_max=4, lam=1.0, mu=0.001)
    table = relative_value_iteration(spec)
    assert table.greedy_actions().max() == 0
    for s in all_states(spec):
        assert net_gain(table, s, 1) == pytest.approx(-0.001, abs=1e-9)


def test_rvi_gain_decreases_with_price():
    gains = []
    for mu in (0.0, 0.02, 0.05, 0.2):
        spec = small_spec(K=2, aoi_max=3, lam=0.3, lam_sum=0.9, mu=mu)
        gains.append(relative_value_iteration(spec).gain)
    for a, b in zip(gains, gains[1:]):
        assert b <= a + 1e-9
    assert 0.0 < gains[0] <= 0.3 / 0.9 + 1e-12


def test_rvi_gain_dominates_never_query_policy():
    # The optimal gain can never fall below the gain of the fixed policy
    # that queries nothing (queries cost mu but add information).
    for mu in (0.0, 0.01, 0.05):
        spec = small_spec(K=2, aoi_max=3, lam=0.4, lam_sum=0.8, mu=mu)
        table = relative_value_iteration(spec)
        nq_gain, _, _ = finite_horizon_oracle(spec, horizon=6_000, acts=[0])
        assert table.gain >= nq_gain - 1e-8


def test_rvi_reference_state_shift_only():
    spec = small_spec(K=1, aoi_max=4, lam=0.4, mu=0.03)
    t0 = relative_value_iteration(spec)
    t1 = relative_value_iteration(spec, ref_state=(InfoState(1, 4),))
    for s in all_states(spec):
        assert net_gain(t0, s, 1) == pytest.approx(net_gain(t1, s, 1), abs=5e-9)
    assert t0.gain == pytest.approx(t1.gain, abs=5e-9)


def test_rvi_server_permutation_symmetry():
    slow = TransitionMatrix(phi=0.95, psi=0.80)
    spec_a = small_spec(K=2, aoi_max=3, lam=0.3, lam_sum=0.6, mu=0.02, P=(CANON, slow))
    spec_b = small_spec(K=2, aoi_max=3, lam=0.3, lam_sum=0.6, mu=0.02, P=(slow, CANON))
    ta = relative_value_iteration(spec_a)
    tb = relative_value_iteration(spec_b)
    assert ta.gain == pytest.approx(tb.gain, abs=1e-7)
    for s in all_states(spec_a):
        swapped = (s[1], s[0])
        ca = encode_state(s, 3)
        cb = encode_state(swapped, 3)
        assert ta.q[ca, 0] == pytest.approx(tb.q[cb, 0], abs=1e-7)
        assert ta.q[ca, 1] == pytest.approx(tb.q[cb, 2], abs=1e-7)
        assert ta.q[ca, 2] == pytest.approx(tb.q[cb, 1], abs=1e-7)


def test_rvi_warm_start_agrees_with_cold():
    spec_a = small_spec(K=1, aoi_max=5, lam=0.5, mu=0.04)
    spec_b = small_spec(K=1, aoi_max=5, lam=0.5, mu=0.05)
    ta = relative_value_iteration(spec_a)
    cold = relative_value_iteration(spec_b)
    warm = relative_value_iteration(spec_b, v0=ta.q.max(axis=1))
    assert warm.gain == pytest.approx(cold.gain, abs=1e-8)
    assert np.allclose(warm.q, cold.q, atol=1e-7)
    assert warm.sweeps <= cold.sweeps


def test_rvi_raises_when_sweeps_exhausted():
    spec = small_spec(K=2, aoi_max=6, lam=0.3, lam_sum=0.9, mu=0.01)
    with pytest.raises(ConvergenceError) as err:
        relative_value_iteration(spec, tol=1e-13, max_sweeps=3)
    assert err.value.residual is not None and err.value.residual > 0.0


def test_net_gain_rejects_action_zero():
    table = relative_value_iteration(small_spec())
    with pytest.raises(ValidationError):
        net_gain(table, (InfoState(0, 1),), 0)


def test_qtable_roundtrip(tmp_path):
    spec = small_spec(K=2, aoi_max=3, lam=0.3, lam_sum=0.9, mu=0.04)
    table = relative_value_iteration(spec)
    path = tmp_path / "table.npz"
    save_qtable(path, table)
    back = load_qtable(path)
    assert back.spec == spec
    assert np.array_equal(back.q, table.q)
    assert back.gain == table.gain
    assert back.span_residual == table.span_residual
    assert back.sweeps == table.sweeps
