"""Per-dispatcher average-reward MDP and its relative value iteration solver.

One dispatcher's state is the tuple of its K information states; the action
is 0 (query nothing) or k in 1..K (query server k). The per-slot reward is
the arrival-weighted success probability of the belief-greedy assignment,
normalised by the system-wide arrival rate, minus a price `mu` per query.
Solving the MDP yields the relative action-value table that the net-gain
scheduler consumes.

States are enumerated densely: server k contributes the digit
last_status * aoi_max + (aoi - 1) in a mixed-radix code with radix
2 * aoi_max, server 0 least significant. The all-(0,1) state is code 0 and
serves as the default reference state for the relative values.
"""

from collections import defaultdict
from dataclasses import dataclass
from functools import lru_cache
from itertools import product
from pathlib import Path

import numpy as np

from .belief import DispatcherBelief, InfoState, dispatcher_reward
from .chain import TransitionMatrix, idle_prob, idle_prob_table
from .errors import ConvergenceError, ValidationError

DEFAULT_TOL = 1e-9
DEFAULT_MAX_SWEEPS = 100_000

# Above this many states the transition kernel is rebuilt chunk by chunk each
# sweep instead of being held in memory.
MATERIALIZE_LIMIT = 1_000_000
_CHUNK = 262_144


@dataclass(frozen=True)
class MdpSpec:
    """Problem data for one dispatcher's query subproblem.

    lam is this dispatcher's arrival probability; lam_sum the total arrival
    rate across all dispatchers (the reward normaliser); mu the query price.
    """

    K: int
    aoi_max: int
    P_list: tuple[TransitionMatrix, ...]
    lam: float
    lam_sum: float
    mu: float

    def __post_init__(self):
        if self.K < 1:
            raise ValidationError(f"K must be >= 1, got {self.K}")
        if self.aoi_max < 1:
            raise ValidationError(f"aoi_max must be >= 1, got {self.aoi_max}")
        if len(self.P_list) != self.K:
            raise ValidationError(f"P_list has {len(self.P_list)} entries, expected K={self.K}")
        if not (0.0 <= self.lam <= 1.0):
            raise ValidationError(f"lambda must be in [0,1], got {self.lam}")
        if self.lam_sum <= 0.0:
            raise ValidationError(f"lambda_sum must be > 0, got {self.lam_sum}")
        if self.mu < 0.0:
            raise ValidationError(f"mu must be >= 0, got {self.mu}")

    @property
    def radix(self) -> int:
        return 2 * self.aoi_max

    @property
    def num_states(self) -> int:
        return self.radix ** self.K

    @property
    def num_actions(self) -> int:
        return self.K + 1


def radix_powers(K: int, aoi_max: int) -> np.ndarray:
    return (2 * aoi_max) ** np.arange(K, dtype=np.int64)


def encode_state(beliefs: DispatcherBelief, aoi_max: int) -> int:
    """Dense integer code of a dispatcher belief; inverse of decode_state."""
    code = 0
    radix = 2 * aoi_max
    for k, info in enumerate(beliefs):
        if info.last_status not in (0, 1):
            raise ValidationError(f"last_status must be 0 or 1, got {info.last_status}")
        if not (1 <= info.aoi <= aoi_max):
            raise ValidationError(f"aoi must be in 1..{aoi_max}, got {info.aoi}")
        code += (info.last_status * aoi_max + info.aoi - 1) * radix**k
    return code


def decode_state(code: int, K: int, aoi_max: int) -> DispatcherBelief:
    radix = 2 * aoi_max
    out = []
    for _ in range(K):
        d = code % radix
        out.append(InfoState(d // aoi_max, d % aoi_max + 1))
        code //= radix
    return tuple(out)


def expected_reward(state: DispatcherBelief, action: int, spec: MdpSpec) -> float:
    """Immediate reward: arrival-weighted success probability minus query cost."""
    if not (0 <= action <= spec.K):
        raise ValidationError(f"action must be in 0..{spec.K}, got {action}")
    r = (spec.lam / spec.lam_sum) * dispatcher_reward(state, spec.P_list)
    return r - spec.mu if action != 0 else r


def successors(state: DispatcherBelief, action: int, spec: MdpSpec) -> dict[DispatcherBelief, float]:
    """Distribution over next beliefs for one slot.

    Jointly enumerates the arrival indicator and the true status of every
    observed server: the queried one (if action > 0) and, on an arrival, the
    assignment target. When the query lands on the assignment target the two
    observations are the same bit, not two draws. Server chains are mutually
    independent, so observed-bit probabilities multiply.
    """
    if not (0 <= action <= spec.K):
        raise ValidationError(f"action must be in 0..{spec.K}, got {action}")
    probs = [idle_prob(spec.P_list[k], b, d) for k, (b, d) in enumerate(state)]
    jstar = max(range(spec.K), key=lambda k: (probs[k], -k))
    aged = tuple(InfoState(b, min(d + 1, spec.aoi_max)) for b, d in state)

    out: dict[DispatcherBelief, float] = defaultdict(float)
    for z, pz in ((0, 1.0 - spec.lam), (1, spec.lam)):
        if pz == 0.0:
            continue
        watched = sorted(({action - 1} if action > 0 else set()) | ({jstar} if z == 1 else set()))
        for bits in product((0, 1), repeat=len(watched)):
            w = pz
            nxt = list(aged)
            for k, bit in zip(watched, bits):
                w *= probs[k] if bit == 0 else 1.0 - probs[k]
                nxt[k] = InfoState(bit, 1)
            out[tuple(nxt)] += w
    return dict(out)


@dataclass
class QTable:
    """Relative action values of a solved subproblem.

    q has shape (num_states, K+1); gain is the optimal average reward; the
    span residual certifies convergence. The table is normalised so that
    max_a q[s, a] equals the relative state value with the reference state
    pinned at zero.
    """

    spec: MdpSpec
    q: np.ndarray
    gain: float
    span_residual: float
    tol: float
    sweeps: int

    def greedy_actions(self) -> np.ndarray:
        """Per-state subproblem-greedy action; exact ties prefer not querying."""
        gains = self.q[:, 1:] - self.q[:, :1]
        best = np.argmax(gains, axis=1)
        alpha = gains[np.arange(self.q.shape[0]), best]
        return np.where(alpha > 0.0, best + 1, 0)


def net_gain(qtable: QTable, state: DispatcherBelief, k: int) -> float:
    """Value of querying server k (1-based action index) instead of nothing."""
    if not (1 <= k <= qtable.spec.K):
        raise ValidationError(f"server action index must be in 1..{qtable.spec.K}, got {k}")
    code = encode_state(state, qtable.spec.aoi_max)
    return float(qtable.q[code, k] - qtable.q[code, 0])


def greedy_action(qtable: QTable, state: DispatcherBelief) -> int:
    """Subproblem-greedy action at one state; ties break to action 0."""
    code = encode_state(state, qtable.spec.aoi_max)
    row = qtable.q[code]
    best = int(np.argmax(row[1:]))
    return best + 1 if row[1 + best] > row[0] else 0


# -- vectorised transition kernel --------------------------------------------

_ENTRIES = 6  # successor slots per (state, action): 2 query-only + 4 joint


def _server_tables(P_list, aoi_max):
    """Per-digit idle probabilities and the aged-digit map."""
    K = len(P_list)
    radix = 2 * aoi_max
    ptab = np.empty((K, radix))
    for k, P in enumerate(P_list):
        ptab[k] = idle_prob_table(P, aoi_max).ravel()
    d = np.arange(radix)
    b, age = d // aoi_max, d % aoi_max + 1
    aged = b * aoi_max + np.minimum(age, aoi_max - 1) if aoi_max > 1 else d.copy()
    return ptab, aged.astype(np.int64), radix_powers(K, aoi_max)


def _kernel_chunk(spec: MdpSpec, tabs, codes: np.ndarray):
    """Reward rows and padded successor lists for a block of state codes.

    Returns (reward, idx, prb) with idx/prb of shape (len(codes), K+1, 6);
    zero-probability slots point at state 0 so gathers stay in range.
    """
    ptab, aged_map, pows = tabs
    K, lam, aoi_max = spec.K, spec.lam, spec.aoi_max
    C = codes.shape[0]

    digits = (codes[:, None] // pows[None, :]) % spec.radix      # (C, K)
    p = ptab[np.arange(K)[None, :], digits]                      # (C, K)
    r = p.max(axis=1)
    jstar = p.argmax(axis=1)                                     # first max: lowest index
    aged_digits = aged_map[digits]
    aged_code = aged_digits @ pows
    off0 = (0 - aged_digits) * pows[None, :]                     # observe idle: digit 0
    off1 = (aoi_max - aged_digits) * pows[None, :]               # observe busy: digit aoi_max

    rows = np.arange(C)
    p_j = p[rows, jstar]
    oj0 = off0[rows, jstar]
    oj1 = off1[rows, jstar]

    A = K + 1
    reward = np.repeat(((lam / spec.lam_sum) * r)[:, None], A, axis=1)
    reward[:, 1:] -= spec.mu

    idx = np.zeros((C, A, _ENTRIES), dtype=np.int64)
    prb = np.zeros((C, A, _ENTRIES))

    # Action 0: on arrival the assignment target is observed, otherwise no one.
    idx[:, 0, 0] = aged_code
    prb[:, 0, 0] = 1.0 - lam
    idx[:, 0, 1] = aged_code + oj0
    prb[:, 0, 1] = lam * p_j
    idx[:, 0, 2] = aged_code + oj1
    prb[:, 0, 2] = lam * (1.0 - p_j)

    for q in range(K):
        a = q + 1
        pq, oq0, oq1 = p[:, q], off0[:, q], off1[:, q]
        same = jstar == q
        idx[:, a, 0] = aged_code + oq0
        prb[:, a, 0] = (1.0 - lam) * pq
        idx[:, a, 1] = aged_code + oq1
        prb[:, a, 1] = (1.0 - lam) * (1.0 - pq)
        # Arrival: single consolidated observation if the query hits the
        # assignment target, otherwise two independent bits.
        idx[:, a, 2] = aged_code + np.where(same, oj0, oj0 + oq0)
        prb[:, a, 2] = lam * np.where(same, p_j, p_j * pq)
        idx[:, a, 3] = aged_code + np.where(same, oj1, oj0 + oq1)
        prb[:, a, 3] = lam * np.where(same, 1.0 - p_j, p_j * (1.0 - pq))
        idx[:, a, 4] = aged_code + oj1 + oq0
        prb[:, a, 4] = np.where(same, 0.0, lam * (1.0 - p_j) * pq)
        idx[:, a, 5] = aged_code + oj1 + oq1
        prb[:, a, 5] = np.where(same, 0.0, lam * (1.0 - p_j) * (1.0 - pq))

    idx[prb == 0.0] = 0
    return reward, idx, prb


@lru_cache(maxsize=2)
def _cached_kernel(P_list, aoi_max, lam, lam_sum):
    """Materialised kernel with mu factored out (reward at mu=0)."""
    spec0 = MdpSpec(len(P_list), aoi_max, P_list, lam, lam_sum, 0.0)
    tabs = _server_tables(P_list, aoi_max)
    return _kernel_chunk(spec0, tabs, np.arange(spec0.num_states, dtype=np.int64))


def relative_value_iteration(
    spec: MdpSpec,
    tol: float = DEFAULT_TOL,
    max_sweeps: int = DEFAULT_MAX_SWEEPS,
    ref_state: DispatcherBelief | None = None,
    v0: np.ndarray | None = None,
) -> QTable:
    """Solve the subproblem by synchronous relative value iteration.

    Jacobi sweeps keep results independent of state traversal order. Each
    sweep renormalises at the reference state (default: every server at
    (0, 1)); iteration stops once the span of the value change is <= tol.
    Raises ConvergenceError with the final span if max_sweeps is exhausted.
    """
    if tol <= 0.0:
        raise ValidationError(f"tol must be > 0, got {tol}")
    S = spec.num_states
    ref = 0 if ref_state is None else encode_state(ref_state, spec.aoi_max)

    if S <= MATERIALIZE_LIMIT:
        reward0, idx, prb = _cached_kernel(spec.P_list, spec.aoi_max, spec.lam, spec.lam_sum)
        reward = reward0.copy()
        reward[:, 1:] -= spec.mu

        def backup(V):
            return reward + np.einsum("sae,sae->sa", prb, V[idx])

    else:
        tabs = _server_tables(spec.P_list, spec.aoi_max)
        bounds = list(range(0, S, _CHUNK))

        def backup(V):
            out = np.empty((S, spec.num_actions))
            for lo in bounds:
                codes = np.arange(lo, min(lo + _CHUNK, S), dtype=np.int64)
                rw, ix, pb = _kernel_chunk(spec, tabs, codes)
                out[lo : lo + codes.shape[0]] = rw + np.einsum("sae,sae->sa", pb, V[ix])
            return out

    if v0 is None:
        V = np.zeros(S)
    else:
        V = np.array(v0, dtype=float)
        if V.shape != (S,):
            raise ValidationError(f"v0 has shape {V.shape}, expected ({S},)")
        V -= V[ref]
    span = np.inf
    for sweep in range(1, max_sweeps + 1):
        TV = backup(V).max(axis=1)
        Vn = TV - TV[ref]
        d = Vn - V
        span = float(d.max() - d.min())
        V = Vn
        if span <= tol:
            Qs = backup(V)
            gain = float(Qs.max(axis=1)[ref])
            return QTable(spec=spec, q=Qs - gain, gain=gain, span_residual=span,
                          tol=tol, sweeps=sweep)
    raise ConvergenceError(
        f"relative value iteration: span {span:.3e} > tol {tol:.1e} after {max_sweeps} sweeps",
        residual=span,
    )


# -- persistence --------------------------------------------------------------

def save_qtable(path, qtable: QTable) -> None:
    """Write a solved table to an .npz archive (see README for the schema)."""
    spec = qtable.spec
    np.savez_compressed(
        path,
        q=qtable.q,
        gain=qtable.gain,
        span_residual=qtable.span_residual,
        tol=qtable.tol,
        sweeps=qtable.sweeps,
        k=spec.K,
        aoi_max=spec.aoi_max,
        phi=np.array([P.phi for P in spec.P_list]),
        psi=np.array([P.psi for P in spec.P_list]),
        lam=spec.lam,
        lam_sum=spec.lam_sum,
        mu=spec.mu,
    )


def load_qtable(path) -> QTable:
    with np.load(Path(path)) as z:
        spec = MdpSpec(
            K=int(z["k"]),
            aoi_max=int(z["aoi_max"]),
            P_list=tuple(TransitionMatrix(float(p), float(s)) for p, s in zip(z["phi"], z["psi"])),
            lam=float(z["lam"]),
            lam_sum=float(z["lam_sum"]),
            mu=float(z["mu"]),
        )
        q = z["q"]
        if q.shape != (spec.num_states, spec.num_actions):
            raise ValidationError(
                f"q has shape {q.shape}, expected {(spec.num_states, spec.num_actions)}"
            )
        return QTable(spec=spec, q=q, gain=float(z["gain"]),
                      span_residual=float(z["span_residual"]), tol=float(z["tol"]),
                      sweeps=int(z["sweeps"]))
