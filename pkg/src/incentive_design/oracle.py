"""Brute-force ground truth for small instances.

Every deterministic stationary policy over the rest states is evaluated
exactly with its own dense linear solves (no code shared with the LP
layer), and the lexicographic optimum (highest reach, then lowest cost,
then shortest expected time) is reported.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .mdp import Mdp, Policy, StateAction, StatePartition
from .scltl import Dfa

POLICY_CAP = 10**6
BAND = 1e-9
CHECK_TOL = 1e-6


class OracleCapError(ValueError):
    """Too many deterministic policies to enumerate."""


@dataclass(frozen=True)
class PolicyValue:
    reach: float
    cost: float
    time: float


@dataclass(frozen=True)
class OracleResult:
    best_reach: float
    best_cost_at_max_reach: float
    best_time: float
    witness: Policy
    enumerated_count: int


def policy_count(mm: Mdp, partition: StatePartition) -> int:
    return math.prod(len(mm.enabled[s]) for s in mm.states if s in partition.rest)


def evaluate(mm: Mdp, partition: StatePartition, cost: Mapping[StateAction, float], choice: Mapping[str, str]) -> PolicyValue:
    """Exact reach probability, expected cost and expected time of a deterministic policy.

    Only rest states are transient; cost and time are infinite when the
    policy can be trapped in the rest states forever (cost only if a pair
    with positive cost is visited infinitely often).
    """
    rest = [s for s in mm.states if s in partition.rest]
    if mm.initial not in partition.rest:
        return PolicyValue(1.0 if mm.initial in partition.target else 0.0, 0.0, 0.0)
    pos = {s: i for i, s in enumerate(rest)}
    k = len(rest)
    Q = np.zeros((k, k))
    b = np.zeros(k)
    exit_ = np.zeros(k)
    c = np.zeros(k)
    for i, s in enumerate(rest):
        a = choice[s]
        c[i] = cost.get((s, a), 0.0)
        for t, p in mm.successors(s, a).items():
            if t in pos:
                Q[i, pos[t]] += p
            else:
                exit_[i] += p
                if t in partition.target:
                    b[i] += p
    # states that leave the rest set with positive probability, directly or eventually
    leaves = exit_ > 0
    while True:
        grown = leaves | ((Q[:, leaves] > 0).any(axis=1))
        if (grown == leaves).all():
            break
        leaves = grown
    i0 = pos[mm.initial]
    # forward reachable from the initial state
    seen = np.zeros(k, dtype=bool)
    seen[i0] = True
    while True:
        grown = seen | ((Q[seen] > 0).any(axis=0))
        if (grown == seen).all():
            break
        seen = grown
    trapped = seen & ~leaves
    idx = np.nonzero(leaves)[0]
    x = np.zeros(k)
    visits = np.zeros(k)
    if len(idx):
        A = np.eye(len(idx)) - Q[np.ix_(idx, idx)]
        x[idx] = np.linalg.solve(A, b[idx])
        if leaves[i0]:
            e = (idx == i0).astype(float)
            visits[idx] = np.linalg.solve(A.T, e)
    reach = float(min(1.0, max(0.0, x[i0])))
    if trapped.any():
        time = math.inf
        cost_v = math.inf if (c[trapped] > 0).any() else float(visits @ c)
    else:
        time = float(visits.sum())
        cost_v = float(visits @ c)
    return PolicyValue(reach, cost_v, time)


def enumerate_policies(
    mm: Mdp,
    partition: StatePartition,
    coc,
    cap: int = POLICY_CAP,
) -> OracleResult:
    """Lexicographic optimum over all deterministic stationary policies on the rest states."""
    cost = getattr(coc, "phi", coc)
    count = policy_count(mm, partition)
    if count > cap:
        raise OracleCapError(
            f"about 10^{len(str(count)) - 1} deterministic policies exceed the enumeration cap {cap}; "
            "use a smaller instance"
        )
    rest = [s for s in mm.states if s in partition.rest]
    best: tuple[PolicyValue, dict[str, str]] | None = None
    for acts in itertools.product(*(mm.enabled[s] for s in rest)):
        choice = dict(zip(rest, acts))
        v = evaluate(mm, partition, cost, choice)
        if best is None or _better(v, best[0]):
            best = (v, choice)
    v, choice = best
    return OracleResult(v.reach, v.cost, v.time, Policy.from_choices(mm, choice), count)


def _better(a: PolicyValue, b: PolicyValue) -> bool:
    if a.reach > b.reach + BAND:
        return True
    if a.reach < b.reach - BAND:
        return False
    if a.cost < b.cost - BAND:
        return True
    if a.cost > b.cost + BAND:
        return False
    return a.time < b.time - BAND


@dataclass(frozen=True)
class CrosscheckReport:
    ok: bool
    reach_delta: float
    cost_delta: float
    oracle: OracleResult
    lp_reach: float
    lp_cost: float

    def lines(self) -> list[str]:
        status = "PASS" if self.ok else "FAIL"
        return [
            f"{status} oracle crosscheck over {self.oracle.enumerated_count} policies",
            f"  reach: lp={self.lp_reach:.12g} oracle={self.oracle.best_reach:.12g} delta={self.reach_delta:.3g}",
            f"  cost:  lp={self.lp_cost:.12g} oracle={self.oracle.best_cost_at_max_reach:.12g} delta={self.cost_delta:.3g}",
        ]


def crosscheck(mm: Mdp, partition: StatePartition, coc, lp_result, tol: float = CHECK_TOL) -> CrosscheckReport:
    """Compare LP values ``(x*, υ*)`` (attributes ``x_star``/``upsilon_star``) with the oracle."""
    o = enumerate_policies(mm, partition, coc)
    dr = abs(lp_result.x_star - o.best_reach)
    dc = abs(lp_result.upsilon_star - o.best_cost_at_max_reach)
    return CrosscheckReport(dr <= tol and dc <= tol, dr, dc, o, lp_result.x_star, lp_result.upsilon_star)


def best_hidden_reach(m: Mdp, dfa: Dfa, T: int, cap: int = 2**16) -> tuple[float, dict[tuple[str, int], str]]:
    """Best probability of acceptance within ``T`` stages over memoryless base decisions.

    Enumerates one action per ``(state, stage)`` for every stage-reachable
    state with a choice, which is what any base-level incentive schedule can
    induce when it cannot see the automaton. Used to illustrate why a
    schedule may have to be shared.
    """
    reach_sets = [{m.initial}]
    for _ in range(T - 1):
        nxt = set()
        for s in reach_sets[-1]:
            for a in m.enabled[s]:
                nxt |= {t for t, p in m.successors(s, a).items() if p > 0}
        reach_sets.append(nxt)
    slots = [(s, t + 1) for t, ss in enumerate(reach_sets) for s in sorted(ss, key=m.states.index) if len(m.enabled[s]) > 1]
    total = math.prod(len(m.enabled[s]) for s, _ in slots)
    if total > cap:
        raise OracleCapError(f"{total} memoryless schedules exceed the cap {cap}")
    best = (-1.0, {})
    for acts in itertools.product(*(m.enabled[s] for s, _ in slots)):
        pick = dict(zip(slots, acts))
        q0 = dfa.step(dfa.initial, m.label(m.initial))
        dist = {(m.initial, q0): 1.0}
        done = 1.0 if q0 in dfa.accepting else 0.0
        if done:
            dist = {}
        for t in range(1, T + 1):
            nxt: dict[tuple[str, str], float] = {}
            for (s, q), w in dist.items():
                a = pick.get((s, t), m.enabled[s][0])
                for s2, p in m.successors(s, a).items():
                    q2 = dfa.step(q, m.label(s2))
                    if q2 in dfa.accepting:
                        done += w * p
                    else:
                        nxt[(s2, q2)] = nxt.get((s2, q2), 0.0) + w * p
            dist = nxt
        if done > best[0] + BAND:
            best = (done, pick)
    return best
