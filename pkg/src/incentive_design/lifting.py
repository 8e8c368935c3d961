"""Horizon-expanded and DFA-product liftings of an MDP.

Both liftings keep an explicit back-map from every lifted state id to its
``Origin`` (base state, stage within the horizon, memory state), so
callers never have to parse ids.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Mapping, NamedTuple

from .mdp import Mdp
from .scltl import Dfa


class Origin(NamedTuple):
    state: str
    stage: int
    memory: str | None = None


@dataclass(frozen=True)
class ExpandedMdp:
    mdp: Mdp
    base: Mdp
    horizon: int
    origin: Mapping[str, Origin]
    lifted: Mapping[tuple[str, int], str]

    def state_of(self, s: str, n: int) -> str:
        return self.lifted[(s, n)]


@dataclass(frozen=True)
class ProductMdp:
    mdp: Mdp
    expanded: ExpandedMdp
    dfa: Dfa
    accepting: frozenset[str]
    origin: Mapping[str, Origin]
    lifted: Mapping[tuple[str, int, str], str]

    @property
    def base(self) -> Mdp:
        return self.expanded.base

    @property
    def horizon(self) -> int:
        return self.expanded.horizon

    def state_of(self, s: str, n: int, q: str) -> str | None:
        return self.lifted.get((s, n, q))


def expanded_id(s: str, n: int) -> str:
    return f"{s}@{n}"


def expand(m: Mdp, N: int) -> ExpandedMdp:
    """Attach the replanning clock: ``(s, n)`` moves to ``(s', n+1)``, wrapping ``N -> 1``."""
    if N < 1:
        raise ValueError("horizon N must be at least 1")
    states = []
    origin = {}
    lifted = {}
    for n in range(1, N + 1):
        for s in m.states:
            sid = expanded_id(s, n)
            states.append(sid)
            origin[sid] = Origin(s, n)
            lifted[(s, n)] = sid
    enabled = {}
    transitions = {}
    rewards = {}
    labels = {}
    for sid in states:
        s, n, _ = origin[sid]
        nxt = n + 1 if n < N else 1
        enabled[sid] = m.enabled[s]
        labels[sid] = m.label(s)
        for a in m.enabled[s]:
            transitions[(sid, a)] = {lifted[(t, nxt)]: p for t, p in m.successors(s, a).items()}
            if (s, a) in m.rewards:
                rewards[(sid, a)] = m.rewards[(s, a)]
    em = Mdp(
        tuple(states),
        lifted[(m.initial, 1)],
        m.actions,
        enabled,
        transitions,
        m.atomic_props,
        labels,
        rewards,
    )
    return ExpandedMdp(em, m, N, origin, lifted)


def product(em: ExpandedMdp, dfa: Dfa) -> ProductMdp:
    """Synchronous product with ``dfa``, materializing only reachable states.

    The memory component is updated with the label of the state being
    entered, and the initial memory already reads the initial label.
    """
    missing = set(dfa.props) - em.mdp.atomic_props
    if missing:
        raise ValueError(f"DFA propositions not in the model: {sorted(missing)}")
    m = em.mdp

    def pid(s: str, q: str) -> str:
        return f"{s}|{q}"

    init = (m.initial, dfa.step(dfa.initial, m.label(m.initial)))
    seen = {init}
    order = [init]
    queue = deque([init])
    transitions = {}
    while queue:
        s, q = queue.popleft()
        for a in m.enabled[s]:
            dist: dict[str, float] = {}
            for t, p in m.successors(s, a).items():
                nq = dfa.step(q, m.label(t))
                key = (t, nq)
                if key not in seen:
                    seen.add(key)
                    order.append(key)
                    queue.append(key)
                dist[pid(t, nq)] = dist.get(pid(t, nq), 0.0) + p
            transitions[(pid(s, q), a)] = dist
    states = [pid(s, q) for s, q in order]
    origin = {}
    lifted = {}
    for s, q in order:
        base, n, _ = em.origin[s]
        origin[pid(s, q)] = Origin(base, n, q)
        lifted[(base, n, q)] = pid(s, q)
    enabled = {pid(s, q): m.enabled[s] for s, q in order}
    rewards = {}
    for s, q in order:
        for a in m.enabled[s]:
            if (s, a) in m.rewards:
                rewards[(pid(s, q), a)] = m.rewards[(s, a)]
    labels = {pid(s, q): frozenset([q]) for s, q in order}
    pm = Mdp(
        tuple(states),
        pid(*init),
        m.actions,
        enabled,
        transitions,
        frozenset(dfa.states),
        labels,
        rewards,
    )
    accepting = frozenset(pid(s, q) for s, q in order if q in dfa.accepting)
    return ProductMdp(pm, em, dfa, accepting, origin, lifted)


def full_product_states(em: ExpandedMdp, dfa: Dfa) -> list[tuple[str, str]]:
    """Every ``(expanded state, memory)`` pair, reachable or not."""
    return [(s, q) for s in em.mdp.states for q in dfa.states]
