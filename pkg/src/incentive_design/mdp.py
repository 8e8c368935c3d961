"""Finite labeled MDPs, decision rules, and exact policy evaluation.

States and actions are string identifiers. Internally every model assigns
dense indices in declaration order: states by ``Mdp.states`` and
state-action pairs by walking states and, per state, its enabled actions.
All evaluation routines solve small dense linear systems directly
(LU with partial pivoting) rather than iterating.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence, Union

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

PROB_TOL = 1e-9
MASS_TOL = 1e-12
ABSORB = "_absorb"

StateAction = tuple[str, str]


@dataclass(frozen=True, eq=False)
class Mdp:
    """A finite MDP ``(S, s0, A, P, AP, L, R)``.

    ``transitions`` maps each enabled pair to a sparse distribution over
    successor states. Rewards default to 0 for enabled pairs that are not
    listed.
    """

    states: tuple[str, ...]
    initial: str
    actions: tuple[str, ...]
    enabled: Mapping[str, tuple[str, ...]]
    transitions: Mapping[StateAction, Mapping[str, float]]
    atomic_props: frozenset[str] = frozenset()
    labels: Mapping[str, frozenset[str]] = field(default_factory=dict)
    rewards: Mapping[StateAction, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        put = object.__setattr__
        put(self, "states", tuple(self.states))
        put(self, "actions", tuple(self.actions))
        put(self, "atomic_props", frozenset(self.atomic_props))
        put(self, "enabled", MappingProxyType({s: tuple(a) for s, a in self.enabled.items()}))
        put(
            self,
            "transitions",
            MappingProxyType(
                {k: MappingProxyType(dict(v)) for k, v in self.transitions.items()}
            ),
        )
        put(self, "labels", MappingProxyType({s: frozenset(v) for s, v in self.labels.items()}))
        put(self, "rewards", MappingProxyType({k: float(v) for k, v in self.rewards.items()}))

    # -- lookups -----------------------------------------------------------

    def label(self, s: str) -> frozenset[str]:
        return self.labels.get(s, frozenset())

    def reward(self, s: str, a: str) -> float:
        return self.rewards.get((s, a), 0.0)

    def successors(self, s: str, a: str) -> Mapping[str, float]:
        return self.transitions.get((s, a), MappingProxyType({}))

    @cached_property
    def state_index(self) -> dict[str, int]:
        return {s: i for i, s in enumerate(self.states)}

    @cached_property
    def pairs(self) -> tuple[StateAction, ...]:
        return tuple((s, a) for s in self.states for a in self.enabled.get(s, ()))

    @cached_property
    def pair_index(self) -> dict[StateAction, int]:
        return {p: i for i, p in enumerate(self.pairs)}

    @cached_property
    def pair_matrix(self) -> np.ndarray:
        """``P[k, j]`` = probability of moving to state ``j`` from pair ``k``."""
        idx = self.state_index
        P = np.zeros((len(self.pairs), len(self.states)))
        for k, (s, a) in enumerate(self.pairs):
            for t, p in self.successors(s, a).items():
                P[k, idx[t]] += p
        P.setflags(write=False)
        return P

    @cached_property
    def reward_vector(self) -> np.ndarray:
        r = np.array([self.reward(s, a) for s, a in self.pairs], dtype=float)
        r.setflags(write=False)
        return r

    @cached_property
    def pair_state(self) -> np.ndarray:
        """Index of the source state of each pair."""
        idx = self.state_index
        return np.array([idx[s] for s, _ in self.pairs], dtype=int)

    def absorbing_states(self) -> frozenset[str]:
        """States whose every enabled action loops back with probability 1."""
        out = []
        for s in self.states:
            acts = self.enabled.get(s, ())
            if acts and all(abs(self.successors(s, a).get(s, 0.0) - 1.0) <= PROB_TOL for a in acts):
                out.append(s)
        return frozenset(out)

    def to_dict(self) -> dict:
        """Plain nested-dict form (stable ordering), used for equality and JSON."""
        return {
            "states": list(self.states),
            "initial": self.initial,
            "actions": list(self.actions),
            "enabled": {s: list(self.enabled.get(s, ())) for s in self.states},
            "transitions": [
                {"state": s, "action": a, "next": dict(self.successors(s, a))}
                for s, a in self.pairs
            ],
            "atomic_props": sorted(self.atomic_props),
            "labels": {s: sorted(self.label(s)) for s in self.states if self.label(s)},
            "rewards": [
                {"state": s, "action": a, "value": self.rewards[(s, a)]}
                for s, a in self.pairs
                if (s, a) in self.rewards
            ],
        }


@dataclass(frozen=True)
class Violation:
    rule: str
    state: str | None = None
    action: str | None = None
    detail: str = ""

    def __str__(self) -> str:
        where = "/".join(x for x in (self.state, self.action) if x is not None)
        return f"{self.rule} at {where or '-'}: {self.detail}"


def validate_model(m: Mdp) -> list[Violation]:
    """Check the MDP invariants; returns an empty list for a valid model."""
    out: list[Violation] = []
    known = set(m.states)
    known_actions = set(m.actions)
    if len(known) != len(m.states):
        out.append(Violation("duplicate-state", detail="state ids must be unique"))
    if m.initial not in known:
        out.append(Violation("unknown-initial", m.initial, detail="initial state not declared"))
    for s in m.states:
        acts = m.enabled.get(s, ())
        if not acts:
            out.append(Violation("no-enabled-action", s, detail="A(s) must be nonempty"))
        for a in acts:
            if a not in known_actions:
                out.append(Violation("unknown-action", s, a, "action not declared"))
            dist = m.transitions.get((s, a))
            if dist is None:
                out.append(Violation("missing-transition", s, a, "no distribution"))
                continue
            for t, p in dist.items():
                if t not in known:
                    out.append(Violation("unknown-successor", s, a, f"successor {t!r}"))
                if p < -PROB_TOL or p > 1 + PROB_TOL:
                    out.append(Violation("probability-range", s, a, f"P(.,.,{t})={p}"))
            total = sum(dist.values())
            if abs(total - 1.0) > PROB_TOL:
                out.append(Violation("probability-sum", s, a, f"outgoing mass {total!r}"))
    for (s, a) in m.transitions:
        if a not in m.enabled.get(s, ()):
            out.append(Violation("transition-not-enabled", s, a, "distribution for disabled pair"))
    for s, props in m.labels.items():
        if s not in known:
            out.append(Violation("unknown-labeled-state", s, detail="label for undeclared state"))
        for p in sorted(props - m.atomic_props):
            out.append(Violation("unknown-proposition", s, detail=f"label {p!r} not in AP"))
    for (s, a) in m.rewards:
        if a not in m.enabled.get(s, ()):
            out.append(Violation("reward-not-enabled", s, a, "reward on disabled pair"))
    return out


# -- policies -----------------------------------------------------------------


@dataclass(frozen=True)
class DecisionRule:
    """Per-state distribution over enabled actions."""

    probs: Mapping[str, Mapping[str, float]]

    @classmethod
    def deterministic(cls, choice: Mapping[str, str]) -> "DecisionRule":
        return cls({s: {a: 1.0} for s, a in choice.items()})

    @property
    def is_deterministic(self) -> bool:
        return all(
            sum(1 for p in dist.values() if p > PROB_TOL) == 1 for dist in self.probs.values()
        )

    def action(self, s: str) -> str:
        """The chosen action of a deterministic rule at ``s``."""
        dist = self.probs[s]
        return max(dist, key=dist.get)

    def prob(self, s: str, a: str) -> float:
        return self.probs.get(s, {}).get(a, 0.0)

    def matrix(self, m: Mdp) -> np.ndarray:
        """``D[i, k]`` = d(s_i, a) for pair ``k = (s_i, a)``."""
        D = np.zeros((len(m.states), len(m.pairs)))
        for k, (s, a) in enumerate(m.pairs):
            D[m.state_index[s], k] = self.prob(s, a)
        return D

    def problems(self, m: Mdp) -> list[str]:
        out = []
        for s in m.states:
            dist = self.probs.get(s)
            if dist is None:
                out.append(f"no distribution at {s}")
                continue
            if abs(sum(dist.values()) - 1.0) > PROB_TOL:
                out.append(f"probabilities at {s} sum to {sum(dist.values())}")
            for a, p in dist.items():
                if p > 0 and a not in m.enabled.get(s, ()):
                    out.append(f"action {a} not enabled at {s}")
        return out


@dataclass(frozen=True)
class Policy:
    """Either a stationary policy ``(d, d, ...)`` or a finite sequence of rules."""

    rules: tuple[DecisionRule, ...]
    stationary: bool = True

    @classmethod
    def stationary_of(cls, rule: DecisionRule) -> "Policy":
        return cls((rule,), True)

    @classmethod
    def finite(cls, rules: Sequence[DecisionRule]) -> "Policy":
        return cls(tuple(rules), False)

    @classmethod
    def from_choices(cls, m: Mdp, choice: Mapping[str, str]) -> "Policy":
        """Deterministic stationary policy; unlisted states take their first enabled action."""
        full = {s: choice.get(s, m.enabled[s][0]) for s in m.states}
        return cls.stationary_of(DecisionRule.deterministic(full))

    @property
    def horizon(self) -> float:
        return math.inf if self.stationary else len(self.rules)

    @property
    def rule(self) -> DecisionRule:
        if not self.stationary:
            raise ValueError("finite-sequence policy has no single decision rule")
        return self.rules[0]

    def rule_at(self, t: int) -> DecisionRule:
        if self.stationary:
            return self.rules[0]
        if not 1 <= t <= len(self.rules):
            raise ValueError(f"policy has no decision rule for stage {t}")
        return self.rules[t - 1]

    @property
    def is_deterministic(self) -> bool:
        return all(r.is_deterministic for r in self.rules)


# -- partition and absorption ------------------------------------------------


@dataclass(frozen=True)
class StatePartition:
    target: frozenset[str]
    zero: frozenset[str]
    rest: frozenset[str]

    @property
    def frozen(self) -> frozenset[str]:
        return self.target | self.zero


def _predecessors(m: Mdp) -> dict[str, set[str]]:
    pred: dict[str, set[str]] = {s: set() for s in m.states}
    for (s, a), dist in m.transitions.items():
        if a not in m.enabled.get(s, ()):
            continue
        for t, p in dist.items():
            if p > 0:
                pred[t].add(s)
    return pred


def backward_reachable(m: Mdp, target: Iterable[str]) -> set[str]:
    """States with a directed path (through enabled actions) into ``target``."""
    seen = set(target)
    pred = _predecessors(m)
    queue = deque(seen)
    while queue:
        t = queue.popleft()
        for s in pred[t]:
            if s not in seen:
                seen.add(s)
                queue.append(s)
    return seen


def partition_states(m: Mdp, target: Union[str, Iterable[str]]) -> StatePartition:
    """Split states into target ``B``, zero-probability ``S0`` and rest ``Sr``.

    ``target`` is either an atomic proposition (``B`` = states labeled with
    it) or an explicit collection of states.
    """
    if isinstance(target, str):
        B = frozenset(s for s in m.states if target in m.label(s))
    else:
        B = frozenset(target)
    can = backward_reachable(m, B)
    zero = frozenset(s for s in m.states if s not in can)
    rest = frozenset(s for s in m.states if s not in B and s not in zero)
    return StatePartition(B, zero, rest)


def make_absorbing(m: Mdp, states_to_freeze: Iterable[str]) -> Mdp:
    """Copy of ``m`` where each frozen state has the single self-loop action ``ABSORB``."""
    frozen = set(states_to_freeze)
    if not frozen:
        return m
    unknown = frozen - set(m.states)
    if unknown:
        raise ValueError(f"unknown states to freeze: {sorted(unknown)}")
    enabled = {}
    transitions = {}
    rewards = {}
    for s in m.states:
        if s in frozen:
            enabled[s] = (ABSORB,)
            transitions[(s, ABSORB)] = {s: 1.0}
            rewards[(s, ABSORB)] = 0.0
        else:
            enabled[s] = m.enabled[s]
            for a in m.enabled[s]:
                transitions[(s, a)] = m.successors(s, a)
                if (s, a) in m.rewards:
                    rewards[(s, a)] = m.rewards[(s, a)]
    actions = m.actions if ABSORB in m.actions else m.actions + (ABSORB,)
    return Mdp(m.states, m.initial, actions, enabled, transitions, m.atomic_props, m.labels, rewards)


# -- evaluation ----------------------------------------------------------------


@dataclass(frozen=True)
class OccupancyProfile:
    """``mu[t-1, k]`` is the probability of occupying pair ``k`` at stage ``t``."""

    model: Mdp
    mu: np.ndarray

    @property
    def horizon(self) -> int:
        return self.mu.shape[0]

    def at(self, t: int, s: str, a: str) -> float:
        return float(self.mu[t - 1, self.model.pair_index[(s, a)]])

    def stage(self, t: int) -> dict[StateAction, float]:
        row = self.mu[t - 1]
        return {p: float(row[k]) for k, p in enumerate(self.model.pairs) if row[k] != 0.0}

    def state_mass(self, t: int) -> np.ndarray:
        return np.bincount(self.model.pair_state, weights=self.mu[t - 1], minlength=len(self.model.states))


def occupancy_profile(m: Mdp, pi: Policy, horizon: int) -> OccupancyProfile:
    """Stage-wise joint state-action distribution by forward recursion from ``s0``."""
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    if not pi.stationary and len(pi.rules) < horizon:
        raise ValueError(f"policy defines {len(pi.rules)} stages, {horizon} requested")
    P = m.pair_matrix
    mu = np.zeros((horizon, len(m.pairs)))
    start = np.zeros(len(m.states))
    start[m.state_index[m.initial]] = 1.0
    D = pi.rule_at(1).matrix(m)
    mu[0] = start @ D
    for t in range(1, horizon):
        if not pi.stationary:
            D = pi.rule_at(t + 1).matrix(m)
        mu[t] = (mu[t - 1] @ P) @ D
    return OccupancyProfile(m, mu)


def _state_chain(m: Mdp, rule: DecisionRule) -> np.ndarray:
    return rule.matrix(m) @ m.pair_matrix


def _recurrent_states(chain: np.ndarray, allowed: np.ndarray) -> np.ndarray:
    """Boolean mask of states in closed communicating classes of ``chain`` restricted to ``allowed``.

    Edges leaving ``allowed`` count as exits, so a class is closed only if no
    mass can escape it.
    """
    n = chain.shape[0]
    sub = np.where(allowed[:, None] & allowed[None, :], chain > 0, False)
    ncomp, comp = connected_components(csr_matrix(sub), directed=True, connection="strong")
    closed = np.ones(ncomp, dtype=bool)
    for i in range(n):
        if not allowed[i]:
            closed[comp[i]] = False
            continue
        out = np.nonzero(chain[i] > 0)[0]
        for j in out:
            if not allowed[j] or comp[j] != comp[i]:
                closed[comp[i]] = False
                break
    return allowed & closed[comp]


def _forward_reachable(chain: np.ndarray, start: int, allowed: np.ndarray) -> np.ndarray:
    seen = np.zeros(chain.shape[0], dtype=bool)
    seen[start] = True
    queue = deque([start])
    while queue:
        i = queue.popleft()
        if not allowed[i]:
            continue
        for j in np.nonzero(chain[i] > 0)[0]:
            if not seen[j]:
                seen[j] = True
                queue.append(j)
    return seen


@dataclass(frozen=True)
class Residence:
    """Expected residence times per state-action pair.

    ``values`` holds the finite residences; pairs in ``infinite`` are visited
    infinitely often with positive probability and carry no numeric value.
    """

    values: Mapping[StateAction, float]
    infinite: frozenset[StateAction]

    def __getitem__(self, pair: StateAction) -> float:
        if pair in self.infinite:
            return math.inf
        return self.values.get(pair, 0.0)

    @property
    def finite(self) -> bool:
        return not self.infinite

    def state_total(self, s: str) -> float:
        if any(p[0] == s for p in self.infinite):
            return math.inf
        return sum(v for (t, _), v in self.values.items() if t == s)

    def total(self, states: Iterable[str] | None = None) -> float:
        keep = None if states is None else set(states)
        if any(keep is None or p[0] in keep for p in self.infinite):
            return math.inf
        return sum(v for (s, _), v in self.values.items() if keep is None or s in keep)


def _stationary_rule(pi: Policy | DecisionRule) -> DecisionRule:
    if isinstance(pi, DecisionRule):
        return pi
    return pi.rule


def expected_residence(m: Mdp, pi: Policy | DecisionRule, absorbed: Iterable[str] = ()) -> Residence:
    """Expected number of visits to each pair before entering ``absorbed``.

    Absorbed states are terminal: their pairs are not reported.
    """
    rule = _stationary_rule(pi)
    n = len(m.states)
    chain = _state_chain(m, rule)
    allowed = np.ones(n, dtype=bool)
    for s in absorbed:
        allowed[m.state_index[s]] = False
    s0 = m.state_index[m.initial]
    visits = np.zeros(n)
    inf_states = np.zeros(n, dtype=bool)
    if allowed[s0]:
        recurrent = _recurrent_states(chain, allowed)
        reach = _forward_reachable(chain, s0, allowed)
        inf_states = recurrent & reach
        transient = np.nonzero(allowed & ~recurrent)[0]
        if allowed[s0] and not recurrent[s0] and len(transient):
            Q = chain[np.ix_(transient, transient)]
            e = np.zeros(len(transient))
            e[np.searchsorted(transient, s0)] = 1.0
            visits[transient] = np.linalg.solve(np.eye(len(transient)) - Q.T, e)
    values: dict[StateAction, float] = {}
    infinite = set()
    for s, a in m.pairs:
        i = m.state_index[s]
        if not allowed[i]:
            continue
        d = rule.prob(s, a)
        if inf_states[i] and d > 0:
            infinite.add((s, a))
        else:
            values[(s, a)] = float(visits[i] * d)
    return Residence(MappingProxyType(values), frozenset(infinite))


def reach_probability(
    m: Mdp,
    pi: Policy | DecisionRule,
    source: str | StateAction,
    target: Iterable[str],
) -> float:
    """Probability of reaching ``target`` under a stationary policy.

    ``source`` is a state (a target state counts as reached at step 0) or a
    state-action pair (the first action is fixed, reaching is then judged on
    the successors).
    """
    x = _reach_vector(m, _stationary_rule(pi), frozenset(target))
    if isinstance(source, tuple):
        s, a = source
        row = m.pair_matrix[m.pair_index[(s, a)]]
        return float(min(1.0, max(0.0, row @ x)))
    return float(x[m.state_index[source]])


def _reach_vector(m: Mdp, rule: DecisionRule, target: frozenset[str]) -> np.ndarray:
    n = len(m.states)
    chain = _state_chain(m, rule)
    is_target = np.zeros(n, dtype=bool)
    for s in target:
        is_target[m.state_index[s]] = True
    # graph search: states with a positive-probability path into the target
    can = is_target.copy()
    changed = True
    while changed:
        new = can | ((chain[:, can] > 0).any(axis=1))
        changed = bool((new != can).any())
        can = new
    x = np.zeros(n)
    x[is_target] = 1.0
    unknown = np.nonzero(can & ~is_target)[0]
    if len(unknown):
        A = np.eye(len(unknown)) - chain[np.ix_(unknown, unknown)]
        b = chain[np.ix_(unknown, np.nonzero(is_target)[0])].sum(axis=1)
        x[unknown] = np.linalg.solve(A, b)
    return np.clip(x, 0.0, 1.0)


def policy_cost(
    m: Mdp,
    pi: Policy | DecisionRule,
    cost_fn: Mapping[StateAction, float],
    absorbed: Iterable[str] | None = None,
) -> float:
    """Expected accumulated cost ``sum xi(s,a) * cost(s,a)``; ``math.inf`` if unbounded.

    ``absorbed`` defaults to the model's self-absorbing states. Pairs with
    infinite residence and zero cost contribute nothing.
    """
    if absorbed is None:
        absorbed = m.absorbing_states()
    res = expected_residence(m, pi, absorbed)
    total = 0.0
    for pair, c in cost_fn.items():
        if c == 0:
            continue
        if pair in res.infinite:
            return math.inf
        total += res.values.get(pair, 0.0) * c
    return total
