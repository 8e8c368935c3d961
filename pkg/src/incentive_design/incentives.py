"""Agent value tables, cost of control and incentive schedules.

Payments are keyed by ``(stage, base state, memory, action)``. A
product-level schedule uses the stage within the horizon block and a DFA
memory state; a base-level schedule (the result of hiding the objective)
uses the absolute stage and no memory. Product-level target and zero sets
are carried as ``Origin`` triples so that no consumer has to parse state
ids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

from .lifting import Origin, ProductMdp, expand, product
from .mdp import MASS_TOL, Mdp, Policy, StateAction, StatePartition
from .scltl import Dfa

STRICT_TOL = 1e-9
ABSORBED_MASS = 1 - 1e-9

PayKey = tuple[int, str, "str | None", str]


# -- backward induction ------------------------------------------------------------


def _pair_starts(m: Mdp) -> np.ndarray:
    ps = m.pair_state
    return np.concatenate([[0], np.nonzero(np.diff(ps))[0] + 1])


def induction(m: Mdp, pay: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Finite-horizon backward induction over ``R + pay``.

    ``pay`` has shape ``(N, n_pairs)`` (row ``n-1`` is stage ``n``). Returns
    ``V`` of shape ``(N+1, n_states)`` with a zero last row and ``Q`` of
    shape ``(N, n_pairs)``; ``V[n-1]`` is the maximum of the ``Q[n-1]``
    entries of each state, computed from the same floats.
    """
    N = pay.shape[0]
    P = m.pair_matrix
    R = m.reward_vector
    starts = _pair_starts(m)
    V = np.zeros((N + 1, len(m.states)))
    Q = np.zeros((N, len(m.pairs)))
    for n in range(N - 1, -1, -1):
        Q[n] = R + pay[n] + P @ V[n + 1]
        V[n] = np.maximum.reduceat(Q[n], starts)
    return V, Q


@dataclass(frozen=True)
class ValueTables:
    """Incentive-free ``V̄_n`` and ``Q̄_n`` for stages ``1..N`` (``V̄_{N+1} = 0``)."""

    model: Mdp
    horizon: int
    v: np.ndarray
    q: np.ndarray

    def vbar(self, n: int, s: str) -> float:
        return float(self.v[n - 1, self.model.state_index[s]])

    def qbar(self, n: int, s: str, a: str) -> float:
        return float(self.q[n - 1, self.model.pair_index[(s, a)]])

    def gap(self, n: int, s: str, a: str) -> float:
        return self.vbar(n, s) - self.qbar(n, s, a)

    def greedy(self, n: int, s: str) -> str:
        """First enabled action attaining ``V̄_n(s)`` (declaration order breaks ties)."""
        best = self.vbar(n, s)
        for a in self.model.enabled[s]:
            if self.qbar(n, s, a) == best:
                return a
        raise AssertionError("value is not attained by any action")


def backward_induction(m: Mdp, N: int) -> ValueTables:
    if N < 1:
        raise ValueError("horizon N must be at least 1")
    V, Q = induction(m, np.zeros((N, len(m.pairs))))
    V.setflags(write=False)
    Q.setflags(write=False)
    return ValueTables(m, N, V, Q)


# -- cost of control -------------------------------------------------------------


@dataclass(frozen=True)
class CostOfControl:
    """Payment needed to make each lifted action strictly optimal, ``0`` off ``Sr``."""

    phi: Mapping[StateAction, float]
    epsilon: float
    rest_states: frozenset[str]

    def __getitem__(self, pair: StateAction) -> float:
        return self.phi.get(pair, 0.0)


def cost_of_control(
    vt: ValueTables,
    lifted: Mdp,
    origin: Mapping[str, Origin],
    partition: StatePartition,
    epsilon: float,
) -> CostOfControl:
    """``V̄_n(s) - Q̄_n(s,a) + ε`` for lifted states ``(s, n, ...)`` in ``Sr``."""
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    phi = {}
    for x in lifted.states:
        s, n, _ = origin[x]
        for a in lifted.enabled[x]:
            phi[(x, a)] = vt.gap(n, s, a) + epsilon if x in partition.rest else 0.0
    return CostOfControl(MappingProxyType(phi), epsilon, partition.rest)


def declared_cost(phi: Mapping[StateAction, float], rest: Iterable[str], epsilon: float = 0.0) -> CostOfControl:
    """Cost of control given directly as a table (pairs outside ``rest`` are zeroed)."""
    rest = frozenset(rest)
    table = {p: (v if p[0] in rest else 0.0) for p, v in phi.items()}
    return CostOfControl(MappingProxyType(table), epsilon, rest)


def epsilon_for_bound(epsilon_bar: float, total_residence: float) -> float:
    """Margin that keeps the extra expected payment at ``epsilon_bar``."""
    if epsilon_bar <= 0:
        raise ValueError("epsilon_bar must be positive")
    if not total_residence > 0 or math.isinf(total_residence):
        raise ValueError(f"total residence must be finite and positive, got {total_residence}")
    return epsilon_bar / total_residence


# -- schedules ---------------------------------------------------------------------


@dataclass(frozen=True)
class IncentiveSchedule:
    """Offered payments plus switch-mode metadata.

    ``level`` is ``"product"`` (stages are block stages ``1..N`` and keys
    carry a memory state) or ``"base"`` (stages are absolute, memory is
    ``None``, and stages after ``last_stage`` pay nothing). Payments stop for
    good once the realized path enters a target or zero state.
    """

    level: str
    horizon: int
    epsilon: float
    payments: Mapping[PayKey, float]
    target_states: frozenset[Origin]
    zero_states: frozenset[Origin]
    epsilon_bar: float | None = None
    last_stage: int | None = None
    provenance: Mapping[str, object] = field(default_factory=dict)
    switch_mode: bool = True

    def __post_init__(self) -> None:
        if self.level not in ("base", "product"):
            raise ValueError(f"unknown schedule level {self.level!r}")
        bad = [k for k, v in self.payments.items() if not v >= 0]
        if bad:
            raise ValueError(f"negative payment at {bad[0]}")

    def block_stage(self, t: int) -> int:
        return (t - 1) % self.horizon + 1

    def amount(self, t: int, s: str, q: str | None, a: str) -> float:
        """Offered payment for ``a`` at absolute stage ``t`` in state ``s`` with memory ``q``."""
        if self.level == "product":
            return self.payments.get((self.block_stage(t), s, q, a), 0.0)
        if self.last_stage is not None and t > self.last_stage:
            return 0.0
        return self.payments.get((t, s, None, a), 0.0)

    def is_frozen(self, s: str, n: int, q: str) -> bool:
        o = Origin(s, n, q)
        return o in self.target_states or o in self.zero_states

    def incentivized(self, t: int, s: str, q: str | None, actions: Sequence[str]) -> list[str]:
        return [a for a in actions if self.amount(t, s, q, a) > 0]

    @property
    def total_offered(self) -> float:
        return float(sum(self.payments.values()))


def _frozen_origins(pm: ProductMdp, partition: StatePartition) -> tuple[frozenset[Origin], frozenset[Origin]]:
    return (
        frozenset(pm.origin[x] for x in partition.target),
        frozenset(pm.origin[x] for x in partition.zero),
    )


def emit_schedule(
    policy: Policy,
    coc: CostOfControl,
    partition: StatePartition,
    epsilon: float,
    pm: ProductMdp,
    vt: ValueTables,
    epsilon_bar: float | None = None,
    provenance: Mapping[str, object] | None = None,
) -> IncentiveSchedule:
    """Product-level schedule: pay the cost of control on the chosen action in ``Sr``.

    Frozen states carry only the absorbing action in the modified model, so
    there the payment ``ε`` goes on the agent's own greedy action, which
    keeps every state's incentive-inclusive value shifted by the same
    amount.
    """
    if not policy.is_deterministic:
        raise ValueError("schedules are emitted from deterministic policies only")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive for strict incentives")
    rule = policy.rule
    payments = {}
    for x in pm.mdp.states:
        s, n, q = pm.origin[x]
        if x in partition.rest:
            a = rule.action(x)
            amount = coc[(x, a)]
        else:
            a = vt.greedy(n, s)
            amount = epsilon
        if amount > 0:
            payments[(n, s, q, a)] = amount
    target, zero = _frozen_origins(pm, partition)
    return IncentiveSchedule(
        "product",
        pm.horizon,
        epsilon,
        MappingProxyType(payments),
        target,
        zero,
        epsilon_bar,
        None,
        MappingProxyType(dict(provenance or {})),
    )


def zero_schedule(
    horizon: int,
    target: Iterable[Origin] = (),
    zero: Iterable[Origin] = (),
    provenance: Mapping[str, object] | None = None,
) -> IncentiveSchedule:
    return IncentiveSchedule(
        "base",
        horizon,
        0.0,
        MappingProxyType({}),
        frozenset(target),
        frozenset(zero),
        None,
        0,
        MappingProxyType(dict(provenance or {})),
    )


# -- the agent's view of a schedule -------------------------------------------------


@dataclass(frozen=True)
class AgentView:
    """What the agent plans over: the base model, or the base model with shared memory.

    ``key`` maps each planning state to its ``(base state, memory)``; the
    memory is ``None`` for a base-level schedule.
    """

    model: Mdp
    base: Mdp
    dfa: Dfa
    schedule: IncentiveSchedule
    key: Mapping[str, tuple[str, "str | None"]]
    locate_map: Mapping[tuple[str, "str | None"], str]

    @classmethod
    def of(cls, m: Mdp, dfa: Dfa, schedule: IncentiveSchedule) -> "AgentView":
        if schedule.level == "base":
            key = {s: (s, None) for s in m.states}
            return cls(m, m, dfa, schedule, key, {v: k for k, v in key.items()})
        mem = product(expand(m, 1), dfa)
        key = {x: (o.state, o.memory) for x, o in mem.origin.items()}
        return cls(mem.mdp, m, dfa, schedule, key, {v: k for k, v in key.items()})

    def locate(self, s: str, q: str) -> str:
        return self.locate_map[(s, None if self.schedule.level == "base" else q)]

    def block_payments(self, k: int) -> np.ndarray:
        """Offered payments for block ``k`` (0-based), shape ``(N, n_pairs)``."""
        N = self.schedule.horizon
        pay = np.zeros((N, len(self.model.pairs)))
        for j, (x, a) in enumerate(self.model.pairs):
            s, q = self.key[x]
            for n in range(1, N + 1):
                pay[n - 1, j] = self.schedule.amount(k * N + n, s, q, a)
        return pay


# -- strictness audit ----------------------------------------------------------------


@dataclass(frozen=True)
class StrictnessViolation:
    stage: int
    state: str
    memory: str | None
    rule: str
    detail: str

    def __str__(self) -> str:
        where = self.state if self.memory is None else f"{self.state}|{self.memory}"
        return f"t={self.stage} {where}: {self.rule} ({self.detail})"


@dataclass(frozen=True)
class StrictnessReport:
    violations: tuple[StrictnessViolation, ...]
    checked: int
    min_margin: float
    stages: int

    @property
    def ok(self) -> bool:
        return not self.violations


def strictness_check(
    m: Mdp,
    schedule: IncentiveSchedule,
    vt: ValueTables,
    dfa: Dfa,
    max_stages: int | None = None,
) -> StrictnessReport:
    """Audit the schedule along the behavior it induces.

    The agent's block plans are recomputed from the offered payments; at
    every pre-absorption ``(stage, state, memory)`` reached with positive
    probability the incentivized action must beat all others by ``ε`` and
    the value must equal ``V̄_n(s) + (N+1-n) ε``.
    """
    view = AgentView.of(m, dfa, schedule)
    N = schedule.horizon
    eps = schedule.epsilon
    if max_stages is None:
        max_stages = max(schedule.last_stage or 0, 100 * N)
    mm = view.model
    bounds = np.append(_pair_starts(mm), len(mm.pairs))
    P = mm.pair_matrix
    # distribution over (planning state, memory); memory is tracked even for base views
    q0 = dfa.step(dfa.initial, m.label(m.initial))
    dist: dict[tuple[str, str], float] = {(m.initial, q0): 1.0}
    violations: list[StrictnessViolation] = []
    checked = 0
    min_margin = math.inf
    t = 0
    while t < max_stages and dist:
        k = t // N
        V, Q = induction(mm, view.block_payments(k))
        for n in range(1, N + 1):
            t = k * N + n
            nxt: dict[tuple[str, str], float] = {}
            for (s, q), w in dist.items():
                if schedule.is_frozen(s, n, q):
                    continue
                x = view.locate(s, q)
                i = mm.state_index[x]
                lo, hi = bounds[i], bounds[i + 1]
                acts = mm.enabled[x]
                qv = Q[n - 1, lo:hi]
                v = V[n - 1, i]
                checked += 1
                expect = vt.vbar(n, s) + (N + 1 - n) * eps
                if abs(v - expect) > STRICT_TOL * max(1.0, abs(expect)):
                    violations.append(StrictnessViolation(t, s, q, "value-shift", f"V={v!r} expected {expect!r}"))
                paid = [i for i, a in enumerate(acts) if schedule.amount(t, s, q, a) > 0]
                if len(paid) != 1:
                    violations.append(StrictnessViolation(t, s, q, "incentivized-count", f"{len(paid)} paid actions"))
                    chosen = int(np.argmax(qv))
                else:
                    chosen = paid[0]
                    others = np.delete(qv, chosen)
                    if len(others):
                        margin = float(qv[chosen] - others.max())
                        min_margin = min(min_margin, margin)
                        if margin <= STRICT_TOL:
                            violations.append(
                                StrictnessViolation(t, s, q, "tie", f"{acts[chosen]} ties with another action")
                            )
                        elif margin < eps - STRICT_TOL:
                            violations.append(
                                StrictnessViolation(
                                    t, s, q, "margin", f"{acts[chosen]} leads by {margin!r} < epsilon {eps!r}"
                                )
                            )
                row = P[lo + chosen]
                for j in np.nonzero(row)[0]:
                    s2 = mm.states[j]
                    b2 = view.key[s2][0]
                    key = (b2, dfa.step(q, m.label(b2)))
                    nxt[key] = nxt.get(key, 0.0) + w * row[j]
            dist = {k2: w for k2, w in nxt.items() if w > MASS_TOL}
            if not dist or t >= max_stages:
                break
    return StrictnessReport(tuple(violations), checked, min_margin, t)


# -- memory occupancy and hiding ----------------------------------------------------


@dataclass(frozen=True)
class MemoryOccupancy:
    """Occupied memory states ``M_{s,t}`` per base state and absolute stage.

    Mass in a target or zero state is counted only at the stage it first
    enters; after that payments have stopped.
    """

    m_sets: Mapping[tuple[str, int], frozenset[str]]
    horizon: int
    complete: bool

    @property
    def witnesses(self) -> list[tuple[str, int]]:
        return sorted((k for k, v in self.m_sets.items() if len(v) >= 2), key=lambda k: (k[1], k[0]))

    @property
    def hideable(self) -> bool:
        return not self.witnesses


def memory_occupancy(
    pm: ProductMdp,
    mm: Mdp,
    policy: Policy,
    partition: StatePartition,
    T: int | None = None,
    cap: int | None = None,
) -> MemoryOccupancy:
    """Occupied memories under ``policy`` on the modified product ``mm``.

    Without ``T`` the recursion runs until the absorbed mass reaches
    ``1 - 1e-9`` or ``cap`` stages (default ``100 N``) pass; the result is
    flagged incomplete in the latter case.
    """
    N = pm.horizon
    if T is not None and T < 1:
        raise ValueError("T must be at least 1")
    cap = cap if cap is not None else 100 * N
    limit = T if T is not None else cap
    rule = policy.rule
    D = rule.matrix(mm)
    P = mm.pair_matrix
    frozen = np.array([x in partition.frozen for x in mm.states])
    mass = np.zeros(len(mm.states))
    mass[mm.state_index[mm.initial]] = 1.0
    prev_frozen = np.zeros(len(mm.states))
    sets: dict[tuple[str, int], set[str]] = {}
    complete = False
    t = 0
    for t in range(1, limit + 1):
        entering = np.where(frozen, mass - prev_frozen, 0.0)
        live = np.where(frozen, entering, mass)
        for i in np.nonzero(live > MASS_TOL)[0]:
            s, _, q = pm.origin[mm.states[i]]
            sets.setdefault((s, t), set()).add(q)
        absorbed = float(mass[frozen].sum())
        if T is None and absorbed >= ABSORBED_MASS:
            complete = True
            break
        prev_frozen = np.where(frozen, mass, 0.0)
        mass = (mass @ D) @ P
    else:
        complete = T is not None or float(mass[frozen].sum()) >= ABSORBED_MASS
    return MemoryOccupancy(MappingProxyType({k: frozenset(v) for k, v in sets.items()}), t, complete)


@dataclass(frozen=True)
class ShareRequired:
    """The objective cannot be hidden: ``witness`` is a (state, stage) with several memories."""

    witness: tuple[str, int]
    memories: frozenset[str]
    occupancy: MemoryOccupancy


@dataclass(frozen=True)
class HideResult:
    schedule: IncentiveSchedule
    occupancy: MemoryOccupancy


def hide_or_share(
    pm: ProductMdp,
    mm: Mdp,
    policy: Policy,
    partition: StatePartition,
    schedule: IncentiveSchedule,
    vt: ValueTables,
    T: int | None = None,
    cap: int | None = None,
) -> HideResult | ShareRequired:
    """Project a product-level schedule to the base model when memory is never ambiguous.

    At each absolute stage ``t`` the base payment copies the product payment
    of the unique occupied memory. Unoccupied ``(s, t)`` get the frozen-state
    payment ``ε`` on the agent's greedy action.
    """
    if schedule.level != "product":
        raise ValueError("hide_or_share expects a product-level schedule")
    occ = memory_occupancy(pm, mm, policy, partition, T, cap)
    if occ.witnesses:
        w = occ.witnesses[0]
        return ShareRequired(w, occ.m_sets[w], occ)
    N = pm.horizon
    last = -(-occ.horizon // N) * N
    base = pm.base
    payments = {}
    for t in range(1, last + 1):
        n = (t - 1) % N + 1
        for s in base.states:
            mem = occ.m_sets.get((s, t))
            if mem:
                (q,) = mem
                for a in base.enabled[s]:
                    v = schedule.payments.get((n, s, q, a), 0.0)
                    if v > 0:
                        payments[(t, s, None, a)] = v
            else:
                payments[(t, s, None, vt.greedy(n, s))] = schedule.epsilon
    prov = dict(schedule.provenance)
    prov["hidden_from"] = "product"
    hidden = IncentiveSchedule(
        "base",
        N,
        schedule.epsilon,
        MappingProxyType(payments),
        schedule.target_states,
        schedule.zero_states,
        schedule.epsilon_bar,
        last,
        MappingProxyType(prov),
    )
    return HideResult(hidden, occ)


# -- online provisioning for one-stage horizons ---------------------------------------


class OnlineProvider:
    """Serves one-stage payments by tracking the objective's memory along the observed path.

    Single-owner and stateful: call ``observe`` with each new base state
    (and the action that led there), then ``offer`` for the current stage.
    """

    def __init__(self, m: Mdp, dfa: Dfa, schedule: IncentiveSchedule):
        if schedule.horizon != 1:
            raise ValueError("online provisioning needs a one-stage horizon")
        if schedule.level != "product":
            raise ValueError("online provisioning serves a product-level schedule")
        self.m = m
        self.dfa = dfa
        self.schedule = schedule
        self.reset()

    def reset(self) -> None:
        self.state: str | None = None
        self.memory: str | None = None
        self.stage = 0
        self.absorbed = False

    def observe(self, s: str, action: str | None = None) -> None:
        if self.state is None:
            if s != self.m.initial:
                raise ValueError(f"path must start at {self.m.initial}, got {s}")
            self.memory = self.dfa.step(self.dfa.initial, self.m.label(s))
        else:
            if action is None:
                raise ValueError("the action taken must be reported with each transition")
            if self.m.successors(self.state, action).get(s, 0.0) <= 0.0:
                raise ValueError(f"transition {self.state} -{action}-> {s} has zero probability")
            self.memory = self.dfa.step(self.memory, self.m.label(s))
        self.state = s
        self.stage += 1
        if self.schedule.is_frozen(s, 1, self.memory):
            self.absorbed = True

    def offer(self) -> dict[str, float]:
        """Payments for the current stage; empty once the path has been absorbed."""
        if self.state is None:
            raise ValueError("no state observed yet")
        if self.absorbed:
            return {}
        out = {}
        for a in self.m.enabled[self.state]:
            v = self.schedule.amount(1, self.state, self.memory, a)
            if v > 0:
                out[a] = v
        return out
