"""Monte Carlo simulation of a replanning agent facing an incentive schedule.

Every ``N`` stages the agent receives the offered payments for the next
block, computes an optimal ``N``-stage policy by backward induction over
reward plus payment, and executes it. The principal pays the offered amount
for the action actually taken, until the path enters a target or zero
state; the episode ends there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .incentives import AgentView, IncentiveSchedule, OnlineProvider, _pair_starts, induction
from .mdp import DecisionRule, Mdp, Policy
from .scltl import Dfa

TIE_POLICIES = ("first-index", "uniform-random", "adversarial")
TIE_TOL = 1e-9


@dataclass(frozen=True)
class AgentConfig:
    horizon: int
    tie_policy: str = "adversarial"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.tie_policy not in TIE_POLICIES:
            raise ValueError(f"tie_policy must be one of {TIE_POLICIES}")


def _ties(q: np.ndarray, best: float) -> np.ndarray:
    return np.nonzero(q >= best - TIE_TOL * max(1.0, abs(best)))[0]


def _rule_from_ties(acts: Sequence[str], ties: np.ndarray, pay: np.ndarray, tie_policy: str) -> dict[str, float]:
    if tie_policy == "uniform-random":
        return {acts[i]: 1.0 / len(ties) for i in ties}
    if tie_policy == "adversarial":
        unpaid = [i for i in ties if pay[i] <= 0]
        pick = unpaid[0] if unpaid else ties[0]
    else:
        pick = ties[0]
    return {acts[pick]: 1.0}


def plan_block(m: Mdp, payments: np.ndarray, cfg: AgentConfig) -> Policy:
    """Optimal ``N``-stage policy for reward plus ``payments`` (shape ``(N, n_pairs)``).

    Only actions attaining the stage value get probability; ties follow
    ``cfg.tie_policy`` (adversarial prefers an unpaid action).
    """
    payments = np.asarray(payments, dtype=float)
    if payments.shape != (cfg.horizon, len(m.pairs)):
        raise ValueError(f"payments must have shape {(cfg.horizon, len(m.pairs))}")
    if (payments < 0).any():
        raise ValueError("payments must be nonnegative")
    V, Q = induction(m, payments)
    bounds = np.append(_pair_starts(m), len(m.pairs))
    rules = []
    for n in range(cfg.horizon):
        probs = {}
        for i, s in enumerate(m.states):
            lo, hi = bounds[i], bounds[i + 1]
            ties = _ties(Q[n, lo:hi], V[n, i])
            probs[s] = _rule_from_ties(m.enabled[s], ties, payments[n, lo:hi], cfg.tie_policy)
        rules.append(DecisionRule(probs))
    return Policy.finite(rules)


@dataclass
class TrajectoryRecord:
    states: list[str] = field(default_factory=list)
    actions: list[str] = field(default_factory=list)
    payments: list[float] = field(default_factory=list)
    satisfied: bool = False
    absorbed_at: int | None = None
    total_paid: float = 0.0

    @property
    def capped(self) -> bool:
        return self.absorbed_at is None

    def to_document(self) -> dict:
        return {
            "states": self.states,
            "actions": self.actions,
            "payments": self.payments,
            "satisfied": self.satisfied,
            "absorbed_at": self.absorbed_at,
            "total_paid": self.total_paid,
        }


@dataclass(frozen=True)
class SimulationSummary:
    episodes: int
    satisfied_fraction: float
    stderr: float
    mean_paid: float
    paid_stderr: float
    capped: int

    def to_document(self) -> dict:
        return {
            "episodes": self.episodes,
            "satisfied_fraction": self.satisfied_fraction,
            "stderr": self.stderr,
            "mean_paid": self.mean_paid,
            "paid_stderr": self.paid_stderr,
            "capped": self.capped,
        }


def summarize(records: Sequence[TrajectoryRecord]) -> SimulationSummary:
    n = len(records)
    if n == 0:
        return SimulationSummary(0, math.nan, math.nan, math.nan, math.nan, 0)
    sat = np.array([r.satisfied for r in records], dtype=float)
    paid = np.array([r.total_paid for r in records])
    se = lambda x: float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return SimulationSummary(
        n,
        float(sat.mean()),
        se(sat),
        float(paid.mean()),
        se(paid),
        sum(r.capped for r in records),
    )


class _Sampler:
    """Successor sampling with a shortcut for deterministic transitions."""

    def __init__(self, m: Mdp):
        self.table = {}
        for s, a in m.pairs:
            succ = m.successors(s, a)
            names = [t for t, p in succ.items() if p > 0]
            self.table[(s, a)] = (names, np.array([succ[t] for t in names]))

    def __call__(self, s: str, a: str, rng: np.random.Generator) -> str:
        names, probs = self.table[(s, a)]
        if len(names) == 1:
            return names[0]
        return names[int(rng.choice(len(names), p=probs))]


class _Simulator:
    def __init__(self, m: Mdp, schedule: IncentiveSchedule, dfa: Dfa, cfg: AgentConfig):
        if cfg.horizon != schedule.horizon:
            raise ValueError(f"agent horizon {cfg.horizon} differs from schedule horizon {schedule.horizon}")
        self.m = m
        self.schedule = schedule
        self.dfa = dfa
        self.cfg = cfg
        self.sample = _Sampler(m)
        self.online = schedule.level == "product" and schedule.horizon == 1
        self.view = None if self.online else AgentView.of(m, dfa, schedule)
        self._plans: dict[int, list[dict[str, tuple[tuple[str, ...], np.ndarray]]]] = {}

    def _plan(self, k: int):
        s = self.schedule
        if s.level == "product":
            k = 0
        elif s.last_stage is not None:
            k = min(k, -(-s.last_stage // s.horizon))
        if k not in self._plans:
            pi = plan_block(self.view.model, self.view.block_payments(k), self.cfg)
            stages = []
            for rule in pi.rules:
                stages.append(
                    {x: (tuple(d), np.array(list(d.values()))) for x, d in rule.probs.items()}
                )
            self._plans[k] = stages
        return self._plans[k]

    def _choose(self, acts: tuple[str, ...], probs: np.ndarray, rng) -> str:
        if len(acts) == 1:
            return acts[0]
        return acts[int(rng.choice(len(acts), p=probs))]

    def _online_action(self, provider: OnlineProvider, rng) -> str:
        s = provider.state
        offer = provider.offer()
        acts = self.m.enabled[s]
        pay = np.array([offer.get(a, 0.0) for a in acts])
        q = np.array([self.m.reward(s, a) for a in acts]) + pay
        ties = _ties(q, float(q.max()))
        rule = _rule_from_ties(acts, ties, pay, self.cfg.tie_policy)
        return self._choose(tuple(rule), np.array(list(rule.values())), rng)

    def episode(self, rng: np.random.Generator, max_blocks: int) -> TrajectoryRecord:
        m, dfa, sch = self.m, self.dfa, self.schedule
        N = sch.horizon
        rec = TrajectoryRecord()
        s = m.initial
        q = dfa.step(dfa.initial, m.label(s))
        provider = None
        if self.online:
            provider = OnlineProvider(m, dfa, sch)
            provider.observe(s)
        rec.satisfied = q in dfa.accepting
        for k in range(max_blocks):
            plan = None if self.online else self._plan(k)
            for n in range(1, N + 1):
                t = k * N + n
                rec.states.append(s)
                if sch.is_frozen(s, n, q):
                    rec.absorbed_at = t
                    return rec
                if self.online:
                    a = self._online_action(provider, rng)
                    paid = provider.offer().get(a, 0.0)
                else:
                    x = self.view.locate(s, q)
                    acts, probs = plan[n - 1][x]
                    a = self._choose(acts, probs, rng)
                    paid = sch.amount(t, s, q, a)
                rec.actions.append(a)
                rec.payments.append(paid)
                rec.total_paid += paid
                s = self.sample(s, a, rng)
                q = dfa.step(q, m.label(s))
                rec.satisfied = rec.satisfied or q in dfa.accepting
                if provider is not None:
                    provider.observe(s, a)
        rec.states.append(s)
        return rec


def run_episodes(
    m: Mdp,
    schedule: IncentiveSchedule,
    dfa: Dfa,
    episodes: int = 10000,
    max_blocks: int = 1000,
    cfg: AgentConfig | None = None,
) -> tuple[list[TrajectoryRecord], SimulationSummary]:
    """Simulate independent episodes; episode ``i`` draws from the seed ``(cfg.seed, i)``.

    A base-level schedule is planned against directly, a one-stage
    product-level schedule is served by an ``OnlineProvider``, and a longer
    product-level schedule is planned against by an agent that knows the
    objective's automaton.
    """
    cfg = cfg or AgentConfig(schedule.horizon)
    sim = _Simulator(m, schedule, dfa, cfg)
    records = [sim.episode(np.random.default_rng([cfg.seed, i]), max_blocks) for i in range(episodes)]
    return records, summarize(records)


def replanning_trace(
    m: Mdp,
    schedule: IncentiveSchedule,
    dfa: Dfa,
    cfg: AgentConfig | None = None,
    steps: int = 1000,
) -> TrajectoryRecord:
    """One reproducible trajectory with first-index ties, at most ``steps`` stages."""
    base = cfg or AgentConfig(schedule.horizon)
    cfg = AgentConfig(base.horizon, "first-index", base.seed)
    sim = _Simulator(m, schedule, dfa, cfg)
    blocks = -(-steps // cfg.horizon)
    rec = sim.episode(np.random.default_rng([cfg.seed, 0]), blocks)
    return rec
