"""End-to-end synthesis of an incentive design.

Stages: lift (horizon expansion and automaton product), partition, agent
value tables, maximal reachability, cost and time LPs with a zero margin
(reference cost and total residence), margin selection, the same LPs with
that margin, deterministic extraction, schedule emission, and the
hide-or-share decision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

from .incentives import (
    CostOfControl,
    HideResult,
    IncentiveSchedule,
    ShareRequired,
    ValueTables,
    backward_induction,
    cost_of_control,
    emit_schedule,
    epsilon_for_bound,
    hide_or_share,
    zero_schedule,
)
from .lifting import Origin, ProductMdp, expand, product
from .lp import (
    LpProblem,
    OccupancySolution,
    cost_lp,
    extract_deterministic,
    max_reach_value,
    reach_lp,
    solve_cost_lp,
    solve_time_lp,
    time_lp,
)
from .mdp import Mdp, Policy, StatePartition, expected_residence, make_absorbing, partition_states, policy_cost
from .scltl import Dfa

DEFAULT_EPSILON_BAR = 0.1


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"{stage}: {cause}")


@dataclass
class SynthesisResult:
    model: Mdp
    horizon: int
    dfa: Dfa
    product: ProductMdp
    partition: StatePartition
    modified: Mdp
    values: ValueTables
    verdict: str
    design: IncentiveSchedule
    x_star: float = 0.0
    epsilon: float = 0.0
    epsilon_bar: float | None = None
    total_residence: float = 0.0
    f0: float = 0.0
    cost: float = 0.0
    coc: CostOfControl | None = None
    coc0: CostOfControl | None = None
    reference_policy: Policy | None = None
    policy: Policy | None = None
    solution: OccupancySolution | None = None
    cost_solution: OccupancySolution | None = None
    product_schedule: IncentiveSchedule | None = None
    share: ShareRequired | None = None
    hide: HideResult | None = None
    problems: Mapping[str, LpProblem] = field(default_factory=dict)

    @property
    def upsilon_star(self) -> float:
        return self.solution.upsilon_star if self.solution else 0.0

    def lifted_choice(self) -> dict[Origin, str]:
        """Synthesized action at each rest state, keyed by its ``(state, stage, memory)``."""
        if self.policy is None:
            return {}
        rule = self.policy.rule
        return {self.product.origin[x]: rule.action(x) for x in self.modified.states if x in self.partition.rest}

    def report(self) -> dict:
        out = {
            "verdict": self.verdict,
            "x_star": self.x_star,
            "upsilon_star": self.upsilon_star,
            "f0": self.f0,
            "expected_payment": self.cost,
            "epsilon": self.epsilon,
            "epsilon_bar": self.epsilon_bar,
            "total_residence": self.total_residence,
            "bound": self.f0 + (self.epsilon_bar or 0.0),
            "horizon": self.horizon,
            "product_states": len(self.product.mdp.states),
            "partition": {
                "target": len(self.partition.target),
                "zero": len(self.partition.zero),
                "rest": len(self.partition.rest),
            },
        }
        if self.share is not None:
            s, t = self.share.witness
            out["share_witness"] = {"state": s, "stage": t, "memories": sorted(self.share.memories)}
            out["message"] = "objective must be shared: the automaton state is ambiguous at the witness"
        return out


def lift(m: Mdp, N: int, dfa: Dfa) -> tuple[ProductMdp, StatePartition, Mdp]:
    pm = product(expand(m, N), dfa)
    part = partition_states(pm.mdp, pm.accepting)
    return pm, part, make_absorbing(pm.mdp, part.frozen)


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PipelineError:
        raise
    except Exception as exc:  # surfaced with the stage name
        raise PipelineError(name, exc) from exc


def _solve(mm, part, coc, x_star, method):
    sol8 = _stage("cost-lp", solve_cost_lp, mm, part, coc, x_star, method)
    sol9 = _stage("time-lp", solve_time_lp, mm, part, coc, x_star, sol8.upsilon_star, method)
    pi = _stage("extraction", extract_deterministic, mm, part, coc, sol9)
    return sol8, sol9, pi


def synthesize(
    m: Mdp,
    N: int,
    dfa: Dfa,
    epsilon_bar: float = DEFAULT_EPSILON_BAR,
    epsilon: float | None = None,
    method: str = "highs",
    memory_cap: int | None = None,
) -> SynthesisResult:
    """Synthesize a design for horizon ``N`` and objective ``dfa``.

    The margin is ``epsilon`` if given, otherwise ``epsilon_bar`` divided by
    the total residence of the zero-margin optimal policy.
    """
    pm, part, mm = _stage("lifting", lift, m, N, dfa)
    vt = _stage("values", backward_induction, m, N)
    if mm.initial not in part.rest:
        target, zero = (frozenset(pm.origin[x] for x in S) for S in (part.target, part.zero))
        design = zero_schedule(N, target, zero, {"reason": "initial state needs no incentives"})
        x = 1.0 if mm.initial in part.target else 0.0
        return SynthesisResult(m, N, dfa, pm, part, mm, vt, "TRIVIAL", design, x_star=x)

    x_star = _stage("reach-lp", max_reach_value, mm, part, method)[mm.initial]
    coc0 = _stage("cost-of-control", cost_of_control, vt, mm, pm.origin, part, 0.0)
    _, sol0, pi0 = _solve(mm, part, coc0, x_star, method)
    f0 = sol0.upsilon_star
    res0 = expected_residence(mm, pi0, part.frozen)
    if not res0.finite:
        raise PipelineError("extraction", ValueError("reference policy has infinite residence"))
    total = res0.total(part.rest)
    if epsilon is None:
        eps = _stage("epsilon", epsilon_for_bound, epsilon_bar, total)
        eps_bar = epsilon_bar
    else:
        if not epsilon > 0:
            raise PipelineError("epsilon", ValueError("epsilon must be positive"))
        eps = epsilon
        eps_bar = epsilon * total

    coc = _stage("cost-of-control", cost_of_control, vt, mm, pm.origin, part, eps)
    sol8, sol9, pi = _solve(mm, part, coc, x_star, method)
    res = expected_residence(mm, pi, part.frozen)
    if not res.finite:
        raise PipelineError("extraction", ValueError("synthesized policy has infinite residence"))
    cost = policy_cost(mm, pi, coc.phi, part.frozen)
    prov = {
        "x_star": x_star,
        "upsilon_star": sol9.upsilon_star,
        "f0": f0,
        "total_residence": total,
        "lp_tolerance": 1e-8,
        "support_threshold": 1e-9,
    }
    sched = _stage("schedule", emit_schedule, pi, coc, part, eps, pm, vt, eps_bar, prov)
    verdict_obj = _stage("hiding", hide_or_share, pm, mm, pi, part, sched, vt, None, memory_cap)
    problems = {
        "reach": reach_lp(mm, part),
        "cost": cost_lp(mm, part, coc, x_star),
        "time": time_lp(mm, part, coc, x_star, sol8.upsilon_star),
    }
    common = dict(
        x_star=x_star,
        epsilon=eps,
        epsilon_bar=eps_bar,
        total_residence=total,
        f0=f0,
        cost=cost,
        coc=coc,
        coc0=coc0,
        reference_policy=pi0,
        policy=pi,
        solution=sol9,
        cost_solution=sol8,
        product_schedule=sched,
        problems=problems,
    )
    if isinstance(verdict_obj, ShareRequired):
        return SynthesisResult(m, N, dfa, pm, part, mm, vt, "SHARE_REQUIRED", sched, share=verdict_obj, **common)
    return SynthesisResult(m, N, dfa, pm, part, mm, vt, "HIDE", verdict_obj.schedule, hide=verdict_obj, **common)
