"""Occupancy-measure linear programs and policy extraction.

Three programs are built over the modified lifted model (target and zero
states absorbing), all with one variable per ``(s, a)`` for ``s`` in the
rest set ``Sr``:

* the maximal reachability LP (state-value form, one variable per state);
* the cost LP: minimize expected payment subject to maximal reachability
  and flow balance;
* the time LP: minimize total expected residence among cost-optimal
  solutions.

The time LP is what makes a deterministic extraction safe: any action with
positive residence in its solution may be picked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linprog

from .mdp import (
    MASS_TOL,
    DecisionRule,
    Mdp,
    Policy,
    StateAction,
    StatePartition,
    expected_residence,
    policy_cost,
    reach_probability,
)

LP_TOL = 1e-8
SUPPORT_TOL = 1e-9
FLOW_TOL = 1e-7
VERIFY_TOL = 1e-7


class LpError(RuntimeError):
    """Raised when a program that is feasible by construction fails to solve."""

    def __init__(self, message: str, status: str = "error", residuals: Mapping[str, float] | None = None):
        self.status = status
        self.residuals = dict(residuals or {})
        super().__init__(message + (f" residuals={self.residuals}" if self.residuals else ""))


class ExtractionError(RuntimeError):
    pass


@dataclass
class LpProblem:
    """``min c.x`` s.t. ``A_eq x = b_eq``, ``A_ub x <= b_ub``, ``x >= 0``."""

    c: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    names: Sequence[str] = ()
    eq_names: Sequence[str] = ()
    ub_names: Sequence[str] = ()

    def __post_init__(self) -> None:
        self.c = np.asarray(self.c, dtype=float)
        n = self.c.shape[0]
        self.A_eq = np.asarray(self.A_eq, dtype=float).reshape(-1, n)
        self.b_eq = np.asarray(self.b_eq, dtype=float).reshape(-1)
        if self.A_ub is not None:
            self.A_ub = np.asarray(self.A_ub, dtype=float).reshape(-1, n)
            self.b_ub = np.asarray(self.b_ub, dtype=float).reshape(-1)
        if not self.names:
            self.names = [f"x{j}" for j in range(n)]
        if len(self.names) != n:
            raise ValueError("one name per variable required")

    @property
    def num_vars(self) -> int:
        return self.c.shape[0]

    def dump(self) -> str:
        """Plain-text listing: variables, objective, then one row per constraint."""

        def row(coefs: np.ndarray) -> str:
            terms = [f"{v:+.17g} {self.names[j]}" for j, v in enumerate(coefs) if v != 0]
            return " ".join(terms) if terms else "0"

        lines = [f"variables {self.num_vars}"]
        lines += [f"  {j} {name}" for j, name in enumerate(self.names)]
        lines.append(f"minimize {row(self.c)}")
        lines.append("subject to")
        eq_names = list(self.eq_names) or [f"eq{i}" for i in range(len(self.b_eq))]
        for i, b in enumerate(self.b_eq):
            lines.append(f"  {eq_names[i]}: {row(self.A_eq[i])} = {b:.17g}")
        if self.A_ub is not None:
            ub_names = list(self.ub_names) or [f"ub{i}" for i in range(len(self.b_ub))]
            for i, b in enumerate(self.b_ub):
                lines.append(f"  {ub_names[i]}: {row(self.A_ub[i])} <= {b:.17g}")
        lines.append("bounds all >= 0")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class LpResult:
    status: str
    value: float
    x: np.ndarray
    message: str = ""


def solve_lp(p: LpProblem, method: str = "highs") -> LpResult:
    """Solve ``p``; status is one of optimal, infeasible, unbounded, error."""
    if method == "simplex":
        return _tableau_simplex(p)
    res = linprog(
        p.c,
        A_ub=p.A_ub if p.A_ub is not None and len(p.A_ub) else None,
        b_ub=p.b_ub if p.A_ub is not None and len(p.A_ub) else None,
        A_eq=p.A_eq if len(p.A_eq) else None,
        b_eq=p.b_eq if len(p.A_eq) else None,
        bounds=(0, None),
        method="highs-ds",
        options={
            "primal_feasibility_tolerance": 1e-10,
            "dual_feasibility_tolerance": 1e-10,
        },
    )
    status = {0: "optimal", 2: "infeasible", 3: "unbounded"}.get(res.status, "error")
    x = np.asarray(res.x, dtype=float) if res.x is not None else np.full(p.num_vars, np.nan)
    value = float(res.fun) if status == "optimal" else math.nan
    return LpResult(status, value, x, res.message)


def _tableau_simplex(p: LpProblem, tol: float = 1e-10) -> LpResult:
    """Two-phase dense tableau simplex with Bland's rule (small instances only)."""
    n = p.num_vars
    rows = [p.A_eq]
    rhs = [p.b_eq]
    n_slack = 0
    if p.A_ub is not None and len(p.A_ub):
        n_slack = len(p.b_ub)
    m_eq = len(p.b_eq)
    m = m_eq + n_slack
    A = np.zeros((m, n + n_slack))
    b = np.zeros(m)
    A[:m_eq, :n] = p.A_eq
    b[:m_eq] = p.b_eq
    if n_slack:
        A[m_eq:, :n] = p.A_ub
        A[m_eq:, n:] = np.eye(n_slack)
        b[m_eq:] = p.b_ub
    neg = b < 0
    A[neg] *= -1
    b[neg] *= -1
    total = n + n_slack
    # phase 1: artificial basis
    T = np.zeros((m + 1, total + m + 1))
    T[:m, :total] = A
    T[:m, total : total + m] = np.eye(m)
    T[:m, -1] = b
    basis = list(range(total, total + m))
    T[m, :] = 0.0
    T[m, total : total + m] = 1.0
    for i in range(m):
        T[m] -= T[i]
    if not _pivot_loop(T, basis, total + m, tol):
        return LpResult("error", math.nan, np.full(n, np.nan), "phase 1 unbounded")
    if -T[m, -1] > 1e-8:
        return LpResult("infeasible", math.nan, np.full(n, np.nan), "phase 1 objective positive")
    # drive artificial variables out of the basis
    for i, j in enumerate(list(basis)):
        if j >= total:
            cand = np.nonzero(np.abs(T[i, :total]) > tol)[0]
            if len(cand):
                _pivot(T, basis, i, int(cand[0]))
    keep = [i for i, j in enumerate(basis) if j < total]
    T2 = np.zeros((len(keep) + 1, total + 1))
    T2[:-1, :total] = T[keep, :total]
    T2[:-1, -1] = T[keep, -1]
    basis2 = [basis[i] for i in keep]
    cost = np.zeros(total)
    cost[:n] = p.c
    T2[-1, :total] = cost
    for i, j in enumerate(basis2):
        T2[-1] -= cost[j] * T2[i]
    if not _pivot_loop(T2, basis2, total, tol):
        return LpResult("unbounded", -math.inf, np.full(n, np.nan), "phase 2 unbounded")
    x = np.zeros(total)
    for i, j in enumerate(basis2):
        x[j] = T2[i, -1]
    return LpResult("optimal", float(p.c @ x[:n]), x[:n], "")


def _pivot(T: np.ndarray, basis: list[int], r: int, c: int) -> None:
    T[r] /= T[r, c]
    for i in range(T.shape[0]):
        if i != r and T[i, c] != 0.0:
            T[i] -= T[i, c] * T[r]
    basis[r] = c


def _pivot_loop(T: np.ndarray, basis: list[int], ncols: int, tol: float) -> bool:
    m = T.shape[0] - 1
    while True:
        entering = np.nonzero(T[m, :ncols] < -tol)[0]
        if not len(entering):
            return True
        c = int(entering[0])
        col = T[:m, c]
        ok = col > tol
        if not ok.any():
            return False
        ratios = np.full(m, np.inf)
        ratios[ok] = T[:m, -1][ok] / col[ok]
        best = ratios.min()
        ties = np.nonzero(ratios <= best + tol)[0]
        r = int(min(ties, key=lambda i: basis[i]))
        _pivot(T, basis, r, c)


# -- formulations ---------------------------------------------------------------


@dataclass(frozen=True)
class FlowLayout:
    """Index bookkeeping shared by the occupancy programs."""

    model: Mdp
    partition: StatePartition
    rest_states: tuple[str, ...]
    pairs: tuple[StateAction, ...]
    flow: np.ndarray
    alpha: np.ndarray
    reach_reward: np.ndarray

    @classmethod
    def build(cls, mm: Mdp, partition: StatePartition) -> "FlowLayout":
        rest = tuple(s for s in mm.states if s in partition.rest)
        pairs = tuple(p for p in mm.pairs if p[0] in partition.rest)
        ridx = [mm.state_index[s] for s in rest]
        tidx = [mm.state_index[s] for s in mm.states if s in partition.target]
        cols = [mm.pair_index[p] for p in pairs]
        P = mm.pair_matrix[cols] if cols else np.zeros((0, len(mm.states)))
        pos = {s: i for i, s in enumerate(rest)}
        E = np.zeros((len(rest), len(pairs)))
        for j, (s, _) in enumerate(pairs):
            E[pos[s], j] = 1.0
        flow = E - P[:, ridx].T
        alpha = np.array([1.0 if s == mm.initial else 0.0 for s in rest])
        r = P[:, tidx].sum(axis=1) if tidx else np.zeros(len(pairs))
        return cls(mm, partition, rest, pairs, flow, alpha, r)

    def pair_names(self) -> list[str]:
        return [f"lambda[{s},{a}]" for s, a in self.pairs]

    def costs(self, phi: Mapping[StateAction, float]) -> np.ndarray:
        return np.array([phi.get(p, 0.0) for p in self.pairs])


def reach_reward(mm: Mdp, partition: StatePartition) -> dict[StateAction, float]:
    """One-step probability of entering the target from each rest pair; 0 elsewhere."""
    lay = FlowLayout.build(mm, partition)
    out = {p: 0.0 for p in mm.pairs}
    out.update(zip(lay.pairs, lay.reach_reward.tolist()))
    return out


def reach_lp(mm: Mdp, partition: StatePartition) -> LpProblem:
    lay = FlowLayout.build(mm, partition)
    n = len(lay.rest_states)
    # x_s - sum_{s' in Sr} P x_s' >= r(s,a)  for every rest pair
    A = lay.flow.T
    return LpProblem(
        c=np.ones(n),
        A_eq=np.zeros((0, n)),
        b_eq=np.zeros(0),
        A_ub=-A,
        b_ub=-lay.reach_reward,
        names=[f"x[{s}]" for s in lay.rest_states],
        ub_names=[f"bellman[{s},{a}]" for s, a in lay.pairs],
    )


def max_reach_value(mm: Mdp, partition: StatePartition, method: str = "highs") -> dict[str, float]:
    """Maximal probability of reaching the target from every state."""
    out = {s: 0.0 for s in mm.states}
    for s in partition.target:
        out[s] = 1.0
    if not partition.rest:
        return out
    prob = reach_lp(mm, partition)
    res = solve_lp(prob, method)
    if res.status != "optimal":
        raise LpError("maximal reachability LP failed", res.status)
    lay = FlowLayout.build(mm, partition)
    for s, v in zip(lay.rest_states, res.x):
        out[s] = float(min(1.0, max(0.0, v)))
    return out


def _initial_value(mm: Mdp, x_star: float | Mapping[str, float]) -> float:
    if isinstance(x_star, Mapping):
        return float(x_star[mm.initial])
    return float(x_star)


def _phi(coc) -> Mapping[StateAction, float]:
    return getattr(coc, "phi", coc)


def cost_lp(mm: Mdp, partition: StatePartition, coc, x_star: float | Mapping[str, float]) -> LpProblem:
    lay = FlowLayout.build(mm, partition)
    A_eq = np.vstack([lay.reach_reward[None, :], lay.flow])
    b_eq = np.concatenate([[_initial_value(mm, x_star)], lay.alpha])
    return LpProblem(
        c=lay.costs(_phi(coc)),
        A_eq=A_eq,
        b_eq=b_eq,
        names=lay.pair_names(),
        eq_names=["reach"] + [f"flow[{s}]" for s in lay.rest_states],
    )


def time_lp(
    mm: Mdp,
    partition: StatePartition,
    coc,
    x_star: float | Mapping[str, float],
    upsilon_star: float,
) -> LpProblem:
    lay = FlowLayout.build(mm, partition)
    cost = lay.costs(_phi(coc))
    A_eq = np.vstack([lay.reach_reward[None, :], cost[None, :], lay.flow])
    b_eq = np.concatenate([[_initial_value(mm, x_star), upsilon_star], lay.alpha])
    return LpProblem(
        c=np.ones(len(lay.pairs)),
        A_eq=A_eq,
        b_eq=b_eq,
        names=lay.pair_names(),
        eq_names=["reach", "cost"] + [f"flow[{s}]" for s in lay.rest_states],
    )


@dataclass(frozen=True)
class OccupancySolution:
    lam: Mapping[StateAction, float]
    x_star: float
    upsilon_star: float
    total_time: float
    initial: str
    status: str
    residuals: Mapping[str, float] = field(default_factory=dict)
    objective: str = "cost"

    def state_mass(self, s: str) -> float:
        return sum(v for (t, _), v in self.lam.items() if t == s)

    @property
    def zero_mass_states(self) -> frozenset[str]:
        states = {s for s, _ in self.lam}
        return frozenset(s for s in states if self.state_mass(s) <= MASS_TOL)


def _finish(
    mm: Mdp,
    partition: StatePartition,
    prob: LpProblem,
    res: LpResult,
    coc,
    x_star: float,
    objective: str,
) -> OccupancySolution:
    if res.status != "optimal":
        raise LpError(f"{objective} LP did not solve", res.status)
    lay = FlowLayout.build(mm, partition)
    x = res.x.copy()
    if (x < -SUPPORT_TOL).any():
        raise LpError(f"{objective} LP returned negative residence", "numerical", {"min": float(x.min())})
    x = np.clip(x, 0.0, None)
    flow_res = float(np.abs(lay.flow @ x - lay.alpha).max()) if len(x) else 0.0
    reach_res = abs(float(lay.reach_reward @ x) - x_star)
    residuals = {"flow": flow_res, "reach": reach_res}
    if flow_res > FLOW_TOL or reach_res > FLOW_TOL:
        raise LpError(f"{objective} LP solution violates its constraints", "numerical", residuals)
    cost = lay.costs(_phi(coc))
    return OccupancySolution(
        lam=dict(zip(lay.pairs, x.tolist())),
        x_star=x_star,
        upsilon_star=float(cost @ x),
        total_time=float(x.sum()),
        initial=mm.initial,
        status=res.status,
        residuals=residuals,
        objective=objective,
    )


def solve_cost_lp(
    mm: Mdp,
    partition: StatePartition,
    coc,
    x_star: float | Mapping[str, float],
    method: str = "highs",
) -> OccupancySolution:
    """Minimum expected payment among maximal-reachability occupancy measures."""
    xs = _initial_value(mm, x_star)
    prob = cost_lp(mm, partition, coc, xs)
    return _finish(mm, partition, prob, solve_lp(prob, method), coc, xs, "cost")


def solve_time_lp(
    mm: Mdp,
    partition: StatePartition,
    coc,
    x_star: float | Mapping[str, float],
    upsilon_star: float,
    method: str = "highs",
) -> OccupancySolution:
    """Minimum total residence among occupancy measures that are optimal for the cost LP."""
    xs = _initial_value(mm, x_star)
    prob = time_lp(mm, partition, coc, xs, upsilon_star)
    sol = _finish(mm, partition, prob, solve_lp(prob, method), coc, xs, "time")
    if abs(sol.upsilon_star - upsilon_star) > FLOW_TOL * max(1.0, abs(upsilon_star)):
        raise LpError("time LP drifted off the optimal cost", "numerical", {"cost": sol.upsilon_star - upsilon_star})
    return sol


def extract_randomized(mm: Mdp, partition: StatePartition, sol: OccupancySolution) -> Policy:
    """Stationary policy proportional to residence; zero-mass and frozen states take their first action."""
    probs = {}
    for s in mm.states:
        acts = mm.enabled[s]
        if s in partition.rest:
            mass = sol.state_mass(s)
            if mass > MASS_TOL:
                probs[s] = {a: sol.lam.get((s, a), 0.0) / mass for a in acts}
                continue
        probs[s] = {acts[0]: 1.0}
    return Policy.stationary_of(DecisionRule(probs))


def extract_deterministic(
    mm: Mdp,
    partition: StatePartition,
    coc,
    sol: OccupancySolution,
    tol: float = VERIFY_TOL,
) -> Policy:
    """Deterministic policy from a time-LP solution, verified by exact evaluation.

    Each rest state takes its lowest-indexed action with residence above
    ``SUPPORT_TOL`` (its first enabled action if none); the result must
    attain both the reachability and cost optima or ``ExtractionError`` is
    raised.
    """
    choice = {}
    for s in mm.states:
        acts = mm.enabled[s]
        pick = acts[0]
        if s in partition.rest:
            for a in acts:
                if sol.lam.get((s, a), 0.0) > SUPPORT_TOL:
                    pick = a
                    break
        choice[s] = pick
    pi = Policy.stationary_of(DecisionRule.deterministic(choice))
    reach = reach_probability(mm, pi, mm.initial, partition.target)
    if abs(reach - sol.x_star) > tol:
        raise ExtractionError(f"extracted policy reaches with {reach}, optimum is {sol.x_star}")
    res = expected_residence(mm, pi, partition.frozen)
    if not res.finite:
        raise ExtractionError(f"extracted policy has infinite residence at {sorted(res.infinite)[:3]}")
    cost = policy_cost(mm, pi, _phi(coc), partition.frozen)
    if abs(cost - sol.upsilon_star) > tol * max(1.0, abs(sol.upsilon_star)):
        raise ExtractionError(f"extracted policy costs {cost}, optimum is {sol.upsilon_star}")
    return pi


def dump_problems(problems: Mapping[str, LpProblem], directory: str | Path) -> list[Path]:
    out = []
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, prob in problems.items():
        path = directory / f"{name}.lp.txt"
        path.write_text(prob.dump(), encoding="utf-8")
        out.append(path)
    return out
