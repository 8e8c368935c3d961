"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line.

The lines are collected in ``RESULTS`` and printed in the terminal summary
(see ``conftest.py``), so they appear without ``-s``.
"""

import math
import time

import numpy as np
import pytest

from conftest import fixture_dfa
from incentive_design.agent import AgentConfig, run_episodes
from incentive_design.fixtures import example1, example2, grid_a, grid_b
from incentive_design.lifting import Origin
from incentive_design.lp import cost_lp, solve_cost_lp, solve_time_lp
from incentive_design.mdp import expected_residence, policy_cost, reach_probability
from incentive_design.oracle import enumerate_policies, evaluate
from incentive_design.pipeline import synthesize
from incentive_design.scltl import parse_scltl, to_dfa
from randmodels import random_mdp, random_rule

RESULTS: list[str] = []


class Gate:
    """Times a criterion and records its outcome line."""

    def __init__(self, number: int, title: str, budget: float | None = None):
        self.number, self.title, self.budget = number, title, budget
        self.notes: list[str] = []

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, kind, exc, tb):
        elapsed = time.perf_counter() - self.start
        over = self.budget is not None and elapsed >= self.budget
        ok = kind is None and not over
        detail = "; ".join(self.notes)
        if kind is not None:
            detail = f"{kind.__name__}: {exc}".splitlines()[0]
        elif over:
            detail = f"runtime {elapsed:.2f}s exceeds {self.budget}s"
        limit = f" < {self.budget}s" if self.budget else ""
        RESULTS.append(
            f"{'PASS' if ok else 'FAIL'} [{self.number}] {self.title} ({elapsed:.2f}s{limit}) {detail}".rstrip()
        )
        if over and kind is None:
            raise AssertionError(detail)
        return False


def label(fx):
    layout = fx.metadata.get("layout")
    return f"{fx.name}/{layout}" if layout else fx.name


def fresh(fx, **kw):
    return synthesize(fx.model, fx.horizon, fixture_dfa(fx), **kw)


def test_criterion_1_example1():
    with Gate(1, "example 1 cost and time programs", 1.0) as g:
        fx = example1()
        r = fresh(fx)
        sol8 = solve_cost_lp(r.modified, r.partition, r.coc0, r.x_star)
        assert abs(sol8.upsilon_star - 1.0) <= 1e-8
        sol9 = solve_time_lp(r.modified, r.partition, r.coc0, r.x_star, sol8.upsilon_star)
        assert abs(sol9.total_time - 2.0) <= 1e-8
        q = r.dfa.initial
        choice = r.lifted_choice()
        assert choice == {Origin("s0", 1, q): "a1", Origin("s1", 1, q): "a2"}
        reach = reach_probability(r.modified, r.policy, r.modified.initial, r.partition.target)
        assert abs(reach - 1.0) <= 1e-9
        # the listed occupancy is feasible for the cost program with objective 1
        p = cost_lp(r.modified, r.partition, r.coc0, r.x_star)
        listed = {("s0", "a1"): 2.0, ("s1", "a1"): 1.0, ("s1", "a2"): 1.0}
        x = np.zeros(p.num_vars)
        for j, name in enumerate(p.names):
            pid, a = name[len("lambda[") : -1].rsplit(",", 1)
            x[j] = listed[(r.product.origin[pid].state, a)]
        assert np.abs(p.A_eq @ x - p.b_eq).max() <= 1e-12
        assert abs(p.c @ x - 1.0) <= 1e-12
        g.notes.append(f"upsilon*={sol8.upsilon_star:.12g} residence={sol9.total_time:.12g}")


def test_criterion_2_example2():
    with Gate(2, "example 2 reachability and share verdict", 5.0) as g:
        r = fresh(example2())
        assert abs(r.x_star - 0.5) <= 1e-8
        assert r.verdict == "SHARE_REQUIRED"
        s, t = r.share.witness
        assert len(r.share.occupancy.m_sets[(s, t)]) >= 2
        g.notes.append(f"x*={r.x_star:.12g} witness=({s}, t={t}) memories={sorted(r.share.memories)}")


def test_criterion_3_grid_b():
    with Gate(3, "grid-b affine payment and satisfaction", 30.0) as g:
        fx = grid_b("default")
        eps = [1e-3, 1e-2]
        costs = [fresh(fx, epsilon=e).cost for e in eps]
        c1 = (costs[1] - costs[0]) / (eps[1] - eps[0])
        c0 = costs[0] - c1 * eps[0]
        # residual of the affine form at an interior margin
        mid = fresh(fx, epsilon=5e-3).cost
        resid = abs(mid - (c0 + c1 * 5e-3))
        assert resid < 1e-9, resid
        assert abs(c0 - 2.0) < 1e-9 and abs(c1 - 13.0) < 1e-9, (c0, c1)
        r = fresh(fx)
        _, s = run_episodes(fx.model, r.design, r.dfa, 1000, cfg=AgentConfig(fx.horizon, "adversarial", 0))
        assert s.satisfied_fraction == 1.0
        g.notes.append(f"payment = {c0:.12g} + {c1:.12g} eps (residual {resid:.1e}); satisfied={s.satisfied_fraction}")


def test_criterion_4_grid_a():
    with Gate(4, "grid-a satisfaction, exact payment, online provider") as g:
        fx = grid_a(0)
        r = fresh(fx)
        assert r.verdict == "HIDE"
        cfg = AgentConfig(1, "adversarial", 0)
        recs, s = run_episodes(fx.model, r.design, r.dfa, 200, cfg=cfg)
        assert s.satisfied_fraction == 1.0
        assert abs(s.mean_paid - r.upsilon_star) <= 1e-9 * max(1.0, r.upsilon_star)
        online, so = run_episodes(fx.model, r.product_schedule, r.dfa, 200, cfg=cfg)
        assert [x.to_document() for x in online] == [x.to_document() for x in recs]
        assert so == s
        g.notes.append(f"satisfied=1.0 paid={s.mean_paid:.12g} lp={r.upsilon_star:.12g}")


def test_criterion_5_oracle_equivalence():
    with Gate(5, "LP matches brute-force optimum on 100 random instances", 60.0) as g:
        checked = trivial = 0
        worst = 0.0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            m = random_mdp(rng, max_states=6, max_actions=3)
            r = synthesize(m, 1, to_dfa(parse_scltl("F goal"), m.atomic_props))
            if r.verdict == "TRIVIAL":
                trivial += 1
                continue
            o = enumerate_policies(r.modified, r.partition, r.coc)
            d_reach = abs(r.x_star - o.best_reach)
            d_cost = abs(r.upsilon_star - o.best_cost_at_max_reach)
            assert d_reach <= 1e-6 and d_cost <= 1e-6, (seed, d_reach, d_cost)
            choice = {x: r.policy.rule.action(x) for x in r.partition.rest}
            v = evaluate(r.modified, r.partition, r.coc.phi, choice)
            assert abs(v.reach - o.best_reach) <= 1e-7, seed
            assert abs(v.cost - o.best_cost_at_max_reach) <= 1e-7, seed
            worst = max(worst, d_reach, d_cost)
            checked += 1
        g.notes.append(f"{checked} checked, {trivial} trivial, worst delta {worst:.1e}")


def test_criterion_6_margin_bound():
    with Gate(6, "margin bound and cost affinity on every fixture") as g:
        for fx in (example1(), example2(), grid_a(0), grid_b("default"), grid_b("alternate")):
            r = fresh(fx, epsilon_bar=0.1)
            assert r.epsilon == pytest.approx(0.1 / r.total_residence, rel=1e-12)
            assert r.cost <= r.f0 + 0.1 + 1e-8, fx.name
            for pi in (r.policy, r.reference_policy):
                f_eps = policy_cost(r.modified, pi, r.coc.phi, r.partition.frozen)
                f_0 = policy_cost(r.modified, pi, r.coc0.phi, r.partition.frozen)
                xi = expected_residence(r.modified, pi, r.partition.frozen).total(r.partition.rest)
                expect = f_0 + r.epsilon * xi
                assert abs(f_eps - expect) <= 1e-8 * max(1.0, abs(expect)), fx.name
            g.notes.append(f"{label(fx)}: {r.cost:.6g} <= {r.f0:.6g}+0.1")


def test_criterion_7_residence_identity():
    with Gate(7, "residence equals reach-based closed form on 200 pairs") as g:
        pairs = 0
        seed = 0
        worst = 0.0
        while pairs < 200:
            rng = np.random.default_rng(10_000 + seed)
            seed += 1
            m = random_mdp(rng, absorbing=int(rng.integers(1, 3)))
            d = random_rule(rng, m, deterministic=bool(rng.random() < 0.3))
            absorbed = m.absorbing_states()
            res = expected_residence(m, d, absorbed)
            if not res.finite:
                continue
            for s in m.states:
                if s in absorbed:
                    continue
                xi = res.state_total(s)
                ret = sum(d.prob(s, a) * reach_probability(m, d, (s, a), {s}) for a in m.enabled[s])
                closed = reach_probability(m, d, m.initial, {s}) / (1 - ret) if ret < 1 else 0.0
                err = abs(xi - closed)
                assert err <= 1e-8 * max(1.0, abs(closed)), (seed, s, xi, closed)
                worst = max(worst, err)
            pairs += 1
        g.notes.append(f"200 pairs from {seed} draws, worst error {worst:.1e}")


def test_criterion_8_adversarial_ties():
    with Gate(8, "adversarial ties do not change satisfaction") as g:
        cases = [
            (example1(), "design", True),
            (grid_a(0), "design", True),
            (grid_b("default"), "design", True),
            (grid_b("alternate"), "design", True),
            (example2(), "product_schedule", False),
        ]
        for fx, which, deterministic in cases:
            r = fresh(fx)
            sched = getattr(r, which)
            assert sched.epsilon > 0
            n = 300 if deterministic else 4000
            _, adv = run_episodes(fx.model, sched, r.dfa, n, cfg=AgentConfig(fx.horizon, "adversarial", 3))
            _, fst = run_episodes(fx.model, sched, r.dfa, n, cfg=AgentConfig(fx.horizon, "first-index", 3))
            if deterministic:
                assert adv.satisfied_fraction == fst.satisfied_fraction, fx.name
            else:
                se = math.hypot(adv.stderr, fst.stderr)
                assert abs(adv.satisfied_fraction - fst.satisfied_fraction) <= 3 * se, fx.name
            g.notes.append(f"{label(fx)}: {adv.satisfied_fraction:.4f}/{fst.satisfied_fraction:.4f}")
