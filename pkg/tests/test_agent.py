import numpy as np
import pytest

from conftest import fixture_dfa
from incentive_design.agent import AgentConfig, plan_block, replanning_trace, run_episodes, summarize
from incentive_design.incentives import zero_schedule


def test_config_validation():
    with pytest.raises(ValueError):
        AgentConfig(0)
    with pytest.raises(ValueError):
        AgentConfig(1, "greedy")


def test_plan_block_prefers_reward(ex1):
    m = ex1.model
    pi = plan_block(m, np.zeros((1, len(m.pairs))), AgentConfig(1, "first-index"))
    assert pi.rule_at(1).action("s1") == "a1"


def test_plan_block_follows_payment(ex1):
    m = ex1.model
    pay = np.zeros((1, len(m.pairs)))
    pay[0, m.pair_index[("s1", "a2")]] = 1.5
    assert plan_block(m, pay, AgentConfig(1)).rule_at(1).action("s1") == "a2"


def test_tie_policies(ex1):
    m = ex1.model
    pay = np.zeros((1, len(m.pairs)))
    pay[0, m.pair_index[("s1", "a2")]] = 1.0
    first = plan_block(m, pay, AgentConfig(1, "first-index")).rule_at(1)
    adv = plan_block(m, pay, AgentConfig(1, "adversarial")).rule_at(1)
    rnd = plan_block(m, pay, AgentConfig(1, "uniform-random")).rule_at(1)
    assert first.action("s1") == "a1"
    assert adv.action("s1") == "a1"
    assert rnd.prob("s1", "a1") == rnd.prob("s1", "a2") == 0.5


def test_plan_block_rejects_bad_payments(ex1):
    m = ex1.model
    with pytest.raises(ValueError):
        plan_block(m, np.zeros((2, len(m.pairs))), AgentConfig(1))
    with pytest.raises(ValueError):
        plan_block(m, -np.ones((1, len(m.pairs))), AgentConfig(1))


def test_without_incentives_agent_loops(ex1):
    sched = zero_schedule(1)
    recs, summary = run_episodes(ex1.model, sched, fixture_dfa(ex1), episodes=5, max_blocks=20)
    assert summary.satisfied_fraction == 0.0
    assert summary.capped == 5
    assert summary.mean_paid == 0.0


def test_example1_design_exact(ex1, synth):
    r = synth(ex1)
    recs, summary = run_episodes(ex1.model, r.design, r.dfa, episodes=50)
    assert summary.satisfied_fraction == 1.0
    assert summary.mean_paid == pytest.approx(r.upsilon_star, abs=1e-12)
    assert recs[0].actions == ["a1", "a2"]
    assert recs[0].absorbed_at == 3


def test_online_provider_path(ex1, synth):
    r = synth(ex1)
    a, sa = run_episodes(ex1.model, r.product_schedule, r.dfa, episodes=20)
    b, sb = run_episodes(ex1.model, r.design, r.dfa, episodes=20)
    assert [x.to_document() for x in a] == [x.to_document() for x in b]
    assert sa == sb


def test_shared_memory_agent(ex2, synth):
    r = synth(ex2)
    _, s = run_episodes(ex2.model, r.product_schedule, r.dfa, episodes=4000, cfg=AgentConfig(3, "adversarial", 1))
    assert abs(s.satisfied_fraction - r.x_star) <= 3 * s.stderr + 1e-12
    assert abs(s.mean_paid - r.upsilon_star) <= 4 * s.paid_stderr


def test_episodes_reproducible(ex2, synth):
    r = synth(ex2)
    cfg = AgentConfig(3, "uniform-random", 7)
    a, _ = run_episodes(ex2.model, r.product_schedule, r.dfa, episodes=30, cfg=cfg)
    b, _ = run_episodes(ex2.model, r.product_schedule, r.dfa, episodes=30, cfg=cfg)
    assert [x.to_document() for x in a] == [x.to_document() for x in b]


def test_horizon_mismatch(ex2, synth):
    r = synth(ex2)
    with pytest.raises(ValueError):
        run_episodes(ex2.model, r.product_schedule, r.dfa, episodes=1, cfg=AgentConfig(2))


def test_replanning_trace(gridb, synth):
    r = synth(gridb)
    rec = replanning_trace(gridb.model, r.design, r.dfa)
    assert rec.satisfied
    assert rec.total_paid == pytest.approx(r.upsilon_star, abs=1e-9)
    assert len(rec.states) == len(rec.actions) + 1


def test_summarize_empty():
    assert summarize([]).episodes == 0
