import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from incentive_design.mdp import (
    ABSORB,
    DecisionRule,
    Mdp,
    Policy,
    expected_residence,
    make_absorbing,
    occupancy_profile,
    partition_states,
    policy_cost,
    reach_probability,
    validate_model,
)
from randmodels import random_mdp, random_rule


def rule(**choice):
    return DecisionRule.deterministic(choice)


def replace(m, **kw):
    d = dict(
        states=m.states,
        initial=m.initial,
        actions=m.actions,
        enabled=m.enabled,
        transitions=m.transitions,
        atomic_props=m.atomic_props,
        labels=m.labels,
        rewards=m.rewards,
    )
    d.update(kw)
    return Mdp(**d)


# -- validation -------------------------------------------------------------------


def test_example1_is_valid(ex1):
    assert validate_model(ex1.model) == []


def test_probability_sum_violation(ex1):
    t = dict(ex1.model.transitions)
    t[("s0", "a1")] = {"s1": 0.9}
    v = validate_model(replace(ex1.model, transitions=t))
    assert [x.rule for x in v] == ["probability-sum"]
    assert (v[0].state, v[0].action) == ("s0", "a1")


def test_unknown_proposition_violation(ex1):
    v = validate_model(replace(ex1.model, labels={"s2": frozenset({"D"})}))
    assert [x.rule for x in v] == ["unknown-proposition"]
    assert v[0].state == "s2"


def test_other_violations(ex1):
    m = ex1.model
    assert [x.rule for x in validate_model(replace(m, initial="zz"))] == ["unknown-initial"]
    r = dict(m.rewards)
    r[("s0", "a2")] = 1.0
    assert [x.rule for x in validate_model(replace(m, rewards=r))] == ["reward-not-enabled"]
    t = dict(m.transitions)
    t[("s2", "a1")] = {"nowhere": 1.0}
    assert "unknown-successor" in [x.rule for x in validate_model(replace(m, transitions=t))]


# -- partition and absorption ------------------------------------------------------


def test_partition_example1(ex1):
    p = partition_states(ex1.model, {"s2"})
    assert p.target == {"s2"} and p.zero == set() and p.rest == {"s0", "s1"}


def test_partition_by_proposition(ex1):
    assert partition_states(ex1.model, "goal") == partition_states(ex1.model, {"s2"})


def test_partition_all_target(ex2):
    p = partition_states(ex2.model, set(ex2.model.states))
    assert p.target == set(ex2.model.states) and not p.zero and not p.rest


def test_partition_example2_target_s3(ex2):
    p = partition_states(ex2.model, {"s3"})
    assert p.target == {"s3"} and p.zero == {"s1"} and p.rest == {"s0", "s2"}


def test_partition_empty_target(ex2):
    p = partition_states(ex2.model, set())
    assert p.zero == set(ex2.model.states) and not p.rest


def test_make_absorbing(ex2):
    m = make_absorbing(ex2.model, {"s1", "s3"})
    for s in ("s1", "s3"):
        assert m.enabled[s] == (ABSORB,)
        assert dict(m.successors(s, ABSORB)) == {s: 1.0}
        assert m.reward(s, ABSORB) == 0.0
    assert m.enabled["s0"] == ex2.model.enabled["s0"]
    assert ex2.model.enabled["s1"] == ("a1",)
    assert validate_model(m) == []


def test_make_absorbing_identity_and_replacement(ex1):
    assert make_absorbing(ex1.model, set()) is ex1.model
    m = make_absorbing(ex1.model, {"s2"})
    assert m.enabled["s2"] == (ABSORB,)


def test_make_absorbing_rejects_unknown(ex1):
    with pytest.raises(ValueError):
        make_absorbing(ex1.model, {"nope"})


# -- occupancy ---------------------------------------------------------------------


def test_occupancy_example1(ex1):
    pi = Policy.stationary_of(rule(s0="a1", s1="a2", s2="a1"))
    prof = occupancy_profile(ex1.model, pi, 3)
    assert prof.at(1, "s0", "a1") == 1.0
    assert prof.at(2, "s1", "a2") == 1.0
    assert prof.at(3, "s2", "a1") == 1.0


def test_occupancy_example2_second_stage(ex2):
    pi = Policy.from_choices(ex2.model, {"s0": "a1"})
    prof = occupancy_profile(ex2.model, pi, 2)
    mass = dict(zip(ex2.model.states, prof.state_mass(2)))
    assert mass["s0"] == pytest.approx(0.2, abs=1e-12)
    assert mass["s1"] == pytest.approx(0.4, abs=1e-12)
    assert mass["s2"] == pytest.approx(0.4, abs=1e-12)


def test_occupancy_rejects_zero_horizon(ex1):
    with pytest.raises(ValueError):
        occupancy_profile(ex1.model, Policy.from_choices(ex1.model, {}), 0)


def test_occupancy_finite_policy(ex2):
    rules = [rule(s0="a1", s1="a1", s2="a1", s3="a1"), rule(s0="a2", s1="a1", s2="a1", s3="a1")]
    prof = occupancy_profile(ex2.model, Policy.finite(rules), 2)
    assert prof.at(2, "s0", "a2") == pytest.approx(0.2)
    with pytest.raises(ValueError):
        occupancy_profile(ex2.model, Policy.finite(rules), 3)


# -- residence, reachability, cost ----------------------------------------------


def test_residence_deterministic(ex1):
    res = expected_residence(ex1.model, rule(s0="a1", s1="a2", s2="a1"), {"s2"})
    assert res[("s0", "a1")] == pytest.approx(1.0)
    assert res[("s1", "a2")] == pytest.approx(1.0)
    assert res[("s1", "a1")] == 0.0


def test_residence_randomized(ex1):
    d = DecisionRule({"s0": {"a1": 1.0}, "s1": {"a1": 0.5, "a2": 0.5}, "s2": {"a1": 1.0}})
    res = expected_residence(ex1.model, d, {"s2"})
    assert res[("s0", "a1")] == pytest.approx(2.0)
    assert res[("s1", "a1")] == pytest.approx(1.0)
    assert res[("s1", "a2")] == pytest.approx(1.0)


def test_residence_infinite_flag(ex1):
    res = expected_residence(ex1.model, rule(s0="a1", s1="a1", s2="a1"), {"s2"})
    assert not res.finite
    assert res[("s0", "a1")] == math.inf
    assert ("s0", "a1") in res.infinite and ("s1", "a1") in res.infinite


def test_reach_examples(ex1, ex2):
    assert reach_probability(ex1.model, rule(s0="a1", s1="a2", s2="a1"), "s0", {"s2"}) == pytest.approx(1.0)
    assert reach_probability(ex1.model, rule(s0="a1", s1="a1", s2="a1"), "s2", {"s2"}) == 1.0
    pi = Policy.from_choices(ex2.model, {"s0": "a1"})
    # from s0 under a1: 0.4 to s1 absorbing, 0.4 via s2 back to s0, 0.2 stay; s1 is hit w.p. 0.4/0.8... per return
    # cycle: probability of eventually hitting s1 = 0.4 / (1 - 0.2 - 0.4) = 1
    assert reach_probability(ex2.model, pi, "s0", {"s1"}) == pytest.approx(1.0)
    # with s2 also counted as a target, s1 first vs s2 first splits evenly
    assert reach_probability(ex2.model, pi, "s0", {"s1"} | {"s2"}) == pytest.approx(1.0)
    absorbed = make_absorbing(ex2.model, {"s2"})
    assert reach_probability(absorbed, Policy.from_choices(absorbed, {"s0": "a1"}), "s0", {"s1"}) == pytest.approx(0.5)


def test_reach_from_pair(ex1):
    d = rule(s0="a1", s1="a1", s2="a1")
    assert reach_probability(ex1.model, d, ("s1", "a2"), {"s2"}) == 1.0
    assert reach_probability(ex1.model, d, ("s1", "a1"), {"s2"}) == 0.0


def test_policy_cost_examples(ex1):
    cost = {("s1", "a2"): 1.0}
    assert policy_cost(ex1.model, rule(s0="a1", s1="a2", s2="a1"), cost, {"s2"}) == pytest.approx(1.0)
    d = DecisionRule({"s0": {"a1": 1.0}, "s1": {"a1": 0.5, "a2": 0.5}, "s2": {"a1": 1.0}})
    assert policy_cost(ex1.model, d, cost, {"s2"}) == pytest.approx(1.0)
    assert policy_cost(ex1.model, d, {}, {"s2"}) == 0.0


def test_policy_cost_infinite(ex1):
    assert policy_cost(ex1.model, rule(s0="a1", s1="a1", s2="a1"), {("s0", "a1"): 1.0}, {"s2"}) == math.inf
    assert policy_cost(ex1.model, rule(s0="a1", s1="a1", s2="a1"), {("s1", "a2"): 1.0}, {"s2"}) == 0.0


# -- properties ------------------------------------------------------------------------

seeds = st.integers(0, 2**32 - 1)


@settings(max_examples=60, deadline=None)
@given(seeds, st.integers(1, 12))
def test_occupancy_conserves_mass(seed, horizon):
    rng = np.random.default_rng(seed)
    m = random_mdp(rng)
    prof = occupancy_profile(m, Policy.stationary_of(random_rule(rng, m)), horizon)
    assert np.allclose(prof.mu.sum(axis=1), 1.0, atol=1e-9)
    d = random_rule(rng, m)
    first = occupancy_profile(m, Policy.stationary_of(d), 1)
    for s, a in m.pairs:
        expect = d.prob(s, a) if s == m.initial else 0.0
        assert first.at(1, s, a) == pytest.approx(expect, abs=1e-15)


@settings(max_examples=80, deadline=None)
@given(seeds)
def test_residence_matches_reach_identity(seed):
    rng = np.random.default_rng(seed)
    m = random_mdp(rng, absorbing=2)
    d = random_rule(rng, m)
    absorbed = m.absorbing_states()
    res = expected_residence(m, d, absorbed)
    for s in m.states:
        xi = res.state_total(s)
        if s in absorbed or math.isinf(xi):
            continue
        ret = sum(d.prob(s, a) * reach_probability(m, d, (s, a), {s}) for a in m.enabled[s])
        closed = reach_probability(m, d, m.initial, {s}) / (1 - ret) if ret < 1 else 0.0
        assert xi == pytest.approx(closed, abs=1e-8, rel=1e-8)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_truncated_occupancy_increases_to_residence(seed):
    rng = np.random.default_rng(seed)
    m = random_mdp(rng, absorbing=1)
    absorbed = set(m.absorbing_states())
    d = random_rule(rng, m)
    res = expected_residence(m, d, absorbed)
    if not res.finite:
        return
    mm = make_absorbing(m, absorbed)
    dd = DecisionRule({s: (d.probs[s] if s not in absorbed else {ABSORB: 1.0}) for s in m.states})
    prof = occupancy_profile(mm, Policy.stationary_of(dd), 5000)
    partial = np.cumsum(prof.mu, axis=0)
    for s, a in m.pairs:
        if s in absorbed:
            continue
        col = partial[:, mm.pair_index[(s, a)]]
        assert (np.diff(col) >= -1e-15).all()
        assert col[-1] <= res[(s, a)] + 1e-9
        assert col[-1] == pytest.approx(res[(s, a)], abs=1e-6)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_absorbing_idempotent_and_partition_stable(seed):
    rng = np.random.default_rng(seed)
    m = random_mdp(rng)
    p = partition_states(m, "goal")
    once = make_absorbing(m, p.frozen)
    twice = make_absorbing(once, p.frozen)
    assert once.to_dict() == twice.to_dict()
    q = partition_states(once, p.target)
    assert q == p
