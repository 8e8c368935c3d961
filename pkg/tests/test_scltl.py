import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from incentive_design.scltl import (
    CoSafetyError,
    Dfa,
    DfaFormatError,
    Eventually,
    ScltlSyntaxError,
    UnknownAtomError,
    all_words,
    atoms,
    holds,
    letters,
    parse_scltl,
    random_formula,
    to_dfa,
)

fs = frozenset


def word(*labels):
    return tuple(fs(x.split()) if x else fs() for x in labels)


# -- parsing ---------------------------------------------------------------------


@pytest.mark.parametrize(
    "text",
    ["F goal", "F (B & F C)", "F (A & F (B & F C))", "!A U B", "(A | B) U (C & F A)", "true U A", "A"],
)
def test_parse_accepts(text):
    f = parse_scltl(text)
    assert parse_scltl(str(f)) == f


def test_parse_structure():
    f = parse_scltl("F (B & F C)")
    assert isinstance(f, Eventually)
    assert atoms(f) == {"B", "C"}


def test_syntax_error_offset():
    with pytest.raises(ScltlSyntaxError) as e:
        parse_scltl("F (B & ")
    assert e.value.offset == 7
    with pytest.raises(ScltlSyntaxError):
        parse_scltl("A B")
    with pytest.raises(ScltlSyntaxError):
        parse_scltl("A $ B")


@pytest.mark.parametrize("text,offset", [("!F A", 0), ("A & !(B U C)", 4), ("!(F A)", 0)])
def test_negated_temporal_rejected(text, offset):
    with pytest.raises(CoSafetyError) as e:
        parse_scltl(text)
    assert e.value.offset == offset


def test_negated_literal_allowed():
    assert holds(parse_scltl("F !A"), word("A", ""))


def test_unknown_atom():
    with pytest.raises(UnknownAtomError):
        to_dfa(parse_scltl("F D"), {"A", "B", "C"})


# -- DFA construction --------------------------------------------------------------


@pytest.mark.parametrize(
    "text,ap,size",
    [("F goal", {"goal"}, 2), ("F (B & F C)", {"A", "B", "C"}, 3), ("F (A & F (B & F C))", {"A", "B", "C"}, 4)],
)
def test_dfa_sizes(text, ap, size):
    d = to_dfa(parse_scltl(text), ap)
    assert len(d.states) == size
    assert len(d.accepting) == 1


def test_sequence_runs():
    d = to_dfa(parse_scltl("F (B & F C)"), {"A", "B", "C"})
    assert d.run(word("A", "B", "A", "C"))[1]
    assert not d.run(word("A", "C", "A"))[1]
    assert d.run(word("B C"))[1]
    assert not d.run(())[1]


def test_dfa_total_over_alphabet():
    d = to_dfa(parse_scltl("F (A & F (B & F C))"), {"A", "B", "C"})
    for q in d.states:
        for letter in letters(d.props):
            assert d.step(q, letter) in d.states


def test_accepting_states_absorbing():
    rng = np.random.default_rng(3)
    for _ in range(100):
        d = to_dfa(random_formula(rng, ["a", "b", "c"], 2), {"a", "b", "c"})
        for q in d.accepting:
            assert all(d.step(q, letter) == q for letter in letters(d.props))


def test_totality_random_formulas():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        f = random_formula(rng, ["a", "b"], 2)
        d = to_dfa(f, {"a", "b"})
        for q in d.states:
            for letter in letters(d.props):
                assert d.delta[(q, letter)] in d.states


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_dfa_matches_semantics(seed):
    rng = np.random.default_rng(seed)
    props = ["a", "b"]
    f = random_formula(rng, props, 2)
    d = to_dfa(f, props)
    for w in all_words(props, 5):
        assert d.run(w)[1] == holds(f, w), (str(f), w)


def test_document_round_trip():
    d = to_dfa(parse_scltl("F (A & F (B & F C))"), {"A", "B", "C"})
    back = Dfa.from_document(d.to_document())
    assert back.states == d.states and back.initial == d.initial and back.accepting == d.accepting
    for q in d.states:
        for letter in letters(d.props):
            assert back.step(q, letter) == d.step(q, letter)


def test_document_rejects_nondeterminism():
    doc = {
        "states": ["q0", "q1"],
        "initial": "q0",
        "accepting": ["q1"],
        "transitions": [
            {"from": "q0", "guard": "A", "to": "q1"},
            {"from": "q0", "guard": "true", "to": "q0"},
            {"from": "q1", "guard": "true", "to": "q1"},
        ],
    }
    with pytest.raises(DfaFormatError, match="not deterministic"):
        Dfa.from_document(doc)
    doc["transitions"][1]["guard"] = "B"
    with pytest.raises(DfaFormatError, match="not total"):
        Dfa.from_document(doc)
    doc["transitions"][1]["guard"] = "!A"
    assert Dfa.from_document(doc).run(word("", "A"))[1]
