"""Named fixture models.

``example1`` and ``example2`` are the small counterexample MDPs; ``grid-a``
and ``grid-b`` are 5x5 grid worlds with deterministic moves (bumping into
the boundary leaves the agent in place). Grid cells are ``r<row>c<col>``
with row 0 at the bottom.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mdp import Mdp

GRID_SIZE = 5
MOVES = {"left": (0, -1), "right": (0, 1), "up": (1, 0), "down": (-1, 0)}
GRID_B_LAYOUTS = {
    "default": {"A": (2, 1), "B": (1, 3), "C": (4, 4)},
    "alternate": {"A": (2, 2), "B": (1, 3), "C": (4, 4)},
}


@dataclass(frozen=True)
class Fixture:
    name: str
    model: Mdp
    horizon: int
    spec: str
    metadata: dict = field(default_factory=dict)


def example1() -> Fixture:
    """Three states where naive deterministic extraction from the cost LP can fail.

    With ``N = 1`` and ``R(s1, a1) = 1`` the agent's value gap makes the
    cost of control 1 on ``(s1, a2)`` and 0 elsewhere.
    """
    m = Mdp(
        states=("s0", "s1", "s2"),
        initial="s0",
        actions=("a1", "a2"),
        enabled={"s0": ("a1",), "s1": ("a1", "a2"), "s2": ("a1",)},
        transitions={
            ("s0", "a1"): {"s1": 1.0},
            ("s1", "a1"): {"s0": 1.0},
            ("s1", "a2"): {"s2": 1.0},
            ("s2", "a1"): {"s2": 1.0},
        },
        atomic_props=frozenset({"goal"}),
        labels={"s2": frozenset({"goal"})},
        rewards={("s1", "a1"): 1.0},
    )
    return Fixture("example1", m, 1, "F goal")


def example2() -> Fixture:
    """Four states where the objective cannot be hidden from the agent (``N = 3``)."""
    m = Mdp(
        states=("s0", "s1", "s2", "s3"),
        initial="s0",
        actions=("a1", "a2"),
        enabled={"s0": ("a1", "a2"), "s1": ("a1",), "s2": ("a1",), "s3": ("a1",)},
        transitions={
            ("s0", "a1"): {"s0": 0.2, "s1": 0.4, "s2": 0.4},
            ("s0", "a2"): {"s3": 1.0},
            ("s1", "a1"): {"s1": 1.0},
            ("s2", "a1"): {"s0": 1.0},
            ("s3", "a1"): {"s3": 1.0},
        },
        atomic_props=frozenset({"A", "B", "C"}),
        labels={
            "s0": frozenset({"A"}),
            "s1": frozenset({"A"}),
            "s2": frozenset({"B"}),
            "s3": frozenset({"C"}),
        },
        rewards={("s0", "a1"): 1.0},
    )
    return Fixture("example2", m, 3, "F (B & F C)")


def cell(row: int, col: int) -> str:
    return f"r{row}c{col}"


def _grid(rewards, labels: dict[str, frozenset[str]], props: frozenset[str]) -> Mdp:
    states = tuple(cell(r, c) for r in range(GRID_SIZE) for c in range(GRID_SIZE))
    enabled = {s: tuple(MOVES) for s in states}
    transitions = {}
    rew = {}
    for r in range(GRID_SIZE):
        for c in range(GRID_SIZE):
            for a, (dr, dc) in MOVES.items():
                r2, c2 = r + dr, c + dc
                if not (0 <= r2 < GRID_SIZE and 0 <= c2 < GRID_SIZE):
                    r2, c2 = r, c
                transitions[(cell(r, c), a)] = {cell(r2, c2): 1.0}
                v = rewards(r, c, a, r2, c2)
                if v:
                    rew[(cell(r, c), a)] = float(v)
    return Mdp(states, cell(0, 0), tuple(MOVES), enabled, transitions, props, labels, rew)


def grid_a(seed: int = 0) -> Fixture:
    """Greedy agent (``N = 1``) with rewards drawn uniformly from ``{0..9}`` per pair."""
    rng = np.random.default_rng(seed)
    table = rng.integers(0, 10, size=(GRID_SIZE, GRID_SIZE, len(MOVES)))
    index = {a: i for i, a in enumerate(MOVES)}
    m = _grid(
        lambda r, c, a, r2, c2: int(table[r, c, index[a]]),
        {cell(4, 4): frozenset({"T"})},
        frozenset({"T"}),
    )
    return Fixture("grid-a", m, 1, "F T", {"grid": [GRID_SIZE, GRID_SIZE], "seed": seed, "labels": {"T": [4, 4]}})


def grid_b(layout: str = "default") -> Fixture:
    """Four-stage planner rewarded for entering the top corners; visit A, then B, then C."""
    if layout not in GRID_B_LAYOUTS:
        raise ValueError(f"unknown grid-b layout {layout!r}; choose from {sorted(GRID_B_LAYOUTS)}")
    cells = GRID_B_LAYOUTS[layout]
    corner = {(4, 0): 2, (4, GRID_SIZE - 1): 5}
    labels: dict[str, set[str]] = {}
    for p, (r, c) in cells.items():
        labels.setdefault(cell(r, c), set()).add(p)
    m = _grid(
        lambda r, c, a, r2, c2: corner.get((r2, c2), 0),
        {s: frozenset(v) for s, v in labels.items()},
        frozenset(cells),
    )
    meta = {
        "grid": [GRID_SIZE, GRID_SIZE],
        "layout": layout,
        "labels": {p: list(rc) for p, rc in cells.items()},
    }
    return Fixture("grid-b", m, 4, "F (A & F (B & F C))", meta)


FIXTURES = {
    "example1": lambda **kw: example1(),
    "example2": lambda **kw: example2(),
    "grid-a": lambda seed=0, **kw: grid_a(seed),
    "grid-b": lambda layout="default", **kw: grid_b(layout),
}


def make_fixture(name: str, seed: int = 0, layout: str = "default") -> Fixture:
    if name not in FIXTURES:
        raise ValueError(f"unknown fixture {name!r}; choose from {sorted(FIXTURES)}")
    return FIXTURES[name](seed=seed, layout=layout)
