"""Feasible sets and preference inference from stability across lottery
draws (transitive extension)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import networkx as nx
import numpy as np

from .. import mechanisms
from ..core import STB, UNASSIGNED, Economy, draw_lottery
from ..simulate import eligibility, market_cutoffs


def feasible_set(scores: Mapping[str, float], cutoffs) -> set:
    """Schools whose cutoff the student's score clears."""
    cut = getattr(cutoffs, "cutoff", cutoffs)
    missing = [s for s in cut if s not in scores]
    if missing:
        raise KeyError(f"missing score for schools {missing}")
    return {s for s, p in cut.items() if scores[s] >= p}


@dataclass(frozen=True)
class PartialOrder:
    """Pairs (s, s2) meaning s is preferred to s2."""

    pairs: frozenset = field(default_factory=frozenset)
    consistent: bool = True
    cycles: tuple = ()

    def __contains__(self, pair):
        return pair in self.pairs

    def __len__(self):
        return len(self.pairs)


def transitive_closure(pairs: Iterable) -> PartialOrder:
    """Smallest transitive superset; cycles are flagged, not raised."""
    G = nx.DiGraph()
    G.add_edges_from(pairs)
    cycles = tuple(tuple(c) for c in nx.simple_cycles(G))
    closed = nx.transitive_closure(G, reflexive=None)
    return PartialOrder(frozenset(closed.edges()), not cycles, cycles)


def relations_from_scenarios(scenarios: Iterable) -> set:
    """Assigned school beats every other school in the same feasible set."""
    out = set()
    for feas, got in scenarios:
        if got is UNASSIGNED or got is None:
            continue
        out.update((got, s) for s in feas if s != got)
    return out


def teps_from_scenarios(scenarios: Iterable) -> PartialOrder:
    return transitive_closure(relations_from_scenarios(scenarios))


def teps_infer(
    reports: Mapping[str, Sequence[str]],
    e: Economy,
    B: int = 1000,
    seed: int = 0,
    tie_break: str = STB,
    return_scenarios: bool = False,
):
    """Preference relations implied by stability across ``B`` lottery draws.

    Each draw breaks ties, runs DA on the reports and records, per student,
    the feasible set and the assignment. A scenario seen in at least one draw
    contributes its relations. Students whose relations are cyclic come back
    with ``consistent=False``.
    """
    if B < 1:
        raise ValueError("B must be >= 1")
    rep = e.replace(prefs={i: tuple(reports[i]) for i in e.students})
    rng = np.random.default_rng(seed)
    seen = {i: set() for i in e.students}
    for _ in range(B):
        lot = draw_lottery(rep, tie_break, rng=rng)
        mu = mechanisms.deferred_acceptance(mechanisms.break_ties(rep, lot))
        cut = market_cutoffs(rep, mu, lot, "da")
        for i in e.students:
            feas = frozenset(
                s for s in e.schools if eligibility(rep, "da", i, s, lot.value(i, s)) >= cut[s]
            )
            seen[i].add((feas, mu[i]))
    out = {i: teps_from_scenarios(seen[i]) for i in e.students}
    if return_scenarios:
        return out, seen
    return out
