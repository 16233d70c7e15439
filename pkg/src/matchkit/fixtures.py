"""Small worked economies used as regression fixtures."""

from __future__ import annotations

from fractions import Fraction

from .core import Economy

S3 = ("1", "2", "3")


def _strict(*orders):
    return tuple((i,) for i in orders)


def ia_economy() -> Economy:
    return Economy(
        students=("1", "2", "3", "4"),
        schools=("a", "b", "c"),
        capacity={"a": 2, "b": 1, "c": 1},
        prefs={"1": "ab", "2": "ab", "3": "ba", "4": "bac"},
        priorities={
            "a": _strict("4", "1", "2", "3"),
            "b": _strict("3", "4", "1", "2"),
            "c": _strict("1", "2", "3", "4"),
        },
    )


def da_ttc_economy() -> Economy:
    return Economy(
        students=S3,
        schools=("a", "b", "c"),
        capacity={"a": 1, "b": 1, "c": 1},
        prefs={"1": "bac", "2": "abc", "3": "abc"},
        priorities={
            "a": _strict("1", "3", "2"),
            "b": _strict("2", "1", "3"),
            "c": _strict("1", "2", "3"),
        },
    )


def da_ttc_weak_economy() -> Economy:
    """Same as ``da_ttc_economy`` except school a cannot tell 2 from 3."""
    e = da_ttc_economy()
    prio = dict(e.priorities)
    prio["a"] = (("1",), ("2", "3"))
    return e.replace(priorities=prio)


def ttc_short_cycles_economy() -> Economy:
    e = da_ttc_economy()
    return e.replace(prefs={"1": "abc", "2": "bac", "3": "abc"})


def quota_economy(quota=False, reserve=False) -> Economy:
    kw = {}
    if quota:
        kw["quotas"] = {("a", "M"): 1}
    if reserve:
        kw["reserves"] = {("a", "m"): 1}
    return Economy(
        students=S3,
        schools=("a", "b"),
        capacity={"a": 2, "b": 1},
        prefs={"1": "a", "2": "ab", "3": "ba"},
        priorities={"a": _strict("1", "3", "2"), "b": _strict("2", "1", "3")},
        types={"1": "M", "2": "M", "3": "m"},
        **kw,
    )


def reserve_economy(reserve=False) -> Economy:
    kw = {"reserves": {("a", "m"): 1}} if reserve else {}
    return Economy(
        students=S3,
        schools=("a", "b", "c"),
        capacity={"a": 1, "b": 1, "c": 1},
        prefs={"1": "acb", "2": "cab", "3": "abc"},
        priorities={s: _strict("1", "2", "3") for s in "abc"},
        types={"1": "M", "2": "m", "3": "m"},
        **kw,
    )


def no_priority_economy() -> Economy:
    """The DA-versus-TTC preferences with every school indifferent."""
    e = da_ttc_economy()
    return e.replace(priorities={s: (S3,) for s in "abc"})


def cardinal_economy() -> Economy:
    """Identical ordinal preferences a > b > c, no priorities, and one
    student with a relatively stronger taste for b."""
    u = {"a": (4, 4, 3), "b": (1, 1, 2), "c": (0, 0, 0)}
    vnm = {(i, s): Fraction(u[s][k]) for k, i in enumerate(S3) for s in "abc"}
    return Economy(
        students=S3,
        schools=("a", "b", "c"),
        capacity={"a": 1, "b": 1, "c": 1},
        prefs={i: "abc" for i in S3},
        priorities={s: (S3,) for s in "abc"},
        vnm=vnm,
    )


CARDINAL_IA_REPORTS = {"1": ("a", "b", "c"), "2": ("a", "b", "c"), "3": ("b", "a", "c")}
CARDINAL_CADA_TARGETS = {"1": "a", "2": "a", "3": "b"}

# four lottery scenarios for one student: (feasible set, assignment)
TEPS_SCENARIOS = [
    ({"d", "e"}, "e"),
    ({"a", "b"}, "b"),
    ({"a", "b", "c"}, "c"),
    ({"b", "e"}, "e"),
]
TEPS_CLOSURE = {("b", "a"), ("c", "b"), ("c", "a"), ("e", "b"), ("e", "d"), ("e", "a")}

FEASIBLE_CUTOFFS = {"a": 0.0, "b": 0.4, "c": 0.6, "d": 0.8}
FEASIBLE_SCORES = {"a": 0.5, "b": 0.2, "c": 0.8, "d": 0.7}
