"""Economy and matching data model shared by every other module.

Student and school ids are opaque strings. All orderings come from explicit
lists (preference lists, priority partitions), never from sorting ids.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

UNASSIGNED = None

STB = "stb"
MTB = "mtb"


class StrictPriorityError(ValueError):
    """Raised when a mechanism that needs strict priorities receives ties."""

    def __init__(self, msg: str = "strict priorities required (run break_ties)"):
        super().__init__(msg)


@dataclass(frozen=True)
class Economy:
    """A school choice problem.

    ``priorities[s]`` is an ordered partition of the students: a tuple of
    priority classes, highest first. Singleton classes mean strict priority.
    ``quotas`` and ``reserves`` are keyed by ``(school, type)``; ``vnm`` by
    ``(student, school)``.
    """

    students: tuple
    schools: tuple
    capacity: Mapping[str, int]
    prefs: Mapping[str, tuple]
    priorities: Mapping[str, tuple]
    types: Optional[Mapping[str, str]] = None
    quotas: Optional[Mapping[tuple, int]] = None
    reserves: Optional[Mapping[tuple, int]] = None
    vnm: Optional[Mapping[tuple, float]] = None
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "students", tuple(self.students))
        object.__setattr__(self, "schools", tuple(self.schools))
        object.__setattr__(self, "capacity", dict(self.capacity))
        object.__setattr__(self, "prefs", {i: tuple(l) for i, l in self.prefs.items()})
        object.__setattr__(
            self,
            "priorities",
            {s: tuple(tuple(c) for c in p) for s, p in self.priorities.items()},
        )
        for name in ("types", "quotas", "reserves", "vnm"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, dict(val))

    # -- derived lookups (cached; the economy itself never changes) --------

    def rank(self, student: str, school) -> Optional[int]:
        """Position of ``school`` in the student's list, or None if unlisted.

        ``UNASSIGNED`` ranks just below every listed school.
        """
        table = self._cache.get("rank")
        if table is None:
            table = {i: {s: k for k, s in enumerate(l)} for i, l in self.prefs.items()}
            self._cache["rank"] = table
        if school is UNASSIGNED:
            return len(self.prefs.get(student, ()))
        return table.get(student, {}).get(school)

    def priority_class(self, school: str) -> dict:
        """Map student -> index of the student's priority class at ``school`` (0 = top)."""
        table = self._cache.get("pclass")
        if table is None:
            table = {
                s: {i: k for k, cls in enumerate(p) for i in cls}
                for s, p in self.priorities.items()
            }
            self._cache["pclass"] = table
        return table[school]

    def is_strict(self) -> bool:
        return all(len(c) == 1 for p in self.priorities.values() for c in p)

    def prefers(self, student: str, s1, s2) -> bool:
        """True if ``student`` strictly prefers ``s1`` to ``s2``.

        Listed schools beat ``UNASSIGNED``, which beats unlisted schools.
        """
        return _utility_index(self, student, s1) < _utility_index(self, student, s2)

    def weakly_prefers(self, student: str, s1, s2) -> bool:
        return _utility_index(self, student, s1) <= _utility_index(self, student, s2)

    def replace(self, **changes) -> "Economy":
        kw = dict(
            students=self.students,
            schools=self.schools,
            capacity=self.capacity,
            prefs=self.prefs,
            priorities=self.priorities,
            types=self.types,
            quotas=self.quotas,
            reserves=self.reserves,
            vnm=self.vnm,
        )
        kw.update(changes)
        return Economy(**kw)

    def with_report(self, student: str, rol: Sequence[str]) -> "Economy":
        """Economy in which ``student`` submits ``rol`` instead of the true list."""
        prefs = dict(self.prefs)
        prefs[student] = tuple(rol)
        return self.replace(prefs=prefs)


def _utility_index(e: Economy, student: str, school) -> float:
    r = e.rank(student, school)
    if r is None:
        return float("inf")
    return r


@dataclass(frozen=True)
class Matching:
    """Assignment of each student to a school id or ``UNASSIGNED``."""

    assign: Mapping[str, Optional[str]]

    def __post_init__(self):
        object.__setattr__(self, "assign", dict(self.assign))

    def __getitem__(self, student: str):
        return self.assign[student]

    def __eq__(self, other):
        if not isinstance(other, Matching):
            return NotImplemented
        return self.assign == other.assign

    def __hash__(self):
        return hash(frozenset(self.assign.items()))

    def __repr__(self):
        body = ", ".join(f"{i}{'∅' if s is None else s}" for i, s in self.assign.items())
        return f"Matching({body})"

    def at(self, school: str) -> list:
        """Students assigned to ``school`` (the inverse view)."""
        return [i for i, s in self.assign.items() if s == school]

    def counts(self) -> dict:
        out: dict = {}
        for s in self.assign.values():
            if s is not UNASSIGNED:
                out[s] = out.get(s, 0) + 1
        return out

    @classmethod
    def from_pairs(cls, pairs: str | Iterable, students: Sequence[str] = ()) -> "Matching":
        """Build a matching from ``"1a,2b,3c"`` style shorthand or pairs.

        The shorthand splits each token into a leading student id and a
        trailing school id, so it is meant for one-character school ids.
        """
        assign = {i: UNASSIGNED for i in students}
        if isinstance(pairs, str):
            for tok in pairs.replace(" ", "").split(","):
                if tok:
                    assign[tok[:-1]] = tok[-1]
        else:
            for i, s in pairs:
                assign[i] = s
        return cls(assign)


@dataclass(frozen=True)
class Lottery:
    """Tie-breaking numbers. Higher ``tau`` wins a tie.

    Under STB ``tau`` maps student -> number; under MTB it maps
    ``(student, school)`` -> number.
    """

    mode: str
    seed: int
    tau: Mapping

    def value(self, student: str, school: str) -> float:
        if self.mode == STB:
            return self.tau[student]
        return self.tau[(student, school)]


def draw_lottery(e: Economy, mode: str = STB, seed: int = 0, rng=None) -> Lottery:
    """Draw tie-breakers in [0, 1). Values are distinct by construction
    (a uniformly random permutation of ``k/n``)."""
    if rng is None:
        rng = np.random.default_rng(seed)
    n = len(e.students)
    if mode == STB:
        perm = rng.permutation(n)
        tau = {i: float(perm[k]) / n for k, i in enumerate(e.students)}
    elif mode == MTB:
        tau = {}
        for s in e.schools:
            perm = rng.permutation(n)
            for k, i in enumerate(e.students):
                tau[(i, s)] = float(perm[k]) / n
    else:
        raise ValueError(f"unknown tie-break mode {mode!r}")
    return Lottery(mode, seed, tau)


def lottery_from_order(e: Economy, order: Sequence[str], seed: int = 0) -> Lottery:
    """STB lottery whose draw ranks students in ``order`` (first = best)."""
    n = len(order)
    return Lottery(STB, seed, {i: (n - 1 - k) / n for k, i in enumerate(order)})


@dataclass(frozen=True)
class CutoffVector:
    """Per-school market-clearing cutoff in eligibility-score space."""

    cutoff: Mapping[str, float]

    def __getitem__(self, school):
        return self.cutoff[school]


def validate_economy(e: Economy) -> list:
    """List every violated economy invariant; empty list means valid."""
    problems = []
    schools = set(e.schools)
    students = set(e.students)
    if len(schools) != len(e.schools):
        problems.append("schools: duplicate school ids")
    if len(students) != len(e.students):
        problems.append("students: duplicate student ids")
    for s in e.schools:
        q = e.capacity.get(s)
        if q is None:
            problems.append(f"capacity[{s}]: missing")
        elif int(q) != q or q < 1:
            problems.append(f"capacity[{s}]: capacity must be >= 1 (got {q})")
    for s in e.capacity:
        if s not in schools:
            problems.append(f"capacity[{s}]: unknown school")
    for i in e.students:
        rol = e.prefs.get(i)
        if rol is None:
            problems.append(f"prefs[{i}]: missing")
            continue
        if len(set(rol)) != len(rol):
            problems.append(f"prefs[{i}]: duplicate schools in list")
        for s in rol:
            if s not in schools:
                problems.append(f"prefs[{i}]: unknown school {s!r}")
    for i in e.prefs:
        if i not in students:
            problems.append(f"prefs[{i}]: unknown student")
    for s in e.schools:
        part = e.priorities.get(s)
        if part is None:
            problems.append(f"priorities[{s}]: missing")
            continue
        seen = [i for cls in part for i in cls]
        if any(len(cls) == 0 for cls in part):
            problems.append(f"priorities[{s}]: empty priority class")
        if len(seen) != len(set(seen)):
            problems.append(f"priorities[{s}]: student listed more than once")
        if set(seen) != students:
            missing = students - set(seen)
            extra = set(seen) - students
            if missing:
                problems.append(f"priorities[{s}]: missing students {sorted(missing)}")
            if extra:
                problems.append(f"priorities[{s}]: unknown students {sorted(extra)}")
    if e.types is not None:
        for i in e.students:
            if i not in e.types:
                problems.append(f"types[{i}]: missing")
    for name in ("quotas", "reserves"):
        table = getattr(e, name)
        if table is None:
            continue
        if e.types is None:
            problems.append(f"{name}: given without types")
        for (s, t), v in table.items():
            if s not in schools:
                problems.append(f"{name}[{s},{t}]: unknown school")
            elif v < 0 or v > e.capacity.get(s, 0):
                problems.append(f"{name}[{s},{t}]: must lie in [0, capacity]")
    if e.reserves is not None:
        for s in e.schools:
            total = sum(v for (s2, _), v in e.reserves.items() if s2 == s)
            if total > e.capacity.get(s, 0):
                problems.append(f"reserves[{s}]: reserves sum exceeds capacity")
    if e.vnm is not None:
        for i in e.students:
            vals = [e.vnm.get((i, s)) for s in e.prefs.get(i, ())]
            if any(v is None for v in vals):
                problems.append(f"vnm[{i}]: missing utility for a listed school")
                continue
            if any(a <= b for a, b in zip(vals, vals[1:])):
                problems.append(f"vnm[{i}]: utilities not strictly decreasing along list")
    return problems


def validate_matching(mu: Matching, e: Economy) -> list:
    problems = []
    if set(mu.assign) != set(e.students):
        problems.append("matching: student set differs from economy")
    for i, s in mu.assign.items():
        if s is UNASSIGNED:
            continue
        if s not in e.capacity:
            problems.append(f"matching[{i}]: unknown school {s!r}")
        elif e.rank(i, s) is None:
            problems.append(f"matching[{i}]: {s} not on student's list")
    for s, c in mu.counts().items():
        if s in e.capacity and c > e.capacity[s]:
            problems.append(f"matching: school {s} over capacity ({c} > {e.capacity[s]})")
    return problems


def pareto_dominates(mu2: Matching, mu1: Matching, e: Economy) -> bool:
    """True iff every student weakly prefers ``mu2`` and someone strictly."""
    if set(mu2.assign) != set(mu1.assign):
        raise ValueError("matchings cover different student sets")
    strict = False
    for i in mu1.assign:
        a, b = mu2[i], mu1[i]
        if a == b:
            continue
        if e.prefers(i, b, a):
            return False
        if e.prefers(i, a, b):
            strict = True
    return strict


def weakly_dominates(mu2: Matching, mu1: Matching, e: Economy) -> bool:
    return all(e.weakly_prefers(i, mu2[i], mu1[i]) for i in mu1.assign)


# -- JSON interchange ------------------------------------------------------
#
# Economy file:
#   {"students": [...], "schools": [{"id": "a", "capacity": 2}, ...],
#    "prefs": {"1": ["a", "b"], ...},
#    "priorities": {"a": [["4"], ["1", "2"], ...], ...},
#    "types": {"1": "M", ...},                       (optional)
#    "quotas": [{"school": "a", "type": "M", "value": 1}, ...],   (optional)
#    "reserves": [{"school": "a", "type": "m", "value": 1}, ...], (optional)
#    "vnm": {"1": {"a": 4, "b": 1}, ...}}            (optional)
# Matching file: {"1": "a", "2": null, ...}


def _num_to_json(v):
    if isinstance(v, Fraction):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    return v


def economy_to_dict(e: Economy) -> dict:
    d = {
        "students": list(e.students),
        "schools": [{"id": s, "capacity": int(e.capacity[s])} for s in e.schools],
        "prefs": {i: list(e.prefs[i]) for i in e.students},
        "priorities": {s: [list(c) for c in e.priorities[s]] for s in e.schools},
    }
    if e.types is not None:
        d["types"] = {i: e.types[i] for i in e.students if i in e.types}
    for name in ("quotas", "reserves"):
        table = getattr(e, name)
        if table is not None:
            d[name] = [
                {"school": s, "type": t, "value": int(v)} for (s, t), v in table.items()
            ]
    if e.vnm is not None:
        vnm: dict = {}
        for (i, s), v in e.vnm.items():
            vnm.setdefault(i, {})[s] = _num_to_json(v)
        d["vnm"] = vnm
    return d


def economy_from_dict(d: dict) -> Economy:
    schools = [s["id"] for s in d["schools"]]
    capacity = {s["id"]: s["capacity"] for s in d["schools"]}
    kw = {}
    if "types" in d:
        kw["types"] = dict(d["types"])
    for name in ("quotas", "reserves"):
        if name in d:
            kw[name] = {(r["school"], r["type"]): r["value"] for r in d[name]}
    if "vnm" in d:
        kw["vnm"] = {(i, s): v for i, row in d["vnm"].items() for s, v in row.items()}
    return Economy(
        students=list(d["students"]),
        schools=schools,
        capacity=capacity,
        prefs={i: list(l) for i, l in d["prefs"].items()},
        priorities={s: [list(c) for c in p] for s, p in d["priorities"].items()},
        **kw,
    )


def matching_to_dict(mu: Matching) -> dict:
    return dict(mu.assign)


def matching_from_dict(d: dict) -> Matching:
    return Matching(dict(d))


def load_economy(path) -> Economy:
    return economy_from_dict(json.loads(Path(path).read_text()))


def load_matching(path) -> Matching:
    return matching_from_dict(json.loads(Path(path).read_text()))


def dump_json(obj) -> str:
    """Canonical JSON text (sorted keys, fixed separators) for stable bytes."""
    return json.dumps(obj, indent=2, sort_keys=True, default=_num_to_json) + "\n"
