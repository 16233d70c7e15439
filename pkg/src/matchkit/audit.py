"""Axiomatic audits: stability, envy, efficiency oracles and stable improvement
cycles.

The brute-force oracles (``is_pareto_efficient``,
``enumerate_stable_matchings``) refuse economies above ``BRUTE_FORCE_BOUND``
students unless a larger ``bound`` is passed explicitly.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .core import UNASSIGNED, Economy, Matching, validate_matching

BRUTE_FORCE_BOUND = 8

IR = "individual_rationality"
WASTE = "wastefulness"
ENVY = "justified_envy"


class BruteForceBoundError(ValueError):
    pass


class UnstableMatchingError(ValueError):
    pass


class Block(NamedTuple):
    clause: str
    student: str
    school: str
    other: Optional[str] = None  # displaced student for justified envy


@dataclass(frozen=True)
class EnvyReport:
    envy: frozenset = field(default_factory=frozenset)
    justified: frozenset = field(default_factory=frozenset)

    @property
    def fraction(self) -> float:
        return len(self.justified) / len(self.envy) if self.envy else 0.0


def _check_bound(e: Economy, bound: Optional[int]) -> None:
    b = BRUTE_FORCE_BOUND if bound is None else bound
    if len(e.students) > b:
        raise BruteForceBoundError(
            f"{len(e.students)} students exceeds the brute-force bound {b}; "
            "use a sampling check instead or raise the bound"
        )


def blocking_pairs(mu: Matching, e: Economy) -> list:
    """Every stability violation of ``mu``, tagged by clause."""
    out = []
    counts = mu.counts()
    for i in e.students:
        s = mu[i]
        if s is not UNASSIGNED and e.rank(i, s) is None:
            out.append(Block(IR, i, s))
    for i in e.students:
        cur = mu[i]
        for s in e.prefs[i]:
            if s == cur or not e.prefers(i, s, cur):
                continue
            if counts.get(s, 0) < e.capacity[s]:
                out.append(Block(WASTE, i, s))
                continue
            pc = e.priority_class(s)
            for j in mu.at(s):
                if pc[i] < pc[j]:
                    out.append(Block(ENVY, i, s, j))
    return out


def is_stable(mu: Matching, e: Economy) -> bool:
    return not blocking_pairs(mu, e)


def envy_report(mu: Matching, e: Economy) -> EnvyReport:
    """(student, school) pairs with envy, and the subset that is justified.

    A student envies every school listed above the student's assignment; the envy is
    justified when that school holds someone of strictly lower priority.
    """
    envy = set()
    justified = set()
    holders: dict = {}
    for i, s in mu.assign.items():
        if s is not UNASSIGNED:
            holders.setdefault(s, []).append(i)
    for i in e.students:
        cur = mu[i]
        for s in e.prefs[i]:
            if s == cur:
                break
            envy.add((i, s))
            pc = e.priority_class(s)
            if any(pc[i] < pc[j] for j in holders.get(s, ())):
                justified.add((i, s))
    return EnvyReport(frozenset(envy), frozenset(justified))


# -- brute-force oracles -----------------------------------------------------


def rank_vector(mu: Matching, e: Economy) -> np.ndarray:
    """Per-student rank of the assignment (list length for UNASSIGNED)."""
    return np.array([e.rank(i, mu[i]) for i in e.students], dtype=float)


def is_pareto_efficient(mu: Matching, e: Economy, bound: Optional[int] = None) -> bool:
    """Exhaustive search for a feasible matching that Pareto dominates ``mu``.

    Only assignments every student weakly prefers are explored, so the
    search stays small near efficient matchings.
    """
    _check_bound(e, bound)
    students = list(e.students)
    options = []
    for i in students:
        cur = mu[i]
        better = [s for s in e.prefs[i] if e.prefers(i, s, cur)]
        options.append(better + [cur])
    left = dict(e.capacity)

    def search(k, strict):
        if k == len(students):
            return strict
        i = students[k]
        for s in options[k]:
            if s is not UNASSIGNED:
                if left[s] == 0:
                    continue
                left[s] -= 1
            found = search(k + 1, strict or s != mu[i])
            if s is not UNASSIGNED:
                left[s] += 1
            if found:
                return True
        return False

    return not search(0, False)


def enumerate_stable_matchings(e: Economy, bound: Optional[int] = None) -> list:
    """All stable matchings, in a deterministic order.

    Backtracks over students in economy order, pruning any partial
    assignment that already contains justified envy. Weak priorities are
    accepted (envy needs strictly higher priority).
    """
    _check_bound(e, bound)
    students = list(e.students)
    n = len(students)
    pc = {s: e.priority_class(s) for s in e.schools}
    left = dict(e.capacity)
    cur: list = [None] * n
    out = []

    def envies(i, s, j):
        # i justifiably envies j's seat at s
        return e.prefers(i, s, cur_of[i]) and pc[s][i] < pc[s][j]

    cur_of: dict = {}

    def search(k):
        if k == n:
            for i in students:
                for s in e.prefs[i]:
                    if s == cur_of[i]:
                        break
                    if left[s] > 0:
                        return
            out.append(Matching(dict(cur_of)))
            return
        i = students[k]
        for s in list(e.prefs[i]) + [UNASSIGNED]:
            if s is not UNASSIGNED and left[s] == 0:
                continue
            cur_of[i] = s
            ok = True
            for j in students[:k]:
                sj = cur_of[j]
                if sj is not UNASSIGNED and envies(i, sj, j):
                    ok = False
                    break
                if s is not UNASSIGNED and envies(j, s, i):
                    ok = False
                    break
            if ok:
                if s is not UNASSIGNED:
                    left[s] -= 1
                search(k + 1)
                if s is not UNASSIGNED:
                    left[s] += 1
            del cur_of[i]

    search(0)
    return out


def weakly_dominates_all(mu: Matching, others: Sequence[Matching], e: Economy) -> bool:
    """True iff every student weakly prefers ``mu`` to each of ``others``."""
    if not others:
        return True
    base = rank_vector(mu, e)
    mat = np.vstack([rank_vector(o, e) for o in others])
    return bool(np.all(base[None, :] <= mat))


def dominated_by_any(mu: Matching, others: Sequence[Matching], e: Economy) -> bool:
    """True iff some matching in ``others`` Pareto dominates ``mu``."""
    if not others:
        return False
    base = rank_vector(mu, e)
    mat = np.vstack([rank_vector(o, e) for o in others])
    weak = np.all(mat <= base[None, :], axis=1)
    strict = np.any(mat < base[None, :], axis=1)
    return bool(np.any(weak & strict))


# -- stable improvement cycles ------------------------------------------------


def _desire_sets(mu: Matching, e: Economy) -> dict:
    """school -> highest-priority students among those desiring it."""
    out = {}
    for s in e.schools:
        pc = e.priority_class(s)
        want = [i for i in e.students if e.prefers(i, s, mu[i])]
        if want:
            best = min(pc[i] for i in want)
            out[s] = [i for i in want if pc[i] == best]
    return out


def find_stable_improvement_cycle(mu: Matching, e: Economy) -> Optional[list]:
    """A stable improvement cycle ``[i_1, ..., i_n]`` or None.

    ``i_l`` points to ``i_{l+1}`` when ``i_l`` is in D at ``mu(i_{l+1})``.
    Depth-first search in student order; the first cycle found is returned.
    """
    if blocking_pairs(mu, e):
        raise UnstableMatchingError("matching is not stable")
    D = _desire_sets(mu, e)
    succ = {i: [] for i in e.students}
    for j in e.students:
        s = mu[j]
        if s is UNASSIGNED:
            continue
        for i in D.get(s, ()):
            succ[i].append(j)
    order = {i: k for k, i in enumerate(e.students)}
    for i in succ:
        succ[i].sort(key=order.__getitem__)

    done = set()
    for root in e.students:
        if root in done:
            continue
        path: list = []
        on_path: dict = {}
        stack = [(root, iter(succ[root]))]
        path.append(root)
        on_path[root] = 0
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                stack.pop()
                path.pop()
                del on_path[node]
                done.add(node)
                continue
            if nxt in on_path:
                return path[on_path[nxt]:]
            if nxt in done:
                continue
            on_path[nxt] = len(path)
            path.append(nxt)
            stack.append((nxt, iter(succ[nxt])))
    return None


def execute_cycle(mu: Matching, cycle: Sequence[str]) -> Matching:
    assign = dict(mu.assign)
    k = len(cycle)
    for l, i in enumerate(cycle):
        assign[i] = mu[cycle[(l + 1) % k]]
    return Matching(assign)


def sic_to_constrained_efficient(mu: Matching, e: Economy, check: bool = True) -> Matching:
    """Apply stable improvement cycles until none remains."""
    limit = len(e.students) * max(len(e.schools), 1) + 1
    for _ in range(limit):
        cyc = find_stable_improvement_cycle(mu, e)
        if cyc is None:
            return mu
        new = execute_cycle(mu, cyc)
        if check:
            for i in cyc:
                assert e.prefers(i, new[i], mu[i]), "cycle member not improved"
            assert not blocking_pairs(new, e), "improvement cycle broke stability"
        mu = new
    raise RuntimeError("stable improvement cycles did not terminate")


# -- strategy-proofness ------------------------------------------------------


def all_rols(schools: Sequence[str]) -> Iterable[tuple]:
    """Every rank-order list over ``schools``, including the empty list."""
    for k in range(len(schools) + 1):
        yield from itertools.permutations(schools, k)


def profitable_deviations(
    mech: Callable[[Economy], Matching],
    e: Economy,
    students: Optional[Sequence[str]] = None,
    first_only: bool = False,
) -> list:
    """``(student, report, truthful_outcome, deviation_outcome)`` for every
    misreport that strictly improves the student under the true list."""
    truth = mech(e)
    out = []
    for i in students if students is not None else e.students:
        for rol in all_rols(e.schools):
            if rol == e.prefs[i]:
                continue
            got = mech(e.with_report(i, rol))[i]
            if e.prefers(i, got, truth[i]):
                out.append((i, rol, truth[i], got))
                if first_only:
                    return out
    return out


def audit_report(mu: Matching, e: Economy, check: str = "stability") -> dict:
    """JSON-ready report used by the CLI."""
    problems = validate_matching(mu, e)
    if problems:
        return {"check": check, "valid": False, "problems": problems}
    if check == "stability":
        blocks = blocking_pairs(mu, e)
        return {
            "check": check,
            "valid": True,
            "stable": not blocks,
            "violations": [b._asdict() for b in blocks],
        }
    if check == "efficiency":
        return {"check": check, "valid": True, "pareto_efficient": is_pareto_efficient(mu, e)}
    if check == "envy":
        rep = envy_report(mu, e)
        return {
            "check": check,
            "valid": True,
            "envy": sorted(map(list, rep.envy)),
            "justified": sorted(map(list, rep.justified)),
            "fraction": rep.fraction,
        }
    if check == "sic":
        cyc = find_stable_improvement_cycle(mu, e)
        out = {"check": check, "valid": True, "cycle": cyc}
        out["improved"] = sic_to_constrained_efficient(mu, e).assign
        return out
    raise ValueError(f"unknown check {check!r}")
