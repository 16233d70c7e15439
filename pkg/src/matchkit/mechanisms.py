"""Centralized assignment mechanisms.

Every mechanism is a pure function of an ``Economy`` (plus reports, lottery or
targets where relevant). Mechanisms that need strict priorities refuse ties;
run ``break_ties`` first.
"""

from __future__ import annotations

import math
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .core import (
    MTB,
    STB,
    UNASSIGNED,
    Economy,
    Lottery,
    Matching,
    StrictPriorityError,
    draw_lottery,
)

RESERVED_FIRST = "reserved-first"
OPEN_FIRST = "open-first"

GLOBAL_RESET = "global"
TRIPPING_RESET = "tripping"


def _require_strict(e: Economy) -> None:
    if not e.is_strict():
        raise StrictPriorityError()


def _strict_rank(e: Economy) -> dict:
    """school -> {student: position}; smaller is higher priority."""
    return {s: e.priority_class(s) for s in e.schools}


def break_ties(e: Economy, lot: Lottery) -> Economy:
    """Refine each priority class by descending lottery number."""
    prio = {}
    for s in e.schools:
        out = []
        for cls in e.priorities[s]:
            ordered = sorted(cls, key=lambda i: -lot.value(i, s))
            out.extend((i,) for i in ordered)
        prio[s] = tuple(out)
    return e.replace(priorities=prio)


# -- deferred acceptance engine ---------------------------------------------
#
# A choice function takes (school, pool, fixed) and returns the subset of
# ``pool`` the school tentatively holds. ``fixed`` lists students already
# finalized at the school (only non-empty under DACB).

ChoiceFn = Callable[[str, list, list], list]


def _priority_choice(e: Economy, rank: dict) -> ChoiceFn:
    def choose(s, pool, fixed):
        room = e.capacity[s] - len(fixed)
        return sorted(pool, key=rank[s].__getitem__)[: max(room, 0)]

    return choose


def _run_da(
    e: Economy,
    choose: ChoiceFn,
    kappa: Optional[int] = None,
    reset: str = GLOBAL_RESET,
) -> Matching:
    prefs = e.prefs
    nxt = {i: 0 for i in e.students}
    count = {i: 0 for i in e.students}
    held = {s: [] for s in e.schools}
    final = {s: [] for s in e.schools}
    closed = set()
    free = list(e.students)
    while True:
        proposals: dict = {}
        still_free = []
        for i in free:
            rol = prefs[i]
            k = nxt[i]
            while k < len(rol) and rol[k] in closed:
                k += 1
            if k >= len(rol):
                nxt[i] = k
                continue
            s = rol[k]
            nxt[i] = k + 1
            count[i] += 1
            proposals.setdefault(s, []).append(i)
        if not proposals:
            break
        for s in e.schools:
            if s not in proposals:
                continue
            pool = held[s] + proposals[s]
            keep = choose(s, pool, final[s])
            kept = set(keep)
            held[s] = list(keep)
            still_free.extend(i for i in pool if i not in kept)
        free = still_free
        if kappa is not None:
            tripped = [i for i in e.students if count[i] >= kappa]
            if tripped:
                for s in e.schools:
                    final[s].extend(held[s])
                    held[s] = []
                    if len(final[s]) >= e.capacity[s]:
                        closed.add(s)
                if reset == GLOBAL_RESET:
                    for i in count:
                        count[i] = 0
                else:
                    for i in tripped:
                        count[i] = 0
    assign = {i: UNASSIGNED for i in e.students}
    for s in e.schools:
        for i in final[s] + held[s]:
            assign[i] = s
    return Matching(assign)


def deferred_acceptance(e: Economy) -> Matching:
    """Student-proposing deferred acceptance."""
    _require_strict(e)
    return _run_da(e, _priority_choice(e, _strict_rank(e)))


def dacb(e: Economy, kappa, reset: str = GLOBAL_RESET) -> Matching:
    """DA with a circuit breaker.

    After the round in which some student's application count since the last
    freeze reaches ``kappa``, every tentative hold becomes final. ``reset``
    picks whose counters restart: everyone (``"global"``) or only the
    students who tripped the breaker (``"tripping"``).
    """
    if kappa is None or (isinstance(kappa, float) and math.isinf(kappa)):
        return deferred_acceptance(e)
    if int(kappa) != kappa or kappa < 1:
        raise ValueError(f"kappa must be a positive integer (got {kappa})")
    if reset not in (GLOBAL_RESET, TRIPPING_RESET):
        raise ValueError(f"unknown reset mode {reset!r}")
    _require_strict(e)
    return _run_da(e, _priority_choice(e, _strict_rank(e)), kappa=int(kappa), reset=reset)


def _type_of(e: Economy):
    if e.types is None:
        raise ValueError("economy has no student types")
    return e.types


def da_maximum_quotas(e: Economy) -> Matching:
    """DA where school ``s`` holds at most ``quotas[(s, t)]`` students of type
    ``t``. Types without a quota entry are only bounded by capacity."""
    _require_strict(e)
    types = _type_of(e)
    quotas = e.quotas or {}
    for (s, t), v in quotas.items():
        if v > e.capacity[s]:
            raise ValueError(f"quota for ({s}, {t}) exceeds capacity")
    rank = _strict_rank(e)

    def choose(s, pool, fixed):
        used: dict = {}
        for i in fixed:
            used[types[i]] = used.get(types[i], 0) + 1
        room = e.capacity[s] - len(fixed)
        out = []
        for i in sorted(pool, key=rank[s].__getitem__):
            if len(out) >= room:
                break
            t = types[i]
            cap_t = quotas.get((s, t))
            if cap_t is not None and used.get(t, 0) >= cap_t:
                continue
            used[t] = used.get(t, 0) + 1
            out.append(i)
        return out

    return _run_da(e, choose)


def da_minority_reserves(e: Economy, prec=RESERVED_FIRST) -> Matching:
    """DA with soft minority reserves.

    ``prec`` is a single precedence for every school or a map school ->
    precedence. Reserved seats left unclaimed by the protected type go to
    anyone.
    """
    _require_strict(e)
    types = _type_of(e)
    reserves = e.reserves or {}
    by_school: dict = {}
    for (s, t), v in reserves.items():
        by_school.setdefault(s, []).append((t, v))
    for s, lst in by_school.items():
        if sum(v for _, v in lst) > e.capacity[s]:
            raise ValueError(f"reserves at {s} exceed capacity")
    if isinstance(prec, str):
        prec_of = {s: prec for s in e.schools}
    else:
        prec_of = {s: prec.get(s, RESERVED_FIRST) for s in e.schools}
    for p in prec_of.values():
        if p not in (RESERVED_FIRST, OPEN_FIRST):
            raise ValueError(f"unknown precedence {p!r}")
    rank = _strict_rank(e)

    def choose(s, pool, fixed):
        ordered = sorted(pool, key=rank[s].__getitem__)
        room = e.capacity[s] - len(fixed)
        res = by_school.get(s, [])
        taken: list = []
        chosen = set()

        def take_any(k):
            for i in ordered:
                if k <= 0:
                    break
                if i not in chosen:
                    chosen.add(i)
                    taken.append(i)
                    k -= 1

        def take_reserved():
            for t, r in res:
                k = r - sum(1 for i in fixed if types[i] == t)
                for i in ordered:
                    if k <= 0 or len(taken) >= room:
                        break
                    if types[i] == t and i not in chosen:
                        chosen.add(i)
                        taken.append(i)
                        k -= 1

        if prec_of[s] == RESERVED_FIRST:
            take_reserved()
        else:
            open_seats = e.capacity[s] - sum(r for _, r in res)
            take_any(min(open_seats, room))
            take_reserved()
        take_any(room - len(taken))
        return taken

    return _run_da(e, choose)


def immediate_acceptance(e: Economy) -> Matching:
    """Immediate acceptance: admissions in each round are permanent."""
    _require_strict(e)
    rank = _strict_rank(e)
    left = dict(e.capacity)
    assign = {i: UNASSIGNED for i in e.students}
    pending = list(e.students)
    k = 0
    while pending:
        apps: dict = {}
        nxt = []
        for i in pending:
            rol = e.prefs[i]
            if k < len(rol):
                apps.setdefault(rol[k], []).append(i)
                nxt.append(i)
        if not nxt:
            break
        for s, pool in apps.items():
            pool.sort(key=rank[s].__getitem__)
            admit = pool[: left[s]]
            for i in admit:
                assign[i] = s
            left[s] -= len(admit)
        pending = [i for i in nxt if assign[i] is UNASSIGNED]
        k += 1
    return Matching(assign)


def top_trading_cycles(e: Economy) -> Matching:
    """School-choice TTC with per-school seat counters."""
    _require_strict(e)
    order = {s: [c[0] for c in e.priorities[s]] for s in e.schools}
    seats = dict(e.capacity)
    sptr = {s: 0 for s in e.schools}
    iptr = {i: 0 for i in e.students}
    active = set(e.students)
    assign = {i: UNASSIGNED for i in e.students}

    def top_school(i):
        rol = e.prefs[i]
        k = iptr[i]
        while k < len(rol) and seats[rol[k]] == 0:
            k += 1
        iptr[i] = k
        return rol[k] if k < len(rol) else None

    def top_student(s):
        lst = order[s]
        k = sptr[s]
        while lst[k] not in active:
            k += 1
        sptr[s] = k
        return lst[k]

    while active:
        point = {}
        for i in [i for i in e.students if i in active]:
            s = top_school(i)
            if s is None:
                active.discard(i)
            else:
                point[i] = s
        if not active:
            break
        succ = {i: top_student(point[i]) for i in point}
        # every node has out-degree 1, so at least one cycle exists
        state: dict = {}
        cleared = []
        for start in point:
            if start in state:
                continue
            path = []
            i = start
            while i not in state:
                state[i] = start
                path.append(i)
                i = succ[i]
            if state[i] == start:
                cleared.extend(path[path.index(i):])
        for i in cleared:
            s = point[i]
            assign[i] = s
            seats[s] -= 1
            active.discard(i)
    return Matching(assign)


def serial_dictatorship(e: Economy, order: Sequence[str]) -> Matching:
    if sorted(order) != sorted(e.students) or len(set(order)) != len(order):
        raise ValueError("order must be a permutation of the students")
    left = dict(e.capacity)
    assign = {i: UNASSIGNED for i in e.students}
    for i in order:
        for s in e.prefs[i]:
            if left[s] > 0:
                assign[i] = s
                left[s] -= 1
                break
    return Matching(assign)


def rsd(e: Economy, lot: Lottery) -> Matching:
    """Random serial dictatorship: pick order by descending STB number."""
    if lot.mode != STB:
        raise ValueError("RSD needs an STB lottery")
    order = sorted(e.students, key=lambda i: -lot.tau[i])
    return serial_dictatorship(e, order)


def cada_priorities(e: Economy, targets: Mapping[str, str], T: Lottery, R: Lottery) -> Economy:
    """Strict priorities for CADA: inside each intrinsic class, targeters of
    the school come first ordered by ``T``, then the rest ordered by ``R``."""
    for i, s in targets.items():
        if s not in e.capacity:
            raise ValueError(f"target of {i} is not a school: {s!r}")
    prio = {}
    for s in e.schools:
        out = []
        for cls in e.priorities[s]:
            tgt = [i for i in cls if targets.get(i) == s]
            rest = [i for i in cls if targets.get(i) != s]
            tgt.sort(key=lambda i: -T.value(i, s))
            rest.sort(key=lambda i: -R.value(i, s))
            out.extend((i,) for i in tgt + rest)
        prio[s] = tuple(out)
    return e.replace(priorities=prio)


def cada_lotteries(e: Economy, seed: int) -> tuple:
    """The (T, R) pair drawn from two independent streams of one seed."""
    st, sr = np.random.SeedSequence(seed).spawn(2)
    T = draw_lottery(e, STB, seed, rng=np.random.default_rng(st))
    R = draw_lottery(e, STB, seed, rng=np.random.default_rng(sr))
    return T, R


def cada(e: Economy, targets: Mapping[str, str], lot=None, seed: int = 0) -> Matching:
    """Choice-augmented DA. ``lot`` is a ``(T, R)`` pair; drawn from ``seed``
    when omitted."""
    T, R = lot if lot is not None else cada_lotteries(e, seed)
    return deferred_acceptance(cada_priorities(e, targets, T, R))


# -- registry used by simulate, cli and the fixture suite -------------------

MECHANISMS = {
    "ia": immediate_acceptance,
    "da": deferred_acceptance,
    "ttc": top_trading_cycles,
    "da-maq": da_maximum_quotas,
}


def run_mechanism(
    name: str,
    e: Economy,
    lot: Optional[Lottery] = None,
    *,
    seed: Optional[int] = None,
    tie_break: str = STB,
    precedence=RESERVED_FIRST,
    kappa=None,
    targets: Optional[Mapping[str, str]] = None,
    order: Optional[Sequence[str]] = None,
) -> Matching:
    """Dispatch by mechanism id, breaking ties first when a lottery or seed is
    given and priorities are weak."""
    if name == "cada":
        if targets is None:
            raise ValueError("cada needs targets")
        return cada(e, targets, seed=0 if seed is None else seed)
    if name == "sd":
        if order is None:
            if lot is None:
                if seed is None:
                    raise ValueError("sd needs an order or a seed")
                lot = draw_lottery(e, STB, seed)
            return rsd(e, lot)
        return serial_dictatorship(e, order)
    if not e.is_strict():
        if lot is None and seed is not None:
            lot = draw_lottery(e, tie_break, seed)
        if lot is not None:
            e = break_ties(e, lot)
    if name in MECHANISMS:
        return MECHANISMS[name](e)
    if name == "da-mir":
        return da_minority_reserves(e, precedence)
    if name == "dacb":
        return dacb(e, kappa)
    raise ValueError(f"unknown mechanism {name!r}")


MECHANISM_IDS = ("ia", "da", "ttc", "sd", "da-maq", "da-mir", "cada", "dacb")

__all__ = [
    "RESERVED_FIRST",
    "OPEN_FIRST",
    "MTB",
    "STB",
    "break_ties",
    "deferred_acceptance",
    "immediate_acceptance",
    "top_trading_cycles",
    "serial_dictatorship",
    "rsd",
    "da_maximum_quotas",
    "da_minority_reserves",
    "cada",
    "cada_priorities",
    "cada_lotteries",
    "dacb",
    "run_mechanism",
    "MECHANISM_IDS",
]
