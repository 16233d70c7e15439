import itertools

import numpy as np
import pytest
from conftest import random_economy

from matchkit import audit
from matchkit.core import STB, Economy, Matching, StrictPriorityError, draw_lottery, lottery_from_order
from matchkit.fixtures import (
    CARDINAL_CADA_TARGETS,
    cardinal_economy,
    da_ttc_economy,
    da_ttc_weak_economy,
    ia_economy,
    no_priority_economy,
    quota_economy,
    reserve_economy,
    ttc_short_cycles_economy,
)
from matchkit.mechanisms import (
    OPEN_FIRST,
    RESERVED_FIRST,
    break_ties,
    cada,
    cada_lotteries,
    cada_priorities,
    dacb,
    da_maximum_quotas,
    da_minority_reserves,
    deferred_acceptance,
    immediate_acceptance,
    rsd,
    run_mechanism,
    serial_dictatorship,
    top_trading_cycles,
)

M = Matching.from_pairs


def test_ia_fixture_and_deviation():
    e = ia_economy()
    assert immediate_acceptance(e) == M("1a,2a,3b,4c")
    assert immediate_acceptance(e.with_report("4", "abc"))["4"] == "a"


def test_single_student_single_school():
    e = Economy(["1"], ["a"], {"a": 1}, {"1": ["a"]}, {"a": [["1"]]})
    for mech in (immediate_acceptance, deferred_acceptance, top_trading_cycles):
        assert mech(e) == M("1a")


def test_da_and_ttc_fixtures():
    e = da_ttc_economy()
    assert deferred_acceptance(e) == M("1a,2b,3c")
    assert top_trading_cycles(e) == M("1b,2a,3c")
    assert top_trading_cycles(ttc_short_cycles_economy()) == M("1a,2b,3c")


def test_ttc_all_first_choices_when_top_priority():
    e = Economy(
        ["1", "2", "3"],
        ["a", "b", "c"],
        {"a": 1, "b": 1, "c": 1},
        {"1": "abc", "2": "bca", "3": "cab"},
        {"a": [["1"], ["2"], ["3"]], "b": [["2"], ["3"], ["1"]], "c": [["3"], ["1"], ["2"]]},
    )
    assert top_trading_cycles(e) == M("1a,2b,3c")


def test_ties_are_a_hard_error():
    e = no_priority_economy()
    for mech in (immediate_acceptance, deferred_acceptance, top_trading_cycles, da_maximum_quotas):
        with pytest.raises(StrictPriorityError, match="run break_ties"):
            mech(e if mech is not da_maximum_quotas else quota_economy().replace(priorities=e.priorities))


def test_break_ties():
    e = da_ttc_economy()
    assert break_ties(e, draw_lottery(e, STB, 3)).priorities == e.priorities
    weak = da_ttc_weak_economy()
    lot = lottery_from_order(weak, ["3", "2", "1"])
    assert break_ties(weak, lot).priorities == e.priorities
    # STB on an indifferent school gives the same order everywhere
    np_ = no_priority_economy()
    strict = break_ties(np_, draw_lottery(np_, STB, 11))
    orders = {strict.priorities[s] for s in np_.schools}
    assert len(orders) == 1


def test_da_stb_equals_rsd_without_priorities(rng):
    for k in range(30):
        e = random_economy(rng, 5, 4, coarse=True, n_classes=1, partial=True)
        lot = draw_lottery(e, STB, k)
        assert deferred_acceptance(break_ties(e, lot)) == rsd(e, lot)


def test_serial_dictatorship():
    e = da_ttc_economy()
    assert serial_dictatorship(e, ["1", "2", "3"]) == M("1b,2a,3c")
    with pytest.raises(ValueError):
        serial_dictatorship(e, ["1", "2"])
    disjoint = e.replace(prefs={"1": "a", "2": "b", "3": "c"})
    outs = {serial_dictatorship(disjoint, o) for o in itertools.permutations("123")}
    assert len(outs) == 1


def test_quota_fixtures_and_trivial_cases():
    assert deferred_acceptance(quota_economy()) == M("1a,2a,3b")
    assert da_maximum_quotas(quota_economy(quota=True)) == M("1a,2b,3a")
    e = quota_economy()
    full = e.replace(quotas={(s, t): e.capacity[s] for s in e.schools for t in ("M", "m")})
    assert da_maximum_quotas(full) == deferred_acceptance(e)
    zero = e.replace(quotas={("a", "M"): 0})
    mu = da_maximum_quotas(zero)
    assert all(e.types[i] != "M" for i in mu.at("a"))
    with pytest.raises(ValueError):
        da_maximum_quotas(e.replace(quotas={("a", "M"): 5}))


def test_reserve_fixtures_and_trivial_cases():
    assert da_minority_reserves(quota_economy(reserve=True), RESERVED_FIRST) == M("1a,2a,3b")
    assert deferred_acceptance(reserve_economy()) == M("1a,2c,3b")
    assert da_minority_reserves(reserve_economy(reserve=True)) == M("1c,2a,3b")
    e = reserve_economy()
    assert da_minority_reserves(e.replace(reserves={}), RESERVED_FIRST) == deferred_acceptance(e)
    with pytest.raises(ValueError):
        da_minority_reserves(e.replace(reserves={("a", "m"): 2}))
    with pytest.raises(ValueError):
        da_minority_reserves(reserve_economy(reserve=True), "sideways")


def test_open_first_differs_when_reserve_binds():
    # capacity 2, one reserved seat; the open seat goes to the top applicant
    # under open-first, but the reserved seat is claimed first otherwise
    e = Economy(
        ["1", "2", "3"],
        ["a"],
        {"a": 2},
        {i: ["a"] for i in "123"},
        {"a": [["1"], ["2"], ["3"]]},
        types={"1": "m", "2": "M", "3": "m"},
        reserves={("a", "m"): 1},
    )
    # reserved-first: 1 claims the reserved seat, 2 the open one
    assert da_minority_reserves(e, RESERVED_FIRST) == M("1a,2a", students=["3"])
    # open-first: 1 takes the open seat, the reserved seat still needs a minority
    assert da_minority_reserves(e, OPEN_FIRST) == M("1a,3a", students=["2"])
    e2 = e.replace(types={"1": "M", "2": "M", "3": "m"})
    for prec in (RESERVED_FIRST, OPEN_FIRST):
        assert da_minority_reserves(e2, prec) == M("1a,3a", students=["2"])


def test_dacb():
    e = da_ttc_economy()
    assert dacb(e, 1) == M("1b,2c,3a")
    assert dacb(e, 2) == M("1c,2b,3a")
    assert dacb(e, 10) == deferred_acceptance(e)
    assert dacb(e, float("inf")) == deferred_acceptance(e)
    assert dacb(e, 1, reset="tripping") == dacb(e, 1, reset="tripping")
    with pytest.raises(ValueError):
        dacb(e, 0)


def test_dacb_long_kappa_equals_da(rng):
    for _ in range(30):
        e = random_economy(rng, 6, 4, partial=True)
        assert dacb(e, 5) == deferred_acceptance(e)


def test_cada_fixture():
    e = cardinal_economy()
    for seed in range(20):
        mu = cada(e, CARDINAL_CADA_TARGETS, seed=seed)
        assert mu["3"] == "b"
        assert {mu["1"], mu["2"]} == {"a", "c"}


def test_cada_all_same_target_is_da_stb_at_that_school():
    e = cardinal_economy()
    targets = {i: "a" for i in e.students}
    for seed in range(10):
        T, R = cada_lotteries(e, seed)
        by_T, by_R = break_ties(e, T), break_ties(e, R)
        mixed = e.replace(priorities={"a": by_T.priorities["a"], "b": by_R.priorities["b"], "c": by_R.priorities["c"]})
        assert cada(e, targets, lot=(T, R)) == deferred_acceptance(mixed)


def test_cada_strict_priorities_is_da():
    e = da_ttc_economy()
    assert cada(e, {"1": "c", "2": "c", "3": "a"}, seed=5) == deferred_acceptance(e)


def test_cada_priorities_subordinate_to_intrinsic():
    e = da_ttc_weak_economy()
    T, R = cada_lotteries(e, 0)
    strict = cada_priorities(e, {"1": "b", "2": "b", "3": "a"}, T, R)
    assert strict.priorities["a"][0] == ("1",)
    assert strict.priorities["a"][1] == ("3",)


def test_mechanisms_deterministic_in_seed():
    e = no_priority_economy()
    for name in ("da", "ia", "ttc", "sd"):
        assert run_mechanism(name, e, seed=7) == run_mechanism(name, e, seed=7)
    with pytest.raises(ValueError):
        run_mechanism("nope", da_ttc_economy())


def test_da_output_is_stable_on_fuzzed_economies(rng):
    for _ in range(100):
        n, m = int(rng.integers(2, 8)), int(rng.integers(1, 5))
        caps = {chr(ord("a") + j): int(rng.integers(1, 3)) for j in range(m)}
        e = random_economy(rng, n, m, caps=caps, partial=True)
        assert audit.blocking_pairs(deferred_acceptance(e), e) == []
