"""Acceptance criteria. Each test records one pass/fail line, printed in
the terminal summary (see conftest.py)."""

import json
import math
import time
from fractions import Fraction

import numpy as np
import pytest
from conftest import random_economy

from matchkit import audit, cli, simulate
from matchkit import estimate as est
from matchkit.core import Matching, dump_json, economy_to_dict, weakly_dominates
from matchkit.estimate.logit import _core, _design, _stages
from matchkit.fixtures import (
    CARDINAL_CADA_TARGETS,
    CARDINAL_IA_REPORTS,
    FEASIBLE_CUTOFFS,
    FEASIBLE_SCORES,
    TEPS_CLOSURE,
    TEPS_SCENARIOS,
    cardinal_economy,
    da_ttc_economy,
    ia_economy,
    no_priority_economy,
    quota_economy,
    reserve_economy,
    ttc_short_cycles_economy,
)
from matchkit.mechanisms import (
    da_maximum_quotas,
    da_minority_reserves,
    deferred_acceptance,
    immediate_acceptance,
    top_trading_cycles,
)

RESULTS = {}

M = Matching.from_pairs


def record(n, ok, detail):
    RESULTS[n] = (bool(ok), detail)
    assert ok, detail


def test_criterion_01_fixtures():
    t0 = time.perf_counter()
    checks = {
        "ia": immediate_acceptance(ia_economy()) == M("1a,2a,3b,4c"),
        "da": deferred_acceptance(da_ttc_economy()) == M("1a,2b,3c"),
        "ttc": top_trading_cycles(da_ttc_economy()) == M("1b,2a,3c"),
        "ttc_short": top_trading_cycles(ttc_short_cycles_economy()) == M("1a,2b,3c"),
        "quota_da": deferred_acceptance(quota_economy()) == M("1a,2a,3b"),
        "quota_maq": da_maximum_quotas(quota_economy(quota=True)) == M("1a,2b,3a"),
        "quota_mir": da_minority_reserves(quota_economy(reserve=True)) == M("1a,2a,3b"),
        "reserve_da": deferred_acceptance(reserve_economy()) == M("1a,2c,3b"),
        "reserve_mir": da_minority_reserves(reserve_economy(reserve=True)) == M("1c,2a,3b"),
        "sic": audit.sic_to_constrained_efficient(M("1a,2b,3c"), no_priority_economy()) == M("1b,2a,3c"),
        "teps": set(est.teps_from_scenarios(TEPS_SCENARIOS).pairs) == TEPS_CLOSURE,
        "feasible": est.feasible_set(FEASIBLE_SCORES, FEASIBLE_CUTOFFS) == {"a", "c"},
    }
    dt = time.perf_counter() - t0
    bad = [k for k, v in checks.items() if not v]
    record(1, not bad and dt < 1.0, f"{len(checks) - len(bad)}/{len(checks)} fixtures exact in {dt:.3f}s {bad or ''}")


def test_criterion_02_da_student_optimal():
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    fails = 0
    for _ in range(200):
        n, m = int(rng.integers(2, 7)), int(rng.integers(1, 5))
        e = random_economy(rng, n, m, partial=True)
        mu = deferred_acceptance(e)
        stable = audit.enumerate_stable_matchings(e)
        if mu not in stable or not audit.weakly_dominates_all(mu, stable, e):
            fails += 1
    dt = time.perf_counter() - t0
    record(2, fails == 0 and dt < 60, f"200 economies, {fails} failures, {dt:.2f}s")


def test_criterion_03_stable_improvement_cycles():
    rng = np.random.default_rng(3)
    fails = dominated = 0
    for _ in range(200):
        n, m = int(rng.integers(3, 7)), int(rng.integers(2, 5))
        e = random_economy(rng, n, m, coarse=True, n_classes=int(rng.integers(1, 4)), partial=True)
        stable = audit.enumerate_stable_matchings(e)
        for mu in stable:
            if audit.dominated_by_any(mu, stable, e):
                dominated += 1
                if audit.find_stable_improvement_cycle(mu, e) is None:
                    fails += 1
            out = audit.sic_to_constrained_efficient(mu, e)
            if out not in stable or audit.dominated_by_any(out, stable, e):
                fails += 1
    record(3, fails == 0 and dominated > 0, f"200 economies, {dominated} dominated stable matchings, {fails} failures")


def test_criterion_04_reserves_dominate_quotas():
    rng = np.random.default_rng(4)
    fails = strict = 0
    for _ in range(200):
        n, m = int(rng.integers(3, 9)), int(rng.integers(1, 4))
        caps = {chr(ord("a") + j): int(rng.integers(1, 4)) for j in range(m)}
        e = random_economy(rng, n, m, caps=caps, typed=True, partial=True)
        q_major = {s: int(rng.integers(0, caps[s] + 1)) for s in caps}
        maq = da_maximum_quotas(e.replace(quotas={(s, "M"): q_major[s] for s in caps}))
        mir = da_minority_reserves(e.replace(reserves={(s, "m"): caps[s] - q_major[s] for s in caps}))
        fails += not weakly_dominates(mir, maq, e)
        strict += mir != maq
    record(4, fails == 0, f"200 typed economies, {fails} failures ({strict} with different outcomes)")


def test_criterion_05_strategy_proofness():
    rng = np.random.default_rng(5)
    t0 = time.perf_counter()
    found = {"da": 0, "ttc": 0}
    for _ in range(50):
        e = random_economy(rng, 4, 3, partial=True)
        found["da"] += len(audit.profitable_deviations(deferred_acceptance, e))
        found["ttc"] += len(audit.profitable_deviations(top_trading_cycles, e))
    ia = audit.profitable_deviations(immediate_acceptance, ia_economy(), students=["4"])
    ia_ok = any(rol == ("a", "b", "c") and got == "a" for _, rol, _, got in ia)
    dt = time.perf_counter() - t0
    record(
        5,
        found == {"da": 0, "ttc": 0} and ia_ok,
        f"50 economies: DA {found['da']} / TTC {found['ttc']} profitable deviations; IA deviation for 4 detected={ia_ok} ({dt:.2f}s)",
    )


def test_criterion_06_cardinal_welfare():
    e = cardinal_economy()
    da = simulate.expected_assignment_utilities(e, "da").eu
    ia = simulate.expected_assignment_utilities(e, "ia", reports=CARDINAL_IA_REPORTS).eu
    ca = simulate.expected_assignment_utilities(e, "cada", targets=CARDINAL_CADA_TARGETS).eu
    ok = (
        all(v == Fraction(5, 3) for v in da.values())
        and all(v == 2 for v in ia.values())
        and all(v == 2 for v in ca.values())
    )
    fmt = lambda d: ",".join(str(d[i]) for i in e.students)
    record(6, ok, f"DA ({fmt(da)}) IA ({fmt(ia)}) CADA ({fmt(ca)}) exact rationals")


def test_criterion_07_ttc_rsd_envy():
    t0 = time.perf_counter()
    rows = simulate.ttc_vs_rsd_envy_experiment([10, 50, 200], 500, seed=2026)
    ratio = simulate.envy_ratio(rows)
    dt = time.perf_counter() - t0
    r = [ratio[n] for n in (10, 50, 200)]
    ok = r[0] < r[1] < r[2] and r[2] >= 0.8 and dt < 300
    record(7, ok, "TTC/RSD ratio " + ", ".join(f"n={n}: {ratio[n]:.3f}" for n in (10, 50, 200)) + f" ({dt:.0f}s)")


DELTA = [0.0, 0.5, -0.5, 0.3, -0.2, 0.1]
BETA = [1.0, -0.5]


def test_criterion_08_estimation_recovery():
    t0 = time.perf_counter()
    inside = total = 0
    grad_ok = True
    for r in range(20):
        for behavior, mode in ((est.STT_BEHAVIOR, est.WTT), (est.SKIP_BEHAVIOR, est.STABILITY)):
            mk = est.simulate_choice_data(5000, DELTA, BETA, seed=800 + r, behavior=behavior)
            res = est.fit(mk.data, mode)
            dev = np.abs(res.theta - mk.truth.theta()) / res.se
            inside += int(np.sum(dev <= 3))
            total += dev.size
            grad_ok &= res.grad_norm <= 1e-8
            if r == 0:
                grad_ok &= _gradient_check(mk.data, mode)
    share = inside / total
    dt = time.perf_counter() - t0
    record(
        8,
        share >= 0.95 and grad_ok and dt < 600,
        f"{share:.1%} of parameters within 3 s.e. over 20 reps x 2 modes; gradient checks {'pass' if grad_ok else 'FAIL'} ({dt:.0f}s)",
    )


def _gradient_check(data, mode):
    X = _design(data)
    C, A, valid = _stages(data, mode)
    rng = np.random.default_rng(0)
    q = X.shape[2]
    for _ in range(20):
        theta = rng.normal(scale=0.5, size=q)
        g = _core(theta, X, C, A, valid)[1]
        h = 1e-5
        fd = np.array(
            [(_core(theta + h * e, X, C, A, valid)[0] - _core(theta - h * e, X, C, A, valid)[0]) / (2 * h) for e in np.eye(q)]
        )
        if np.linalg.norm(fd - g) > 1e-6 * max(1.0, np.linalg.norm(g)):
            return False
    return True


def test_criterion_09_hausman_calibration():
    t0 = time.perf_counter()
    rate = {}
    for behavior in (est.STT_BEHAVIOR, est.SKIP_BEHAVIOR):
        rej = 0
        for r in range(50):
            mk = est.simulate_choice_data(5000, DELTA, BETA, seed=900 + r, behavior=behavior)
            h = est.hausman_test(est.fit(mk.data, est.STABILITY), est.fit(mk.data, est.WTT))
            rej += h.rejects(0.05)
        rate[behavior] = rej / 50
    dt = time.perf_counter() - t0
    record(
        9,
        rate[est.STT_BEHAVIOR] <= 0.20 and rate[est.SKIP_BEHAVIOR] >= 0.80,
        f"rejection at 5%: truthful {rate[est.STT_BEHAVIOR]:.0%}, skipping {rate[est.SKIP_BEHAVIOR]:.0%} ({dt:.0f}s)",
    )


def test_criterion_10_gibbs():
    t0 = time.perf_counter()
    mk = est.simulate_choice_data(500, [0.0, 0.6, -0.4, 0.2], [1.0, -0.5], seed=10, family=est.GAUSSIAN)
    res = est.gibbs_probit(mk.data, est.ROL_ORDER, iters=3000, burn_in=1000, seed=10)
    z = np.abs(res.mean - mk.truth.theta()) / res.sd
    rng = np.random.default_rng(1)
    recs = [est.ChoiceRecord(str(k), rng.normal(size=(5, 1))) for k in range(50)]
    d = est.ChoiceData(list("abcde"), ["x1"], recs)
    order = est.teps_from_scenarios(TEPS_SCENARIOS)
    tres = est.gibbs_probit(
        d, est.TEPS, teps_orders={r.student: order for r in recs}, iters=600, burn_in=100, seed=11, keep_latent=True
    )
    col = {s: j for j, s in enumerate("abcde")}
    held = all(np.all(tres.latent[:, :, col[a]] > tres.latent[:, :, col[b]]) for a, b in TEPS_CLOSURE)
    dt = time.perf_counter() - t0
    record(
        10,
        np.all(z <= 3) and held and dt < 300,
        f"max |mean - truth|/sd = {z.max():.2f}; TEPS constraints held in all {tres.latent.shape[0]} draws={held} ({dt:.0f}s)",
    )


def _invocations(tmp):
    econ = tmp / "fig_da_ttc.json"
    econ.write_text(dump_json(economy_to_dict(da_ttc_economy())))
    weak = tmp / "weak.json"
    weak.write_text(dump_json(economy_to_dict(no_priority_economy())))
    card = tmp / "card.json"
    card.write_text(dump_json(economy_to_dict(cardinal_economy())))
    match = tmp / "da.json"
    match.write_text(json.dumps({"1": "a", "2": "b", "3": "c"}))
    mk = est.simulate_choice_data(400, [0.0, 0.4, -0.3], [1.0], seed=1)
    data = tmp / "cd.json"
    data.write_text(json.dumps(mk.data.to_dict()))
    cfgs = {
        "tr.json": {"n_grid": [5, 10], "reps": 10},
        "pr.json": {"economy": "weak.json", "B": 100},
        "eu.json": {"economy": "card.json", "mechanism": "da", "seed_reps": 50},
        "toy.json": {"weights": [[1, 1], [1, 3]]},
        "game.json": {"t1": 2, "t2": 1.5},
        "gb.json": {"iters": 60, "burn_in": 10},
        "mo.json": {"theta": [0.4, -0.3, 1.0], "equalities": True},
        "te.json": {"B": 50},
    }
    for name, c in cfgs.items():
        (tmp / name).write_text(json.dumps(c))
    c = lambda n: str(tmp / n)
    return [
        ["run", "--mechanism", "da", "--economy", c("fig_da_ttc.json")],
        ["run", "--mechanism", "ttc", "--economy", c("weak.json"), "--seed", "4", "--tie-break", "mtb"],
        ["run", "--mechanism", "cada", "--economy", c("card.json"), "--seed", "4", "--targets", c("tg.json")],
        ["audit", "--economy", c("fig_da_ttc.json"), "--matching", c("da.json"), "--check", "envy"],
        ["simulate", "--experiment", "ttc-rsd", "--config", c("tr.json"), "--seed", "3"],
        ["simulate", "--experiment", "probabilities", "--config", c("pr.json"), "--seed", "3"],
        ["simulate", "--experiment", "eu", "--config", c("eu.json"), "--seed", "3"],
        ["simulate", "--experiment", "toy", "--config", c("toy.json")],
        ["simulate", "--experiment", "game", "--config", c("game.json")],
        ["estimate", "--mode", "wtt", "--data", c("cd.json")],
        ["estimate", "--mode", "stability", "--data", c("cd.json")],
        ["estimate", "--mode", "hausman", "--data", c("cd.json")],
        ["estimate", "--mode", "gibbs", "--data", c("cd.json"), "--config", c("gb.json"), "--seed", "3"],
        ["estimate", "--mode", "moments", "--data", c("cd.json"), "--config", c("mo.json")],
        ["estimate", "--mode", "teps", "--data", c("weak.json"), "--config", c("te.json"), "--seed", "3"],
        ["fixtures"],
    ]


def test_criterion_11_determinism(tmp_path):
    (tmp_path / "tg.json").write_text(json.dumps(CARDINAL_CADA_TARGETS))
    cmds = _invocations(tmp_path)
    differ = []
    for k, argv in enumerate(cmds):
        outs = []
        for rep in range(2):
            out = tmp_path / f"out{k}_{rep}"
            code = cli.main(argv + ["--out", str(out)])
            assert code == 0, argv
            outs.append(out.read_bytes())
        if outs[0] != outs[1] or not outs[0]:
            differ.append(argv[:3])
    record(11, not differ, f"{len(cmds) - len(differ)}/{len(cmds)} commands byte-identical on re-run {differ or ''}")
