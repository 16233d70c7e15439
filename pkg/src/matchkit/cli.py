"""Command-line front end.

Every output file is written atomically and accompanied by a
``<out>.manifest.json`` sidecar recording how to reproduce it. The output
itself holds no timestamps, so identical inputs and seed give identical
bytes.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import tempfile
from dataclasses import dataclass
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path
from typing import Callable, Mapping, Optional

import numpy as np

from . import __version__, audit, fixtures, mechanisms, simulate
from . import estimate as est
from .core import (
    Economy,
    Matching,
    dump_json,
    economy_from_dict,
    economy_to_dict,
    load_economy,
    load_matching,
    matching_to_dict,
    pareto_dominates,
    validate_economy,
    validate_matching,
)


class CliError(Exception):
    """Validation failure reported with exit code 1."""


# -- output plumbing ---------------------------------------------------------


def atomic_write(path, data: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


def _digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_output(out, text: str, args, inputs: Mapping[str, Optional[str]], started: str) -> None:
    atomic_write(out, text)
    manifest = {
        "command": args.command,
        "argv": getattr(args, "_argv", []),
        "seed": getattr(args, "seed", None),
        "toolkit_version": __version__,
        "config_hash": _digest(args.config) if getattr(args, "config", None) else None,
        "inputs": {k: {"path": str(v), "sha256": _digest(v)} for k, v in inputs.items() if v},
        "output_sha256": hashlib.sha256(text.encode()).hexdigest(),
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
    }
    atomic_write(f"{out}.manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON ({exc})") from exc


def _economy(path) -> Economy:
    try:
        e = economy_from_dict(_read_json(path))
    except (KeyError, TypeError) as exc:
        raise CliError(f"{path}: schema violation ({exc})") from exc
    problems = validate_economy(e)
    if problems:
        raise CliError(f"{path}: invalid economy:\n  " + "\n  ".join(problems))
    return e


def _economy_value(v, base: Path) -> Economy:
    if isinstance(v, str):
        return _economy(base / v if not os.path.isabs(v) else v)
    e = economy_from_dict(v)
    problems = validate_economy(e)
    if problems:
        raise CliError("invalid economy in config:\n  " + "\n  ".join(problems))
    return e


# -- run ---------------------------------------------------------------------


def cmd_run(args, parser) -> int:
    started = datetime.now(timezone.utc).isoformat()
    e = _economy(args.economy)
    targets = _read_json(args.targets) if args.targets else None
    needs_seed = args.mechanism == "cada" or (args.mechanism == "sd") or not e.is_strict()
    if needs_seed and args.seed is None:
        parser.error(f"--seed is required for mechanism {args.mechanism} on this economy")
    if args.mechanism == "cada" and targets is None:
        raise CliError("cada needs --targets FILE (student -> school)")
    kappa = args.kappa
    if args.mechanism == "dacb" and kappa is None:
        raise CliError("dacb needs --kappa")
    mu = mechanisms.run_mechanism(
        args.mechanism,
        e,
        seed=args.seed,
        tie_break=args.tie_break,
        precedence=args.precedence,
        kappa=kappa,
        targets=targets,
    )
    text = dump_json(matching_to_dict(mu))
    if args.out:
        write_output(args.out, text, args, {"economy": args.economy, "targets": args.targets}, started)
    else:
        sys.stdout.write(text)
    return 0


# -- audit ---------------------------------------------------------------------


def cmd_audit(args, parser) -> int:
    started = datetime.now(timezone.utc).isoformat()
    e = _economy(args.economy)
    try:
        mu = load_matching(args.matching)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read matching {args.matching}: {exc}") from exc
    rep = audit.audit_report(mu, e, args.check)
    text = dump_json(rep)
    if args.out:
        write_output(args.out, text, args, {"economy": args.economy, "matching": args.matching}, started)
    else:
        sys.stdout.write(text)
    return 0 if rep.get("valid", True) else 1


# -- simulate ------------------------------------------------------------------


def cmd_simulate(args, parser) -> int:
    started = datetime.now(timezone.utc).isoformat()
    cfg = _read_json(args.config) if args.config else {}
    base = Path(args.config).parent if args.config else Path(".")
    stochastic = args.experiment in ("ttc-rsd", "probabilities", "eu")
    if stochastic and args.seed is None:
        parser.error(f"--seed is required for experiment {args.experiment}")
    x = args.experiment
    if x == "ttc-rsd":
        rows = simulate.ttc_vs_rsd_envy_experiment(
            cfg.get("n_grid", [10, 50, 200]), int(cfg.get("reps", 100)), args.seed, float(cfg.get("lambda", 0.0))
        )
        text = csv_text(
            ["n", "mechanism", "mean_fraction", "se", "reps"],
            [(r.n, r.mechanism, r.mean_fraction, r.se, r.reps) for r in rows],
        )
    elif x == "probabilities":
        e = _economy_value(cfg["economy"], base)
        reports = cfg.get("reports", {i: list(e.prefs[i]) for i in e.students})
        res = simulate.resample_assignment_probabilities(
            reports,
            e,
            cfg.get("mechanism", "da"),
            int(cfg.get("B", 1000)),
            args.seed,
            tie_break=cfg.get("tie_break", "stb"),
            redraw=cfg.get("redraw", simulate.POPULATION),
        )
        rows = [
            (i, s, float(res.probs[k, j]))
            for k, i in enumerate(res.students)
            for j, s in enumerate(res.schools)
        ]
        rows += [(i, "", float(1.0 - res.probs[k].sum())) for k, i in enumerate(res.students)]
        text = csv_text(["student", "school", "probability"], rows)
    elif x == "toy":
        dist = cfg.get("weights", simulate.UNIFORM)
        r = simulate.toy_district_equilibrium(dist, cfg.get("regime", simulate.GEOGRAPHIC))
        text = csv_text(["quantity", "value"], [("delta", r.delta)] + sorted(r.region_masses.items()))
    elif x == "game":
        g = simulate.decentralized_game_equilibria(float(cfg["t1"]), float(cfg["t2"]))
        rows = [("gamma", g.gamma)] + [
            (f"pure_{k + 1}", f"a admits {a}; b admits {b}") for k, (a, b) in enumerate(g.pure)
        ]
        text = csv_text(["quantity", "value"], rows)
    elif x == "eu":
        e = _economy_value(cfg["economy"], base)
        r = simulate.expected_assignment_utilities(
            e,
            cfg.get("mechanism", "da"),
            reports=cfg.get("reports"),
            targets=cfg.get("targets"),
            seed_reps=int(cfg.get("seed_reps", 2000)),
            seed=args.seed,
        )
        text = csv_text(
            ["student", "expected_utility", "exact_fraction", "se", "exact"],
            [(i, float(r.eu[i]), str(r.eu[i]) if r.exact else "", r.se[i], int(r.exact)) for i in e.students],
        )
    else:  # argparse restricts choices
        raise CliError(f"unknown experiment {x}")
    write_output(args.out, text, args, {"config": args.config}, started)
    return 0


# -- estimate ------------------------------------------------------------------


def _param_csv(table) -> str:
    return csv_text(["param", "estimate", "se"], table)


def _fit_from_dict(d: dict, mode: str) -> est.FitResult:
    try:
        names = list(d["names"])
        theta = np.asarray(d["theta"], dtype=float)
        cov = np.asarray(d["cov"], dtype=float)
    except KeyError as exc:
        raise CliError(f"fit for {mode} is missing field {exc}") from exc
    if theta.shape != (len(names),) or cov.shape != (len(names), len(names)):
        raise CliError(f"fit for {mode}: theta/cov shapes do not match names")
    return est.FitResult(None, mode, names, theta, cov, float(d.get("loglik", float("nan"))), 0.0, 0, True)


def cmd_estimate(args, parser) -> int:
    started = datetime.now(timezone.utc).isoformat()
    cfg = _read_json(args.config) if args.config else {}
    mode = args.mode
    if mode in ("teps", "gibbs") and args.seed is None:
        parser.error(f"--seed is required for mode {mode}")
    raw = _read_json(args.data)
    if mode in ("wtt", "stability"):
        data = _choice_data(raw, args.data)
        try:
            res = est.fit(data, mode, normalize=cfg.get("normalize", "scale"), distance=cfg.get("distance"))
        except (est.StabilityViolation, est.NotIdentifiableError, est.ConvergenceError) as exc:
            raise CliError(str(exc)) from exc
        text = _param_csv(res.table())
    elif mode == "hausman":
        if "fits" in raw:
            st = _fit_from_dict(raw["fits"].get("stability", {}), "stability")
            wt = _fit_from_dict(raw["fits"].get("wtt", {}), "wtt")
        else:
            data = _choice_data(raw, args.data)
            st, wt = est.fit(data, est.STABILITY), est.fit(data, est.WTT)
        try:
            h = est.hausman_test(st, wt)
        except est.LayoutMismatch as exc:
            raise CliError(str(exc)) from exc
        text = csv_text(["quantity", "value"], [("statistic", h.statistic), ("dof", h.dof), ("pvalue", h.pvalue)])
    elif mode == "teps":
        try:
            e = economy_from_dict(raw)
        except (KeyError, TypeError) as exc:
            raise CliError(f"{args.data}: teps expects an economy file ({exc})") from exc
        problems = validate_economy(e)
        if problems:
            raise CliError("invalid economy:\n  " + "\n  ".join(problems))
        orders = est.teps_infer(
            {i: e.prefs[i] for i in e.students}, e, int(cfg.get("B", 1000)), args.seed, cfg.get("tie_break", "stb")
        )
        rows = []
        for i in e.students:
            po = orders[i]
            for a, b in sorted(po.pairs, key=lambda p: (e.schools.index(p[0]), e.schools.index(p[1]))):
                rows.append((i, a, b, int(po.consistent)))
        text = csv_text(["student", "better", "worse", "consistent"], rows)
    elif mode == "gibbs":
        data = _choice_data(raw, args.data)
        src = cfg.get("constraint_source", est.ROL_ORDER)
        kw = {}
        if src == est.TEPS:
            kw["teps_orders"] = {
                r.student: est.transitive_closure(map(tuple, raw.get("teps", {}).get(r.student, [])))
                for r in data.records
            }
        res = est.gibbs_probit(
            data,
            src,
            random_coefficients=cfg.get("random_coefficients", ()),
            iters=int(cfg.get("iters", 2000)),
            burn_in=int(cfg.get("burn_in", 500)),
            seed=args.seed,
            **kw,
        )
        text = _param_csv(res.table())
    elif mode == "moments":
        data = _choice_data(raw, args.data)
        if "theta" not in cfg:
            raise CliError("moments mode needs 'theta' in --config")
        ineq = est.undominated_pair_moments(data)
        eq = est.stability_equality_moments(data) if cfg.get("equalities", False) else None
        T = est.moment_statistic(
            np.asarray(cfg["theta"], dtype=float),
            est.combined_moments(ineq, eq),
            cfg.get("equality_mode", est.TWO_SIDED),
        )
        text = csv_text(["quantity", "value"], [("T", T)])
    else:
        raise CliError(f"unknown mode {mode}")
    write_output(args.out, text, args, {"data": args.data, "config": args.config}, started)
    return 0


def _choice_data(raw, path) -> est.ChoiceData:
    try:
        return est.ChoiceData.from_dict(raw)
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"{path}: invalid choice data ({exc})") from exc


# -- fixtures ------------------------------------------------------------------


@dataclass(frozen=True)
class FixtureResult:
    name: str
    passed: bool
    detail: str


def _m(s: str) -> Matching:
    return Matching.from_pairs(s)


def fixtures_suite(registry: Optional[Mapping[str, Callable]] = None) -> list:
    """Run every worked-example fixture. ``registry`` overrides mechanism
    implementations by id (``ia``, ``da``, ``ttc``, ``sd``, ``da-maq``,
    ``da-mir``, ``dacb``)."""
    reg = {
        "ia": mechanisms.immediate_acceptance,
        "da": mechanisms.deferred_acceptance,
        "ttc": mechanisms.top_trading_cycles,
        "sd": mechanisms.serial_dictatorship,
        "da-maq": mechanisms.da_maximum_quotas,
        "da-mir": mechanisms.da_minority_reserves,
        "dacb": mechanisms.dacb,
    }
    reg.update(registry or {})
    F = fixtures
    checks = [
        ("ia_truthful", lambda: reg["ia"](F.ia_economy()), _m("1a,2a,3b,4c")),
        ("ia_student4_deviates", lambda: reg["ia"](F.ia_economy().with_report("4", "abc"))["4"], "a"),
        ("da_vs_ttc_da", lambda: reg["da"](F.da_ttc_economy()), _m("1a,2b,3c")),
        ("da_vs_ttc_ttc", lambda: reg["ttc"](F.da_ttc_economy()), _m("1b,2a,3c")),
        ("da_vs_ttc_sd_123", lambda: reg["sd"](F.da_ttc_economy(), ["1", "2", "3"]), _m("1b,2a,3c")),
        ("ttc_short_cycles", lambda: reg["ttc"](F.ttc_short_cycles_economy()), _m("1a,2b,3c")),
        ("dacb_kappa1", lambda: reg["dacb"](F.da_ttc_economy(), 1), _m("1b,2c,3a")),
        ("dacb_kappa2", lambda: reg["dacb"](F.da_ttc_economy(), 2), _m("1c,2b,3a")),
        ("quota_da", lambda: reg["da"](F.quota_economy()), _m("1a,2a,3b")),
        ("quota_maq", lambda: reg["da-maq"](F.quota_economy(quota=True)), _m("1a,2b,3a")),
        ("quota_mir", lambda: reg["da-mir"](F.quota_economy(reserve=True)), _m("1a,2a,3b")),
        ("reserve_da", lambda: reg["da"](F.reserve_economy()), _m("1a,2c,3b")),
        ("reserve_mir", lambda: reg["da-mir"](F.reserve_economy(reserve=True)), _m("1c,2a,3b")),
        (
            "ttc_dominates_da",
            lambda: pareto_dominates(_m("1b,2a,3c"), _m("1a,2b,3c"), F.da_ttc_economy()),
            True,
        ),
        (
            "sic_from_da",
            lambda: audit.sic_to_constrained_efficient(_m("1a,2b,3c"), F.no_priority_economy()),
            _m("1b,2a,3c"),
        ),
        (
            "ttc_unstable_3_envies_2",
            lambda: any(
                b.clause == audit.ENVY and b.student == "3" and b.other == "2"
                for b in audit.blocking_pairs(reg["ttc"](F.da_ttc_economy()), F.da_ttc_economy())
            ),
            True,
        ),
        ("teps_closure", lambda: set(est.teps_from_scenarios(F.TEPS_SCENARIOS).pairs), F.TEPS_CLOSURE),
        ("feasible_set", lambda: est.feasible_set(F.FEASIBLE_SCORES, F.FEASIBLE_CUTOFFS), {"a", "c"}),
        (
            "eu_da",
            lambda: simulate.expected_assignment_utilities(F.cardinal_economy(), "da").eu,
            {i: Fraction(5, 3) for i in F.S3},
        ),
        (
            "eu_ia",
            lambda: simulate.expected_assignment_utilities(
                F.cardinal_economy(), "ia", reports=F.CARDINAL_IA_REPORTS
            ).eu,
            {i: 2 for i in F.S3},
        ),
        (
            "eu_cada",
            lambda: simulate.expected_assignment_utilities(
                F.cardinal_economy(), "cada", targets=F.CARDINAL_CADA_TARGETS
            ).eu,
            {i: 2 for i in F.S3},
        ),
        ("game_gamma", lambda: round(simulate.decentralized_game_equilibria(2, 1.5).gamma, 12), round(2.5 / 3.5, 12)),
    ]
    out = []
    for name, fn, want in checks:
        try:
            got = fn()
            ok = got == want
            detail = "" if ok else f"expected {want!r}, got {got!r}"
        except Exception as exc:  # a crashing fixture is a failing fixture
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append(FixtureResult(name, bool(ok), detail))
    return out


FIXTURE_ECONOMIES = {
    "fig_ia": fixtures.ia_economy,
    "fig_da_ttc": fixtures.da_ttc_economy,
    "fig_ttc_short_cycles": fixtures.ttc_short_cycles_economy,
    "quota_cap": lambda: fixtures.quota_economy(quota=True),
    "quota_reserve": lambda: fixtures.quota_economy(reserve=True),
    "reserve_hurts": lambda: fixtures.reserve_economy(reserve=True),
    "no_priority": fixtures.no_priority_economy,
}


def cmd_fixtures(args, parser) -> int:
    started = datetime.now(timezone.utc).isoformat()
    if args.export:
        for name, make in FIXTURE_ECONOMIES.items():
            atomic_write(Path(args.export) / f"{name}.json", dump_json(economy_to_dict(make())))
    res = fixtures_suite()
    text = csv_text(["fixture", "status", "detail"], [(r.name, "pass" if r.passed else "fail", r.detail) for r in res])
    if args.out:
        write_output(args.out, text, args, {}, started)
    else:
        sys.stdout.write(text)
    return 0 if all(r.passed for r in res) else 1


# -- entry point -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="matchkit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"matchkit {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a mechanism on an economy")
    r.add_argument("--mechanism", required=True, choices=mechanisms.MECHANISM_IDS)
    r.add_argument("--economy", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--tie-break", default="stb", choices=["stb", "mtb"])
    r.add_argument("--precedence", default="reserved-first", choices=["reserved-first", "open-first"])
    r.add_argument("--kappa", type=int)
    r.add_argument("--targets", help="JSON map student -> target school (cada)")
    r.add_argument("--out", help="matching JSON (stdout if omitted)")
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("audit", help="audit a matching")
    a.add_argument("--economy", required=True)
    a.add_argument("--matching", required=True)
    a.add_argument("--check", default="stability", choices=["stability", "efficiency", "envy", "sic"])
    a.add_argument("--out")
    a.set_defaults(func=cmd_audit)

    s = sub.add_parser("simulate", help="run a simulation experiment")
    s.add_argument("--experiment", required=True, choices=["ttc-rsd", "probabilities", "toy", "game", "eu"])
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", help="estimate preferences from choice data")
    e.add_argument("--mode", required=True, choices=["wtt", "stability", "teps", "gibbs", "moments", "hausman"])
    e.add_argument("--data", required=True)
    e.add_argument("--config")
    e.add_argument("--seed", type=int)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_estimate)

    f = sub.add_parser("fixtures", help="run the worked-example regression suite")
    f.add_argument("--out")
    f.add_argument("--export", metavar="DIR", help="also write the fixture economies as JSON files")
    f.set_defaults(func=cmd_fixtures)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args._argv = argv
    sub = parser._subparsers._group_actions[0].choices[args.command]
    try:
        return args.func(args, sub)
    except CliError as exc:
        print(f"matchkit {args.command}: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError) as exc:
        print(f"matchkit {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
