"""Random economies, Monte Carlo experiments and assignment-probability
resampling."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Optional, Sequence, Union

import numpy as np
from shapely.geometry import Polygon, box

from . import audit, mechanisms
from .core import MTB, STB, UNASSIGNED, Economy, Lottery, Matching, draw_lottery, lottery_from_order

log = logging.getLogger(__name__)

NONE = "none"
IID_STRICT = "iid-strict"
COARSE = "coarse"


@dataclass(frozen=True)
class GenConfig:
    n_students: int
    n_schools: int
    capacities: Union[int, Sequence[int]] = 1
    lam: float = 0.0
    priority_mode: str = IID_STRICT
    n_classes: int = 2
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        caps = self.capacity_list()
        if len(caps) != self.n_schools or min(caps) < 1:
            raise ValueError("capacities must be >= 1, one per school")
        if self.priority_mode not in (NONE, IID_STRICT, COARSE):
            raise ValueError(f"unknown priority mode {self.priority_mode!r}")

    def capacity_list(self) -> list:
        if isinstance(self.capacities, int):
            return [self.capacities] * self.n_schools
        return list(self.capacities)


def student_ids(n: int) -> list:
    return [f"i{k + 1}" for k in range(n)]


def school_ids(m: int) -> list:
    return [f"s{k + 1}" for k in range(m)]


def gen_economy(cfg: GenConfig, rng: Optional[np.random.Generator] = None) -> Economy:
    """Economy with u_ij = lam * c_j + (1 - lam) * eta_ij, all uniform.

    Every school is acceptable. Exact utility ties (possible in floating
    point) are broken by school index and then nudged apart so that the
    stored utilities stay strictly decreasing along each list.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    n, m = cfg.n_students, cfg.n_schools
    I, J = student_ids(n), school_ids(m)
    c = rng.random(m)
    eta = rng.random((n, m))
    u = cfg.lam * c[None, :] + (1.0 - cfg.lam) * eta
    order = np.argsort(-u, axis=1, kind="stable")
    prefs = {}
    vnm = {}
    for k, i in enumerate(I):
        row = order[k]
        prefs[i] = [J[j] for j in row]
        vals = u[k, row]
        for pos in range(1, m):
            if vals[pos] >= vals[pos - 1]:
                log.info("utility tie for %s broken by school index", i)
                vals[pos] = np.nextafter(vals[pos - 1], -np.inf)
        for pos, j in enumerate(row):
            vnm[(i, J[j])] = float(vals[pos])
    if cfg.priority_mode == NONE:
        prio = {s: (tuple(I),) for s in J}
    elif cfg.priority_mode == IID_STRICT:
        prio = {s: tuple((I[k],) for k in rng.permutation(n)) for s in J}
    else:
        prio = {}
        for s in J:
            cls = rng.integers(0, cfg.n_classes, size=n)
            prio[s] = tuple(
                tuple(I[k] for k in range(n) if cls[k] == c_)
                for c_ in range(cfg.n_classes)
                if np.any(cls == c_)
            )
    return Economy(
        students=I,
        schools=J,
        capacity=dict(zip(J, cfg.capacity_list())),
        prefs=prefs,
        priorities=prio,
        vnm=vnm,
    )


def _rep_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


# -- TTC versus RSD justified envy ---------------------------------------------


@dataclass(frozen=True)
class EnvyRow:
    n: int
    mechanism: str
    mean_fraction: float
    se: float
    reps: int


def ttc_vs_rsd_envy_experiment(
    n_grid: Sequence[int], reps: int, seed: int, lam: float = 0.0
) -> list:
    """Mean share of justified envy among all envy, TTC versus RSD.

    One-to-one markets with i.i.d. strict priorities. RSD's order is an
    independent uniform lottery; justified envy under RSD is still measured
    against the schools' priorities.
    """
    rows = []
    for n in n_grid:
        fr = {"ttc": [], "rsd": []}
        for r in range(reps):
            rng = _rep_rng(seed, n, r)
            e = gen_economy(GenConfig(n, n, 1, lam, IID_STRICT), rng=rng)
            lot = draw_lottery(e, STB, rng=rng)
            fr["ttc"].append(audit.envy_report(mechanisms.top_trading_cycles(e), e).fraction)
            fr["rsd"].append(audit.envy_report(mechanisms.rsd(e, lot), e).fraction)
        for mech in ("ttc", "rsd"):
            x = np.asarray(fr[mech])
            se = float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0
            rows.append(EnvyRow(n, mech, float(x.mean()), se, reps))
    return rows


def envy_ratio(rows: Sequence[EnvyRow]) -> dict:
    """n -> mean TTC fraction / mean RSD fraction."""
    by = {(r.n, r.mechanism): r.mean_fraction for r in rows}
    out = {}
    for n in sorted({r.n for r in rows}):
        d = by[(n, "rsd")]
        out[n] = by[(n, "ttc")] / d if d > 0 else float("nan")
    return out


# -- assignment probabilities by resampling -----------------------------------

RESAMPLE_MECHANISMS = ("da", "ia")
POPULATION = "population"
LOTTERY_ONLY = "lottery"


@dataclass
class ResampleResult:
    """Cutoff draws plus each student's own tie-breakers per draw.

    ``cutoffs[b, j]`` is school j's cutoff in draw b; ``own_tau[b, k, j]`` is
    student k's tie-breaker at school j in draw b.
    """

    students: list
    schools: list
    mech: str
    cutoffs: np.ndarray
    own_tau: np.ndarray
    classes: np.ndarray  # students x schools priority-class index
    n_classes: np.ndarray  # per school
    probs: np.ndarray = field(default=None)

    def _score(self, k: int, rol: Sequence[str]) -> np.ndarray:
        """Eligibility of student k at every school, per draw (B x m)."""
        base = (self.n_classes - 1 - self.classes[k])[None, :] + self.own_tau[:, k, :]
        if self.mech == "ia":
            L = len(self.schools)
            pos = {s: r for r, s in enumerate(rol)}
            bump = np.array([L - pos.get(s, L) for s in self.schools], dtype=float)
            base = base + (bump * self.n_classes)[None, :]
        return base

    def lottery(self, student: str, rol: Sequence[str]) -> np.ndarray:
        """Probability of each school when ``student`` submits ``rol``."""
        k = self.students.index(student)
        score = self._score(k, rol)
        B = score.shape[0]
        col = {s: j for j, s in enumerate(self.schools)}
        out = np.zeros(len(self.schools))
        won = np.zeros(B, dtype=bool)
        for s in rol:
            j = col[s]
            clear = (score[:, j] >= self.cutoffs[:, j]) & ~won
            out[j] = clear.mean()
            won |= clear
        return out

    def as_dict(self) -> dict:
        return {
            i: {s: float(self.probs[k, j]) for j, s in enumerate(self.schools)}
            for k, i in enumerate(self.students)
        }


def eligibility(e: Economy, mech: str, i: str, s: str, tau: float, rol=None) -> float:
    pc = e.priority_class(s)
    K = len(e.priorities[s])
    val = (K - 1 - pc[i]) + tau
    if mech == "ia":
        rol = e.prefs[i] if rol is None else rol
        L = len(e.schools)
        r = rol.index(s) if s in rol else L
        val += (L - r) * K
    return val


def market_cutoffs(e: Economy, mu: Matching, lot: Lottery, mech: str) -> dict:
    """Lowest admitted eligibility at full schools, else 0."""
    out = {}
    for s in e.schools:
        held = mu.at(s)
        if len(held) >= e.capacity[s]:
            out[s] = min(eligibility(e, mech, i, s, lot.value(i, s)) for i in held)
        else:
            out[s] = 0.0
    return out


def resample_assignment_probabilities(
    reports: Mapping[str, Sequence[str]],
    e: Economy,
    mech: str,
    B: int,
    seed: int,
    tie_break: str = STB,
    redraw: str = POPULATION,
) -> ResampleResult:
    """Estimate each student's assignment lottery by resampling the market.

    Each draw builds a market, breaks ties, runs ``mech`` and records the
    cutoffs. Under ``redraw="population"`` the market is n - 1 students
    drawn with replacement, so that together with the student being
    evaluated it has the observed size. Under ``redraw="lottery"`` the
    market is the observed population and only tie-breakers change; the
    student's own tie-breaker is then the one drawn for that student.
    """
    if B < 1:
        raise ValueError("B must be >= 1")
    if mech not in RESAMPLE_MECHANISMS:
        raise ValueError(f"unknown mechanism {mech!r} (choose from {RESAMPLE_MECHANISMS})")
    if redraw not in (POPULATION, LOTTERY_ONLY):
        raise ValueError(f"unknown redraw mode {redraw!r}")
    run = mechanisms.MECHANISMS[mech]
    rng = np.random.default_rng(seed)
    I, J = list(e.students), list(e.schools)
    n, m = len(I), len(J)
    rep = e.replace(prefs={i: tuple(reports[i]) for i in I})
    classes = np.array([[rep.priority_class(s)[i] for s in J] for i in I])
    n_classes = np.array([len(rep.priorities[s]) for s in J])
    cutoffs = np.zeros((B, m))
    own = np.zeros((B, n, m))
    for b in range(B):
        if redraw == POPULATION:
            idx = rng.integers(0, n, size=max(n - 1, 0))
            clones = [f"r{k}" for k in range(len(idx))]
            src = {c: I[k] for c, k in zip(clones, idx)}
            kof = {c: int(k) for c, k in zip(clones, idx)}
            prio = {}
            for jj, s in enumerate(J):
                groups = [[] for _ in range(n_classes[jj])]
                for c in clones:
                    groups[classes[kof[c], jj]].append(c)
                prio[s] = tuple(tuple(g) for g in groups if g)
            mkt = Economy(
                students=clones,
                schools=J,
                capacity=e.capacity,
                prefs={c: rep.prefs[src[c]] for c in clones},
                priorities=prio,
            )
            lot = _continuous_lottery(mkt, tie_break, rng)
            mu = run(mechanisms.break_ties(mkt, lot))
            for jj, s in enumerate(J):
                held = mu.at(s)
                if held and len(held) >= e.capacity[s]:
                    cutoffs[b, jj] = min(
                        (n_classes[jj] - 1 - classes[kof[c], jj])
                        + lot.value(c, s)
                        + _ia_bump(mech, rep.prefs[src[c]], s, m, n_classes[jj])
                        for c in held
                    )
            own[b] = _fresh_taus(rng, n, m, tie_break)
        else:
            lot = draw_lottery(rep, tie_break, rng=rng)
            mu = run(mechanisms.break_ties(rep, lot))
            cut = market_cutoffs(rep, mu, lot, mech)
            cutoffs[b] = [cut[s] for s in J]
            for k, i in enumerate(I):
                own[b, k] = [lot.value(i, s) for s in J]
    res = ResampleResult(I, J, mech, cutoffs, own, classes, n_classes)
    res.probs = np.vstack([res.lottery(i, reports[i]) for i in I]) if n else np.zeros((0, m))
    return res


def _ia_bump(mech, rol, s, m, K):
    if mech != "ia":
        return 0.0
    r = rol.index(s) if s in rol else m
    return float((m - r) * K)


def _continuous_lottery(e: Economy, tie_break: str, rng) -> Lottery:
    # same law as the student's own fresh draw, so clearing odds are exact
    if tie_break == STB:
        return Lottery(STB, 0, dict(zip(e.students, rng.random(len(e.students)).tolist())))
    vals = rng.random((len(e.students), len(e.schools)))
    tau = {(i, s): float(vals[a, b]) for a, i in enumerate(e.students) for b, s in enumerate(e.schools)}
    return Lottery(MTB, 0, tau)


def _fresh_taus(rng, n, m, tie_break):
    # continuous draws; ties with the market have probability zero
    if tie_break == STB:
        return np.repeat(rng.random((n, 1)), m, axis=1)
    return rng.random((n, m))


# -- decentralized admissions game ------------------------------------------


@dataclass(frozen=True)
class GameEquilibria:
    pure: tuple
    gamma: float
    payoffs: dict


def decentralized_game_equilibria(t1: float, t2: float) -> GameEquilibria:
    """Equilibria of the two-school, two-student admissions game.

    Each school admits one student; if both admit the same student, that student
    picks one at random. ``gamma`` is the probability each school admits
    student 1 in the mixed equilibrium.
    """
    if not (0 < t2 < t1 < 2 * t2):
        raise ValueError("need 0 < t2 < t1 < 2*t2")
    pay = {
        ("1", "1"): (t1 / 2, t1 / 2),
        ("1", "2"): (t1, t2),
        ("2", "1"): (t2, t1),
        ("2", "2"): (t2 / 2, t2 / 2),
    }
    pure = []
    for a, b in pay:
        ua, ub = pay[(a, b)]
        alt_a = "2" if a == "1" else "1"
        alt_b = "2" if b == "1" else "1"
        if ua >= pay[(alt_a, b)][0] and ub >= pay[(a, alt_b)][1]:
            pure.append((a, b))
    gamma = (2 * t1 - t2) / (t1 + t2)
    # opponent indifferent between admitting 1 and 2 when the other mixes
    u1 = gamma * pay[("1", "1")][0] + (1 - gamma) * pay[("1", "2")][0]
    u2 = gamma * pay[("2", "1")][0] + (1 - gamma) * pay[("2", "2")][0]
    if abs(u1 - u2) > 1e-12 * max(1.0, abs(u1)):
        raise ArithmeticError("mixed equilibrium indifference failed")
    return GameEquilibria(tuple(pure), gamma, pay)


# -- toy two-district housing model -------------------------------------------

GEOGRAPHIC = "geographic"
CHOICE = "choice"


@dataclass(frozen=True)
class ToyResult:
    delta: float
    region_masses: dict


class GridDensity:
    """Piecewise-constant density on a regular grid over [-1/2, 1/2]^2.

    ``weights[r, c]`` is the probability mass of the cell in row r (y, from
    bottom) and column c (x, from left).
    """

    def __init__(self, weights):
        w = np.asarray(weights, dtype=float)
        if w.ndim != 2 or np.any(w < 0) or not np.isfinite(w).all() or w.sum() <= 0:
            raise ValueError("density weights must be a non-negative, non-zero grid")
        self.w = w / w.sum()
        ny, nx = w.shape
        xs = np.linspace(-0.5, 0.5, nx + 1)
        ys = np.linspace(-0.5, 0.5, ny + 1)
        self.cells = [
            (self.w[r, c], box(xs[c], ys[r], xs[c + 1], ys[r + 1]))
            for r in range(ny)
            for c in range(nx)
            if self.w[r, c] > 0
        ]

    def mass(self, poly) -> float:
        total = 0.0
        for w, cell in self.cells:
            inter = cell.intersection(poly)
            if not inter.is_empty:
                total += w * inter.area / cell.area
        return total


UNIFORM = "uniform"

_SQ = box(-0.5, -0.5, 0.5, 0.5)
_BIG = 4.0


def _halfplane(a: float, b: float, c: float):
    """{(x, y): a x + b y >= c} clipped to a large box."""
    # two points on the line a x + b y = c, then extend toward the side
    if abs(b) > abs(a):
        p = [(-_BIG, (c + a * _BIG) / b), (_BIG, (c - a * _BIG) / b)]
    else:
        p = [((c + b * _BIG) / a, -_BIG), ((c - b * _BIG) / a, _BIG)]
    nx, ny = a / math.hypot(a, b), b / math.hypot(a, b)
    far = [(x + 3 * _BIG * nx, y + 3 * _BIG * ny) for x, y in reversed(p)]
    return Polygon(p + far).intersection(box(-_BIG, -_BIG, _BIG, _BIG))


def _lives_A(regime, delta):
    if regime == GEOGRAPHIC:
        return _halfplane(1.0, 1.0, delta).intersection(_SQ)
    return _halfplane(1.0, 0.0, delta).intersection(_SQ)


def toy_district_equilibrium(distribution=UNIFORM, regime: str = GEOGRAPHIC, tol: float = 1e-9) -> ToyResult:
    """Rent difference clearing the housing market (half the mass lives in A).

    Under ``geographic`` a family lives in A iff x + y >= delta; under
    ``choice`` iff x >= delta. Region masses: ``blue`` prefers B and a but
    lives in A, ``red`` prefers B and a and lives in B, ``green`` prefers A
    and b but lives in B, ``orange`` prefers A and b and lives in A. Under
    geographic assignment these are the four distorted triangles.
    ``undistorted`` is the rest.
    """
    dens = GridDensity([[1.0]]) if isinstance(distribution, str) and distribution == UNIFORM else (
        distribution if isinstance(distribution, GridDensity) else GridDensity(distribution)
    )
    if regime not in (GEOGRAPHIC, CHOICE):
        raise ValueError(f"unknown regime {regime!r}")
    lo, hi = (-1.0, 1.0) if regime == GEOGRAPHIC else (-0.5, 0.5)
    # mass in A decreases in delta
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if dens.mass(_lives_A(regime, mid)) > 0.5:
            lo = mid
        else:
            hi = mid
    delta = 0.5 * (lo + hi)
    if abs(delta) < tol:
        delta = 0.0
    A = _lives_A(regime, delta)
    B_ = _SQ.difference(A)
    q_ba = box(-0.5, 0.0, 0.0, 0.5)  # prefers B and a
    q_ab = box(0.0, -0.5, 0.5, 0.0)  # prefers A and b
    masses = {
        "blue": dens.mass(q_ba.intersection(A)),
        "red": dens.mass(q_ba.intersection(B_)),
        "green": dens.mass(q_ab.intersection(B_)),
        "orange": dens.mass(q_ab.intersection(A)),
    }
    if regime == CHOICE:
        # school no longer follows residence: only residential mismatch left
        masses["red"] = 0.0
        masses["orange"] = 0.0
        masses["blue"] = dens.mass(box(-0.5, -0.5, 0.0, 0.5).intersection(A)) if delta < 0 else 0.0
        masses["green"] = dens.mass(box(0.0, -0.5, 0.5, 0.5).intersection(B_)) if delta > 0 else 0.0
    masses = {k: float(v) for k, v in masses.items()}
    masses["undistorted"] = max(0.0, 1.0 - sum(masses.values()))
    return ToyResult(delta, masses)


# -- expected utilities --------------------------------------------------------

EXACT_MAX_N = 5


@dataclass(frozen=True)
class EUResult:
    eu: dict
    se: dict
    exact: bool


def _utility(e: Economy, i: str, s) -> Fraction:
    if s is UNASSIGNED:
        return 0
    return e.vnm[(i, s)]


def expected_assignment_utilities(
    e: Economy,
    mech: str,
    reports: Optional[Mapping[str, Sequence[str]]] = None,
    targets: Optional[Mapping[str, str]] = None,
    seed_reps: int = 2000,
    seed: int = 0,
    exact: Optional[bool] = None,
) -> EUResult:
    """Expected vNM utility of each student over the tie-breaking lottery.

    Exact when n <= 5 (every single-lottery order; for CADA every pair of
    orders), otherwise Monte Carlo. Being unassigned is worth 0.
    """
    if e.vnm is None:
        raise ValueError("economy has no vnm utilities")
    I = list(e.students)
    rep = e if reports is None else e.replace(prefs={i: tuple(reports.get(i, e.prefs[i])) for i in I})
    if exact is None:
        exact = len(I) <= EXACT_MAX_N

    def outcome(T: Lottery, R: Optional[Lottery]) -> Matching:
        if mech == "cada":
            return mechanisms.cada(rep, targets or {}, lot=(T, R))
        if mech == "sd":
            return mechanisms.rsd(rep, T)
        return mechanisms.MECHANISMS[mech](mechanisms.break_ties(rep, T))

    if exact:
        orders = list(itertools.permutations(I))
        lots = [lottery_from_order(rep, o) for o in orders]
        total = {i: Fraction(0) for i in I}
        count = 0
        pairs = itertools.product(lots, lots) if mech == "cada" else ((t, None) for t in lots)
        for T, R in pairs:
            mu = outcome(T, R)
            for i in I:
                total[i] += Fraction(_utility(e, i, mu[i]))
            count += 1
        return EUResult({i: total[i] / count for i in I}, {i: 0.0 for i in I}, True)

    vals = {i: [] for i in I}
    for r in range(seed_reps):
        rng = _rep_rng(seed, r)
        if mech == "cada":
            T, R = mechanisms.cada_lotteries(rep, int(rng.integers(2**63)))
        else:
            T, R = draw_lottery(rep, STB, rng=rng), None
        mu = outcome(T, R)
        for i in I:
            vals[i].append(float(_utility(e, i, mu[i])))
    eu, se = {}, {}
    for i in I:
        x = np.asarray(vals[i])
        eu[i] = float(x.mean())
        se[i] = float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0
    return EUResult(eu, se, False)
