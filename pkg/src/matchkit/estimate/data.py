"""Choice records, utility specifications and simulated choice data."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..core import Economy
from ..mechanisms import deferred_acceptance

WTT = "wtt"
STABILITY = "stability"
EVT1 = "evt1"
GAUSSIAN = "gaussian"

STT_BEHAVIOR = "stt"
SKIP_BEHAVIOR = "skip"


@dataclass
class ChoiceRecord:
    """One student's data. ``z`` is (schools x covariates)."""

    student: str
    z: np.ndarray
    rol: tuple = ()
    match: Optional[str] = None
    scores: Optional[np.ndarray] = None
    feasible: Optional[frozenset] = None

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float)
        self.rol = tuple(self.rol)
        if len(set(self.rol)) != len(self.rol):
            raise ValueError(f"record {self.student}: ROL entries must be distinct")
        if self.match is not None and self.match not in self.rol:
            raise ValueError(f"record {self.student}: match not on ROL")
        if self.scores is not None:
            self.scores = np.asarray(self.scores, dtype=float)
        if self.feasible is not None:
            self.feasible = frozenset(self.feasible)


@dataclass
class ChoiceData:
    schools: list
    covariates: list
    records: list
    cutoffs: Optional[dict] = None
    _arrays: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.schools = list(self.schools)
        self.covariates = list(self.covariates)
        shape = (len(self.schools), len(self.covariates))
        for r in self.records:
            if r.z.shape != shape:
                raise ValueError(f"record {r.student}: covariates shape {r.z.shape} != {shape}")
            for s in r.rol:
                if s not in self.schools:
                    raise ValueError(f"record {r.student}: unknown school {s!r}")

    def __len__(self):
        return len(self.records)

    def feasible_of(self, r: ChoiceRecord) -> frozenset:
        from .teps import feasible_set

        if r.feasible is not None:
            return r.feasible
        if self.cutoffs is None or r.scores is None:
            raise ValueError(f"record {r.student}: no feasible set and no cutoffs/scores")
        return frozenset(feasible_set(dict(zip(self.schools, r.scores)), self.cutoffs))

    def Z(self) -> np.ndarray:
        if "Z" not in self._arrays:
            if self.records:
                self._arrays["Z"] = np.stack([r.z for r in self.records])
            else:
                self._arrays["Z"] = np.zeros((0, len(self.schools), len(self.covariates)))
        return self._arrays["Z"]

    def subset(self, idx) -> "ChoiceData":
        return ChoiceData(self.schools, self.covariates, [self.records[k] for k in idx], self.cutoffs)

    # -- JSON ---------------------------------------------------------------

    def to_dict(self) -> dict:
        recs = []
        for r in self.records:
            d = {"student": r.student, "z": r.z.tolist(), "rol": list(r.rol), "match": r.match}
            if r.scores is not None:
                d["scores"] = r.scores.tolist()
            if r.feasible is not None:
                d["feasible"] = sorted(r.feasible, key=self.schools.index)
            recs.append(d)
        out = {"schools": self.schools, "covariates": self.covariates, "records": recs}
        if self.cutoffs is not None:
            out["cutoffs"] = dict(self.cutoffs)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ChoiceData":
        recs = [
            ChoiceRecord(
                student=r["student"],
                z=np.asarray(r["z"], dtype=float).reshape(len(d["schools"]), len(d["covariates"])),
                rol=tuple(r.get("rol", ())),
                match=r.get("match"),
                scores=r.get("scores"),
                feasible=r.get("feasible"),
            )
            for r in d["records"]
        ]
        return cls(d["schools"], d["covariates"], recs, d.get("cutoffs"))


def load_choice_data(path) -> ChoiceData:
    return ChoiceData.from_dict(json.loads(Path(path).read_text()))


@dataclass
class LogitSpec:
    """Utility parameters: V_ij = (delta_j + z_ij . beta) / scale.

    ``delta[0]`` is the location normalization and stays 0.
    ``sigma_beta`` holds random-coefficient variances (probit only).
    """

    schools: list
    covariates: list
    delta: np.ndarray
    beta: np.ndarray
    scale: float = 1.0
    family: str = EVT1
    sigma_beta: Optional[np.ndarray] = None

    def __post_init__(self):
        self.delta = np.asarray(self.delta, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if len(self.delta) != len(self.schools) or len(self.beta) != len(self.covariates):
            raise ValueError("parameter lengths do not match the layout")
        if abs(self.delta[0]) > 0:
            raise ValueError("delta of the first school is the location normalization (0)")

    @property
    def names(self) -> list:
        return [f"delta[{s}]" for s in self.schools[1:]] + [f"beta[{c}]" for c in self.covariates]

    def theta(self) -> np.ndarray:
        return np.concatenate([self.delta[1:], self.beta])

    @classmethod
    def from_theta(cls, schools, covariates, theta, **kw) -> "LogitSpec":
        m = len(schools)
        theta = np.asarray(theta, dtype=float)
        return cls(list(schools), list(covariates), np.r_[0.0, theta[: m - 1]], theta[m - 1 :], **kw)

    def utilities(self, Z: np.ndarray) -> np.ndarray:
        return (self.delta[None, :] + Z @ self.beta) / self.scale


# -- simulated DA markets ------------------------------------------------------


@dataclass
class SimulatedMarket:
    data: ChoiceData
    truth: LogitSpec
    utilities: np.ndarray
    assignment: list


def simulate_choice_data(
    n: int,
    delta: Sequence[float],
    beta: Sequence[float],
    seed: int,
    behavior: str = STT_BEHAVIOR,
    family: str = EVT1,
    capacity_ratio: float = 1.1,
    bonus_weight: float = 0.3,
) -> SimulatedMarket:
    """Simulate a strict-priority DA market and the resulting choice data.

    Scores are t_ij = s_i + bonus_weight * b_ij with s, b uniform, so
    priorities differ across schools. Total capacity is about
    ``capacity_ratio * n`` split evenly, so everyone ends up assigned.

    ``stt``: every student ranks all schools truthfully.
    ``skip``: students drop the schools they could not get at the cutoffs
    of the truthful market; the assignment is unchanged.
    """
    rng = np.random.default_rng(seed)
    delta = np.asarray(delta, dtype=float)
    beta = np.asarray(beta, dtype=float)
    m, p = len(delta), len(beta)
    schools = [chr(ord("a") + j) if m <= 26 else f"s{j + 1}" for j in range(m)]
    covs = [f"x{k + 1}" for k in range(p)]
    truth = LogitSpec(schools, covs, delta, beta, family=family)
    Z = rng.standard_normal((n, m, p))
    if family == EVT1:
        eps = rng.gumbel(size=(n, m))
    else:
        eps = rng.standard_normal((n, m))
    U = delta[None, :] + Z @ beta + eps
    t = rng.random((n, 1)) + bonus_weight * rng.random((n, m))
    cap = int(math.ceil(capacity_ratio * n / m))
    ids = [f"i{k + 1}" for k in range(n)]
    order = np.argsort(-U, axis=1)
    prefs = {ids[k]: [schools[j] for j in order[k]] for k in range(n)}
    prio = {schools[j]: tuple((ids[k],) for k in np.argsort(-t[:, j])) for j in range(m)}
    e = Economy(ids, schools, {s: cap for s in schools}, prefs, prio)
    mu = deferred_acceptance(e)
    cut = {}
    for j, s in enumerate(schools):
        held = [int(i[1:]) - 1 for i in mu.at(s)]
        cut[s] = float(t[held, j].min()) if len(held) >= cap else 0.0
    P = np.array([cut[s] for s in schools])
    feas = t >= P[None, :]
    recs = []
    for k in range(n):
        rol = prefs[ids[k]]
        if behavior == SKIP_BEHAVIOR:
            rol = [s for s in rol if feas[k, schools.index(s)]]
        elif behavior != STT_BEHAVIOR:
            raise ValueError(f"unknown behavior {behavior!r}")
        recs.append(
            ChoiceRecord(
                student=ids[k],
                z=Z[k],
                rol=tuple(rol),
                match=mu[ids[k]],
                scores=t[k],
                feasible=frozenset(s for j, s in enumerate(schools) if feas[k, j]),
            )
        )
    data = ChoiceData(schools, covs, recs, cut)
    return SimulatedMarket(data, truth, U, [mu[i] for i in ids])
