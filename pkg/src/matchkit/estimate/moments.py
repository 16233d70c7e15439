"""Moment (in)equality statistics for partially identified preferences."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.special import expit, logsumexp

from .data import ChoiceData, LogitSpec

TWO_SIDED = "two-sided"
ONE_SIDED_AS_PRINTED = "one-sided-as-printed"


@dataclass
class MomentSet:
    """Per-observation moment values: ``ineq`` is (n x M1), ``eq`` (n x M2).

    Inequalities hold when their mean is >= 0, equalities when it is 0.
    """

    ineq: np.ndarray
    eq: Optional[np.ndarray] = None

    def __post_init__(self):
        self.ineq = np.atleast_2d(np.asarray(self.ineq, dtype=float))
        if self.eq is not None:
            self.eq = np.atleast_2d(np.asarray(self.eq, dtype=float))
            if self.eq.shape[0] != self.ineq.shape[0] and self.ineq.size:
                raise ValueError("inequality and equality moments have different sample sizes")


def _studentized(M: np.ndarray) -> np.ndarray:
    if M.shape[0] < 2:
        raise ValueError("each moment needs at least two observations")
    sd = M.std(axis=0, ddof=1)
    if np.any(sd <= 0):
        raise ValueError(f"zero sample standard deviation in moments {np.flatnonzero(sd <= 0).tolist()}")
    return M.mean(axis=0) / sd


def moment_statistic(
    theta,
    moments: Union[MomentSet, Callable[[np.ndarray], MomentSet]],
    equality_mode: str = TWO_SIDED,
) -> float:
    """Sum of squared negative parts of studentized inequality means, plus
    the equality term (squared, or squared negative part as printed)."""
    ms = moments(theta) if callable(moments) else moments
    T = 0.0
    if ms.ineq.size:
        z = _studentized(ms.ineq)
        T += float(np.sum(np.minimum(z, 0.0) ** 2))
    if ms.eq is not None and ms.eq.size:
        z = _studentized(ms.eq)
        if equality_mode == TWO_SIDED:
            T += float(np.sum(z**2))
        elif equality_mode == ONE_SIDED_AS_PRINTED:
            T += float(np.sum(np.minimum(z, 0.0) ** 2))
        else:
            raise ValueError(f"unknown equality mode {equality_mode!r}")
    return T


def covariate_bins(data: ChoiceData, n_bins: int = 2) -> np.ndarray:
    """Instrument matrix: a constant plus quantile-bin indicators of each
    covariate's student mean across schools."""
    Z = data.Z().mean(axis=1)
    cols = [np.ones(len(data))]
    for k in range(Z.shape[1]):
        edges = np.quantile(Z[:, k], np.linspace(0, 1, n_bins + 1)[1:-1])
        b = np.searchsorted(edges, Z[:, k], side="right")
        cols.extend((b == j).astype(float) for j in range(n_bins))
    return np.column_stack(cols)


def _ranked_above(data: ChoiceData, a: int, b: int) -> np.ndarray:
    sa, sb = data.schools[a], data.schools[b]
    out = np.zeros(len(data))
    for i, r in enumerate(data.records):
        if sa in r.rol and sb in r.rol and r.rol.index(sa) < r.rol.index(sb):
            out[i] = 1.0
    return out


def undominated_pair_moments(
    data: ChoiceData,
    pairs: Optional[Sequence[tuple]] = None,
    instruments: Optional[np.ndarray] = None,
) -> Callable[[np.ndarray], np.ndarray]:
    """Moment inequalities from undominated strategies under logit errors.

    For each ordered pair (a, b): P(u_a > u_b) - 1(a ranked above b) >= 0
    and 1 - 1(b ranked above a) - P(u_a > u_b) >= 0, each times every
    instrument column. Returns theta -> (n x M1) array.
    """
    m = len(data.schools)
    if pairs is None:
        pairs = [(a, b) for a in range(m) for b in range(a + 1, m)]
    W = covariate_bins(data) if instruments is None else instruments
    above = {(a, b): _ranked_above(data, a, b) for a, b in pairs}
    below = {(a, b): _ranked_above(data, b, a) for a, b in pairs}
    Z = data.Z()

    def f(theta):
        V = LogitSpec.from_theta(data.schools, data.covariates, theta).utilities(Z)
        cols = []
        for a, b in pairs:
            p = expit(V[:, a] - V[:, b])
            lo = p - above[(a, b)]
            hi = 1.0 - below[(a, b)] - p
            cols.append(lo[:, None] * W)
            cols.append(hi[:, None] * W)
        return np.hstack(cols)

    return f


def stability_equality_moments(
    data: ChoiceData, instruments: Optional[np.ndarray] = None
) -> Callable[[np.ndarray], np.ndarray]:
    """Predicted minus observed match indicator per school, times
    instruments. Returns theta -> (n x M2) array."""
    W = covariate_bins(data) if instruments is None else instruments
    m = len(data.schools)
    col = {s: j for j, s in enumerate(data.schools)}
    F = np.zeros((len(data), m), dtype=bool)
    Y = np.zeros((len(data), m))
    for i, r in enumerate(data.records):
        F[i, [col[s] for s in data.feasible_of(r)]] = True
        if r.match is not None:
            Y[i, col[r.match]] = 1.0
    Z = data.Z()

    def f(theta):
        V = LogitSpec.from_theta(data.schools, data.covariates, theta).utilities(Z)
        L = np.where(F, V, -np.inf)
        P = np.where(F, np.exp(L - logsumexp(L, axis=1, keepdims=True)), 0.0)
        D = P - Y
        return np.hstack([D[:, [j]] * W for j in range(m)])

    return f


def combined_moments(ineq_fn=None, eq_fn=None) -> Callable[[np.ndarray], MomentSet]:
    def f(theta):
        I = ineq_fn(theta) if ineq_fn is not None else np.zeros((0, 0))
        E = eq_fn(theta) if eq_fn is not None else None
        if ineq_fn is None and E is not None:
            I = np.zeros((E.shape[0], 0))
        return MomentSet(I, E)

    return f
