"""Gibbs sampler for a rank-constrained multinomial probit.

Latent utilities u_ij = delta_j + z_ij . (beta + eta_i) + e_ij with
e_ij ~ N(0, 1) and delta of the first school fixed at 0. Each sweep draws
every latent utility from a normal truncated to the interval allowed by the
record's revealed-preference constraints, then the parameters from their
conjugate conditionals.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.special import ndtr, ndtri

from .data import ChoiceData
from .teps import PartialOrder

log = logging.getLogger(__name__)

ROL_ORDER = "rol"
PORTFOLIO = "portfolio"
TEPS = "teps"

_FEAS_TOL = 1e-9


@dataclass
class Priors:
    mean_var: float = 10.0  # N(0, mean_var) on each of (delta, beta)
    ig_shape: float = 2.0  # inverse gamma on random-coefficient variances
    ig_scale: float = 1.0


@dataclass
class GibbsResult:
    names: list
    draws: np.ndarray  # kept iterations x parameters
    omega2: Optional[np.ndarray]
    flagged: list
    latent: Optional[np.ndarray] = None  # kept iterations x n x m

    @property
    def mean(self) -> np.ndarray:
        return self.draws.mean(axis=0)

    @property
    def sd(self) -> np.ndarray:
        return self.draws.std(axis=0, ddof=1)

    def table(self) -> list:
        return [(n, float(m), float(s)) for n, m, s in zip(self.names, self.mean, self.sd)]


# -- constraint construction -----------------------------------------------------


def rol_pairs(data: ChoiceData) -> list:
    """Consecutive ranked pairs (better, worse) per record."""
    return [set(zip(r.rol, r.rol[1:])) for r in data.records]


def teps_pairs(data: ChoiceData, orders: Mapping[str, PartialOrder]) -> list:
    return [set(orders[r.student].pairs) if r.student in orders else set() for r in data.records]


def portfolio_rows(
    lotteries: Mapping[str, Mapping[tuple, np.ndarray]], data: ChoiceData
) -> list:
    """Rows g with g . u >= 0: the chosen report's assignment lottery minus
    that of every alternative report.

    ``lotteries[student]`` maps each candidate ROL (tuple) to its lottery
    vector over schools; the submitted ROL must be among them. Being
    unassigned is worth 0.
    """
    out = []
    for r in data.records:
        cand = lotteries.get(r.student, {})
        if not cand:
            out.append(np.zeros((0, len(data.schools))))
            continue
        Lr = np.asarray(cand[tuple(r.rol)], dtype=float)
        rows = [Lr - np.asarray(L, dtype=float) for R, L in cand.items() if tuple(R) != tuple(r.rol)]
        rows = [g for g in rows if np.any(np.abs(g) > 0)]
        out.append(np.array(rows).reshape(-1, len(data.schools)))
    return out


def _topo_start(m: int, pairs: set, schools: list) -> Optional[np.ndarray]:
    """A point satisfying the strict order constraints, or None if cyclic."""
    import networkx as nx

    G = nx.DiGraph()
    G.add_nodes_from(range(m))
    col = {s: j for j, s in enumerate(schools)}
    G.add_edges_from((col[a], col[b]) for a, b in pairs)
    if not nx.is_directed_acyclic_graph(G):
        return None
    order = list(nx.lexicographical_topological_sort(G))
    u = np.zeros(m)
    for k, j in enumerate(order):
        u[j] = (m - 1 - k) * 0.5 - 0.25 * (m - 1)
    return u


def _lp_start(G: np.ndarray) -> Optional[np.ndarray]:
    """Maximize the common slack t in G u >= t over a box."""
    R, m = G.shape
    c = np.zeros(m + 1)
    c[-1] = -1.0
    A = np.hstack([-G, np.ones((R, 1))])
    res = linprog(c, A_ub=A, b_ub=np.zeros(R), bounds=[(-3, 3)] * m + [(None, 1.0)], method="highs")
    if res.status != 0 or -res.fun <= _FEAS_TOL:
        return None
    return res.x[:m]


# -- truncated normal ------------------------------------------------------------


def _truncnorm(rng, mu, lo, hi):
    """Vectorized N(mu, 1) draws on (lo, hi) by inverse CDF, switching to
    the upper tail when the interval lies far right."""
    a = lo - mu
    b = hi - mu
    flip = a > 0
    a2 = np.where(flip, -b, a)
    b2 = np.where(flip, -a, b)
    Fa = ndtr(a2)
    Fb = ndtr(b2)
    v = rng.random(mu.shape)
    x = ndtri(Fa + v * (Fb - Fa))
    # beyond double precision in the left tail: exponential approximation
    # of the normal tail just below the upper bound
    bad = ~np.isfinite(x) | (Fb - Fa <= 0)
    if np.any(bad):
        ub = b2[bad]
        rate = np.maximum(-ub, 1.0)
        x[bad] = ub - rng.exponential(1.0, size=ub.shape) / rate
    x = np.clip(x, a2, b2)
    x = np.where(flip, -x, x)
    return mu + x


# -- sampler -------------------------------------------------------------------


def gibbs_probit(
    data: ChoiceData,
    constraint_source: str = ROL_ORDER,
    *,
    teps_orders: Optional[Mapping[str, PartialOrder]] = None,
    lotteries: Optional[Mapping] = None,
    random_coefficients: Sequence[str] = (),
    priors: Optional[Priors] = None,
    iters: int = 2000,
    burn_in: int = 500,
    seed: int = 0,
    keep_latent: bool = False,
) -> GibbsResult:
    """Posterior draws of (delta_2.., beta) under the chosen constraint set.

    ``ROL_ORDER`` keeps the submitted order among ranked schools,
    ``TEPS`` uses ``teps_orders`` (student -> PartialOrder) and
    ``PORTFOLIO`` requires the submitted ROL's lottery to beat every
    alternative in ``lotteries`` (see ``portfolio_rows``). Records whose
    constraints cannot hold are flagged and dropped with a warning.
    """
    if iters <= burn_in:
        raise ValueError("iters must exceed burn_in")
    priors = priors or Priors()
    rng = np.random.default_rng(seed)
    schools = data.schools
    m, p = len(schools), len(data.covariates)
    Z_all = data.Z()

    pairs: Optional[list] = None
    lin: Optional[list] = None
    if constraint_source == ROL_ORDER:
        pairs = rol_pairs(data)
    elif constraint_source == TEPS:
        if teps_orders is None:
            raise ValueError("TEPS constraints need teps_orders")
        pairs = teps_pairs(data, teps_orders)
    elif constraint_source == PORTFOLIO:
        if lotteries is None:
            raise ValueError("portfolio constraints need lotteries")
        lin = portfolio_rows(lotteries, data)
    else:
        raise ValueError(f"unknown constraint source {constraint_source!r}")

    # starting latents, dropping infeasible records
    keep, starts, flagged = [], [], []
    for k, r in enumerate(data.records):
        if pairs is not None:
            u0 = _topo_start(m, pairs[k], schools) if pairs[k] else np.zeros(m)
        else:
            u0 = _lp_start(lin[k]) if len(lin[k]) else np.zeros(m)
        if u0 is None:
            flagged.append(r.student)
            continue
        keep.append(k)
        starts.append(u0)
    if flagged:
        warnings.warn(f"{len(flagged)} record(s) with infeasible constraints excluded: {flagged}")
    n = len(keep)
    Z = Z_all[keep]
    U = np.array(starts).reshape(n, m)

    col = {s: j for j, s in enumerate(schools)}
    if pairs is not None:
        Cmat = np.zeros((n, m, m), dtype=bool)  # Cmat[i, a, b]: a preferred to b
        for r_, k in enumerate(keep):
            for a, b in pairs[k]:
                Cmat[r_, col[a], col[b]] = True
    else:
        R = max((len(lin[k]) for k in keep), default=0)
        Gm = np.zeros((n, R, m))
        for r_, k in enumerate(keep):
            Gm[r_, : len(lin[k])] = lin[k]

    # design for (delta_2.., beta)
    q = m - 1 + p
    X = np.zeros((n, m, q))
    for j in range(1, m):
        X[:, j, j - 1] = 1.0
    X[:, :, m - 1 :] = Z
    Xf = X.reshape(n * m, q)
    XtX = Xf.T @ Xf
    prior_prec = np.eye(q) / priors.mean_var

    rc = [data.covariates.index(c) for c in random_coefficients]
    nr = len(rc)
    Zr = Z[:, :, rc] if nr else np.zeros((n, m, 0))
    eta = np.zeros((n, nr))
    omega2 = np.ones(nr)

    theta = np.zeros(q)
    names = [f"delta[{s}]" for s in schools[1:]] + [f"beta[{c}]" for c in data.covariates]
    kept, kept_om, kept_U = [], [], []
    neg_inf = np.full(n, -np.inf)
    pos_inf = np.full(n, np.inf)

    for it in range(iters):
        V = X @ theta + (np.einsum("nmr,nr->nm", Zr, eta) if nr else 0.0)
        for j in range(m):
            if pairs is not None:
                below = Cmat[:, j, :]
                above = Cmat[:, :, j]
                lo = np.where(below, U, -np.inf).max(axis=1) if m else neg_inf
                hi = np.where(above, U, np.inf).min(axis=1) if m else pos_inf
            else:
                lo, hi = neg_inf.copy(), pos_inf.copy()
                if Gm.shape[1]:
                    gj = Gm[:, :, j]
                    rest = np.einsum("nrm,nm->nr", Gm, U) - gj * U[:, [j]]
                    with np.errstate(divide="ignore", invalid="ignore"):
                        bound = -rest / gj
                    lo = np.maximum(lo, np.where(gj > 0, bound, -np.inf).max(axis=1))
                    hi = np.minimum(hi, np.where(gj < 0, bound, np.inf).min(axis=1))
            U[:, j] = _truncnorm(rng, V[:, j], lo, hi)

        # population parameters
        resid = U - (np.einsum("nmr,nr->nm", Zr, eta) if nr else 0.0)
        A = XtX + prior_prec
        L = np.linalg.cholesky(A)
        mean = np.linalg.solve(A, Xf.T @ resid.reshape(-1))
        theta = mean + np.linalg.solve(L.T, rng.standard_normal(q))

        if nr:
            r_i = U - X @ theta
            prec = np.einsum("nmr,nms->nrs", Zr, Zr) + np.diag(1.0 / omega2)[None]
            rhs = np.einsum("nmr,nm->nr", Zr, r_i)
            Li = np.linalg.cholesky(prec)
            mu_i = np.linalg.solve(prec, rhs[:, :, None])[:, :, 0]
            zdraw = rng.standard_normal((n, nr))
            eta = mu_i + np.linalg.solve(np.transpose(Li, (0, 2, 1)), zdraw[:, :, None])[:, :, 0]
            shape = priors.ig_shape + n / 2.0
            scale = priors.ig_scale + 0.5 * (eta**2).sum(axis=0)
            omega2 = scale / rng.gamma(shape, 1.0, size=nr)

        if it >= burn_in:
            kept.append(theta.copy())
            if nr:
                kept_om.append(omega2.copy())
            if keep_latent:
                kept_U.append(U.copy())

    return GibbsResult(
        names,
        np.array(kept),
        np.array(kept_om) if nr else None,
        flagged,
        np.array(kept_U) if keep_latent else None,
    )


def geweke_z(chain: np.ndarray, first: float = 0.1, last: float = 0.5, n_batches: int = 20) -> float:
    """Difference of early and late chain means over batch-means standard
    errors. Roughly standard normal for a stationary chain."""
    x = np.asarray(chain, dtype=float)
    a = x[: int(first * len(x))]
    b = x[len(x) - int(last * len(x)) :]

    def bm_var(y):
        k = max(2, min(n_batches, len(y) // 5))
        size = len(y) // k
        means = y[: k * size].reshape(k, size).mean(axis=1)
        return means.var(ddof=1) / k

    return float((a.mean() - b.mean()) / math.sqrt(bm_var(a) + bm_var(b)))
