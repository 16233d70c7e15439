"""Exploded logit (weak truth-telling) and feasible-set conditional logit
(stability) likelihoods and their maximum-likelihood fit."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from .data import EVT1, STABILITY, WTT, ChoiceData, LogitSpec


class NotIdentifiableError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


class StabilityViolation(ValueError):
    """Records whose match lies outside their feasible set."""

    def __init__(self, students):
        self.students = list(students)
        super().__init__(f"match outside feasible set (stability violated in data): {self.students}")


def _design(data: ChoiceData) -> np.ndarray:
    """X[i, j, :] = d V_ij / d theta for theta = (delta_2..delta_m, beta)."""
    Z = data.Z()
    n, m, p = Z.shape
    X = np.zeros((n, m, m - 1 + p))
    for j in range(1, m):
        X[:, j, j - 1] = 1.0
    X[:, :, m - 1 :] = Z
    return X


def _stages(data: ChoiceData, mode: str):
    """(chosen index, availability mask) per choice stage, padded.

    WTT explodes each list into one stage per ranked school, the choice set
    being every school not ranked above it. STABILITY has a single stage:
    the match out of the feasible set.
    """
    key = ("stages", mode)
    if key in data._arrays:
        return data._arrays[key]
    col = {s: j for j, s in enumerate(data.schools)}
    n, m = len(data), len(data.schools)
    if mode == WTT:
        K = max((len(r.rol) for r in data.records), default=0)
        C = np.zeros((n, K), dtype=int)
        A = np.zeros((n, K, m), dtype=bool)
        valid = np.zeros((n, K), dtype=bool)
        for i, r in enumerate(data.records):
            avail = np.ones(m, dtype=bool)
            for k, s in enumerate(r.rol):
                C[i, k] = col[s]
                A[i, k] = avail
                valid[i, k] = True
                avail = avail.copy()
                avail[col[s]] = False
    elif mode == STABILITY:
        C = np.zeros((n, 1), dtype=int)
        A = np.zeros((n, 1, m), dtype=bool)
        valid = np.zeros((n, 1), dtype=bool)
        bad = []
        for i, r in enumerate(data.records):
            if r.match is None:
                continue
            S = data.feasible_of(r)
            if r.match not in S:
                bad.append(r.student)
                continue
            C[i, 0] = col[r.match]
            A[i, 0, [col[s] for s in S]] = True
            valid[i, 0] = True
        if bad:
            raise StabilityViolation(bad)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    data._arrays[key] = (C, A, valid)
    return C, A, valid


def _core(theta, X, C, A, valid, hess=False):
    V = X @ theta
    n, K = C.shape
    if K == 0:
        q = X.shape[2]
        return 0.0, np.zeros(q), np.zeros((q, q))
    L = np.where(A, V[:, None, :], -np.inf)
    lse = logsumexp(L, axis=2)
    lse = np.where(valid, lse, 0.0)
    Vc = np.take_along_axis(V, C, axis=1)
    ll = float(np.sum(np.where(valid, Vc - lse, 0.0)))
    P = np.where(A, np.exp(L - lse[:, :, None]), 0.0) * valid[:, :, None]
    Xc = np.take_along_axis(X, C[:, :, None], axis=1)  # n, K, q
    xbar = np.einsum("nkm,nmq->nkq", P, X)
    g = np.einsum("nk,nkq->q", valid.astype(float), Xc - xbar)
    if not hess:
        return ll, g, None
    H = -(np.einsum("nkm,nmq,nmr->qr", P, X, X) - np.einsum("nkq,nkr->qr", xbar, xbar))
    return ll, g, H


def loglik(spec: LogitSpec, data: ChoiceData, mode: str):
    """Log-likelihood and its gradient in ``theta = (delta_2.., beta)``."""
    if spec.family != EVT1 or spec.sigma_beta is not None:
        raise ValueError("closed-form likelihood needs EVT1 errors and fixed coefficients")
    if spec.schools != data.schools or spec.covariates != data.covariates:
        raise ValueError("spec layout does not match the data")
    X = _design(data) / spec.scale
    C, A, valid = _stages(data, mode)
    ll, g, _ = _core(spec.theta(), X, C, A, valid)
    return ll, g


@dataclass
class FitResult:
    spec: LogitSpec
    mode: str
    names: list
    theta: np.ndarray
    cov: np.ndarray
    loglik: float
    grad_norm: float
    iterations: int
    converged: bool

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    def table(self) -> list:
        return [(nm, float(t), float(s)) for nm, t, s in zip(self.names, self.theta, self.se)]

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "names": list(self.names),
            "theta": self.theta.tolist(),
            "cov": self.cov.tolist(),
            "loglik": self.loglik,
            "grad_norm": self.grad_norm,
            "iterations": self.iterations,
            "converged": self.converged,
        }


def fit(
    data: ChoiceData,
    mode: str,
    gtol: float = 1e-8,
    max_iter: int = 500,
    start: Optional[np.ndarray] = None,
    normalize: str = "scale",
    distance: Optional[str] = None,
) -> FitResult:
    """Maximum likelihood with standard errors from the inverse observed
    information.

    ``normalize="distance"`` reports the same optimum re-expressed with the
    coefficient on covariate ``distance`` fixed at -1 and a free scale
    (reported as ``log_sigma``), using the delta method for the covariance.
    """
    m = len(data.schools)
    if m < 2:
        raise NotIdentifiableError("not identifiable: need at least two schools")
    X = _design(data)
    C, A, valid = _stages(data, mode)
    q = X.shape[2]
    x0 = np.zeros(q) if start is None else np.asarray(start, dtype=float)

    def f(t):
        ll, g, _ = _core(t, X, C, A, valid)
        return -ll, -g

    def h(t):
        return -_core(t, X, C, A, valid, hess=True)[2]

    res = minimize(
        f, x0, jac=True, hess=h, method="trust-exact", options={"gtol": gtol, "maxiter": max_iter}
    )
    theta = res.x
    ll, g, H = _core(theta, X, C, A, valid, hess=True)
    # a few Newton steps if the trust region stopped short of the tolerance
    it = int(res.nit)
    for _ in range(20):
        if np.linalg.norm(g) <= gtol:
            break
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            break
        theta = theta - step
        ll, g, H = _core(theta, X, C, A, valid, hess=True)
        it += 1
    info = -H
    w = np.linalg.eigvalsh(info) if q else np.array([1.0])
    if q == 0 or w.min() <= 1e-10 * max(w.max(), 1.0):
        raise NotIdentifiableError("not identifiable: singular information matrix")
    gn = float(np.linalg.norm(g))
    if gn > gtol:
        raise ConvergenceError(f"gradient norm {gn:.3e} above {gtol:g} after {it} iterations")
    cov = np.linalg.inv(info)
    spec = LogitSpec.from_theta(data.schools, data.covariates, theta)
    names = spec.names
    out = FitResult(spec, mode, names, theta, cov, ll, gn, it, True)
    if normalize == "distance":
        out = _distance_normalized(out, data, distance)
    elif normalize != "scale":
        raise ValueError(f"unknown normalization {normalize!r}")
    return out


def _distance_normalized(res: FitResult, data: ChoiceData, distance: Optional[str]) -> FitResult:
    if distance not in data.covariates:
        raise ValueError("distance normalization needs the name of the distance covariate")
    m = len(data.schools)
    kd = m - 1 + data.covariates.index(distance)
    b = res.theta[kd]
    if b >= 0:
        raise ValueError("distance coefficient is not negative; cannot normalize it to -1")
    sigma = -1.0 / b
    keep = [k for k in range(len(res.theta)) if k != kd]
    theta = np.r_[res.theta[keep] * sigma, np.log(sigma)]
    J = np.zeros((len(theta), len(res.theta)))
    for r, k in enumerate(keep):
        J[r, k] = sigma
        J[r, kd] = res.theta[k] * sigma**2  # d sigma / d b = sigma^2
    J[-1, kd] = sigma  # d log sigma / d b = -1/b
    names = [res.names[k] for k in keep] + ["log_sigma"]
    return FitResult(res.spec, res.mode, names, theta, J @ res.cov @ J.T, res.loglik, res.grad_norm, res.iterations, True)
