"""Hausman-type comparison of the stability and WTT estimators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2


class LayoutMismatch(ValueError):
    pass


@dataclass(frozen=True)
class HausmanResult:
    statistic: float
    dof: int
    pvalue: float

    def rejects(self, level: float = 0.05) -> bool:
        return self.pvalue < level


def hausman_test(fit_st, fit_wtt, rtol: float = 1e-10) -> HausmanResult:
    """(b_st - b_wtt)' [V_st - V_wtt]^+ (b_st - b_wtt).

    The variance difference can be indefinite in finite samples. Only its
    positive eigen-directions enter the pseudo-inverse, and the degrees of
    freedom equal their number.
    """
    if list(fit_st.names) != list(fit_wtt.names):
        raise LayoutMismatch(
            f"parameter layouts differ: {list(fit_st.names)} vs {list(fit_wtt.names)}"
        )
    d = np.asarray(fit_st.theta) - np.asarray(fit_wtt.theta)
    D = np.asarray(fit_st.cov) - np.asarray(fit_wtt.cov)
    D = 0.5 * (D + D.T)
    w, Q = np.linalg.eigh(D)
    scale = max(np.abs(w).max(initial=0.0), np.finfo(float).tiny)
    keep = w > rtol * scale
    dof = int(keep.sum())
    if dof == 0:
        return HausmanResult(0.0, 0, 1.0)
    proj = Q[:, keep].T @ d
    stat = float(max(np.sum(proj**2 / w[keep]), 0.0))
    return HausmanResult(stat, dof, float(chi2.sf(stat, dof)))
