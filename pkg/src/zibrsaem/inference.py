"""Likelihood-ratio and Wald tests, and Benjamini-Hochberg adjustment."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from .model import ZibrError

# IS noise can make nested log-likelihoods cross slightly; beyond this the
# negative statistic is flagged.
LRT_NEGATIVE_TOL = -0.5


@dataclass(frozen=True)
class TestResult:
    statistic: float
    df: int
    p_value: float
    method: str
    raw_statistic: float | None = None
    warning: str | None = None

    # keeps pytest from collecting this class
    __test__ = False

    def rejects(self, level: float = 0.05) -> bool:
        return self.p_value < level


def _loglik_of(x):
    ll = getattr(x, "loglik", x)
    if ll is None:
        raise ZibrError("log-likelihood not available; run loglik_is first")
    return float(ll)


def lrt(full, reduced, df: int) -> TestResult:
    """``2 (LL_full - LL_reduced)`` against chi-square with ``df`` degrees of freedom.

    ``full`` and ``reduced`` are log-likelihood values or objects with a
    ``loglik`` attribute.  Negative statistics are clamped to 0; below
    ``LRT_NEGATIVE_TOL`` a warning is attached.
    """
    if int(df) != df or df < 1:
        raise ValueError("df must be a positive integer")
    raw = 2.0 * (_loglik_of(full) - _loglik_of(reduced))
    if not np.isfinite(raw):
        raise ZibrError("non-finite likelihood-ratio statistic")
    warning = None
    if raw < LRT_NEGATIVE_TOL:
        warning = f"reduced model fits better than the full model (2 dLL = {raw:.3f})"
    stat = max(0.0, raw)
    return TestResult(stat, int(df), float(chi2.sf(stat, df)), "LRT", raw, warning)


def wald(estimate: float, se: float) -> TestResult:
    """``(estimate / se)^2`` against chi-square with one degree of freedom."""
    if not se > 0:
        raise ValueError("standard error must be positive")
    stat = float((estimate / se) ** 2)
    return TestResult(stat, 1, float(chi2.sf(stat, 1)), "Wald", stat)


def bh_adjust(p_values) -> np.ndarray:
    """Benjamini-Hochberg step-up adjusted p-values, in the input order."""
    p = np.asarray(p_values, dtype=float)
    if p.ndim != 1:
        raise ValueError("p_values must be a vector")
    if p.size == 0:
        return p.copy()
    if not ((p >= 0) & (p <= 1)).all():
        raise ValueError("p-values must lie in [0, 1]")
    n = p.size
    order = np.argsort(p, kind="stable")
    scaled = p[order] * n / np.arange(1, n + 1)
    adj = np.minimum.accumulate(scaled[::-1])[::-1]
    out = np.empty(n)
    out[order] = np.minimum(adj, 1.0)
    return out
