"""Importance-sampling estimate of the observed-data log-likelihood.

For individual ``i`` with conditional mean ``mu_i`` and SD ``s_i`` of its
random intercepts, draws ``phi_ik = mu_i + s_i * T_ik`` with independent
Student-t(nu) coordinates and averages

    w_ik = p(y_i | phi_ik) p(phi_ik) / q(phi_ik)

in log space.  The log-likelihood is ``sum_i log(mean_k w_ik)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp
from scipy.stats import t as student_t

from . import _kernels as _k
from .model import Dataset, ZibrError, ZibrParams, normal_prior_logpdf
from .sampler import _layout

SD_FLOOR = 1e-4


@dataclass(frozen=True)
class IsConfig:
    k_samples: int = 500
    nu: int = 5
    seed: object = 0

    def __post_init__(self):
        if self.k_samples < 1:
            raise ValueError("k_samples must be positive")
        if not self.nu > 0:
            raise ValueError("nu must be positive")


@dataclass(frozen=True)
class LoglikResult:
    loglik: float
    mc_se: float
    per_individual: np.ndarray

    def __iter__(self):
        # allows ``ll, se = loglik_is(...)``
        return iter((self.loglik, self.mc_se))


def loglik_is(params: ZibrParams, data: Dataset, moments, config: IsConfig = IsConfig(),
              chunk: int = 4096) -> LoglikResult:
    """Importance-sampling log-likelihood and its delta-method MC standard error.

    Parameters
    ----------
    moments : tuple of arrays
        ``(mean, variance)``, each ``(N, 2)``, e.g. ``FitResult.moments``.
    chunk : int
        Number of draws evaluated at a time (memory only; results do not
        depend on it).

    Notes
    -----
    The standard error combines the per-individual relative variances of the
    mean weights, ``var(w_i) / (K mean(w_i)^2)``, assuming independence
    across individuals.  Individuals without observations contribute 0.
    """
    params.check_dims(data)
    mean, var = (np.asarray(v, dtype=float) for v in moments)
    N, K = data.N, config.k_samples
    if mean.shape != (N, 2) or var.shape != (N, 2):
        raise ValueError(f"moments must be two ({N}, 2) arrays")
    if not (np.isfinite(mean).all() and np.isfinite(var).all() and (var >= 0).all()):
        raise ValueError("moments must be finite with nonnegative variances")
    sd = np.maximum(np.sqrt(var), SD_FLOOR)

    rng = np.random.default_rng(config.seed)
    t_draws = rng.standard_t(config.nu, size=(K, N, 2))
    layout = _layout(params, data)
    log_w = np.empty((K, N))
    for start in range(0, K, chunk):
        td = t_draws[start:start + chunk]
        eff = np.ascontiguousarray(mean + sd * td)
        ll_a, ll_b = _k.loglik_all(eff, *layout, params.phi)
        log_q = (student_t.logpdf(td, config.nu) - np.log(sd)).sum(axis=-1)
        log_w[start:start + chunk] = (ll_a + ll_b + normal_prior_logpdf(params, eff[..., 0], eff[..., 1])
                                      - log_q)

    has_obs = data.counts > 0
    with np.errstate(invalid="ignore"):
        top = log_w.max(axis=0)
    bad = has_obs & ~np.isfinite(top)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise ZibrError(f"all importance weights underflow for individual {data.ids[i]!r}")
    log_p = np.where(has_obs, logsumexp(log_w, axis=0) - np.log(K), 0.0)
    scaled = np.exp(log_w - np.where(np.isfinite(top), top, 0.0))
    m1 = scaled.mean(axis=0)
    rel_var = np.where(has_obs, scaled.var(axis=0) / (K * m1 ** 2), 0.0)
    return LoglikResult(float(log_p.sum()), float(np.sqrt(rel_var.sum())), log_p)
