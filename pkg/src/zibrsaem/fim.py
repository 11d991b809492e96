"""Observed Fisher information by stochastic approximation (Louis identity).

Along the SAEM iterations we track

    D <- D + gamma * (s - D)
    G <- G + gamma * (H + s s' - G)
    Hq = G - D D'

where ``s`` and ``H`` are the gradient and Hessian of the complete-data
log-likelihood at the current parameters and simulated effects.  At
convergence ``(-Hq)^{-1}`` estimates the covariance of the estimates.

Parameter order everywhere: a, b, alpha..., beta..., sigma1_sq, sigma2_sq, phi.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma

from .model import Dataset, ZibrParams, log_sigmoid
from ._special import trigamma


def score_and_hessian(params: ZibrParams, data: Dataset, effects):
    """Gradient and Hessian of ``complete_loglik`` on the natural scale.

    ``effects`` is an ``(N, 2)`` array, or ``(m, N, 2)`` for ``m`` chains in
    which case the outputs carry a leading chain axis.
    """
    params.check_dims(data)
    eff = np.asarray(getattr(effects, "values", effects), dtype=float)
    single = eff.ndim == 2
    eff = np.atleast_3d(eff) if not single else eff[None]
    m = eff.shape[0]
    p, r = params.p, params.r
    dim = p + r + 5
    ia, ib = 0, 1
    sl_al = slice(2, 2 + p)
    sl_be = slice(2 + p, 2 + p + r)
    is1, is2, iphi = dim - 3, dim - 2, dim - 1
    s = np.zeros((m, dim))
    H = np.zeros((m, dim, dim))
    N = data.N

    # random-effect (normal) part
    for col, imean, ivar, mean, var in ((0, ia, is1, params.a, params.sigma1_sq),
                                        (1, ib, is2, params.b, params.sigma2_sq)):
        dev = eff[:, :, col] - mean
        s[:, imean] = dev.sum(axis=1) / var
        s[:, ivar] = -0.5 * N / var + 0.5 * (dev ** 2).sum(axis=1) / var ** 2
        H[:, imean, imean] = -N / var
        H[:, imean, ivar] = H[:, ivar, imean] = -dev.sum(axis=1) / var ** 2
        H[:, ivar, ivar] = 0.5 * N / var ** 2 - (dev ** 2).sum(axis=1) / var ** 3

    # presence/absence part
    if p and data.n_obs:
        X = data.x
        eta = eff[:, data.index, 0] + X @ params.alpha
        prob = np.exp(log_sigmoid(eta))
        s[:, sl_al] = (data.present - prob) @ X
        H[:, sl_al, sl_al] = -np.einsum("nj,cn,nk->cjk", X, prob * (1 - prob), X)

    # Beta part
    if data.pos_index.size:
        Z, ly, l1y, phi = data.pos_z, data.pos_logy, data.pos_log1my, params.phi
        eta = eff[:, data.pos_index, 1] + Z @ params.beta
        u, v = np.exp(log_sigmoid(eta)), np.exp(log_sigmoid(-eta))
        pa, pb = u * phi, v * phi
        dga, dgb = digamma(pa), digamma(pb)
        ta, tb = trigamma(pa), trigamma(pb)
        resid = (ly - l1y) - (dga - dgb)
        w = u * v
        s[:, iphi] = (digamma(phi) - u * dga - v * dgb + u * ly + v * l1y).sum(axis=1)
        H[:, iphi, iphi] = (trigamma(phi) - u ** 2 * ta - v ** 2 * tb).sum(axis=1)
        if r:
            s[:, sl_be] = (phi * resid * w) @ Z
            d2_eta = -phi ** 2 * (ta + tb) * w ** 2 + phi * resid * w * (v - u)
            H[:, sl_be, sl_be] = np.einsum("nj,cn,nk->cjk", Z, d2_eta, Z)
            cross = ((resid + phi * (v * tb - u * ta)) * w) @ Z
            H[:, sl_be, iphi] = cross
            H[:, iphi, sl_be] = cross

    if single:
        return s[0], H[0]
    return s, H


@dataclass
class FimAccumulator:
    names: list
    d: np.ndarray = None
    g: np.ndarray = None
    h: np.ndarray = None
    n_updates: int = 0

    def __post_init__(self):
        k = len(self.names)
        if self.d is None:
            self.d = np.zeros(k)
        if self.g is None:
            self.g = np.zeros((k, k))
        if self.h is None:
            self.h = self.g - np.outer(self.d, self.d)


def fim_update(acc: FimAccumulator, score, hessian, gamma_q: float) -> FimAccumulator:
    """One stochastic-approximation step of the Louis accumulators (in place).

    With per-chain inputs (leading chain axis) the chain averages of ``s``
    and of ``H + s s'`` are used.
    """
    if not 0 < gamma_q <= 1:
        raise ValueError("gamma_q must lie in (0, 1]")
    score = np.asarray(score, dtype=float)
    hessian = np.asarray(hessian, dtype=float)
    if score.ndim == 1:
        score, hessian = score[None], hessian[None]
    s_bar = score.mean(axis=0)
    second = (hessian + np.einsum("ci,cj->cij", score, score)).mean(axis=0)
    acc.d = acc.d + gamma_q * (s_bar - acc.d)
    acc.g = acc.g + gamma_q * (second - acc.g)
    acc.g = 0.5 * (acc.g + acc.g.T)
    acc.h = acc.g - np.outer(acc.d, acc.d)
    acc.n_updates += 1
    return acc


def min_eigenvalue(acc: FimAccumulator) -> float:
    return float(np.linalg.eigvalsh(-acc.h).min())


def covariance(acc: FimAccumulator):
    """``(-H)^{-1}``, or None when ``-H`` is not positive definite."""
    info = -acc.h
    try:
        chol = np.linalg.cholesky(info)
    except np.linalg.LinAlgError:
        return None
    inv_chol = np.linalg.inv(chol)
    return inv_chol.T @ inv_chol


def standard_errors(acc: FimAccumulator):
    """Square roots of the diagonal of ``(-H)^{-1}``; None if not PD."""
    cov = covariance(acc)
    if cov is None:
        return None
    return np.sqrt(np.diag(cov))
