"""Inner maximizations of the M-step.

Both objectives are averaged over the simulated effect sets of all chains
(``b_eff``/``a_eff`` have shape ``(m, N)``) and maximized by Newton's method
with a backtracking line search.  ``phi`` is optimized as ``log(phi)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.special import digamma, gammaln

from . import _kernels as _k
from ._special import trigamma
from .model import Dataset, log_sigmoid

MAX_ITER = 100
GRAD_TOL = 1e-7
SEPARATION_BOUND = 1e3


@dataclass
class OptimResult:
    argmax: np.ndarray
    objective_value: float
    n_iterations: int
    converged: bool
    gradient_norm: float
    separation: bool = False
    fallback_steps: int = 0


# --------------------------------------------------------------------------
# Beta part: theta = (beta, log phi)
# --------------------------------------------------------------------------

def beta_part_objective_ref(theta, data: Dataset, b_eff, order: int = 2):
    """Chain-averaged Beta-part conditional log-likelihood (numpy reference).

    Returns ``f`` (``order=0``), ``(f, g)`` or ``(f, g, H)`` with derivatives
    taken with respect to ``(beta, log phi)``.
    """
    theta = np.asarray(theta, dtype=float)
    b_eff = np.atleast_2d(b_eff)
    beta, lam = theta[:-1], theta[-1]
    phi = np.exp(lam)
    m = b_eff.shape[0]
    Z, ly, l1y = data.pos_z, data.pos_logy, data.pos_log1my
    n = ly.size
    if n == 0:
        f, g, H = 0.0, np.zeros(theta.size), np.zeros((theta.size, theta.size))
        return (f, g, H)[: order + 1] if order else f

    eta = b_eff[:, data.pos_index] + Z @ beta
    u, v = np.exp(log_sigmoid(eta)), np.exp(log_sigmoid(-eta))
    pa, pb = u * phi, v * phi
    with np.errstate(divide="ignore", invalid="ignore"):
        f = (n * m * gammaln(phi) - gammaln(pa).sum() - gammaln(pb).sum()
             + (pa * ly).sum() + (pb * l1y).sum()) / m
    if order == 0:
        return f

    dga, dgb = digamma(pa), digamma(pb)
    resid = (ly - l1y) - (dga - dgb)
    w = u * v
    d_eta = phi * resid * w
    d_phi = digamma(phi) - u * dga - v * dgb + u * ly + v * l1y
    g = np.empty(theta.size)
    g[:-1] = Z.T @ d_eta.sum(axis=0) / m
    g[-1] = phi * d_phi.sum() / m
    if order == 1:
        return f, g

    ta, tb = trigamma(pa), trigamma(pb)
    d2_eta = -phi ** 2 * (ta + tb) * w ** 2 + phi * resid * w * (v - u)
    d2_phiphi = trigamma(phi) - u ** 2 * ta - v ** 2 * tb
    d2_etaphi = (resid + phi * (v * tb - u * ta)) * w
    H = np.empty((theta.size, theta.size))
    H[:-1, :-1] = Z.T @ (Z * d2_eta.sum(axis=0)[:, None]) / m
    H[:-1, -1] = H[-1, :-1] = phi * (Z.T @ d2_etaphi.sum(axis=0)) / m
    H[-1, -1] = (phi ** 2 * d2_phiphi.sum() + phi * d_phi.sum()) / m
    return f, g, H


# --------------------------------------------------------------------------
# logistic part: theta = alpha
# --------------------------------------------------------------------------

def logistic_part_objective_ref(alpha, data: Dataset, a_eff, order: int = 2):
    """Chain-averaged logistic log-likelihood (numpy reference)."""
    alpha = np.asarray(alpha, dtype=float)
    a_eff = np.atleast_2d(a_eff)
    m = a_eff.shape[0]
    X = data.x
    eta = a_eff[:, data.index] + X @ alpha
    f = log_sigmoid(data.sign * eta).sum() / m
    if order == 0:
        return f
    prob = np.exp(log_sigmoid(eta))
    g = X.T @ (data.present - prob).sum(axis=0) / m
    if order == 1:
        return f, g
    wts = (prob * (1.0 - prob)).sum(axis=0) / m
    H = -(X.T @ (X * wts[:, None]))
    return f, g, H


def beta_part_objective(theta, data: Dataset, b_eff, order: int = 2):
    """Same as :func:`beta_part_objective_ref`, via the compiled kernel."""
    theta = np.asarray(theta, dtype=float)
    b_eff = np.ascontiguousarray(np.atleast_2d(b_eff), dtype=float)
    beta, phi = theta[:-1], float(np.exp(theta[-1]))
    m = b_eff.shape[0]
    Z = data.pos_z
    zb = np.ascontiguousarray(Z @ beta)
    f, d_eta, d2_eta, d2_etaphi, d_phi, d2_phiphi = _k.beta_objective(
        b_eff, data.pos_offsets, zb, data.pos_logy, data.pos_log1my, phi, order)
    f /= m
    if order == 0:
        return f
    g = np.empty(theta.size)
    g[:-1] = Z.T @ d_eta / m
    g[-1] = phi * d_phi / m
    if order == 1:
        return f, g
    H = np.empty((theta.size, theta.size))
    H[:-1, :-1] = Z.T @ (Z * d2_eta[:, None]) / m
    H[:-1, -1] = H[-1, :-1] = phi * (Z.T @ d2_etaphi) / m
    H[-1, -1] = (phi ** 2 * d2_phiphi + phi * d_phi) / m
    return f, g, H


def logistic_part_objective(alpha, data: Dataset, a_eff, order: int = 2):
    """Same as :func:`logistic_part_objective_ref`, via the compiled kernel."""
    alpha = np.asarray(alpha, dtype=float)
    a_eff = np.ascontiguousarray(np.atleast_2d(a_eff), dtype=float)
    m = a_eff.shape[0]
    X = data.x
    f, resid, wts = _k.logistic_objective(a_eff, data.offsets, np.ascontiguousarray(X @ alpha),
                                          data.present, order)
    f /= m
    if order == 0:
        return f
    g = X.T @ resid / m
    if order == 1:
        return f, g
    H = -(X.T @ (X * (wts / m)[:, None]))
    return f, g, H


# --------------------------------------------------------------------------
# shared Newton driver
# --------------------------------------------------------------------------

def _newton(fun, x0, max_iter=MAX_ITER, tol=GRAD_TOL, bound=None):
    x = np.asarray(x0, dtype=float).copy()
    f, g, H = fun(x, 2)
    fallback = 0
    hit_bound = False
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        if np.max(np.abs(g), initial=0.0) < tol:
            converged = True
            it -= 1
            break
        try:
            d = cho_solve(cho_factor(-H), g)
        except LinAlgError:
            fallback += 1
            d = g / max(1.0, np.linalg.norm(g))
        slope = g @ d
        t = 1.0
        full = None
        while True:
            xn = x + t * d
            # the full step is usually accepted, so evaluate it with derivatives
            full = fun(xn, 2) if t == 1.0 else None
            fn = full[0] if full is not None else fun(xn, 0)
            if np.isfinite(fn) and fn >= f + 1e-4 * t * slope:
                break
            if t * abs(slope) <= 1e-13 * max(1.0, abs(f)) and np.isfinite(fn):
                # remaining progress is below rounding of the objective
                break
            t *= 0.5
            if t < 1e-12:
                xn = None
                break
        if xn is None:
            break
        x = xn
        if bound is not None and np.max(np.abs(x)) > bound:
            x = np.clip(x, -bound, bound)
            hit_bound = True
            f, g, H = fun(x, 2)
            break
        f, g, H = full if (full is not None and t == 1.0) else fun(x, 2)
    else:
        converged = np.max(np.abs(g), initial=0.0) < tol
    gn = float(np.max(np.abs(g), initial=0.0))
    return x, f, it, converged and not hit_bound, gn, hit_bound, fallback


def maximize_beta_part(data: Dataset, b_eff, beta_init, phi_init: float,
                       max_iter: int = MAX_ITER, tol: float = GRAD_TOL) -> OptimResult:
    """Maximize the Beta-part objective over ``(beta, phi)``.

    ``argmax`` of the result is ``concat(beta, [phi])`` on the natural scale.
    """
    if not phi_init > 0:
        raise ValueError("phi_init must be positive")
    x0 = np.append(np.asarray(beta_init, dtype=float), np.log(phi_init))
    fun = lambda th, order: beta_part_objective(th, data, b_eff, order)  # noqa: E731
    x, f, it, conv, gn, _, fb = _newton(fun, x0, max_iter, tol)
    return OptimResult(np.append(x[:-1], np.exp(x[-1])), float(f), it, bool(conv), gn,
                       fallback_steps=fb)


def maximize_logistic_part(data: Dataset, a_eff, alpha_init,
                           max_iter: int = MAX_ITER, tol: float = GRAD_TOL) -> OptimResult:
    """Maximize the chain-averaged logistic log-likelihood over ``alpha``.

    The random intercept draws enter as offsets.  Separation is reported
    when the iterate leaves the box ``|alpha_j| <= 1e3`` or when the fit is
    perfect with a large coefficient.
    """
    x0 = np.asarray(alpha_init, dtype=float)
    fun = lambda th, order: logistic_part_objective(th, data, a_eff, order)  # noqa: E731
    x, f, it, conv, gn, hit, fb = _newton(fun, x0, max_iter, tol, bound=SEPARATION_BOUND)
    separated = hit
    if x.size and data.n_obs and not hit:
        eta = np.atleast_2d(a_eff)[:, data.index] + data.x @ x
        worst = np.max(-log_sigmoid(data.sign * eta))
        separated = worst < 1e-8 and np.max(np.abs(x)) > 10.0
    return OptimResult(x, float(f), it, bool(conv and not separated), gn,
                       separation=bool(separated), fallback_steps=fb)
