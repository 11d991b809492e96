"""Compiled inner loops for the sampler and the M-step objectives.

The numpy implementations in ``model.split_loglik`` and
``optimizer.*_objective`` stay the reference; these fused loops compute the
same quantities without temporaries and are cross-checked against them in
the tests.  Observations are laid out per individual: ``offsets`` (length
N + 1) delimits rows of all observations, ``pos_offsets`` rows of the
positive ones.
"""
import math

import numba
import numpy as np

from ._special import gamma_family


@numba.njit(cache=True, inline="always")
def _log_sigmoid(x):
    if x >= 0.0:
        return -math.log1p(math.exp(-x))
    return x - math.log1p(math.exp(x))


@numba.njit(cache=True)
def ind_logit(a, lo, hi, xa, present):
    s = 0.0
    for j in range(lo, hi):
        eta = a + xa[j]
        s += _log_sigmoid(eta) if present[j] else _log_sigmoid(-eta)
    return s


@numba.njit(cache=True)
def ind_logit_fast(a, lo, hi, xa, present, exa):
    """``ind_logit`` using precomputed ``exa = exp(-sign * xa)``.

    Each term is ``-log1p(exp(-sign * a) * exa[j])``; rows where the product
    is not finite fall back to the direct form.
    """
    ep = math.exp(-a)
    em = math.exp(a)
    s = 0.0
    for j in range(lo, hi):
        w = (ep if present[j] else em) * exa[j]
        if w < 1e300:
            s -= math.log1p(w)
        else:
            eta = a + xa[j]
            s += _log_sigmoid(eta) if present[j] else _log_sigmoid(-eta)
    return s


@numba.njit(cache=True)
def ind_beta(b, lo, hi, zb, logy, log1my, phi, lgphi):
    s = 0.0
    for j in range(lo, hi):
        eta = b + zb[j]
        pa = math.exp(_log_sigmoid(eta)) * phi
        pb = math.exp(_log_sigmoid(-eta)) * phi
        if pa <= 0.0 or pb <= 0.0:
            return -np.inf
        s += lgphi - math.lgamma(pa) - math.lgamma(pb) + (pa - 1.0) * logy[j] \
            + (pb - 1.0) * log1my[j]
    return s


@numba.njit(cache=True)
def ind_beta_fast(b, lo, hi, zb, logy, log1my, phi, lgphi, ezb):
    """``ind_beta`` using precomputed ``ezb = exp(-zb)``."""
    eb = math.exp(-b)
    s = 0.0
    for j in range(lo, hi):
        e = eb * ezb[j]
        if e < 1e300:
            u = 1.0 / (1.0 + e)
            pa = u * phi
            pb = e * u * phi
        else:
            eta = b + zb[j]
            pa = math.exp(_log_sigmoid(eta)) * phi
            pb = math.exp(_log_sigmoid(-eta)) * phi
        if pa <= 0.0 or pb <= 0.0:
            return -np.inf
        s += lgphi - math.lgamma(pa) - math.lgamma(pb) + (pa - 1.0) * logy[j] \
            + (pb - 1.0) * log1my[j]
    return s


@numba.njit(cache=True)
def _exp_tables(xa, present, zb):
    exa = np.empty(xa.size)
    for j in range(xa.size):
        exa[j] = math.exp(-xa[j] if present[j] else xa[j])
    return exa, np.exp(-zb)


@numba.njit(cache=True)
def loglik_all(eff, offsets, xa, present, pos_offsets, zb, logy, log1my, phi):
    """Per-individual logit and Beta log-likelihood for effects ``(S, N, 2)``."""
    S, N = eff.shape[0], eff.shape[1]
    lgphi = math.lgamma(phi)
    exa, ezb = _exp_tables(xa, present, zb)
    ll_a = np.empty((S, N))
    ll_b = np.empty((S, N))
    for c in range(S):
        for i in range(N):
            ll_a[c, i] = ind_logit_fast(eff[c, i, 0], offsets[i], offsets[i + 1], xa,
                                        present, exa)
            ll_b[c, i] = ind_beta_fast(eff[c, i, 1], pos_offsets[i], pos_offsets[i + 1], zb,
                                       logy, log1my, phi, lgphi, ezb)
    return ll_a, ll_b


@numba.njit(cache=True, inline="always")
def _prior_diff(new, cur, mean, var):
    if var <= 0.0:
        return 0.0 if new == cur else -np.inf
    return -0.5 * ((new - mean) ** 2 - (cur - mean) ** 2) / var


@numba.njit(cache=True)
def mh_sweeps(eff, ll_a, ll_b, offsets, xa, present, pos_offsets, zb, logy, log1my, phi,
              mu_a, mu_b, var_a, var_b, scale_a, scale_b, normals, uniforms, acc):
    """Run the three-kernel cycle ``S`` times on every chain and individual.

    ``eff`` (m, N, 2), ``ll_a``/``ll_b`` (m, N) are updated in place.
    ``normals`` is (m, S, 4, N) and ``uniforms`` (m, S, 3, N), drawn from each
    chain's own generator; ``acc`` (m, 3) accumulates acceptances.
    """
    m, N = ll_a.shape
    S = normals.shape[1]
    lgphi = math.lgamma(phi)
    exa, ezb = _exp_tables(xa, present, zb)
    sd_a, sd_b = math.sqrt(var_a), math.sqrt(var_b)
    for c in range(m):
        for i in range(N):
            lo, hi = offsets[i], offsets[i + 1]
            plo, phi_ = pos_offsets[i], pos_offsets[i + 1]
            a, b = eff[c, i, 0], eff[c, i, 1]
            la, lb = ll_a[c, i], ll_b[c, i]
            for s in range(S):
                # independence proposal from the population distribution;
                # NaN ratios compare False and so reject
                na = mu_a + sd_a * normals[c, s, 0, i]
                nb = mu_b + sd_b * normals[c, s, 1, i]
                nla = ind_logit_fast(na, lo, hi, xa, present, exa)
                nlb = ind_beta_fast(nb, plo, phi_, zb, logy, log1my, phi, lgphi, ezb)
                if math.log(uniforms[c, s, 0, i]) < nla + nlb - la - lb:
                    a, b, la, lb = na, nb, nla, nlb
                    acc[c, 0] += 1
                # random walk on a_i
                na = a + scale_a * normals[c, s, 2, i]
                nla = ind_logit_fast(na, lo, hi, xa, present, exa)
                if math.log(uniforms[c, s, 1, i]) < nla - la + _prior_diff(na, a, mu_a, var_a):
                    a, la = na, nla
                    acc[c, 1] += 1
                # random walk on b_i
                nb = b + scale_b * normals[c, s, 3, i]
                nlb = ind_beta_fast(nb, plo, phi_, zb, logy, log1my, phi, lgphi, ezb)
                if math.log(uniforms[c, s, 2, i]) < nlb - lb + _prior_diff(nb, b, mu_b, var_b):
                    b, lb = nb, nlb
                    acc[c, 2] += 1
            eff[c, i, 0], eff[c, i, 1] = a, b
            ll_a[c, i], ll_b[c, i] = la, lb


@numba.njit(cache=True, inline="always")
def _sigmoid_pair(eta):
    """``(sigmoid(eta), sigmoid(-eta))`` from one exponential."""
    e = math.exp(-abs(eta))
    d = 1.0 / (1.0 + e)
    if eta >= 0.0:
        return d, e * d
    return e * d, d


@numba.njit(cache=True)
def beta_objective(b_eff, pos_offsets, zb, logy, log1my, phi, order):
    """Chain sums of the Beta-part terms and their eta/phi derivatives.

    Returns ``f`` and per-observation chain sums ``d_eta``, ``d2_eta``,
    ``d2_etaphi`` plus the scalar sums of ``d_phi`` and ``d2_phiphi``
    (derivatives on the natural phi scale).  Only ``f`` is filled when
    ``order == 0``.
    """
    m, N = b_eff.shape
    n = zb.size
    d_eta = np.zeros(n)
    d2_eta = np.zeros(n)
    d2_etaphi = np.zeros(n)
    d_phi = 0.0
    d2_phiphi = 0.0
    lgphi, dgphi, tgphi = gamma_family(phi)
    f = 0.0
    for c in range(m):
        for i in range(N):
            bi = b_eff[c, i]
            for j in range(pos_offsets[i], pos_offsets[i + 1]):
                u, v = _sigmoid_pair(bi + zb[j])
                pa, pb = u * phi, v * phi
                if pa <= 0.0 or pb <= 0.0:
                    f = -np.inf
                    continue
                ly, l1y = logy[j], log1my[j]
                if order == 0:
                    f += lgphi - math.lgamma(pa) - math.lgamma(pb) + pa * ly + pb * l1y
                    continue
                lga, dga, ta = gamma_family(pa)
                lgb, dgb, tb = gamma_family(pb)
                f += lgphi - lga - lgb + pa * ly + pb * l1y
                resid = (ly - l1y) - (dga - dgb)
                w = u * v
                d_eta[j] += phi * resid * w
                d_phi += dgphi - u * dga - v * dgb + u * ly + v * l1y
                d2_eta[j] += -phi * phi * (ta + tb) * w * w + phi * resid * w * (v - u)
                d2_phiphi += tgphi - u * u * ta - v * v * tb
                d2_etaphi[j] += (resid + phi * (v * tb - u * ta)) * w
    return f, d_eta, d2_eta, d2_etaphi, d_phi, d2_phiphi


@numba.njit(cache=True)
def logistic_objective(a_eff, offsets, xa, present, order):
    """Chain sums of the logistic terms, residuals and weights per observation."""
    m, N = a_eff.shape
    n = xa.size
    resid = np.zeros(n)
    wts = np.zeros(n)
    f = 0.0
    for c in range(m):
        for i in range(N):
            ai = a_eff[c, i]
            for j in range(offsets[i], offsets[i + 1]):
                eta = ai + xa[j]
                e = math.exp(-abs(eta))
                ls = min(eta, 0.0) - math.log1p(e)     # log sigmoid(eta)
                f += ls if present[j] else ls - eta
                if order == 0:
                    continue
                d = 1.0 / (1.0 + e)
                prob = d if eta >= 0.0 else e * d
                resid[j] += (1.0 if present[j] else 0.0) - prob
                wts[j] += e * d * d
    return f, resid, wts
