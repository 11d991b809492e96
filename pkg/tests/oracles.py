"""Independent reference computations used by the tests.

Nothing here imports the package's numerical code; each oracle re-derives
its quantity from scipy/mpmath primitives or from first principles.
"""
import mpmath as mp
import numpy as np
from scipy import optimize
from scipy.special import expit, gammaln, log_expit, logsumexp
from scipy.stats import beta as beta_dist


def beta_logpdf_mp(y, u, phi, dps=50):
    """log Beta(u*phi, (1-u)*phi) density at y in arbitrary precision."""
    with mp.workdps(dps):
        y, u, phi = mp.mpf(y), mp.mpf(u), mp.mpf(phi)
        a, b = u * phi, (1 - u) * phi
        val = (mp.loggamma(phi) - mp.loggamma(a) - mp.loggamma(b)
               + (a - 1) * mp.log(y) + (b - 1) * mp.log(1 - y))
        return float(val)


def complete_loglik_bruteforce(phi, a, b, alpha, beta, s1, s2, rows, effects):
    """Term-by-term expansion of the complete-data log-likelihood.

    ``rows`` is a list of ``(i, y, x, z)``; ``effects`` an (N, 2) array.
    """
    total = 0.0
    for ai, bi in effects:
        total += -0.5 * np.log(2 * np.pi * s1) - (ai - a) ** 2 / (2 * s1)
        total += -0.5 * np.log(2 * np.pi * s2) - (bi - b) ** 2 / (2 * s2)
    for i, y, x, z in rows:
        p = 1.0 / (1.0 + np.exp(-(effects[i][0] + np.dot(x, alpha))))
        if y == 0:
            total += np.log(1.0 - p)
        else:
            u = 1.0 / (1.0 + np.exp(-(effects[i][1] + np.dot(z, beta))))
            total += np.log(p) + beta_dist.logpdf(y, u * phi, (1 - u) * phi)
    return total


def central_gradient(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.empty(x.size)
    for k in range(x.size):
        e = np.zeros(x.size)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def central_hessian(grad, x, h=1e-5):
    """Hessian by central differences of an analytic gradient, symmetrized."""
    x = np.asarray(x, dtype=float)
    H = np.empty((x.size, x.size))
    for k in range(x.size):
        e = np.zeros(x.size)
        e[k] = h
        H[:, k] = (grad(x + e) - grad(x - e)) / (2 * h)
    return 0.5 * (H + H.T)


def _individual_log_integrand(ab, ys, xs, zs, theta):
    phi, a, b, alpha, beta, s1, s2 = theta
    ai, bi = ab
    val = (-0.5 * np.log(2 * np.pi * s1) - (ai - a) ** 2 / (2 * s1)
           - 0.5 * np.log(2 * np.pi * s2) - (bi - b) ** 2 / (2 * s2))
    for y, x, z in zip(ys, xs, zs):
        eta = ai + np.dot(x, alpha)
        if y == 0:
            val += -np.logaddexp(0.0, eta)
        else:
            mu = expit(bi + np.dot(z, beta))
            val += -np.logaddexp(0.0, -eta) + beta_dist.logpdf(y, mu * phi, (1 - mu) * phi)
    return val


def marginal_loglik_aghq(individuals, theta, n_points=64):
    """Adaptive tensor Gauss-Hermite quadrature of each individual's integral.

    ``individuals`` is a list of ``(ys, xs, zs)``; ``theta`` is
    ``(phi, a, b, alpha, beta, sigma1_sq, sigma2_sq)``.  Each integrand is
    centred at its mode and scaled by the inverse curvature there.
    """
    nodes, weights = np.polynomial.hermite.hermgauss(n_points)
    total = 0.0
    for ys, xs, zs in individuals:
        f = lambda ab: _individual_log_integrand(ab, ys, xs, zs, theta)  # noqa: E731
        res = optimize.minimize(lambda ab: -f(ab), x0=[theta[1], theta[2]], method="BFGS",
                                options=dict(gtol=1e-10))
        mode = res.x
        h = 1e-4
        scales = []
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            curv = -(f(mode + e) - 2 * f(mode) + f(mode - e)) / h ** 2
            scales.append(np.sqrt(2.0 / curv))
        logs = []
        for t1, w1 in zip(nodes, weights):
            for t2, w2 in zip(nodes, weights):
                ab = mode + np.array(scales) * np.array([t1, t2])
                logs.append(f(ab) + t1 ** 2 + t2 ** 2 + np.log(w1) + np.log(w2))
        logs = np.array(logs)
        top = logs.max()
        total += top + np.log(np.exp(logs - top).sum()) + np.log(scales[0] * scales[1])
    return total


def marginal_loglik_factorized(index, y, x, z, theta, n_points=120):
    """Exact marginal log-likelihood from two 1-D Gauss-Hermite rules.

    Given the parameters the presence terms involve only ``a_i`` and the
    abundance terms only ``b_i``, so each individual's 2-D integral is a
    product of two 1-D integrals.  ``theta`` is ``(phi, a, b, alpha, beta,
    sigma1_sq, sigma2_sq)``; ``index`` maps rows to individuals ``0..N-1``.
    """
    phi, a, b, alpha, beta, s1, s2 = theta
    index, y = np.asarray(index), np.asarray(y, dtype=float)
    n_ind = index.max() + 1
    t, w = np.polynomial.hermite.hermgauss(n_points)
    log_w = np.log(w / np.sqrt(np.pi))
    present = y > 0

    eta = (a + np.sqrt(2 * s1) * t)[None, :] + (np.asarray(x) @ np.atleast_1d(alpha))[:, None]
    rows = np.where(present[:, None], log_expit(eta), log_expit(-eta))
    total = np.zeros((n_ind, n_points))
    np.add.at(total, index, rows)
    out = logsumexp(total + log_w, axis=1).sum()

    yp, ip = y[present], index[present]
    eta = (b + np.sqrt(2 * s2) * t)[None, :] + (np.asarray(z)[present] @ np.atleast_1d(beta))[:, None]
    u = expit(eta)
    rows = (gammaln(phi) - gammaln(u * phi) - gammaln((1 - u) * phi)
            + (u * phi - 1) * np.log(yp)[:, None] + ((1 - u) * phi - 1) * np.log1p(-yp)[:, None])
    total = np.zeros((n_ind, n_points))
    np.add.at(total, ip, rows)
    return out + logsumexp(total + log_w, axis=1).sum()


def exact_mle_and_se(index, y, x, z, start):
    """Maximize ``marginal_loglik_factorized`` and invert its numerical Hessian.

    ``start`` and the results use the order (a, b, alpha..., beta...,
    sigma1_sq, sigma2_sq, phi).  Variances and phi are optimized on the log
    scale; the Hessian is taken on the natural scale.
    """
    x, z = np.asarray(x, dtype=float), np.asarray(z, dtype=float)
    p, r = x.shape[1], z.shape[1]

    def loglik(v):
        return marginal_loglik_factorized(index, y, x, z, (v[-1], v[0], v[1], v[2:2 + p],
                                                         v[2 + p:2 + p + r], v[-3], v[-2]))

    k = 2 + p + r
    to_nat = lambda u: np.r_[u[:k], np.exp(u[k:])]  # noqa: E731
    start = np.asarray(start, dtype=float)
    res = optimize.minimize(lambda u: -loglik(to_nat(u)), np.r_[start[:k], np.log(start[k:])],
                            method="BFGS", options=dict(gtol=1e-8))
    mle = to_nat(res.x)
    h, dim = 1e-4, mle.size
    hess = np.zeros((dim, dim))
    for i in range(dim):
        for j in range(i, dim):
            ei, ej = np.eye(dim)[i] * h, np.eye(dim)[j] * h
            hess[i, j] = hess[j, i] = (loglik(mle + ei + ej) - loglik(mle + ei - ej)
                                       - loglik(mle - ei + ej) + loglik(mle - ei - ej)) / (4 * h * h)
    return mle, np.sqrt(np.diag(np.linalg.inv(-hess)))


def logistic_irls(X, y, offset=None, tol=1e-12, max_iter=100):
    """Textbook IRLS fit; returns (coefficients, standard errors)."""
    X = np.asarray(X, dtype=float)
    off = np.zeros(len(y)) if offset is None else offset
    w = np.zeros(X.shape[1])
    for _ in range(max_iter):
        p = expit(X @ w + off)
        W = p * (1 - p)
        step = np.linalg.solve(X.T @ (X * W[:, None]), X.T @ (y - p))
        w = w + step
        if np.max(np.abs(step)) < tol:
            break
    p = expit(X @ w + off)
    cov = np.linalg.inv(X.T @ (X * (p * (1 - p))[:, None]))
    return w, np.sqrt(np.diag(cov))


def bh_bruteforce(p):
    """BH adjusted p-values straight from the definition min_{j>=rank} p_(j) n / j."""
    p = list(p)
    n = len(p)
    order = sorted(range(n), key=lambda k: p[k])
    ranked = [p[k] for k in order]
    adj_sorted = [min(1.0, min(ranked[j] * n / (j + 1) for j in range(r, n))) for r in range(n)]
    out = [0.0] * n
    for pos, k in enumerate(order):
        out[k] = adj_sorted[pos]
    return out


def lgamma_mp(x):
    return float(mp.loggamma(x))


__all__ = ["beta_logpdf_mp", "complete_loglik_bruteforce", "central_gradient",
           "central_hessian", "marginal_loglik_aghq", "marginal_loglik_factorized",
           "exact_mle_and_se", "logistic_irls", "bh_bruteforce",
           "gammaln"]
