"""Stochastic approximation EM for the ZIBR mixed model.

Iteration ``q`` (with step size ``gamma_q``):

1. simulate the random intercepts of every chain given ``theta^(q-1)``;
2. update the summary statistics ``F1 ~ sum_i phi_i`` and
   ``F2 ~ sum_i phi_i phi_i'`` with the chain-averaged sums;
3. set ``mu = F1/N`` and ``G = diag(F2/N - F1 F1'/N^2)``;
4. maximize the Beta and logistic conditional log-likelihoods over
   ``(beta, phi)`` and ``alpha`` and move toward the maximizers with the
   same ``gamma_q``.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .fim import FimAccumulator, covariance, fim_update, min_eigenvalue, score_and_hessian
from .model import Dataset, ZibrError, ZibrParams, param_names
from .optimizer import maximize_beta_part, maximize_logistic_part
from .sampler import ChainState, McmcConfig, adapt_scales, init_chains, sstep_chains

log = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-10
PHI_FLOOR = 1e-8


class FitError(ZibrError):
    """The SAEM iterations produced a non-finite parameter."""

    def __init__(self, message, iteration=None, dump=None):
        super().__init__(message)
        self.iteration = iteration
        self.dump = dump


@dataclass(frozen=True)
class StepSchedule:
    """``gamma_q = 1`` for ``q <= k1`` and ``1/(q - k1)`` afterwards."""

    k1: int = 750
    k2: int = 250

    def __post_init__(self):
        if self.k1 < 1 or self.k2 < 0:
            raise ValueError("need k1 >= 1 and k2 >= 0")

    @property
    def total(self) -> int:
        return self.k1 + self.k2

    def gamma(self, q: int) -> float:
        if not 1 <= q <= self.total:
            raise ValueError(f"iteration {q} outside 1..{self.total}")
        return 1.0 if q <= self.k1 else 1.0 / (q - self.k1)


class MomentAccumulator:
    """Running per-individual mean and variance of sampled effects."""

    def __init__(self, N: int):
        self.count = 0
        self.mean = np.zeros((N, 2))
        self.m2 = np.zeros((N, 2))

    def update(self, draws):
        """Add a batch of draws with shape ``(n, N, 2)`` (Chan et al. merge)."""
        draws = np.asarray(draws, dtype=float)
        nb = draws.shape[0]
        bmean = draws.mean(axis=0)
        bm2 = ((draws - bmean) ** 2).sum(axis=0)
        n = self.count + nb
        delta = bmean - self.mean
        self.mean = self.mean + delta * (nb / n)
        self.m2 = self.m2 + bm2 + delta ** 2 * (self.count * nb / n)
        self.count = n

    @property
    def variance(self):
        if self.count < 2:
            raise ValueError("variance needs at least two draws")
        return self.m2 / (self.count - 1)


@dataclass
class SaemState:
    f1: np.ndarray
    f2: np.ndarray
    params: ZibrParams
    n_individuals: int
    iteration: int = 0
    chains: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    cond_moment_acc: MomentAccumulator | None = None


@dataclass
class FitResult:
    params: ZibrParams
    names: list
    trace: np.ndarray
    std_errors: np.ndarray | None = None
    covariance: np.ndarray | None = None
    loglik: float | None = None
    loglik_se: float | None = None
    moments: tuple | None = None
    diagnostics: dict = field(default_factory=dict)
    seed: object = None
    config: dict = field(default_factory=dict)
    fim: FimAccumulator | None = None
    state: SaemState | None = None

    def estimates(self) -> dict:
        return dict(zip(self.names, self.params.to_vector().tolist()))

    def se_dict(self) -> dict | None:
        if self.std_errors is None:
            return None
        return dict(zip(self.names, self.std_errors.tolist()))


# --------------------------------------------------------------------------
# the three deterministic pieces of an iteration
# --------------------------------------------------------------------------

def chain_sums(effects) -> list:
    """``(sum_i phi_i, sum_i phi_i phi_i')`` for each chain of ``(m, N, 2)`` effects."""
    effects = np.asarray(effects, dtype=float)
    return [(e.sum(axis=0), e.T @ e) for e in effects]


def sa_update(state: SaemState, sums, gamma_q: float) -> SaemState:
    """``F <- F + gamma (mean over chains of S - F)`` for both statistics."""
    if not 0 < gamma_q <= 1:
        raise ValueError("gamma_q must lie in (0, 1]")
    s1 = np.mean([s[0] for s in sums], axis=0)
    s2 = np.mean([s[1] for s in sums], axis=0)
    if gamma_q == 1.0:
        # exact replacement; F + (S - F) can differ from S by rounding
        state.f1, state.f2 = s1, s2
        return state
    state.f1 = state.f1 + gamma_q * (s1 - state.f1)
    state.f2 = state.f2 + gamma_q * (s2 - state.f2)
    return state


def mstep_gaussian(state: SaemState):
    """Closed-form population mean and diagonal covariance.

    Returns ``(mu, G, floored)`` where ``floored`` lists which diagonal
    entries were raised to the variance floor.
    """
    N = state.n_individuals
    mu = state.f1 / N
    full = state.f2 / N - np.outer(state.f1, state.f1) / N ** 2
    diag = np.diag(full).copy()
    floored = diag <= VARIANCE_FLOOR
    diag[floored] = VARIANCE_FLOOR
    return mu, np.diag(diag), floored


def damped_update(old, inner, gamma_q: float):
    """Move ``(phi, alpha, beta)`` a fraction ``gamma_q`` toward the inner maximizer.

    Returns ``(phi, alpha, beta, phi_floored)``.
    """
    if not 0 < gamma_q <= 1:
        raise ValueError("gamma_q must lie in (0, 1]")
    phi0, al0, be0 = old
    phi1, al1, be1 = inner
    phi = phi0 + gamma_q * (phi1 - phi0)
    alpha = np.asarray(al0, dtype=float) + gamma_q * (np.asarray(al1) - np.asarray(al0))
    beta = np.asarray(be0, dtype=float) + gamma_q * (np.asarray(be1) - np.asarray(be0))
    floored = not phi > PHI_FLOOR
    if floored:
        phi = PHI_FLOOR
    return float(phi), alpha, beta, floored


def conditional_moments(state: SaemState):
    """Per-individual mean and variance of the effects sampled after ``k1``."""
    acc = state.cond_moment_acc
    if acc is None or acc.count < 2:
        raise ValueError("conditional moments need a completed k2 phase (k2 >= 1, "
                         "at least two draws)")
    return acc.mean.copy(), acc.variance


# --------------------------------------------------------------------------
# initial values
# --------------------------------------------------------------------------

def default_init(data: Dataset) -> ZibrParams:
    """Data-driven starting point.

    ``a`` is the logit of the presence rate, ``b`` the mean logit of the
    positive values, ``phi`` the method-of-moments Beta precision of the
    positive values; slopes start at 0 and both intercept SDs at 0.5.
    """
    y = data.y
    if y.size:
        pres = np.clip(np.mean(y > 0), 0.02, 0.98)
        a = float(np.log(pres / (1 - pres)))
    else:
        a = 0.0
    pos = y[y > 0]
    if pos.size:
        b = float(np.mean(np.log(pos) - np.log1p(-pos)))
    else:
        b = 0.0
    if pos.size > 1 and pos.var() > 0:
        mean = pos.mean()
        phi = float(np.clip(mean * (1 - mean) / pos.var() - 1.0, 0.5, 1e4))
    else:
        phi = 1.0
    return ZibrParams(phi=phi, a=a, b=b, alpha=np.zeros(data.p), beta=np.zeros(data.r),
                      sigma1_sq=0.25, sigma2_sq=0.25)


# --------------------------------------------------------------------------
# driver
# --------------------------------------------------------------------------

Sampler = Callable[[list, ZibrParams, Dataset, McmcConfig], list]


def fit(data: Dataset, init: ZibrParams | None = None,
        schedule: StepSchedule = StepSchedule(), m: int = 5,
        mcmc: McmcConfig = McmcConfig(), seed=0, compute_fim: bool = True,
        sampler: Sampler | None = None) -> FitResult:
    """Maximum likelihood fit by SAEM.

    Parameters
    ----------
    data : Dataset
    init : ZibrParams, optional
        Starting point; :func:`default_init` when omitted.
    schedule : StepSchedule
        ``k1`` iterations with unit step followed by ``k2`` with ``1/(q-k1)``.
    m : int
        Number of Markov chains.
    mcmc : McmcConfig
        Sampler settings; random-walk scales adapt during the first ``k1``
        iterations when ``mcmc.adapt`` is set.
    seed : int or SeedSequence
        Chain ``l`` draws from ``SeedSequence(seed).spawn(m)[l]``.
    compute_fim : bool
        Accumulate the Louis information and report standard errors.
    sampler : callable, optional
        Replacement for :func:`sampler.sstep_chains` (test doubles).

    Returns
    -------
    FitResult
    """
    if m < 1:
        raise ValueError("need at least one chain")
    theta = default_init(data) if init is None else init
    theta.check_dims(data)
    if not (theta.sigma1_sq > 0 and theta.sigma2_sq > 0):
        raise ValueError("initial variances must be positive")
    sampler = sampler or sstep_chains
    N = data.N
    names = param_names(data.p, data.r, data.x_names, data.z_names)

    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rngs = [np.random.default_rng(s) for s in ss.spawn(m)]
    chains: list[ChainState] = init_chains(theta, data, rngs)
    eff0 = np.stack([c.effects for c in chains])
    sums0 = chain_sums(eff0)
    state = SaemState(f1=np.mean([s[0] for s in sums0], axis=0),
                      f2=np.mean([s[1] for s in sums0], axis=0),
                      params=theta, n_individuals=N, chains=chains,
                      cond_moment_acc=MomentAccumulator(N) if schedule.k2 else None)
    fim = FimAccumulator(names) if compute_fim else None
    trace = np.empty((schedule.total, len(names)))
    diag = dict(variance_floor_hits=0, phi_floor_hits=0, beta_part_nonconverged=0,
                logistic_part_nonconverged=0, separation_events=0, newton_fallback_steps=0)
    accepted_k2 = np.zeros(3, dtype=np.int64)
    proposed_k2 = np.zeros(3, dtype=np.int64)
    cfg = mcmc

    for q in range(1, schedule.total + 1):
        gamma = schedule.gamma(q)
        for c in chains:
            c.reset_counters()
        chains = sampler(chains, theta, data, cfg)
        eff = np.stack([c.effects for c in chains])
        if not np.isfinite(eff).all():
            raise FitError(f"non-finite random effects at iteration {q}", iteration=q,
                           dump=dict(zip(names, theta.to_vector().tolist())))
        acc_now = np.sum([c.accepted for c in chains], axis=0)
        prop_now = np.sum([c.proposed for c in chains], axis=0)
        if q <= schedule.k1:
            if cfg.adapt:
                cfg = adapt_scales((acc_now, prop_now), cfg)
        else:
            accepted_k2 += acc_now
            proposed_k2 += prop_now
            state.cond_moment_acc.update(eff)

        sa_update(state, chain_sums(eff), gamma)
        mu, G, floored = mstep_gaussian(state)
        diag["variance_floor_hits"] += int(floored.sum())

        beta_res = maximize_beta_part(data, eff[..., 1], theta.beta, theta.phi)
        alpha_res = maximize_logistic_part(data, eff[..., 0], theta.alpha)
        diag["beta_part_nonconverged"] += not beta_res.converged
        diag["logistic_part_nonconverged"] += not alpha_res.converged
        diag["separation_events"] += alpha_res.separation
        diag["newton_fallback_steps"] += beta_res.fallback_steps + alpha_res.fallback_steps
        phi, alpha, beta, phi_floored = damped_update(
            (theta.phi, theta.alpha, theta.beta),
            (beta_res.argmax[-1], alpha_res.argmax, beta_res.argmax[:-1]), gamma)
        diag["phi_floor_hits"] += phi_floored

        vec = np.concatenate([mu, alpha, beta, [G[0, 0], G[1, 1], phi]])
        if not np.isfinite(vec).all():
            raise FitError(f"non-finite parameter at iteration {q}", iteration=q,
                           dump=dict(zip(names, vec.tolist())))
        theta = ZibrParams(phi=phi, a=mu[0], b=mu[1], alpha=alpha, beta=beta,
                           sigma1_sq=G[0, 0], sigma2_sq=G[1, 1])
        state.params = theta
        state.iteration = q
        trace[q - 1] = vec

        # with gamma = 1 the accumulators are overwritten, so nothing before
        # the last unit step can influence the result
        if fim is not None and q >= min(schedule.k1, schedule.total):
            s, H = score_and_hessian(theta, data, eff)
            fim_update(fim, s, H, gamma)

    state.chains = chains
    state.trace = trace
    with np.errstate(invalid="ignore", divide="ignore"):
        rates = accepted_k2 / proposed_k2
    diag["acceptance_rates"] = dict(zip(("prior", "rw_a", "rw_b"), rates.tolist()))
    diag["rw_scales"] = (cfg.rw_scale_a, cfg.rw_scale_b)

    result = FitResult(params=theta, names=names, trace=trace, diagnostics=diag,
                       seed=seed if not isinstance(seed, np.random.SeedSequence) else seed.entropy,
                       config=dict(schedule=asdict(schedule), m=m, mcmc=asdict(mcmc)),
                       fim=fim)
    if schedule.k2 and state.cond_moment_acc.count >= 2:
        result.moments = conditional_moments(state)
    if fim is not None:
        cov = covariance(fim)
        if cov is None:
            diag["fim_min_eigenvalue"] = min_eigenvalue(fim)
            log.warning("information matrix not positive definite (min eigenvalue %.3g)",
                        diag["fim_min_eigenvalue"])
        else:
            result.covariance = cov
            result.std_errors = np.sqrt(np.diag(cov))
    result.state = state
    return result
