"""Metropolis-Hastings simulation of the random intercepts given the data.

Each sweep cycles three kernels for every individual:

1. independence proposal from the population distribution N((a, b), G);
2. random walk on a_i;
3. random walk on b_i.

Kernel 1 leaves the prior out of the acceptance ratio (it cancels with the
proposal); kernel 2 only touches the presence/absence part of the likelihood
and kernel 3 only the Beta part, so each evaluates just what changed.

Chains are advanced together for speed, but every random number a chain
consumes comes from its own generator, so a chain's trajectory does not
depend on which other chains are run alongside it.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as _k
from .model import Dataset, ZibrParams, normal_prior_logpdf, split_loglik

KERNELS = ("prior", "rw_a", "rw_b")


@dataclass(frozen=True)
class McmcConfig:
    n_kernels_per_sstep: int = 5
    rw_scale_a: float = 0.5
    rw_scale_b: float = 0.5
    adapt: bool = True
    target_acceptance: float = 0.4

    def __post_init__(self):
        if self.n_kernels_per_sstep < 1:
            raise ValueError("n_kernels_per_sstep must be >= 1")
        if not (self.rw_scale_a > 0 and self.rw_scale_b > 0):
            raise ValueError("random-walk scales must be positive")
        if not 0.2 <= self.target_acceptance <= 0.6:
            raise ValueError("target_acceptance must lie in [0.2, 0.6]")


@dataclass
class ChainState:
    """One Markov chain over all individuals' intercepts.

    ``ll_logit`` and ``ll_beta`` cache the per-individual observation
    log-likelihood at the current effects, for the parameters used by the
    most recent :func:`sstep`.
    """

    effects: np.ndarray
    rng: np.random.Generator
    ll_logit: np.ndarray | None = None
    ll_beta: np.ndarray | None = None
    accepted: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=np.int64))
    proposed: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=np.int64))

    def reset_counters(self):
        self.accepted[:] = 0
        self.proposed[:] = 0

    def acceptance_rates(self) -> dict:
        with np.errstate(invalid="ignore", divide="ignore"):
            rates = self.accepted / self.proposed
        return dict(zip(KERNELS, rates.tolist()))


def chain_rngs(seed, m: int) -> list[np.random.Generator]:
    """Independent generators for ``m`` chains.

    Chain ``l`` uses ``SeedSequence(seed).spawn(m)[l]``.
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn(m)]


def init_chains(params: ZibrParams, data: Dataset, rngs) -> list[ChainState]:
    """Start each chain from a draw of the population distribution."""
    states = []
    for rng in rngs:
        eff = np.column_stack([params.a + params.sigma1 * rng.standard_normal(data.N),
                               params.b + params.sigma2 * rng.standard_normal(data.N)])
        states.append(ChainState(eff, rng))
    return states


def _layout(params: ZibrParams, data: Dataset):
    """Contiguous arrays consumed by the compiled kernels."""
    xa = np.ascontiguousarray(data.x @ params.alpha)
    zb = np.ascontiguousarray(data.pos_z @ params.beta)
    return (data.offsets, xa, data.present, data.pos_offsets, zb,
            data.pos_logy, data.pos_log1my)


def refresh_cache(states, params: ZibrParams, data: Dataset):
    eff = np.ascontiguousarray(np.stack([s.effects for s in states]))
    ll_a, ll_b = _k.loglik_all(eff, *_layout(params, data), params.phi)
    for l, s in enumerate(states):
        s.ll_logit = ll_a[l]
        s.ll_beta = ll_b[l]


def sstep_chains(states: list[ChainState], params: ZibrParams, data: Dataset,
                 config: McmcConfig) -> list[ChainState]:
    """Advance every chain by ``config.n_kernels_per_sstep`` sweeps (in place).

    The cached log-likelihoods are recomputed at entry because ``params``
    usually changed since the previous call.  Nonfinite acceptance ratios
    count as rejections.
    """
    params.check_dims(data)
    m, N, S = len(states), data.N, config.n_kernels_per_sstep
    layout = _layout(params, data)
    eff = np.ascontiguousarray(np.stack([s.effects for s in states]))
    ll_a, ll_b = _k.loglik_all(eff, *layout, params.phi)
    normals = np.stack([s.rng.standard_normal((S, 4, N)) for s in states])
    uniforms = np.stack([s.rng.random((S, 3, N)) for s in states])
    acc = np.zeros((m, 3), dtype=np.int64)
    _k.mh_sweeps(eff, ll_a, ll_b, *layout, params.phi, params.a, params.b,
                 params.sigma1_sq, params.sigma2_sq, config.rw_scale_a, config.rw_scale_b,
                 normals, uniforms, acc)
    for l, s in enumerate(states):
        s.effects = eff[l]
        s.ll_logit = ll_a[l]
        s.ll_beta = ll_b[l]
        s.accepted += acc[l]
        s.proposed += S * N
    return states


def sstep(state: ChainState, params: ZibrParams, data: Dataset,
          config: McmcConfig) -> ChainState:
    """One simulation step for a single chain."""
    return sstep_chains([state], params, data, config)[0]


def adapt_scales(counters, config: McmcConfig, gain: float = 0.5) -> McmcConfig:
    """Robbins-Monro step of the random-walk scales toward the target rate.

    ``counters`` is ``(accepted, proposed)`` per kernel (summed over chains
    for the current iteration).  ``log(scale) += gain * (rate - target)``.
    """
    accepted, proposed = (np.asarray(c, dtype=float) for c in counters)
    scales = [config.rw_scale_a, config.rw_scale_b]
    for k, j in ((1, 0), (2, 1)):
        if proposed[k] > 0:
            rate = accepted[k] / proposed[k]
            scales[j] = float(scales[j] * np.exp(gain * (rate - config.target_acceptance)))
    return replace(config, rw_scale_a=scales[0], rw_scale_b=scales[1])


def conditional_logdensity(params: ZibrParams, data: Dataset, effects) -> np.ndarray:
    """Unnormalized log p(effects_i | y_i) per individual, computed from scratch."""
    effects = np.asarray(effects, dtype=float)
    ll = split_loglik(params, data, effects[None, :, 0], effects[None, :, 1])
    return (ll["logit"][0] + ll["beta"][0]
            + normal_prior_logpdf(params, effects[:, 0], effects[:, 1]))
