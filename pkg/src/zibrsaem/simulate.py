"""Synthetic ZIBR data, MCAR dropout and gap interpolation.

Designs follow a treatment/control split: the first half of the individuals
have ``X = 0`` and the second half ``X = 1``, with the same covariate used
in both parts of the model (``Z = X``).  Times are ``1, ..., T``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Dataset, ZibrError, ZibrParams, sigmoid

# Parameter sets of the reference simulation designs (SDs given, variances stored).
SETTING1 = ZibrParams.from_sd(phi=6.4, a=-0.5, b=-0.5, alpha=[0.5], beta=[0.5],
                              sigma1=3.2, sigma2=2.6)
SETTING2 = ZibrParams.from_sd(phi=6.4, a=-0.5, b=-0.5, alpha=[0.5], beta=[0.5],
                              sigma1=0.7, sigma2=0.5)
NULL_COVARIATES = ZibrParams.from_sd(phi=6.4, a=-0.5, b=0.5, alpha=[0.0], beta=[0.0],
                                     sigma1=0.7, sigma2=0.5)


def power_setting(setting: int, a: float) -> ZibrParams:
    """Parameters of the power-curve designs at logistic intercept ``a``.

    The four designs fix (alpha, b, beta) to (0.5, 0.5, 0.5), (-0.5, 0.5, 0.5),
    (0, 0.5, 0.5) and (0.5, 0, 0); SDs 0.7 and 0.5, phi = 6.4.
    """
    table = {1: (0.5, 0.5, 0.5), 2: (-0.5, 0.5, 0.5), 3: (0.0, 0.5, 0.5), 4: (0.5, 0.0, 0.0)}
    if setting not in table:
        raise ValueError(f"unknown power setting {setting}; choose 1-4")
    alpha, b, beta = table[setting]
    return ZibrParams.from_sd(phi=6.4, a=a, b=b, alpha=[alpha], beta=[beta],
                              sigma1=0.7, sigma2=0.5)


@dataclass(frozen=True)
class SimConfig:
    params: ZibrParams
    n_individuals: int = 100
    t_per_individual: int = 10
    seed: object = 0

    def __post_init__(self):
        if self.n_individuals < 2 or self.n_individuals % 2:
            raise ValueError("n_individuals must be even (half control, half treatment)")
        if self.t_per_individual < 1:
            raise ValueError("t_per_individual must be >= 1")
        if self.params.p != 1 or self.params.r != 1:
            raise ValueError("the treatment/control design has one covariate per part")


def treatment_design(N: int) -> np.ndarray:
    return (np.arange(N) >= N // 2).astype(float)


def generate(config: SimConfig) -> Dataset:
    """Draw one dataset.

    Random numbers are consumed in a fixed order: all ``a_i``, all ``b_i``,
    the presence uniforms and then the Beta variates (one per cell, used
    only where the cell is present), so a seed fixes the dataset.
    """
    th = config.params
    N, T = config.n_individuals, config.t_per_individual
    rng = np.random.default_rng(config.seed)
    x_ind = treatment_design(N)
    a_i = th.a + th.sigma1 * rng.standard_normal(N)
    b_i = th.b + th.sigma2 * rng.standard_normal(N)
    index = np.repeat(np.arange(N), T)
    x = x_ind[index]
    p = sigmoid(a_i[index] + x * th.alpha[0])
    u = sigmoid(b_i[index] + x * th.beta[0])
    present = rng.random(N * T) < p
    # clip u away from {0, 1} so extreme linear predictors stay drawable
    u = np.clip(u, 1e-12, 1 - 1e-12)
    draws = rng.beta(u * th.phi, (1.0 - u) * th.phi)
    # Beta draws can round to exactly 1 or 0; keep y inside (0, 1)
    draws = np.clip(draws, np.finfo(float).tiny, np.nextafter(1.0, 0.0))
    y = np.where(present, draws, 0.0)
    time = np.tile(np.arange(1, T + 1, dtype=float), N)
    return Dataset(tuple(range(N)), index, time, y, x[:, None], x[:, None],
                   x_names=("treat",), z_names=("treat",))


def mcar_dropout(data: Dataset, fraction: float, seed=0, max_redraws: int = 1000) -> Dataset:
    """Remove ``floor(fraction * n_obs)`` observations uniformly at random.

    A draw that would leave some individual without observations is
    discarded and redrawn.
    """
    if not 0 <= fraction < 1:
        raise ValueError("fraction must lie in [0, 1)")
    n_drop = int(np.floor(fraction * data.n_obs))
    if n_drop == 0:
        return data
    if data.n_obs - n_drop < data.N:
        raise ZibrError("too many observations to drop while keeping every individual")
    rng = np.random.default_rng(seed)
    for _ in range(max_redraws):
        drop = rng.choice(data.n_obs, size=n_drop, replace=False)
        keep = np.ones(data.n_obs, dtype=bool)
        keep[drop] = False
        if np.all(np.bincount(data.index[keep], minlength=data.N) > 0):
            return Dataset(data.ids, data.index[keep], data.time[keep], data.y[keep],
                           data.x[keep], data.z[keep], data.x_names, data.z_names)
    raise ZibrError(f"no admissible dropout pattern in {max_redraws} draws")


def interpolate(data: Dataset, original_t: int, times=None) -> Dataset:
    """Fill the gaps of a thinned balanced design back to ``original_t`` times.

    Interior gaps are filled by linear interpolation in time between the
    flanking observations, trailing gaps with the last observed value and
    leading gaps with the first observed value.  Covariates of filled rows
    are copied from the individual's nearest observed row (they are
    constant within individuals in the simulation designs).
    """
    grid = np.arange(1, original_t + 1, dtype=float) if times is None \
        else np.asarray(times, dtype=float)
    if grid.size != original_t:
        raise ValueError("times must have original_t entries")
    index, time, y, xs, zs = [], [], [], [], []
    for i in range(data.N):
        lo, hi = data.offsets[i], data.offsets[i + 1]
        if hi == lo:
            raise ZibrError(f"individual {data.ids[i]!r} has no observations to interpolate")
        t_obs, y_obs = data.time[lo:hi], data.y[lo:hi]
        if not np.isin(t_obs, grid).all():
            raise ZibrError(f"individual {data.ids[i]!r} has times off the design grid")
        # np.interp holds the end values constant outside the observed range
        y_new = np.interp(grid, t_obs, y_obs)
        nearest = np.abs(grid[:, None] - t_obs[None, :]).argmin(axis=1) + lo
        index.append(np.full(grid.size, i))
        time.append(grid)
        y.append(y_new)
        xs.append(data.x[nearest])
        zs.append(data.z[nearest])
    return Dataset(data.ids, np.concatenate(index), np.concatenate(time), np.concatenate(y),
                   np.vstack(xs), np.vstack(zs), data.x_names, data.z_names)
