"""Zero-inflated Beta regression (ZIBR) mixed model: types and densities.

An observation ``y`` of individual ``i`` at time ``t`` is zero with
probability ``1 - p_it`` and otherwise ``Beta(u_it * phi, (1 - u_it) * phi)``,
with

    logit(p_it) = a_i + x_it' alpha,     logit(u_it) = b_i + z_it' beta,

and independent random intercepts ``a_i ~ N(a, sigma1_sq)``,
``b_i ~ N(b, sigma2_sq)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln

LOG2PI = np.log(2.0 * np.pi)


class ZibrError(ValueError):
    """Base class for input and domain errors raised by the package."""


class DomainError(ZibrError):
    """An argument lies outside the domain of a density or link."""


class DimensionError(ZibrError):
    """Covariate or parameter dimensions do not agree."""


# --------------------------------------------------------------------------
# numerically stable links
# --------------------------------------------------------------------------

def log_sigmoid(x):
    """log(1 / (1 + exp(-x))) without overflow."""
    x = np.asarray(x, dtype=float)
    return np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    return np.exp(log_sigmoid(x))


# --------------------------------------------------------------------------
# domain types
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ZibrParams:
    """Full parameter vector ``(phi, a, b, alpha, beta, sigma1_sq, sigma2_sq)``."""

    phi: float
    a: float
    b: float
    alpha: np.ndarray = field(default_factory=lambda: np.zeros(0))
    beta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sigma1_sq: float = 1.0
    sigma2_sq: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "alpha", np.atleast_1d(np.asarray(self.alpha, dtype=float)).copy())
        object.__setattr__(self, "beta", np.atleast_1d(np.asarray(self.beta, dtype=float)).copy())
        for name in ("phi", "a", "b", "sigma1_sq", "sigma2_sq"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.alpha.ndim != 1 or self.beta.ndim != 1:
            raise DimensionError("alpha and beta must be vectors")
        if not self.phi > 0:
            raise DomainError(f"phi must be positive, got {self.phi}")
        if self.sigma1_sq < 0 or self.sigma2_sq < 0:
            raise DomainError("random-effect variances must be nonnegative")

    @classmethod
    def from_sd(cls, phi, a, b, alpha, beta, sigma1, sigma2):
        """Build from standard deviations, the way simulation settings are quoted."""
        return cls(phi, a, b, alpha, beta, sigma1 ** 2, sigma2 ** 2)

    @property
    def p(self):
        return self.alpha.size

    @property
    def r(self):
        return self.beta.size

    @property
    def mu(self):
        return np.array([self.a, self.b])

    @property
    def G(self):
        return np.diag([self.sigma1_sq, self.sigma2_sq])

    @property
    def sigma1(self):
        return np.sqrt(self.sigma1_sq)

    @property
    def sigma2(self):
        return np.sqrt(self.sigma2_sq)

    def replace(self, **changes) -> "ZibrParams":
        return replace(self, **changes)

    def check_dims(self, data: "Dataset"):
        if self.p != data.p or self.r != data.r:
            raise DimensionError(
                f"parameters have (p, r) = ({self.p}, {self.r}) but data has "
                f"({data.p}, {data.r})")

    # The ordering below is shared by the trace, the information matrix and
    # every output table.
    def to_vector(self) -> np.ndarray:
        return np.concatenate([[self.a, self.b], self.alpha, self.beta,
                               [self.sigma1_sq, self.sigma2_sq, self.phi]])

    @classmethod
    def from_vector(cls, v, p: int, r: int) -> "ZibrParams":
        v = np.asarray(v, dtype=float)
        if v.size != p + r + 5:
            raise DimensionError(f"expected {p + r + 5} entries, got {v.size}")
        return cls(phi=v[-1], a=v[0], b=v[1], alpha=v[2:2 + p],
                   beta=v[2 + p:2 + p + r], sigma1_sq=v[-3], sigma2_sq=v[-2])

    def as_dict(self, x_names=None, z_names=None) -> dict:
        return dict(zip(param_names(self.p, self.r, x_names, z_names),
                        self.to_vector().tolist()))


def param_names(p: int, r: int, x_names=None, z_names=None) -> list[str]:
    """Names in manifest order: a, b, alpha..., beta..., sigma1_sq, sigma2_sq, phi."""
    x_names = list(x_names) if x_names else [str(j) for j in range(p)]
    z_names = list(z_names) if z_names else [str(j) for j in range(r)]
    if len(x_names) != p or len(z_names) != r:
        raise DimensionError("covariate names do not match parameter dimensions")
    return (["a", "b"] + [f"alpha_{n}" for n in x_names]
            + [f"beta_{n}" for n in z_names] + ["sigma1_sq", "sigma2_sq", "phi"])


@dataclass(frozen=True)
class Observation:
    time_index: float
    y: float
    x: np.ndarray
    z: np.ndarray


def _validate_y(y):
    y = np.asarray(y, dtype=float)
    bad = ~np.isfinite(y) | (y < 0) | (y >= 1)
    if bad.any():
        j = int(np.flatnonzero(bad)[0])
        hint = " (rescale with y*(n-1)/n to pull ones inside (0, 1))" if y[j] == 1 else ""
        raise DomainError(f"observation {j} has y = {y[j]!r}; need 0 <= y < 1{hint}")
    return y


@dataclass(frozen=True, eq=False)
class Dataset:
    """Longitudinal records in flat (long) layout.

    Observations are stored sorted by individual and then by time.
    ``index[j]`` is the position in ``ids`` of the individual owning
    observation ``j``.  Individuals with no observations are allowed in memory
    (their conditional distribution is the prior); ingestion from files never
    produces them.
    """

    ids: tuple
    index: np.ndarray
    time: np.ndarray
    y: np.ndarray
    x: np.ndarray
    z: np.ndarray
    x_names: tuple = ()
    z_names: tuple = ()

    def __post_init__(self):
        ids = tuple(self.ids)
        index = np.asarray(self.index, dtype=np.int64).reshape(-1)
        n_obs = index.size
        time = np.asarray(self.time, dtype=float).reshape(-1)
        y = _validate_y(np.asarray(self.y, dtype=float).reshape(-1))
        x, z = (np.asarray(v, dtype=float) for v in (self.x, self.z))
        # an empty (0, p) array keeps its column count
        x = x.reshape(n_obs, -1) if n_obs else x.reshape(0, x.shape[-1] if x.ndim == 2 else 0)
        z = z.reshape(n_obs, -1) if n_obs else z.reshape(0, z.shape[-1] if z.ndim == 2 else 0)
        if len(ids) < 1:
            raise ZibrError("a dataset needs at least one individual")
        if len(set(ids)) != len(ids):
            raise ZibrError("individual ids must be unique")
        if not (time.size == y.size == n_obs == x.shape[0] == z.shape[0]):
            raise DimensionError("per-observation arrays have different lengths")
        if n_obs and (index.min() < 0 or index.max() >= len(ids)):
            raise ZibrError("observation index out of range")
        if n_obs > 1:
            order = np.lexsort((time, index))
            if not np.array_equal(order, np.arange(n_obs)):
                index, time, y, x, z = index[order], time[order], y[order], x[order], z[order]
            dup = (np.diff(index) == 0) & (np.diff(time) == 0)
            if dup.any():
                j = int(np.flatnonzero(dup)[0])
                raise ZibrError(f"duplicate time {time[j]} for individual {ids[index[j]]!r}")
        if not (np.isfinite(x).all() and np.isfinite(z).all()):
            raise DomainError("covariates must be finite")
        x_names = tuple(self.x_names) or tuple(str(j) for j in range(x.shape[1]))
        z_names = tuple(self.z_names) or tuple(str(j) for j in range(z.shape[1]))
        if len(x_names) != x.shape[1] or len(z_names) != z.shape[1]:
            raise DimensionError("covariate names do not match covariate columns")
        for arr in (index, time, y, x, z):
            arr.setflags(write=False)
        for name, val in dict(ids=ids, index=index, time=time, y=y, x=x, z=z,
                              x_names=x_names, z_names=z_names).items():
            object.__setattr__(self, name, val)

    # ---- constructors --------------------------------------------------
    @classmethod
    def from_individuals(cls, individuals: Iterable, p: int | None = None,
                         r: int | None = None, x_names=(), z_names=()) -> "Dataset":
        """Build from ``[(individual_id, [Observation, ...]), ...]``."""
        ids, index, time, y, xs, zs = [], [], [], [], [], []
        for i, (ind_id, obs) in enumerate(individuals):
            ids.append(ind_id)
            for o in obs:
                index.append(i)
                time.append(o.time_index)
                y.append(o.y)
                xs.append(np.atleast_1d(np.asarray(o.x, dtype=float)))
                zs.append(np.atleast_1d(np.asarray(o.z, dtype=float)))
        if xs:
            if len({v.size for v in xs}) > 1 or len({v.size for v in zs}) > 1:
                raise DimensionError("all observations must share covariate dimensions")
            x, z = np.vstack(xs), np.vstack(zs)
        else:
            x = np.zeros((0, p or len(x_names)))
            z = np.zeros((0, r or len(z_names)))
        return cls(tuple(ids), index, time, y, x, z, tuple(x_names), tuple(z_names))

    # ---- shape --------------------------------------------------------
    @property
    def n_individuals(self) -> int:
        return len(self.ids)

    N = n_individuals

    @property
    def n_obs(self) -> int:
        return self.y.size

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def r(self) -> int:
        return self.z.shape[1]

    @cached_property
    def counts(self) -> np.ndarray:
        """Number of observations T_i per individual."""
        return np.bincount(self.index, minlength=self.N)

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.counts)])

    @property
    def individuals(self) -> list:
        out = []
        for i, ind_id in enumerate(self.ids):
            lo, hi = self.offsets[i], self.offsets[i + 1]
            out.append((ind_id, [Observation(self.time[j], self.y[j], self.x[j], self.z[j])
                                 for j in range(lo, hi)]))
        return out

    def subset(self, individuals: Sequence[int]) -> "Dataset":
        """Dataset restricted to the given individual positions (in that order)."""
        individuals = list(individuals)
        rows = [np.arange(self.offsets[i], self.offsets[i + 1]) for i in individuals]
        rows = np.concatenate(rows) if rows else np.zeros(0, dtype=int)
        new_index = np.repeat(np.arange(len(individuals)), self.counts[individuals])
        return Dataset(tuple(self.ids[i] for i in individuals), new_index, self.time[rows],
                       self.y[rows], self.x[rows], self.z[rows], self.x_names, self.z_names)

    def select_covariates(self, x_cols=None, z_cols=None) -> "Dataset":
        """Keep a subset of covariate columns (given by name or position)."""
        def pick(names, cols):
            if cols is None:
                return list(range(len(names)))
            return [names.index(c) if isinstance(c, str) else int(c) for c in cols]
        xi, zi = pick(list(self.x_names), x_cols), pick(list(self.z_names), z_cols)
        return Dataset(self.ids, self.index, self.time, self.y, self.x[:, xi], self.z[:, zi],
                       tuple(self.x_names[j] for j in xi), tuple(self.z_names[j] for j in zi))

    # ---- cached quantities used by the likelihood kernels --------------
    @cached_property
    def present(self) -> np.ndarray:
        return self.y > 0

    @cached_property
    def sign(self) -> np.ndarray:
        """+1 where y > 0 and -1 where y == 0 (log P(outcome) = log_sigmoid(sign*eta))."""
        return np.where(self.present, 1.0, -1.0)

    @cached_property
    def pos_index(self) -> np.ndarray:
        return self.index[self.present]

    @cached_property
    def pos_offsets(self) -> np.ndarray:
        """Row offsets of each individual's positive observations."""
        return np.concatenate([[0], np.cumsum(np.bincount(self.pos_index, minlength=self.N))])

    @cached_property
    def pos_z(self) -> np.ndarray:
        return self.z[self.present]

    @cached_property
    def pos_logy(self) -> np.ndarray:
        return np.log(self.y[self.present])

    @cached_property
    def pos_log1my(self) -> np.ndarray:
        return np.log1p(-self.y[self.present])

    @cached_property
    def agg_all(self) -> sp.csr_matrix:
        """(N, n_obs) 0/1 matrix summing observation terms per individual."""
        return sp.csr_matrix((np.ones(self.n_obs), (self.index, np.arange(self.n_obs))),
                             shape=(self.N, self.n_obs))

    @cached_property
    def agg_pos(self) -> sp.csr_matrix:
        n = self.pos_index.size
        return sp.csr_matrix((np.ones(n), (self.pos_index, np.arange(n))), shape=(self.N, n))


# --------------------------------------------------------------------------
# elementary computations
# --------------------------------------------------------------------------

def linear_predictor_p(params: ZibrParams, a_i: float, x) -> float:
    """logit(p_it) = a_i + x' alpha."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != params.alpha.shape:
        raise DimensionError(f"x has length {x.size}, alpha has length {params.p}")
    return float(a_i + x @ params.alpha)


def linear_predictor_u(params: ZibrParams, b_i: float, z) -> float:
    """logit(u_it) = b_i + z' beta."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.shape != params.beta.shape:
        raise DimensionError(f"z has length {z.size}, beta has length {params.r}")
    return float(b_i + z @ params.beta)


def beta_log_density(y, u, phi):
    """Log density of Beta(u*phi, (1-u)*phi) at ``y``, mean/precision form.

    Raises
    ------
    DomainError
        If any of ``y``, ``u`` is outside (0, 1) or ``phi`` is not positive.
    """
    y, u, phi = (np.asarray(v, dtype=float) for v in (y, u, phi))
    if not ((y > 0) & (y < 1)).all():
        raise DomainError("beta_log_density needs 0 < y < 1")
    if not ((u > 0) & (u < 1)).all():
        raise DomainError("beta_log_density needs 0 < u < 1")
    if not (phi > 0).all() or not np.isfinite(phi).all():
        raise DomainError("beta_log_density needs phi > 0")
    a, b = u * phi, (1.0 - u) * phi
    out = (gammaln(phi) - gammaln(a) - gammaln(b)
           + (a - 1.0) * np.log(y) + (b - 1.0) * np.log1p(-y))
    return out if out.ndim else float(out)


def _beta_terms(eta, phi, logy, log1my):
    """Beta log density on positive observations with logit(u) = eta."""
    log_u, log_1mu = log_sigmoid(eta), log_sigmoid(-eta)
    a, b = np.exp(log_u) * phi, np.exp(log_1mu) * phi
    with np.errstate(divide="ignore", invalid="ignore"):
        return gammaln(phi) - gammaln(a) - gammaln(b) + (a - 1.0) * logy + (b - 1.0) * log1my


def split_loglik(params: ZibrParams, data: Dataset, a_eff, b_eff, parts=("logit", "beta")):
    """Per-individual observation log-likelihood, split into its two parts.

    ``a_eff`` and ``b_eff`` have shape ``(S, N)`` (any number ``S`` of effect
    sets, e.g. Markov chains or importance draws).  Returns a dict with the
    requested parts, each of shape ``(S, N)``: ``"logit"`` holds the
    presence/absence terms and ``"beta"`` the Beta abundance terms of the
    positive observations.
    """
    out = {}
    if "logit" in parts:
        a_eff = np.atleast_2d(a_eff)
        eta = a_eff[:, data.index] + data.x @ params.alpha
        terms = log_sigmoid(data.sign * eta)
        out["logit"] = (data.agg_all @ terms.T).T
    if "beta" in parts:
        b_eff = np.atleast_2d(b_eff)
        eta = b_eff[:, data.pos_index] + data.pos_z @ params.beta
        terms = _beta_terms(eta, params.phi, data.pos_logy, data.pos_log1my)
        out["beta"] = (data.agg_pos @ terms.T).T
    return out


def normal_prior_logpdf(params: ZibrParams, a_eff, b_eff):
    """log N(a_i; a, sigma1_sq) + log N(b_i; b, sigma2_sq), elementwise."""
    a_eff, b_eff = np.asarray(a_eff, dtype=float), np.asarray(b_eff, dtype=float)
    return (_normal_logpdf(a_eff, params.a, params.sigma1_sq)
            + _normal_logpdf(b_eff, params.b, params.sigma2_sq))


def _normal_logpdf(v, mean, var):
    d = v - mean
    if var > 0:
        return -0.5 * (LOG2PI + np.log(var) + d * d / var)
    if np.any(d != 0):
        raise DomainError("zero variance with effects away from the mean")
    # degenerate point mass; its log density is conventionally taken as 0
    return np.zeros_like(d)


def _as_effect_arrays(effects, N):
    eff = np.asarray(effects.values if isinstance(effects, RandomEffects) else effects,
                     dtype=float)
    if eff.shape != (N, 2):
        raise DimensionError(f"effects must have shape ({N}, 2), got {eff.shape}")
    return eff[:, 0], eff[:, 1]


def observation_loglik_given_effects(params: ZibrParams, observations, a_i: float,
                                     b_i: float) -> float:
    """Sum over one individual's observations of the mixture log density.

    ``observations`` is a list of :class:`Observation` or a one-individual
    :class:`Dataset`.  No random-effect prior term is included.
    """
    if isinstance(observations, Dataset):
        data = observations
        if data.N != 1:
            raise DimensionError("expected a single-individual dataset")
    else:
        observations = list(observations)
        if not observations:
            return 0.0
        data = Dataset.from_individuals([(0, observations)])
    if data.n_obs == 0:
        return 0.0
    params.check_dims(data)
    ll = split_loglik(params, data, np.array([[a_i]]), np.array([[b_i]]))
    return float(ll["logit"][0, 0] + ll["beta"][0, 0])


def complete_loglik(params: ZibrParams, data: Dataset, effects) -> float:
    """Complete-data log-likelihood log p(y, effects; theta)."""
    params.check_dims(data)
    a_eff, b_eff = _as_effect_arrays(effects, data.N)
    prior = normal_prior_logpdf(params, a_eff, b_eff).sum()
    ll = split_loglik(params, data, a_eff[None], b_eff[None])
    return float(prior + ll["logit"].sum() + ll["beta"].sum())


@dataclass
class RandomEffects:
    """Per-individual random intercepts; row ``i`` is ``(a_i, b_i)``."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != 2:
            raise DimensionError("random effects must be an (N, 2) array")
        if not np.isfinite(self.values).all():
            raise DomainError("random effects must be finite")

    @property
    def a(self):
        return self.values[:, 0]

    @property
    def b(self):
        return self.values[:, 1]
