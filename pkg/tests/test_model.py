import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from zibrsaem.model import (
    Dataset, DimensionError, DomainError, Observation, RandomEffects, ZibrError, ZibrParams,
    beta_log_density, complete_loglik, linear_predictor_p, linear_predictor_u, log_sigmoid,
    normal_prior_logpdf, observation_loglik_given_effects, param_names, sigmoid, split_loglik)

from oracles import beta_logpdf_mp, complete_loglik_bruteforce

# frozen output of oracles.beta_logpdf_mp(0.1, 0.7, 6.4)
BETA_LOGPDF_ORACLE = -5.0201061862782375


def params(p=1, r=1, **kw):
    base = dict(phi=6.4, a=-0.5, b=-0.5, alpha=[0.5] * p, beta=[0.5] * r,
                sigma1_sq=0.49, sigma2_sq=0.25)
    base.update(kw)
    return ZibrParams(**base)


def random_dataset(rng, N=4, T=3, p=2, r=1, zero_rate=0.4):
    rows = []
    for i in range(N):
        obs = []
        for t in range(T):
            y = 0.0 if rng.random() < zero_rate else rng.uniform(0.01, 0.99)
            obs.append(Observation(t, y, rng.normal(size=p), rng.normal(size=r)))
        rows.append((f"s{i}", obs))
    return Dataset.from_individuals(rows)


# ---------------------------------------------------------------- links

def test_linear_predictor_examples():
    th = params(alpha=[0.0])
    assert linear_predictor_p(th, 0.0, [1.0]) == 0.0
    assert sigmoid(linear_predictor_p(th, 0.0, [1.0])) == 0.5
    assert linear_predictor_p(params(alpha=[0.5]), -0.5, [0.0]) == -0.5
    th2 = params(p=2, alpha=[0.5, -0.3])
    assert linear_predictor_p(th2, 1.2, [2.0, 1.0]) == pytest.approx(1.9, abs=1e-15)
    assert linear_predictor_u(params(beta=[2.0]), 0.1, [0.5]) == pytest.approx(1.1)


def test_linear_predictor_dimension_error():
    with pytest.raises(DimensionError):
        linear_predictor_p(params(p=2), 0.0, [1.0])
    with pytest.raises(DimensionError):
        linear_predictor_u(params(r=1), 0.0, [1.0, 2.0])


def test_log_sigmoid_is_stable():
    x = np.array([-745.0, -700.0, -30.0, 0.0, 30.0, 700.0, 745.0])
    out = log_sigmoid(x)
    assert np.isfinite(out).all()
    assert out[0] == -745.0 and -1e-300 < out[-1] <= 0.0
    assert out[3] == pytest.approx(-math.log(2.0))
    mid = np.linspace(-20, 20, 101)
    np.testing.assert_allclose(log_sigmoid(mid), -np.log1p(np.exp(-mid)), rtol=1e-14)


@given(st.floats(-700, 700), st.floats(-5, 5))
def test_sigmoid_of_predictor_in_open_unit_interval(a, x):
    p = sigmoid(linear_predictor_p(params(alpha=[0.7]), a, [x]))
    assert 0.0 <= p <= 1.0
    if abs(a + 0.7 * x) < 30:
        assert 0.0 < p < 1.0


# ---------------------------------------------------------------- Beta density

def test_beta_density_closed_forms():
    assert beta_log_density(0.3, 0.5, 2.0) == pytest.approx(0.0, abs=1e-15)
    assert beta_log_density(0.5, 0.5, 4.0) == pytest.approx(math.log(1.5), abs=1e-14)


def test_beta_density_against_arbitrary_precision():
    assert beta_log_density(0.1, 0.7, 6.4) == pytest.approx(BETA_LOGPDF_ORACLE, rel=1e-13)
    rng = np.random.default_rng(3)
    for _ in range(10):
        y, u, phi = rng.uniform(0.01, 0.99), rng.uniform(0.05, 0.95), rng.uniform(0.5, 50)
        assert beta_log_density(y, u, phi) == pytest.approx(beta_logpdf_mp(y, u, phi), rel=1e-12)


@pytest.mark.parametrize("args", [(0.0, 0.5, 2.0), (1.0, 0.5, 2.0), (0.5, 0.0, 2.0),
                                  (0.5, 1.0, 2.0), (0.5, 0.5, 0.0), (0.5, 0.5, -1.0),
                                  (np.nan, 0.5, 1.0)])
def test_beta_density_boundary_raises(args):
    with pytest.raises(DomainError):
        beta_log_density(*args)


def test_beta_density_integrates_to_one():
    rng = np.random.default_rng(11)
    for _ in range(6):
        u, phi = rng.uniform(0.1, 0.9), rng.uniform(2.0, 40.0)
        val, _ = integrate.quad(lambda y: math.exp(beta_log_density(y, u, phi)), 0, 1,
                                epsabs=1e-12, epsrel=1e-12, limit=200)
        assert abs(val - 1.0) < 1e-8


@settings(max_examples=200)
@given(st.floats(1e-12, 1 - 1e-12), st.floats(1e-6, 1 - 1e-6), st.floats(1e-6, 1e6))
def test_beta_density_finite_on_documented_box(y, u, phi):
    assert math.isfinite(beta_log_density(y, u, phi))


# ---------------------------------------------------------------- types

def test_params_validation_and_vector_roundtrip():
    with pytest.raises(DomainError):
        params(phi=0.0)
    with pytest.raises(DomainError):
        params(sigma1_sq=-1.0)
    th = params(p=2, r=3, alpha=[1.0, 2.0], beta=[3.0, 4.0, 5.0])
    v = th.to_vector()
    assert v.tolist() == [-0.5, -0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 0.49, 0.25, 6.4]
    back = ZibrParams.from_vector(v, 2, 3)
    assert back.to_vector().tolist() == v.tolist()
    assert param_names(1, 1, ["x"], ["z"]) == ["a", "b", "alpha_x", "beta_z", "sigma1_sq",
                                                "sigma2_sq", "phi"]


def test_from_sd_squares():
    th = ZibrParams.from_sd(6.4, -0.5, -0.5, [0.5], [0.5], 0.7, 0.5)
    assert th.sigma1_sq == pytest.approx(0.49) and th.sigma2_sq == pytest.approx(0.25)


def test_dataset_sorting_and_layout():
    d = Dataset(("b", "a"), [1, 0, 1, 0], [2.0, 1.0, 1.0, 0.0], [0.1, 0.0, 0.2, 0.3],
                np.zeros((4, 1)), np.zeros((4, 1)))
    assert d.index.tolist() == [0, 0, 1, 1]
    assert d.time.tolist() == [0.0, 1.0, 1.0, 2.0]
    assert d.y.tolist() == [0.3, 0.0, 0.2, 0.1]
    assert d.counts.tolist() == [2, 2]
    assert d.pos_offsets.tolist() == [0, 1, 3]
    assert d.N == 2 and d.n_obs == 4 and d.p == 1 and d.r == 1


def test_dataset_rejects_bad_input():
    with pytest.raises(DomainError, match="rescale"):
        Dataset((0,), [0], [0.0], [1.0], [[0.0]], [[0.0]])
    with pytest.raises(DomainError):
        Dataset((0,), [0], [0.0], [-0.1], [[0.0]], [[0.0]])
    with pytest.raises(ZibrError, match="duplicate time"):
        Dataset((0,), [0, 0], [1.0, 1.0], [0.1, 0.2], [[0.0], [0.0]], [[0.0], [0.0]])
    with pytest.raises(DimensionError):
        Dataset.from_individuals([(0, [Observation(0, 0.1, [1.0], [1.0]),
                                       Observation(1, 0.1, [1.0, 2.0], [1.0])])])


def test_unbalanced_dataset_allowed():
    d = Dataset.from_individuals([(0, [Observation(0, 0.1, [0.0], [0.0])]),
                                  (1, [Observation(t, 0.0, [1.0], [1.0]) for t in range(4)])])
    assert d.counts.tolist() == [1, 4]


def test_random_effects_validation():
    with pytest.raises(DimensionError):
        RandomEffects(np.zeros((3, 3)))
    with pytest.raises(DomainError):
        RandomEffects(np.array([[np.inf, 0.0]]))


# ---------------------------------------------------------------- likelihoods

def test_complete_loglik_single_zero_observation():
    th = params(a=0.0, b=0.0, alpha=[0.0], beta=[0.0], sigma1_sq=1.0, sigma2_sq=1.0)
    d = Dataset.from_individuals([(0, [Observation(0, 0.0, [3.0], [1.0])])])
    val = complete_loglik(th, d, RandomEffects(np.zeros((1, 2))))
    assert val == pytest.approx(math.log(0.5) - math.log(2 * math.pi), abs=1e-14)


def test_complete_loglik_matches_bruteforce():
    rng = np.random.default_rng(5)
    for _ in range(5):
        d = random_dataset(rng, N=5, T=4, p=2, r=2)
        th = ZibrParams(phi=rng.uniform(1, 20), a=rng.normal(), b=rng.normal(),
                        alpha=rng.normal(size=2), beta=rng.normal(size=2),
                        sigma1_sq=rng.uniform(0.1, 2), sigma2_sq=rng.uniform(0.1, 2))
        eff = rng.normal(size=(d.N, 2))
        rows = [(int(d.index[j]), d.y[j], d.x[j], d.z[j]) for j in range(d.n_obs)]
        ref = complete_loglik_bruteforce(th.phi, th.a, th.b, th.alpha, th.beta, th.sigma1_sq,
                                         th.sigma2_sq, rows, eff)
        assert complete_loglik(th, d, eff) == pytest.approx(ref, rel=1e-12)


def test_complete_loglik_additive_over_individuals():
    rng = np.random.default_rng(8)
    d = random_dataset(rng, N=3)
    th = params(p=2)
    eff = rng.normal(size=(3, 2))
    parts = [complete_loglik(th, d.subset([i]), eff[i:i + 1]) for i in range(3)]
    assert complete_loglik(th, d, eff) == pytest.approx(sum(parts), rel=1e-13)


def test_observation_loglik_identity_and_trivial_cases():
    th = params(a=0.0, alpha=[0.0])
    assert observation_loglik_given_effects(th, [], 0.3, 0.1) == 0.0
    obs = [Observation(t, 0.0, [1.0], [1.0]) for t in range(3)]
    assert observation_loglik_given_effects(th, obs, 0.0, 0.7) == pytest.approx(3 * math.log(0.5))

    rng = np.random.default_rng(2)
    d = random_dataset(rng, N=1, T=5, p=1, r=1)
    eff = rng.normal(size=(1, 2))
    prior = normal_prior_logpdf(th, eff[:, 0], eff[:, 1]).sum()
    obs_ll = observation_loglik_given_effects(th, d, eff[0, 0], eff[0, 1])
    assert obs_ll == pytest.approx(complete_loglik(th, d, eff) - prior, rel=1e-13)


def test_zero_variance_prior():
    th = params(sigma1_sq=0.0)
    d = Dataset.from_individuals([(0, [Observation(0, 0.2, [0.0], [0.0])])])
    with pytest.raises(DomainError):
        complete_loglik(th, d, np.array([[0.3, 0.0]]))
    assert math.isfinite(complete_loglik(th, d, np.array([[th.a, 0.0]])))


def test_split_loglik_shapes_and_effect_sets():
    rng = np.random.default_rng(4)
    d = random_dataset(rng, N=6, T=3, p=2, r=1)
    th = params(p=2)
    a_eff, b_eff = rng.normal(size=(3, 6)), rng.normal(size=(3, 6))
    out = split_loglik(th, d, a_eff, b_eff)
    assert out["logit"].shape == (3, 6) and out["beta"].shape == (3, 6)
    single = split_loglik(th, d, a_eff[1], b_eff[1])
    np.testing.assert_allclose(single["logit"][0], out["logit"][1], rtol=1e-14)
