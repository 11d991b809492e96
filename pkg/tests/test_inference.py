import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from zibrsaem.inference import bh_adjust, lrt, wald
from zibrsaem.model import ZibrError

from oracles import bh_bruteforce

# frozen output of oracles.bh_bruteforce([0.01, 0.02, 0.03])
BH_THREE = [0.03, 0.03, 0.03]


class Fitted:
    def __init__(self, loglik):
        self.loglik = loglik


def test_lrt_examples():
    t = lrt(-100.0, -103.0, df=2)
    assert t.statistic == pytest.approx(6.0)
    assert t.p_value == pytest.approx(math.exp(-3.0), rel=1e-12)
    assert t.warning is None and t.rejects(0.05)
    same = lrt(Fitted(-50.0), Fitted(-50.0), df=2)
    assert same.statistic == 0.0 and same.p_value == 1.0


def test_lrt_clamps_negative_statistic():
    small = lrt(-100.1, -100.0, df=1)
    assert small.statistic == 0.0 and small.p_value == 1.0
    assert small.raw_statistic == pytest.approx(-0.2) and small.warning is None
    big = lrt(-101.0, -100.0, df=1)
    assert big.statistic == 0.0 and big.warning is not None


def test_lrt_errors():
    with pytest.raises(ValueError):
        lrt(0.0, 0.0, df=0)
    with pytest.raises(ZibrError):
        lrt(Fitted(None), -1.0, df=1)
    with pytest.raises(ZibrError):
        lrt(float("nan"), -1.0, df=1)


def test_wald_examples():
    t = wald(0.0, 0.3)
    assert t.statistic == 0.0 and t.p_value == 1.0
    t = wald(1.96, 1.0)
    assert t.p_value == pytest.approx(0.0499958, abs=1e-6)
    assert wald(-0.5, 0.2).statistic == pytest.approx(6.25)
    with pytest.raises(ValueError):
        wald(1.0, 0.0)


def test_wald_matches_normal_two_sided():
    for z in (0.1, 1.0, 2.5):
        assert wald(z, 1.0).p_value == pytest.approx(2 * stats.norm.sf(z), rel=1e-10)


def test_bh_examples():
    np.testing.assert_allclose(bh_adjust([0.01, 0.02, 0.03]), BH_THREE, rtol=1e-15)
    assert bh_bruteforce([0.01, 0.02, 0.03]) == pytest.approx(BH_THREE)
    np.testing.assert_allclose(bh_adjust([0.04, 0.01, 0.9]), [0.06, 0.03, 0.9])
    assert bh_adjust([]).size == 0
    with pytest.raises(ValueError):
        bh_adjust([0.2, 1.2])


@settings(max_examples=200)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=30))
def test_bh_matches_definition(p):
    np.testing.assert_allclose(bh_adjust(p), bh_bruteforce(p), rtol=1e-12, atol=1e-15)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30))
def test_bh_properties(p):
    adj = bh_adjust(p)
    assert np.all(adj >= np.asarray(p) - 1e-15) and np.all(adj <= 1.0)
    order = np.argsort(p, kind="stable")
    assert np.all(np.diff(adj[order]) >= -1e-15)


def test_bh_permutation_equivariance():
    rng = np.random.default_rng(0)
    p = rng.random(50)
    perm = rng.permutation(50)
    np.testing.assert_allclose(bh_adjust(p)[perm], bh_adjust(p[perm]), rtol=1e-15)


def test_lrt_null_calibration_by_simulation():
    # chi-square(2) statistics reject 5% of the time at level 0.05
    rng = np.random.default_rng(1)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        rej = np.mean([lrt(0.5 * rng.chisquare(2), 0.0, df=2).rejects() for _ in range(4000)])
    assert abs(rej - 0.05) < 0.012


def test_lrt_quantile_and_sign_symmetry():
    assert lrt(5.991 / 2, 0.0, df=2).p_value == pytest.approx(0.05, abs=1e-4)
    a, b = lrt(-10.0, -12.5, df=1), lrt(-12.5, -10.0, df=1)
    assert a.raw_statistic == -b.raw_statistic


def test_wald_scale_invariance():
    for c in (1e-3, 0.5, 7.0, 1e4):
        assert wald(0.7 * c, 0.4 * c).p_value == pytest.approx(wald(0.7, 0.4).p_value, rel=1e-12)


def test_bh_single_value_and_repeat_application():
    assert bh_adjust([0.37]).tolist() == [0.37]
    # adjusting twice is not a no-op in general; both passes follow the definition
    once = bh_adjust([0.01, 0.5])
    np.testing.assert_allclose(once, [0.02, 0.5])
    np.testing.assert_allclose(bh_adjust(once), bh_bruteforce(once))
    np.testing.assert_allclose(bh_adjust(once), [0.04, 0.5])
