import math

import numpy as np
import pytest

from ssaipw.basis import BasisSpec, build_ps_basis
from ssaipw.errors import ConfigurationError
from ssaipw.simulation import (COV, SimConfig, aggregate, gen_covariates, gen_labels,
                               outcome_mean, ps_coefficients, run_raw, simulate_dataset,
                               true_beta)


def test_covariance_before_clamping():
    x = gen_covariates(1_000_000, np.random.default_rng(0))[:, 1:]
    inner = np.all(np.abs(x) < 3, axis=1)
    # clamping touches ~0.3% of coordinates; compare on the raw law via the inner sample
    assert inner.mean() > 0.99
    assert np.allclose(np.cov(x.T), COV, atol=0.01)
    assert np.allclose(np.diag(COV), 1.0)
    assert COV[0, 1] == 0.5 and COV[0, 2] == 0.25


def test_covariates_are_clamped():
    x = gen_covariates(50_000, np.random.default_rng(1))
    assert np.all(x[:, 0] == 1.0)
    assert x[:, 1:].min() >= -3.0 and x[:, 1:].max() <= 3.0


def test_label_probability_plug_in():
    f = np.zeros((200_000, 148))
    f[:, 0] = 1.0
    r = gen_labels(f, np.random.default_rng(2))
    assert r.mean() == pytest.approx(1 / (1 + math.exp(1.5)), abs=0.003)
    r0 = gen_labels(f, np.random.default_rng(3), gamma=np.zeros(148))
    assert r0.mean() == pytest.approx(0.5, abs=0.005)


def test_labeled_fraction_matches_mean_propensity():
    rng = np.random.default_rng(4)
    x = gen_covariates(1_000_000, rng)
    f = build_ps_basis(x, BasisSpec())
    pi = 1 / (1 + np.exp(-(f @ ps_coefficients(f.shape[1]))))
    r = gen_labels(f, rng)
    assert r.mean() == pytest.approx(pi.mean(), abs=0.002)
    # pinned value for the stated coefficients and basis
    assert pi.mean() == pytest.approx(0.034, abs=0.002)


def test_gamma_length_checked():
    with pytest.raises(ConfigurationError):
        gen_labels(np.ones((3, 5)), np.random.default_rng(0), gamma=np.zeros(4))
    with pytest.raises(ConfigurationError):
        ps_coefficients(3)


@pytest.mark.parametrize("case,row,expected", [
    (1, (0.0, 0.0, 0.0), -0.2),
    (3, (1.0, 0.0, 0.0), 1.0),
    (5, (1.0, 1.0, 1.0), 1.0),
])
def test_outcome_mean_hand_values(case, row, expected):
    x = np.array([[1.0, *row]])
    assert outcome_mean(case, x)[0] == pytest.approx(expected)


def test_true_beta_values():
    assert true_beta(1)[0] == pytest.approx(-0.2, abs=0.01)
    # Case 2 transforms are nonnegative: mean above the intercept
    assert true_beta(2)[0] > -0.2
    assert true_beta(3).shape == (2,) and true_beta(5).shape == (4,)
    assert np.array_equal(true_beta(3), true_beta(3))
    with pytest.raises(ConfigurationError):
        true_beta(1, oracle_n=1)


def test_replications_are_seeded_and_order_free():
    cfg = SimConfig(case=1, n_total=300, replications=3, seed=5, oracle_n=10_000)
    a = run_raw(cfg)
    b = run_raw(cfg)
    for x, y in zip(a, b):
        assert np.array_equal(x.beta["aipw-rcal"], y.beta["aipw-rcal"])
    data0 = simulate_dataset(1, 300, np.random.default_rng(0))
    assert data0.n_total == 300


def test_single_replication_has_undefined_spread():
    cfg = SimConfig(case=1, n_total=1000, replications=1, seed=1, oracle_n=10_000)
    rep = aggregate(cfg, run_raw(cfg))
    m = rep.metrics("aipw-rcal")
    assert math.isnan(m.sqrt_var)
    assert m.cp95 in (0.0, 1.0)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        SimConfig(replications=0)
    with pytest.raises(ConfigurationError):
        SimConfig(methods=())
    with pytest.raises(ValueError):
        SimConfig(case=7)
