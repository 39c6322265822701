"""
Tests for the pinball loss, the sampled quantile objective and threshold learning
"""

import numpy as np
import pytest

from topkrec.quantile import ThresholdTable, NegativeSample, rho_K, rho_K_derivative, exact_quantile, \
    sampled_quantile, full_qr_loss, stochastic_qr_loss, qr_gradient, update_threshold, estimation_error_report
from topkrec.model import FactorModel, init
from topkrec.dataset import planted_dataset
from topkrec.nifty import mean_stderr
from topkrec.errors import ArgumentError, NumericalError

def test_rho_K_values():
    """ Pinball values at zero and on both sides """
    assert rho_K(0.0, 2, 10) == 0.0
    assert rho_K(1.0, 2, 10) == pytest.approx(0.8)
    assert rho_K(-1.0, 2, 10) == pytest.approx(0.2)
    with pytest.raises(ArgumentError):
        rho_K(0.5, 10, 10)
    with pytest.raises(ArgumentError):
        rho_K(0.5, 0, 10)

def test_rho_K_convexity():
    """ The midpoint of any triple lies below the chord """
    rng = np.random.default_rng(0)
    for trial in range(200):
        a, b, c = np.sort(rng.uniform(-2, 2, 3))
        t = (b - a) / (c - a)
        assert rho_K(b, 3, 17) <= (1 - t) * rho_K(a, 3, 17) + t * rho_K(c, 3, 17) + 1e-12

def test_rho_K_derivative_kink():
    """ The subgradient is zero at the kink """
    assert rho_K_derivative(0.0, 2, 10) == 0.0
    assert rho_K_derivative(0.3, 2, 10) == pytest.approx(0.8)
    assert rho_K_derivative(-0.3, 2, 10) == pytest.approx(-0.2)

def test_exact_quantile():
    """ K-th largest value """
    assert exact_quantile([0.9, 0.5, 0.1, -0.3], 2) == 0.5
    assert exact_quantile([0.25] * 7, 4) == 0.25
    rng = np.random.default_rng(3)
    s = rng.normal(size=1000)
    assert exact_quantile(s, 20) == np.sort(s)[::-1][19]
    with pytest.raises(ArgumentError):
        exact_quantile([1.0, 2.0], 3)

def test_sampled_quantile():
    """ Sampling every score gives the exact quantile """
    rng = np.random.default_rng(0)
    s = rng.uniform(-1, 1, 200)
    assert sampled_quantile(s, 10, 200, rng) == exact_quantile(s, 10)
    est = sampled_quantile(s, 10, 50, rng)
    assert est in s
    with pytest.raises(ArgumentError):
        sampled_quantile(s, 10, 0, rng)

def test_stochastic_qr_degenerate():
    """ Flat scores give zero and a full sample gives the full objective """
    flat = NegativeSample(0, np.arange(1, 10), 1.0, np.full(9, 0.3))
    assert stochastic_qr_loss(0.3, 1, flat, 0.3, 2, 10) == 0.0
    rng = np.random.default_rng(1)
    s = rng.uniform(-1, 1, 10)
    full = NegativeSample(0, np.arange(1, 10), 1.0, s[1:])
    assert stochastic_qr_loss(s[0], 1, full, 0.1, 2, 10) == pytest.approx(full_qr_loss(s, 0.1, 2), rel=1e-12)

def test_stochastic_qr_unbiased():
    """ The Monte-Carlo mean stays within three standard errors of the full objective """
    rng = np.random.default_rng(2024)
    I, P, G, K = 500, 20, 32, 20
    scores = rng.uniform(-1, 1, I)
    perm = rng.permutation(I)
    positives, negatives = perm[:P], perm[P:]
    beta = exact_quantile(scores, K) - 0.05
    full = full_qr_loss(scores, beta, K)
    w = len(negatives) / G
    draws = np.zeros(10000)
    for d in range(len(draws)):
        pos = positives[rng.integers(P)]
        picks = rng.choice(negatives, size=G, replace=False)
        draws[d] = stochastic_qr_loss(scores[pos], P, NegativeSample(0, picks, w, scores[picks]), beta, K, I)
    mean, se = mean_stderr(draws)
    assert abs(mean - full) <= 3 * se or abs(mean - full) <= 0.01 * full

def test_qr_gradient_sign():
    """ A threshold above every score moves down, one below every score moves up """
    s = np.array([0.1, 0.2, 0.3, 0.4])
    neg = NegativeSample(0, [1, 2, 3], 1.0, s[1:])
    assert qr_gradient(s[0], 1, neg, 0.9, 1, 5) > 0
    assert qr_gradient(s[0], 1, neg, -0.9, 1, 5) < 0
    T = ThresholdTable(1, 5, 1, learning_rate=0.1, beta=[0.9])
    assert update_threshold(T, 0, s[0], 1, neg) < 0.9
    T = ThresholdTable(1, 5, 1, learning_rate=0.1, beta=[-0.9])
    assert update_threshold(T, 0, s[0], 1, neg) > -0.9

def test_full_gradient_descent_converges():
    """ Full-gradient steps on a fixed score vector reach the K-th largest score """
    rng = np.random.default_rng(5)
    s = rng.uniform(-0.2, 0.2, 500)
    K = 20
    everything = NegativeSample(0, np.arange(1, 500), 1.0, s[1:])
    T = ThresholdTable(1, 500, K, learning_rate=1e-3)
    for step in range(5000):
        update_threshold(T, 0, s[0], 1, everything)
    assert abs(T.beta[0] - exact_quantile(s, K)) <= 0.02

def test_full_objective_minimizer():
    """ The grid minimizer of the full objective is within one step of the exact quantile """
    rng = np.random.default_rng(8)
    s = rng.uniform(-1, 1, 300)
    grid = np.linspace(-1, 1, 2001)
    values = [full_qr_loss(s, b, 15) for b in grid]
    assert abs(grid[int(np.argmin(values))] - exact_quantile(s, 15)) <= grid[1] - grid[0] + 1e-12

def test_negative_sample_checks():
    """ Empty samples and non-positive weights are rejected """
    with pytest.raises(ArgumentError):
        NegativeSample(0, [], 1.0)
    with pytest.raises(ArgumentError):
        NegativeSample(0, [1], 0.0)
    with pytest.raises(ArgumentError):
        stochastic_qr_loss(0.0, 1, NegativeSample(0, [1, 2], 1.0), 0.0, 1, 5)

def test_threshold_table():
    """ Zero initialization, finiteness and array round trip """
    T = ThresholdTable(3, 50, 5)
    assert np.array_equal(T.beta, np.zeros(3))
    assert T.learning_rate == 1e-3
    T2 = ThresholdTable.from_arrays(T.as_arrays())
    assert np.array_equal(T2.beta, T.beta) and T2.K == 5 and T2.total_items == 50
    with pytest.raises(NumericalError):
        ThresholdTable(2, 50, 5, beta=[0.0, np.inf])
    with pytest.raises(ArgumentError):
        ThresholdTable(2, 50, 50)

def test_estimation_error_report():
    """ Oracle thresholds give zero error and a constant offset gives that offset """
    D = planted_dataset(num_users=5, num_items=30, num_positives=3)
    M = init(5, 30, d=4, seed=1)
    S = M.score_users(np.arange(5))
    oracle = np.array([exact_quantile(S[u], 4) for u in range(5)])
    T = ThresholdTable(5, 30, 4, beta=oracle)
    report = estimation_error_report(M, T, D)
    assert report['mean_abs_error'] == pytest.approx(0.0, abs=1e-12)
    assert report['num_users'] == 5 and report['K'] == 4
    T.beta[:] = oracle + 0.1
    report = estimation_error_report(M, T, D, num_samples=30, chunk=2)
    assert report['mean_abs_error'] == pytest.approx(0.1)
    assert report['max_abs_error'] == pytest.approx(0.1)
    # Sampling every item recovers the exact quantile
    assert report['monte_carlo_mean_abs_error'] == pytest.approx(0.0, abs=1e-12)
