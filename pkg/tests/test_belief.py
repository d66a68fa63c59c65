import numpy as np
import pytest

from catbsi.belief import (BeliefState, CategoricalSample, Measurement, SingularityError,
                           bayes_update, categorical_draw, encode_marginal, log_pmf, measure,
                           posterior_pmf, quantize, sample_prior, score)
from catbsi.rng import CounterRNG, Stream
from catbsi.schedule import PrecisionSchedule, beta


def brute_force_posterior(prior, y, a):
    """prior(k) * N(y | e_k, 1/a), normalised over k."""
    c = prior.size
    lik = np.array([np.exp(-0.5 * a * np.sum((y - np.eye(c)[k]) ** 2)) for k in range(c)])
    post = prior * lik
    return post / post.sum()


def test_bayes_update_matches_brute_force():
    gen = np.random.default_rng(0)
    for _ in range(100):
        c = gen.integers(2, 6)
        z = gen.normal(0, 2, (1, c))
        a = gen.uniform(0.05, 3)
        y = gen.normal(0, 1, (1, c))
        post = bayes_update(BeliefState(z), Measurement(y, a))
        oracle = brute_force_posterior(posterior_pmf(z)[0], y[0], a)
        np.testing.assert_allclose(posterior_pmf(post)[0], oracle, rtol=1e-10)


def test_bayes_update_shape_and_precision_checks():
    with pytest.raises(ValueError):
        bayes_update(BeliefState(np.zeros((2, 3))), Measurement(np.zeros((3, 3)), 1.0))
    with pytest.raises(ValueError):
        Measurement(np.zeros((1, 2)), 0.0)


def test_sequential_updates_commute():
    gen = np.random.default_rng(1)
    z = BeliefState(gen.normal(size=(4, 3)))
    m1 = Measurement(gen.normal(size=(4, 3)), 0.7)
    m2 = Measurement(gen.normal(size=(4, 3)), 1.9)
    a = bayes_update(bayes_update(z, m1), m2).logits
    b = bayes_update(bayes_update(z, m2), m1).logits
    np.testing.assert_allclose(a, b, rtol=1e-14)


def test_posterior_pmf_stable_for_huge_logits():
    p = posterior_pmf(np.array([[1e4, 0.0, -1e4]]))
    np.testing.assert_array_equal(p, [[1.0, 0.0, 0.0]])


def test_log_pmf_matches_direct():
    z = np.array([[0.3, -1.0, 2.0], [0.0, 0.0, 0.0]])
    x = CategoricalSample.from_classes([2, 1], 3)
    p = posterior_pmf(z)
    assert log_pmf(z, x) == pytest.approx(np.log(p[0, 2]) + np.log(p[1, 1]), rel=1e-13)


def test_quantize_ties_lowest_index():
    q = quantize(np.array([[0.4, 0.4, 0.2], [0.1, 0.2, 0.7]]))
    np.testing.assert_array_equal(q.classes, [0, 2])


def test_categorical_sample_validation():
    with pytest.raises(ValueError):
        CategoricalSample(np.array([[0.5, 0.5]]))


def test_belief_rejects_nan_and_bad_time():
    with pytest.raises(ValueError):
        BeliefState(np.array([[np.nan, 0.0]]))
    with pytest.raises(ValueError):
        BeliefState(np.zeros((1, 2)), t=1.5)


def test_sample_prior_moments():
    s = PrecisionSchedule(3.0, 12.0, 2.5, np.array([1.0, -1.0]))
    z = sample_prior(s, 1, CounterRNG(0), lanes=100_000).logits
    se = np.sqrt(2.5 / z.shape[0])
    assert np.all(np.abs(z.mean(0)[0] - s.mu0) < 4 * se)
    np.testing.assert_allclose(z.var(0)[0], 2.5, rtol=0.03)


def test_sequential_construction_matches_encoding_marginal(moses):
    """z0 + sum_j alpha_j y_j with y_j ~ N(x, 1/alpha_j) has the closed-form marginal."""
    x = np.eye(3)[[1]]
    rng, lanes, t = CounterRNG(3), 100_000, 0.6
    grid = np.linspace(0.0, t, 9)
    z = sample_prior(moses, 1, rng, lanes=lanes).logits
    for i, (a, b) in enumerate(zip(grid[:-1], grid[1:])):
        al = beta(moses, b) - beta(moses, a)
        eps = rng.normal(Stream.MEASURE, i, 3, 1, lanes=lanes)
        z = bayes_update(BeliefState(z), measure(np.broadcast_to(x, z.shape), al, eps)).logits
    direct = encode_marginal(moses, x, t, rng, lanes=lanes).logits
    var = moses.beta0 + beta(moses, t)
    se = np.sqrt(var / lanes)
    for sample in (z, direct):
        assert np.all(np.abs(sample.mean(0) - (moses.mu0 + beta(moses, t) * x)) < 4 * se)
        np.testing.assert_allclose(sample.var(0), var, rtol=0.03)


def test_score_is_gradient_of_log_density(moses):
    gen = np.random.default_rng(2)
    t, x_hat = 0.4, np.array([[0.2, 0.5, 0.3]])
    z = gen.normal(size=(1, 3))
    b = beta(moses, t)
    mean, var = moses.mu0 + b * x_hat, moses.beta0 + b

    def logq(v):
        return -0.5 * np.sum((v - mean) ** 2) / var

    h = 1e-6
    fd = np.array([(logq(z + h * e) - logq(z - h * e)) / (2 * h) for e in np.eye(3)])
    np.testing.assert_allclose(score(moses, BeliefState(z, t), x_hat)[0], fd, rtol=1e-7)


def test_score_singular_at_zero_precision():
    s = PrecisionSchedule(3.0, 12.0, 0.0, np.zeros(2))
    with pytest.raises(SingularityError):
        score(s, BeliefState(np.zeros((1, 2)), 0.0), np.array([[0.5, 0.5]]))


def test_categorical_draw_frequencies():
    z = np.log(np.array([[0.2, 0.5, 0.3]]))
    draws = categorical_draw(z, CounterRNG(9), lanes=50_000).classes[:, 0]
    freq = np.bincount(draws, minlength=3) / draws.size
    se = np.sqrt(np.array([0.2, 0.5, 0.3]) * (1 - np.array([0.2, 0.5, 0.3])) / draws.size)
    assert np.all(np.abs(freq - [0.2, 0.5, 0.3]) < 4 * se)
