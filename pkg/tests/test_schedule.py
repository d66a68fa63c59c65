import numpy as np
import pytest

from catbsi.schedule import (PrecisionSchedule, ScheduleError, alpha, beta, beta_prime,
                             variance)


def test_endpoints(moses):
    assert beta(moses, 0.0) == 0.0
    assert beta(moses, 1.0) == pytest.approx(12.0 - 3.0, rel=1e-14)


def test_derivative_matches_central_difference(moses):
    h = 1e-6
    for t in np.linspace(0.01, 0.99, 25):
        fd = (beta(moses, t + h) - beta(moses, t - h)) / (2 * h)
        assert beta_prime(moses, t) == pytest.approx(fd, rel=1e-8)


def test_monotone_and_vectorised(moses):
    ts = np.linspace(0, 1, 101)
    b = beta(moses, ts)
    assert b.shape == ts.shape and np.all(np.diff(b) > 0)
    np.testing.assert_allclose(b, [beta(moses, t) for t in ts], rtol=0, atol=0)


def test_alpha_telescopes(moses):
    grid = np.linspace(0, 1, 17)
    total = sum(alpha(moses, a, b) for a, b in zip(grid[:-1], grid[1:]))
    assert total == pytest.approx(beta(moses, 1.0), rel=1e-13)
    with pytest.raises(ScheduleError):
        alpha(moses, 0.5, 0.5)


def test_variance(moses):
    assert variance(moses, 0.3) == pytest.approx(1.0 + beta(moses, 0.3))


@pytest.mark.parametrize("t", [-0.1, 1.1, np.nan])
def test_time_domain(moses, t):
    with pytest.raises(ScheduleError):
        beta(moses, t)


@pytest.mark.parametrize("args", [(0.0, 1.0), (3.0, 3.0), (3.0, 2.0)])
def test_invalid_parameters(args):
    with pytest.raises(ScheduleError):
        PrecisionSchedule(*args)
    with pytest.raises(ScheduleError):
        PrecisionSchedule(3.0, 12.0, -1.0)


def test_from_marginals_floor():
    s = PrecisionSchedule.from_marginals(1.0, 5.0, [3.0, 1.0, 0.0])
    np.testing.assert_allclose(s.mu0, np.log([0.75, 0.25, 1e-6]))
    assert s.n_classes == 3
    with pytest.raises(ValueError):
        s.mu0[0] = 1.0
