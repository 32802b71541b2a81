import numpy as np
import pytest

from rfo.fields import derive_rng
from rfo.stats import blocking_stderr, integrated_autocorr_time, naive_stderr


def ar1(phi, n, seed):
    rng = derive_rng(seed, 0)
    e = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = e[0] / np.sqrt(1 - phi * phi)
    for t in range(1, n):
        x[t] = phi * x[t - 1] + e[t]
    return x


def test_white_noise_blocking_matches_naive():
    x = derive_rng(0, 1).standard_normal(2**14)
    assert blocking_stderr(x) == pytest.approx(naive_stderr(x), rel=0.15)


@pytest.mark.parametrize("phi", [0.5, 0.9])
def test_ar1_stderr_and_tau(phi):
    n = 2**17
    x = ar1(phi, n, 3)
    tau = (1 + phi) / (2 * (1 - phi))
    exact = np.sqrt(2 * tau / ((1 - phi * phi) * n))
    assert blocking_stderr(x) == pytest.approx(exact, rel=0.25)
    assert integrated_autocorr_time(x) == pytest.approx(tau, rel=0.2)
    assert blocking_stderr(x) > 1.5 * naive_stderr(x)


def test_degenerate_series():
    assert blocking_stderr(np.ones(64)) == 0.0
    assert np.isnan(blocking_stderr([1.0]))
    assert np.isnan(naive_stderr([1.0]))
    assert integrated_autocorr_time(np.zeros(10)) == 0.5
