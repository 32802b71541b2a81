"""Error bars for correlated Monte Carlo series (blocking / block doubling)."""

from __future__ import annotations

import numpy as np
from scipy.stats import chi2


def blocking_stderr(x) -> float:
    """Standard error of the mean of a correlated series.

    Repeated pairwise averaging (Flyvbjerg-Petersen); the blocking level is
    chosen automatically with Jonsson's test on the lag-1 autocovariances, so
    no autocorrelation time has to be supplied. The series is truncated to
    the largest power of two.
    """
    x = np.asarray(x, dtype=float)
    if len(x) < 2:
        return float("nan")
    d = int(np.floor(np.log2(len(x))))
    x = x[len(x) - 2**d :]
    if np.ptp(x) == 0.0:
        return 0.0
    mu = x.mean()
    s = np.zeros(d)
    gamma = np.zeros(d)
    for i in range(d):
        m = len(x)
        s[i] = x.var()
        gamma[i] = np.sum((x[:-1] - mu) * (x[1:] - mu)) / m
        x = 0.5 * (x[0::2] + x[1::2])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(s > 0, gamma / s, 0.0)
    # M_k = sum_{j >= k} n_j (gamma_j / s_j)^2 with n_j = 2^(d-j)
    M = np.cumsum((ratio**2 * 2.0 ** np.arange(d, 0, -1))[::-1])[::-1]
    q = chi2.ppf(0.99, np.arange(1, d + 1))
    level = d - 1
    for k in range(d):
        if M[k] < q[k]:
            level = k
            break
    return float(np.sqrt(s[level] / 2 ** (d - level)))


def naive_stderr(x) -> float:
    x = np.asarray(x, dtype=float)
    if len(x) < 2:
        return float("nan")
    return float(x.std(ddof=1) / np.sqrt(len(x)))


def integrated_autocorr_time(x, window: int | None = None) -> float:
    """Integrated autocorrelation time with a self-consistent window (c = 6)."""
    x = np.asarray(x, dtype=float) - np.mean(x)
    n = len(x)
    if n < 4 or np.allclose(x, 0):
        return 0.5
    f = np.fft.rfft(x, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n]
    acf /= acf[0]
    tau = 0.5
    for m in range(1, n):
        tau += acf[m]
        if window is None and m >= 6 * tau:
            break
        if window is not None and m >= window:
            break
    return float(tau)
