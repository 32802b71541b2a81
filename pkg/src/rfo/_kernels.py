"""Compiled single-site loops shared by the sampler and the relaxation.

All random numbers are drawn by the caller (numpy Generator) and passed in,
so the kernels are deterministic functions of their inputs.

``h0`` is the spin-independent part of the local field
(``eps * alpha_x + b_x``); ``two_j`` multiplies the neighbour sum.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _local_field(spins, nbr, h0, two_j, x, out):
    n = spins.shape[1]
    for a in range(n):
        out[a] = h0[x, a]
    for c in range(nbr.shape[1]):
        y = nbr[x, c]
        if y >= 0:
            for a in range(n):
                out[a] += two_j * spins[y, a]


@njit(cache=True)
def metropolis_sweep(spins, nbr, h0, two_j, beta, width, axes, uni, order):
    """One pass of single-site Metropolis over ``order``; returns accepted count.

    Proposal: rotate ``s_x`` by an angle uniform in ``[-width, width]`` towards
    a random tangent direction (``axes[x]`` projected off ``s_x``).
    """
    n = spins.shape[1]
    h = np.empty(n)
    t = np.empty(n)
    new = np.empty(n)
    accepted = 0
    for i in range(order.shape[0]):
        x = order[i]
        dot = 0.0
        for a in range(n):
            dot += axes[x, a] * spins[x, a]
        tn = 0.0
        for a in range(n):
            t[a] = axes[x, a] - dot * spins[x, a]
            tn += t[a] * t[a]
        tn = math.sqrt(tn)
        if tn < 1e-12:
            continue
        ang = width * (2.0 * uni[x, 0] - 1.0)
        ca = math.cos(ang)
        sa = math.sin(ang)
        nn = 0.0
        for a in range(n):
            new[a] = ca * spins[x, a] + sa * t[a] / tn
            nn += new[a] * new[a]
        nn = math.sqrt(nn)
        _local_field(spins, nbr, h0, two_j, x, h)
        de = 0.0
        for a in range(n):
            new[a] /= nn
            de -= h[a] * (new[a] - spins[x, a])
        if de <= 0.0 or uni[x, 1] < math.exp(-beta * de):
            for a in range(n):
                spins[x, a] = new[a]
            accepted += 1
    return accepted


@njit(cache=True)
def overrelax_sweep(spins, nbr, h0, two_j, order):
    """Reflect each spin about its local field; energy preserving."""
    n = spins.shape[1]
    h = np.empty(n)
    for i in range(order.shape[0]):
        x = order[i]
        _local_field(spins, nbr, h0, two_j, x, h)
        hh = 0.0
        sh = 0.0
        for a in range(n):
            hh += h[a] * h[a]
            sh += h[a] * spins[x, a]
        if hh < 1e-24:
            continue
        f = 2.0 * sh / hh
        nn = 0.0
        for a in range(n):
            spins[x, a] = f * h[a] - spins[x, a]
            nn += spins[x, a] * spins[x, a]
        nn = math.sqrt(nn)
        for a in range(n):
            spins[x, a] /= nn


@njit(cache=True)
def align_sweep(spins, nbr, h0, two_j, order):
    """Exact coordinate minimisation: ``s_x <- h_x / |h_x|`` along ``order``."""
    n = spins.shape[1]
    h = np.empty(n)
    for i in range(order.shape[0]):
        x = order[i]
        _local_field(spins, nbr, h0, two_j, x, h)
        hn = 0.0
        for a in range(n):
            hn += h[a] * h[a]
        hn = math.sqrt(hn)
        if hn < 1e-300:
            continue
        for a in range(n):
            spins[x, a] = h[a] / hn
