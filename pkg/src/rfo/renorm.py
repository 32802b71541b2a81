"""Angular coordinates, the spin-wave change of variables and the renormalized Hamiltonian.

For XY spins ``s_x = (cos theta_x, sin theta_x)`` in a field along e_2, the
fast-oscillating part of low-energy states is removed by

    phi_x = theta_x - c * cos(theta_x) * g'_x,      c = eps / (2J),

with ``g' = (-Delta_R^D + ell^-2)^-1 alpha``. The resulting effective energy
(to be maximised, like ``-H``) is

    K(phi | phi0) = 2J sum_<xy> [cos(phi_x - phi_y) - 1] + 1/2 sum_x m2_x cos^2(phi_x)

with ``m2_x = (eps^2 / 4J) sum_{y~x} (g'_y - g'_x)^2``. At ``J = 1/2`` this is
``phi = theta - eps cos(theta) g'`` and ``sum [cos - 1]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .elliptic import mass_field, massive_green_field
from .energy import region_hamiltonian


def to_angles(spins: np.ndarray) -> np.ndarray:
    """Angles in (-pi, pi] of n=2 spins."""
    spins = np.asarray(spins, dtype=float)
    if spins.ndim != 2 or spins.shape[1] != 2:
        raise ValueError("angular coordinates need n = 2 spins")
    theta = np.arctan2(spins[:, 1], spins[:, 0])
    theta[theta <= -np.pi] = np.pi
    return theta


def from_angles(theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    return np.stack([np.cos(theta), np.sin(theta)], axis=1)


def change_of_variables(theta: np.ndarray, gp: np.ndarray, eps: float, coupling: float = 1.0) -> np.ndarray:
    """``phi = theta - (eps/2J) cos(theta) g'``; no canonicalisation.

    Requires ``(eps/2J) sup|g'| < 1/2`` so the map stays monotone site by site.
    """
    c = eps / (2.0 * coupling)
    gp = np.asarray(gp, dtype=float).reshape(-1)
    if c * np.max(np.abs(gp), initial=0.0) >= 0.5:
        raise ValueError("change of variables not injective: (eps/2J) * sup|g'| >= 1/2")
    return np.asarray(theta, dtype=float) - c * np.cos(theta) * gp


def invert_change_of_variables(
    phi: np.ndarray, gp: np.ndarray, eps: float, coupling: float = 1.0, tol: float = 1e-12, maxiter: int = 200
) -> np.ndarray:
    """Fixed-point iteration ``theta <- phi + (eps/2J) cos(theta) g'`` (a contraction under the guard)."""
    c = eps / (2.0 * coupling)
    gp = np.asarray(gp, dtype=float).reshape(-1)
    theta = np.array(phi, dtype=float, copy=True)
    for _ in range(maxiter):
        new = phi + c * np.cos(theta) * gp
        if np.max(np.abs(new - theta), initial=0.0) <= tol:
            return new
        theta = new
    return theta


def _edges(geom, sites):
    mask = np.zeros(geom.n_sites, dtype=bool)
    mask[sites] = True
    e = geom.edges
    a_in = mask[e[:, 0]]
    b_in = mask[e[:, 1]]
    internal = e[a_in & b_in]
    cross = e[a_in ^ b_in]
    # orient crossing edges as (inside, outside)
    flip = ~mask[cross[:, 0]]
    cross = cross.copy()
    cross[flip] = cross[flip][:, ::-1]
    return internal, cross


@dataclass(frozen=True, eq=False)
class RenormalizedProblem:
    """``K`` on a region, with the outside angles ``phi0`` frozen.

    ``sites`` is sorted; ``m2`` aligned with it. ``phi0`` is a full-lattice
    array (only entries outside the region are read); it may be ``None``
    when the region has no crossing edges or ``free`` is set.
    """

    geom: object
    sites: np.ndarray = field(repr=False)
    m2: np.ndarray = field(repr=False)
    phi0: np.ndarray | None = field(repr=False, default=None)
    coupling: float = 1.0
    free: bool = False

    def __post_init__(self):
        sites = np.unique(np.asarray(self.sites, dtype=np.int64))
        object.__setattr__(self, "sites", sites)
        internal, cross = _edges(self.geom, sites)
        if self.free:
            cross = cross[:0]
        if len(cross) and self.phi0 is None:
            raise ValueError("boundary angles phi0 are required for edges leaving the region")
        local = np.full(self.geom.n_sites, -1, dtype=np.int64)
        local[sites] = np.arange(len(sites))
        object.__setattr__(self, "_int", local[internal])
        object.__setattr__(self, "_cross_in", local[cross[:, 0]])
        object.__setattr__(self, "_cross_out", cross[:, 1])

    def value(self, phi: np.ndarray) -> float:
        two_j = 2.0 * self.coupling
        i, j = self._int[:, 0], self._int[:, 1]
        ex = np.sum(np.cos(phi[i] - phi[j]) - 1.0)
        if len(self._cross_in):
            ex += np.sum(np.cos(phi[self._cross_in] - self.phi0[self._cross_out]) - 1.0)
        return float(two_j * ex + 0.5 * np.sum(self.m2 * np.cos(phi) ** 2))

    def gradient(self, phi: np.ndarray) -> np.ndarray:
        two_j = 2.0 * self.coupling
        g = -0.5 * self.m2 * np.sin(2.0 * phi)
        i, j = self._int[:, 0], self._int[:, 1]
        s = np.sin(phi[i] - phi[j])
        np.add.at(g, i, -two_j * s)
        np.add.at(g, j, two_j * s)
        if len(self._cross_in):
            sc = np.sin(phi[self._cross_in] - self.phi0[self._cross_out])
            np.add.at(g, self._cross_in, -two_j * sc)
        return g

    def maximize(self, phi_init: np.ndarray, gtol: float = 1e-9, maxiter: int = 20000):
        """Local maximiser of ``K`` from ``phi_init`` (L-BFGS on ``-K``)."""
        res = minimize(
            lambda p: -self.value(p),
            np.asarray(phi_init, dtype=float),
            jac=lambda p: -self.gradient(p),
            method="L-BFGS-B",
            options={"gtol": gtol, "maxiter": maxiter, "maxcor": 20},
        )
        return res.x, bool(res.success or np.max(np.abs(self.gradient(res.x))) < 1e-6), res


def renormalized_energy(
    phi: np.ndarray, m2: np.ndarray, geom, sites, phi0: np.ndarray | None = None, coupling: float = 1.0
) -> float:
    """``K(phi | phi0)`` over internal and boundary-crossing edges of the region."""
    return RenormalizedProblem(geom, sites, np.asarray(m2, dtype=float), phi0, coupling).value(np.asarray(phi, dtype=float))


def renormalized_mass(geom, sites, gp: np.ndarray, eps: float, coupling: float = 1.0) -> np.ndarray:
    """``m2_x = (eps^2 / 4J) sum_{y~x} (g'_y - g'_x)^2`` with the Dirichlet convention."""
    return mass_field(geom, sites, gp, scale=eps * eps / (4.0 * coupling), boundary="dirichlet")


@dataclass
class Transformed:
    phi: np.ndarray
    gp: np.ndarray
    m2: np.ndarray
    sites: np.ndarray


def transform_region(theta_full: np.ndarray, alpha, geom, sites, eps: float, ell: float, coupling: float = 1.0) -> Transformed:
    """Green field, mass and ``phi`` for the angles of a full-lattice XY configuration on a region."""
    sites = np.unique(np.asarray(sites, dtype=np.int64))
    gp = massive_green_field(geom, sites, alpha, ell)[:, 0]
    m2 = renormalized_mass(geom, sites, gp, eps, coupling)
    phi = change_of_variables(theta_full[sites], gp, eps, coupling)
    return Transformed(phi, gp, m2, sites)


def transformation_discrepancy(
    theta_full: np.ndarray,
    alpha,
    gp: np.ndarray,
    eps: float,
    geom,
    sites,
    coupling: float = 1.0,
) -> float:
    """``|(-H_R(s | s0) - C) - K(phi | phi0)|`` with ``C`` fixed by matching at ``theta = 0`` on R.

    ``theta_full`` gives the angles everywhere; outside the region they act
    as the frozen boundary (``phi0 = theta0`` there).
    """
    sites = np.unique(np.asarray(sites, dtype=np.int64))
    gp = np.asarray(gp, dtype=float).reshape(-1)
    m2 = renormalized_mass(geom, sites, gp, eps, coupling)
    prob = RenormalizedProblem(geom, sites, m2, np.asarray(theta_full, dtype=float), coupling)

    def minus_h(theta):
        return -region_hamiltonian(from_angles(theta), alpha, geom, sites, eps, coupling, crossing=True)

    zero = np.array(theta_full, dtype=float, copy=True)
    zero[sites] = 0.0
    C = minus_h(zero) - prob.value(change_of_variables(zero[sites], gp, eps, coupling))
    phi = change_of_variables(np.asarray(theta_full)[sites], gp, eps, coupling)
    return abs(minus_h(np.asarray(theta_full, dtype=float)) - C - prob.value(phi))
