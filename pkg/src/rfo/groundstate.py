"""Zero-temperature analysis: the quadratic spin-wave optimum and nonlinear relaxation."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .elliptic import disorder_energy, green_field
from .energy import energy_gradient, region_hamiltonian, total_energy
from .fields import INIT_STREAM, DisorderField, ModelParams, derive_rng, random_spins
from .lattice import Box, LatticeGeometry
from .sampler import _static_field


@dataclass
class SpinWave:
    """Quadratic optimum around a fixed angle ``psi`` on a box with free boundary.

    ``theta_hat`` is aligned with ``box.sites``. ``gain`` is the leading
    (second-order) increase of ``-H`` and ``first_order`` the linear term
    ``eps sin(psi) sum_z alpha_z`` reported separately.
    """

    theta_hat: np.ndarray = field(repr=False)
    gain: float
    first_order: float
    disorder_energy: float


def spin_wave_optimum(
    geom: LatticeGeometry, box: Box, alpha, psi: float, eps: float, coupling: float = 1.0
) -> SpinWave:
    """Deviation field ``theta_hat = (eps / 2J) cos(psi) g`` with ``g = (-Delta)^-1 alpha_hat``.

    The predicted gain is ``(eps^2 / 4J) cos^2(psi) E_Q(alpha)``; at ``J = 1/2``
    these are ``eps cos(psi) g`` and ``(eps^2/2) cos^2(psi) E_Q``.
    """
    vals = alpha.values if isinstance(alpha, DisorderField) else np.asarray(alpha, dtype=float).reshape(geom.n_sites, -1)
    if vals.shape[1] != 1:
        raise ValueError("spin-wave optimum is for a uniaxial field (k = 1)")
    if not eps < 1:
        raise ValueError("spin-wave expansion needs eps < 1")
    ahat, g = green_field(geom, box, vals)
    E = float(np.einsum("ij,ij->", ahat, g))
    c = math.cos(psi)
    theta_hat = (eps / (2.0 * coupling)) * c * g[:, 0]
    gain = eps * eps / (4.0 * coupling) * c * c * E
    first = eps * math.sin(psi) * float(vals[box.sites, 0].sum())
    return SpinWave(theta_hat, gain, first, E)


def box_minus_energy(geom: LatticeGeometry, box: Box, theta: np.ndarray, alpha, eps: float, coupling: float = 1.0) -> float:
    """``-H_Q`` of the XY configuration ``(cos theta, sin theta)`` on a box, free boundary."""
    spins = np.zeros((geom.n_sites, 2))
    spins[:, 0] = 1.0
    spins[box.sites, 0] = np.cos(theta)
    spins[box.sites, 1] = np.sin(theta)
    return -region_hamiltonian(spins, alpha, geom, box.sites, eps, coupling, crossing=False)


@dataclass
class RelaxationReport:
    spins: np.ndarray = field(repr=False)
    energies: np.ndarray = field(repr=False)
    grad_norm: float
    sweeps: int
    converged: bool

    @property
    def energy(self) -> float:
        return float(self.energies[-1])


def relax(
    spins: np.ndarray,
    alpha,
    params: ModelParams,
    geom: LatticeGeometry,
    fixed=None,
    tol: float = 1e-8,
    max_sweeps: int = 100_000,
) -> RelaxationReport:
    """Gauss-Seidel descent ``s_x <- h_x / |h_x|`` on the non-fixed sites.

    Sweeps run lexicographically, alternating direction. Each update is the
    exact minimiser of H in that spin, so the energy trace never increases.
    Convergence is judged on the sup-norm of the tangent gradient over free
    sites; hitting ``max_sweeps`` returns ``converged=False``.
    """
    s = np.ascontiguousarray(spins, dtype=float).copy()
    free_mask = np.ones(geom.n_sites, dtype=bool)
    if fixed is not None:
        free_mask[np.asarray(fixed, dtype=np.int64)] = False
    free = np.flatnonzero(free_mask).astype(np.int64)
    if len(free) == 0:
        raise ValueError("relax needs at least one free site")
    back = free[::-1].copy()
    h0 = _static_field(alpha, params, geom)
    two_j = 2.0 * params.coupling
    energies = [total_energy(s, alpha, params, geom).total]

    def gnorm():
        g = energy_gradient(s, alpha, params, geom)[free]
        return float(np.max(np.linalg.norm(g, axis=1)))

    gn = gnorm()
    sweeps = 0
    while gn > tol and sweeps < max_sweeps:
        _kernels.align_sweep(s, geom.neighbors, h0, two_j, free if sweeps % 2 == 0 else back)
        sweeps += 1
        energies.append(total_energy(s, alpha, params, geom).total)
        gn = gnorm()
    return RelaxationReport(s, np.array(energies), gn, sweeps, gn <= tol)


def _multistart_job(args):
    spins, alpha, params, geom, tol, max_sweeps = args
    return relax(spins, alpha, params, geom, None, tol, max_sweeps)


def relax_multistart(
    alpha,
    params: ModelParams,
    geom: LatticeGeometry,
    starts: int,
    master: int,
    realization: int = 0,
    tol: float = 1e-8,
    max_sweeps: int = 100_000,
    workers: int = 1,
) -> list[RelaxationReport]:
    """Relax from ``starts`` random initial states drawn from the init stream."""
    inits = [random_spins(geom.n_sites, params.n, derive_rng(master, INIT_STREAM, realization, i)) for i in range(starts)]
    jobs = [(s, alpha, params, geom, tol, max_sweeps) for s in inits]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            return list(ex.map(_multistart_job, jobs))
    return [_multistart_job(j) for j in jobs]


@dataclass
class ProjectionProfile:
    lengths: np.ndarray = field(repr=False)
    quantiles: dict[str, float]


def ordering_projection_profile(spins: np.ndarray, k: int) -> ProjectionProfile:
    """Per-site length of the ordering-subspace projection ``|(I - P) s_x|``."""
    n = spins.shape[1]
    lengths = np.linalg.norm(spins[:, : n - k], axis=1)
    qs = {f"q{int(q * 100):02d}": float(np.quantile(lengths, q)) for q in (0.05, 0.25, 0.5, 0.75, 0.95)}
    qs["mean"] = float(lengths.mean())
    qs["min"] = float(lengths.min())
    return ProjectionProfile(lengths, qs)
