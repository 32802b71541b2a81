"""Discrete Laplacians on lattice regions and the Green fields built from them.

Scalar lattice fields are 1-d arrays aligned with ``spec.sites``.

``(-Delta f)_x = sum_{y ~ x} (f_x - f_y)``. Under ``neumann`` only neighbours
inside the region count (the graph Laplacian of the induced subgraph); under
``dirichlet`` all 2d neighbours of Z^d count and those outside the region
carry ``f = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fields import DisorderField, center_disorder
from .lattice import Box, LatticeGeometry, connected_components


class SolverError(RuntimeError):
    """The Krylov solve did not reach the requested tolerance."""


@dataclass(frozen=True, eq=False)
class LaplacianSpec:
    geom: LatticeGeometry
    sites: np.ndarray = field(repr=False)
    boundary: str = "neumann"
    mass2: float = 0.0

    def __post_init__(self):
        if self.boundary not in ("neumann", "dirichlet"):
            raise ValueError(f"unknown boundary type {self.boundary!r}")
        if self.mass2 < 0:
            raise ValueError("mass2 must be nonnegative")
        object.__setattr__(self, "sites", np.unique(np.asarray(self.sites, dtype=np.int64)))

    @property
    def singular(self) -> bool:
        return self.boundary == "neumann" and self.mass2 == 0.0

    def matrix(self) -> sp.csr_matrix:
        return _operator(self)

    def component_labels(self) -> np.ndarray:
        """Connected-component label per region site (positions in ``sites``)."""
        comps = connected_components(self.geom, self.sites)
        pos = {int(s): i for i, s in enumerate(self.sites)}
        lab = np.empty(len(self.sites), dtype=np.int64)
        for c, reg in enumerate(comps):
            for s in reg.sites:
                lab[pos[int(s)]] = c
        return lab


def laplacian_spec(geom: LatticeGeometry, sites=None, boundary: str = "neumann", mass2: float = 0.0) -> LaplacianSpec:
    if sites is None:
        sites = np.arange(geom.n_sites)
    elif isinstance(sites, Box):
        sites = sites.sites
    return LaplacianSpec(geom, np.asarray(sites), boundary, float(mass2))


def _operator(spec: LaplacianSpec) -> sp.csr_matrix:
    geom = spec.geom
    sites = spec.sites
    m = len(sites)
    local = np.full(geom.n_sites, -1, dtype=np.int64)
    local[sites] = np.arange(m)
    nb = geom.neighbors[sites]
    nb_local = np.where(nb >= 0, local[np.maximum(nb, 0)], -1)
    inside = nb_local >= 0
    if spec.boundary == "neumann":
        diag = inside.sum(axis=1).astype(float)
    else:
        diag = np.full(m, 2.0 * geom.d)
    diag = diag + spec.mass2
    rows = np.repeat(np.arange(m), nb.shape[1])[inside.ravel()]
    cols = nb_local.ravel()[inside.ravel()]
    off = sp.csr_matrix((-np.ones(len(rows)), (rows, cols)), shape=(m, m))
    return (sp.diags(diag) + off).tocsr()


def apply_laplacian(spec: LaplacianSpec, f: np.ndarray) -> np.ndarray:
    """``(-Delta + mass2) f`` on the region."""
    f = np.asarray(f, dtype=float)
    if f.shape[0] != len(spec.sites):
        raise ValueError("field does not live on the operator's region")
    return spec.matrix() @ f


def _project_zero_mean(v: np.ndarray, labels: np.ndarray, counts: np.ndarray) -> np.ndarray:
    means = np.bincount(labels, weights=v, minlength=len(counts)) / counts
    return v - means[labels]


def solve_green(
    spec: LaplacianSpec,
    rhs: np.ndarray,
    tol: float = 1e-10,
    maxiter: int | None = None,
    matrix: sp.csr_matrix | None = None,
) -> np.ndarray:
    """Solve ``(-Delta + mass2) g = rhs`` by Jacobi-preconditioned CG.

    For the singular Neumann operator the right-hand side must have zero mean
    on every connected component; iterates are projected onto that subspace
    and the zero-mean solution is returned.
    """
    A = _operator(spec) if matrix is None else matrix
    b = np.asarray(rhs, dtype=float)
    m = len(b)
    if m != A.shape[0]:
        raise ValueError("rhs does not live on the operator's region")
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(m)
    if maxiter is None:
        maxiter = 10 * m
    proj = None
    if spec.singular:
        labels = spec.component_labels()
        counts = np.bincount(labels).astype(float)
        means = np.bincount(labels, weights=b) / counts
        if np.max(np.abs(means)) * np.sqrt(m) > 1e-10 * bnorm + 1e-14:
            raise ValueError("rhs must have zero mean on each component for the singular Neumann solve")
        b = b - means[labels]

        def proj(v):
            return _project_zero_mean(v, labels, counts)

    dinv = 1.0 / A.diagonal()
    dinv[~np.isfinite(dinv)] = 0.0
    x = np.zeros(m)
    r = b.copy()
    z = dinv * r
    if proj is not None:
        z = proj(z)
    p = z.copy()
    rz = float(r @ z)
    for _ in range(maxiter):
        Ap = A @ p
        pAp = float(p @ Ap)
        if pAp <= 0:
            break
        step = rz / pAp
        x += step * p
        r -= step * Ap
        if proj is not None:
            r = proj(r)
        if np.linalg.norm(r) <= tol * bnorm:
            break
        z = dinv * r
        if proj is not None:
            z = proj(z)
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    if proj is not None:
        x = proj(x)
    res = np.linalg.norm(A @ x - b)
    if res > tol * bnorm:
        raise SolverError(f"CG stalled: residual {res / bnorm:.3e} > tol {tol:.1e}")
    return x


def green_field(geom: LatticeGeometry, box, alpha, tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """Centered field ``alpha_hat`` and ``g = (-Delta)^-1 alpha_hat`` (Neumann) on a box.

    Both returned with shape ``(box size, k)``.
    """
    sites = box.sites if isinstance(box, Box) else np.asarray(box)
    spec = laplacian_spec(geom, sites, "neumann")
    A = spec.matrix()
    ahat = center_disorder(alpha, sites)
    g = np.column_stack([solve_green(spec, ahat[:, c], tol, matrix=A) for c in range(ahat.shape[1])])
    return ahat, g


def disorder_energy(geom: LatticeGeometry, box, alpha, tol: float = 1e-10) -> float:
    """``E_Q(alpha) = sum_x alpha_hat_x . (-Delta)^-1 alpha_hat_x`` with the box's Neumann Laplacian."""
    ahat, g = green_field(geom, box, alpha, tol)
    return float(np.einsum("ij,ij->", ahat, g))


def massive_green_field(
    geom: LatticeGeometry, sites, alpha, ell: float, tol: float = 1e-10
) -> np.ndarray:
    """``g' = (-Delta_R^D + ell^-2)^-1 alpha`` on a region, per field component."""
    sites = np.unique(np.asarray(sites.sites if isinstance(sites, Box) else sites, dtype=np.int64))
    vals = alpha.values if isinstance(alpha, DisorderField) else np.asarray(alpha, dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    spec = laplacian_spec(geom, sites, "dirichlet", 1.0 / float(ell) ** 2)
    A = spec.matrix()
    sub = vals[sites]
    return np.column_stack([solve_green(spec, sub[:, c], tol, matrix=A) for c in range(sub.shape[1])])


def mass_field(
    geom: LatticeGeometry, sites, gp: np.ndarray, scale: float = 1.0, boundary: str = "dirichlet"
) -> np.ndarray:
    """``m2_x = scale * sum_{y ~ x} (g'_y - g'_x)^2`` on a region.

    Under ``dirichlet`` neighbours outside the region (including outside the
    lattice) contribute with ``g' = 0``; under ``neumann`` they are skipped.
    """
    sites = np.unique(np.asarray(sites, dtype=np.int64))
    gp = np.asarray(gp, dtype=float)
    if gp.ndim == 1:
        gp = gp[:, None]
    local = np.full(geom.n_sites, -1, dtype=np.int64)
    local[sites] = np.arange(len(sites))
    nb = geom.neighbors[sites]
    nb_local = np.where(nb >= 0, local[np.maximum(nb, 0)], -1)
    out = np.zeros(len(sites))
    for col in range(nb.shape[1]):
        j = nb_local[:, col]
        inside = j >= 0
        diff = np.where(inside[:, None], gp[np.maximum(j, 0)] - gp, -gp)
        contrib = (diff**2).sum(axis=1)
        if boundary == "neumann":
            contrib = np.where(inside, contrib, 0.0)
        out += contrib
    return scale * out


def dense_laplacian(geom: LatticeGeometry, boundary: str = "dirichlet") -> np.ndarray:
    return laplacian_spec(geom, None, boundary).matrix().toarray()


MAX_DENSE_SITES = 4096


def gaussian_model_covariance(
    geom: LatticeGeometry, eps: float, beta: float, coupling: float = 1.0
) -> np.ndarray:
    """Exact disorder-averaged two-point function of the random-field Gaussian model.

    For ``H = J phi.(-Delta)phi - eps alpha.phi`` (Dirichlet) the Gibbs mean is
    ``(eps / 2J) (-Delta)^-1 alpha`` and the thermal covariance
    ``(2 beta J)^-1 (-Delta)^-1``, so
    ``E<phi phi^T> = (2 beta J)^-1 G + (eps / 2J)^2 G^2`` with ``G = (-Delta)^-1``.
    """
    if geom.n_sites > MAX_DENSE_SITES:
        raise ValueError(f"{geom.n_sites} sites exceeds the dense limit {MAX_DENSE_SITES}")
    if beta <= 0:
        raise ValueError("beta must be positive")
    G = np.linalg.inv(dense_laplacian(geom, "dirichlet"))
    G = 0.5 * (G + G.T)
    c = eps / (2.0 * coupling)
    cov = G / (2.0 * beta * coupling) + c * c * (G @ G)
    return 0.5 * (cov + cov.T)


def gaussian_model_mean(geom: LatticeGeometry, alpha: np.ndarray, eps: float, coupling: float = 1.0) -> np.ndarray:
    """Gibbs mean ``(eps / 2J) (-Delta)^-1 alpha`` of the Gaussian model for one field draw.

    ``alpha`` may be ``(n_sites,)`` or ``(n_sites, draws)``.
    """
    A = dense_laplacian(geom, "dirichlet")
    return (eps / (2.0 * coupling)) * np.linalg.solve(A, alpha)


@dataclass
class SampledCovariance:
    mean: np.ndarray
    stderr: np.ndarray
    draws: int


def sample_gaussian_covariance(
    geom: LatticeGeometry,
    eps: float,
    beta: float,
    draws: int,
    rng: np.random.Generator,
    coupling: float = 1.0,
    batch: int = 1000,
) -> SampledCovariance:
    """Monte Carlo over the field only: ``E_alpha[m m^T] + thermal`` with exact per-draw means."""
    A = dense_laplacian(geom, "dirichlet")
    G = np.linalg.inv(A)
    G = 0.5 * (G + G.T)
    thermal = G / (2.0 * beta * coupling)
    n = geom.n_sites
    s1 = np.zeros((n, n))
    s2 = np.zeros((n, n))
    done = 0
    while done < draws:
        b = min(batch, draws - done)
        alpha = rng.standard_normal((n, b))
        m = (eps / (2.0 * coupling)) * (G @ alpha)
        s1 += m @ m.T
        sq = m * m
        s2 += sq @ sq.T
        done += b
    mean = s1 / draws
    var = np.maximum(s2 / draws - mean * mean, 0.0)
    stderr = np.sqrt(var / max(draws - 1, 1))
    return SampledCovariance(mean + thermal, stderr, draws)


def increment_variance(cov: np.ndarray, x: int, y: int) -> float:
    """``Var(phi_x - phi_y)`` read off a covariance matrix."""
    return float(cov[x, x] + cov[y, y] - 2.0 * cov[x, y])
