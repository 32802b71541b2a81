"""Hamiltonian, local moves, Dirichlet energy, gradient and block observables.

Sign convention (used by every other module):

    H = J * sum_<xy> |s_x - s_y|^2  -  eps * sum_x alpha_x . s_x  +  boundary

with each unordered edge counted once and Gibbs weight ``exp(-beta * H)``.
Because spins are unit vectors, ``H`` is affine in any single spin:
``H = const - h_x . s_x`` with local field
``h_x = 2J sum_{y~x} s_y + eps * alpha_x + b_x``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .fields import DisorderField, ModelParams
from .lattice import LatticeGeometry


@dataclass(frozen=True)
class EnergyBreakdown:
    exchange: float
    field: float
    boundary: float

    @property
    def total(self) -> float:
        return self.exchange + self.field + self.boundary


def _alpha_embedded(alpha, n: int) -> np.ndarray:
    if isinstance(alpha, DisorderField):
        return alpha.embedded(n)
    a = np.asarray(alpha, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.shape[1] == n:
        return a
    out = np.zeros((a.shape[0], n))
    out[:, n - a.shape[1] :] = a
    return out


def boundary_field(geom: LatticeGeometry, params: ModelParams) -> tuple[np.ndarray, float]:
    """Per-site linear boundary field ``b_x`` and the constant of the boundary term.

    The boundary energy is ``-sum_x b_x . s_x + const``.
    """
    n = params.n
    bc = params.boundary
    b = np.zeros((geom.n_sites, n))
    if bc.kind == "free":
        return b, 0.0
    if bc.kind == "field":
        b[geom.boundary] = bc.strength * np.asarray(bc.vector, dtype=float)
        return b, 0.0
    # fixed outside configuration, coupled by the exchange term
    J = params.coupling
    missing = geom.neighbors < 0
    if geom.periodic or not missing.any():
        return b, 0.0
    if bc.outside is None:
        v = np.asarray(bc.vector, dtype=float)
        counts = missing.sum(axis=1)
        b += 2.0 * J * counts[:, None] * v
        return b, 2.0 * J * float(counts.sum())
    padded = np.asarray(bc.outside, dtype=float)
    grid = np.indices(geom.shape).reshape(geom.d, -1).T + 1
    for col in range(2 * geom.d):
        axis, step = divmod(col, 2)
        step = 1 if step == 0 else -1
        rows = np.flatnonzero(missing[:, col])
        if len(rows) == 0:
            continue
        pos = grid[rows].copy()
        pos[:, axis] += step
        b[rows] += 2.0 * J * padded[tuple(pos.T)]
    const = 2.0 * J * float(missing.sum())
    return b, const


def local_fields(spins: np.ndarray, alpha, params: ModelParams, geom: LatticeGeometry) -> np.ndarray:
    """``h_x`` for every site, shape ``(n_sites, n)``."""
    nbr = geom.neighbors
    padded = np.vstack([spins, np.zeros((1, spins.shape[1]))])
    s = padded[np.where(nbr < 0, len(spins), nbr)].sum(axis=1)
    b, _ = boundary_field(geom, params)
    return 2.0 * params.coupling * s + params.eps * _alpha_embedded(alpha, params.n) + b


def _check(spins, params, geom):
    if spins.shape != (geom.n_sites, params.n):
        raise ValueError(f"spin array shape {spins.shape} != {(geom.n_sites, params.n)}")


def total_energy(spins: np.ndarray, alpha, params: ModelParams, geom: LatticeGeometry) -> EnergyBreakdown:
    _check(spins, params, geom)
    a = _alpha_embedded(alpha, params.n)
    if a.shape != spins.shape:
        raise ValueError("field and spin arrays disagree in shape")
    e = geom.edges
    diff = spins[e[:, 0]] - spins[e[:, 1]]
    exchange = params.coupling * float(np.einsum("ij,ij->", diff, diff))
    fld = -params.eps * float(np.einsum("ij,ij->", a, spins))
    b, const = boundary_field(geom, params)
    bnd = -float(np.einsum("ij,ij->", b, spins)) + const
    return EnergyBreakdown(exchange, fld, bnd)


def local_energy_delta(
    spins: np.ndarray, site: int, proposed: np.ndarray, alpha, params: ModelParams, geom: LatticeGeometry
) -> float:
    """Energy change when ``spins[site]`` is replaced by ``proposed``, in O(d)."""
    nb = geom.neighbors[site]
    nb = nb[nb >= 0]
    h = 2.0 * params.coupling * spins[nb].sum(axis=0)
    if params.eps:
        row = alpha.values[site] if isinstance(alpha, DisorderField) else np.atleast_1d(np.asarray(alpha)[site])
        h = h + params.eps * _alpha_embedded(row[None, :], params.n)[0]
    h = h + _site_boundary_field(geom, params, site)
    return -float(np.dot(h, np.asarray(proposed) - spins[site]))


def _site_boundary_field(geom: LatticeGeometry, params: ModelParams, site: int) -> np.ndarray:
    bc = params.boundary
    out = np.zeros(params.n)
    if bc.kind == "free":
        return out
    if bc.kind == "field":
        if geom.boundary[site]:
            out += bc.strength * np.asarray(bc.vector, dtype=float)
        return out
    missing = np.flatnonzero(geom.neighbors[site] < 0)
    if geom.periodic or len(missing) == 0:
        return out
    J = params.coupling
    if bc.outside is None:
        return out + 2.0 * J * len(missing) * np.asarray(bc.vector, dtype=float)
    pos0 = np.array(np.unravel_index(site, geom.shape)) + 1
    for col in missing:
        axis, step = divmod(int(col), 2)
        pos = pos0.copy()
        pos[axis] += 1 if step == 0 else -1
        out += 2.0 * J * np.asarray(bc.outside)[tuple(pos)]
    return out


def dirichlet_energy(spins: np.ndarray, geom: LatticeGeometry, sites) -> float:
    """``sum |s_x - s_y|^2`` over edges with both ends in ``sites``, each edge once."""
    sites = np.asarray(sites, dtype=np.int64)
    if len(sites) == 0:
        raise ValueError("empty region")
    mask = np.zeros(geom.n_sites, dtype=bool)
    mask[sites] = True
    e = geom.edges
    e = e[mask[e[:, 0]] & mask[e[:, 1]]]
    diff = spins[e[:, 0]] - spins[e[:, 1]]
    return float(np.einsum("ij,ij->", diff, diff))


def region_hamiltonian(
    spins: np.ndarray,
    alpha,
    geom: LatticeGeometry,
    sites,
    eps: float,
    coupling: float = 1.0,
    crossing: bool = True,
) -> float:
    """``H`` restricted to a region.

    Exchange over internal edges (plus edges leaving the region, against the
    spins currently outside, when ``crossing``) and the field term on the
    region. No boundary-field term: this is the free-boundary box energy when
    ``crossing`` is False.
    """
    sites = np.asarray(sites, dtype=np.int64)
    mask = np.zeros(geom.n_sites, dtype=bool)
    mask[sites] = True
    e = geom.edges
    inside = mask[e[:, 0]] & mask[e[:, 1]]
    sel = (mask[e[:, 0]] | mask[e[:, 1]]) if crossing else inside
    e = e[sel]
    diff = spins[e[:, 0]] - spins[e[:, 1]]
    a = _alpha_embedded(alpha, spins.shape[1])
    return coupling * float(np.einsum("ij,ij->", diff, diff)) - eps * float(
        np.einsum("ij,ij->", a[sites], spins[sites])
    )


@lru_cache(maxsize=256)
def _block_sites_cached(shape, periodic, z, eps):
    from .lattice import build_box_lattice

    geom = build_box_lattice(shape, periodic)
    coords = geom.coords()
    diff = coords - np.asarray(z)
    if periodic:
        s = np.asarray(shape)
        diff = (diff + s // 2) % s - s // 2
    r2 = (diff.astype(float) ** 2).sum(axis=1)
    radius = 1.0 / (2.0 * eps)
    sites = np.flatnonzero(r2 <= radius * radius * (1 + 1e-12))
    sites.flags.writeable = False
    return sites


def block_sites(geom: LatticeGeometry, z, eps: float) -> np.ndarray:
    """Sites within Euclidean distance ``1/(2 eps)`` of ``z`` (clipped to the lattice)."""
    if eps <= 0:
        raise ValueError("block observable needs eps > 0")
    return _block_sites_cached(geom.shape, geom.periodic, tuple(int(c) for c in z), float(eps))


def block_magnetization(spins: np.ndarray, geom: LatticeGeometry, z, eps: float) -> np.ndarray:
    """``M_z = eps^d * sum_{|y - z| <= 1/(2 eps)} s_y``."""
    sites = block_sites(geom, z, eps)
    return eps**geom.d * spins[sites].sum(axis=0)


def projected_block_norm_sq(spins: np.ndarray, geom: LatticeGeometry, z, eps: float, k: int) -> float:
    """Squared norm of the field-subspace (last k) components of ``M_z``."""
    m = block_magnetization(spins, geom, z, eps)
    return float(np.dot(m[-k:], m[-k:]))


def energy_gradient(spins: np.ndarray, alpha, params: ModelParams, geom: LatticeGeometry) -> np.ndarray:
    """Riemannian gradient of H on the product of spheres.

    ``grad_x = -(h_x - (h_x . s_x) s_x)``, tangent to the sphere at ``s_x``.
    """
    _check(spins, params, geom)
    h = local_fields(spins, alpha, params, geom)
    radial = np.einsum("ij,ij->i", h, spins)
    return -(h - radial[:, None] * spins)
