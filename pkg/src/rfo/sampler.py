"""Gibbs sampling of the RFO(n;k) model and an exact quadrature oracle for tiny systems."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .energy import _alpha_embedded, block_sites, boundary_field, local_fields, total_energy
from .fields import ModelParams, normalize, random_spins, uniform_spins
from .lattice import LatticeGeometry
from .stats import blocking_stderr

OBSERVABLES = ("sigma_par", "m_par", "p_norm_sq", "energy_density", "bad_box_density", "contour_count")


@dataclass
class ChainConfig:
    """Sweep schedule and move mix of one Markov chain.

    ``width`` is the maximal rotation angle of a Metropolis proposal. With
    ``tune`` it is adapted towards ``target_acceptance`` during
    thermalization only and then frozen. ``overrelax`` overrelaxation sweeps
    follow every Metropolis sweep.
    """

    therm_sweeps: int = 500
    meas_sweeps: int = 2000
    stride: int = 1
    width: float = 1.0
    tune: bool = True
    target_acceptance: float = 0.5
    overrelax: int = 0
    checkerboard: bool = False
    init: str = "ordered"
    observables: tuple[str, ...] = ("m_par", "p_norm_sq", "energy_density")
    z: tuple[int, ...] | None = None
    block_eps: float | None = None

    def __post_init__(self):
        if self.stride < 1 or self.meas_sweeps < 1 or self.therm_sweeps < 0:
            raise ValueError("sweep counts must be positive and stride >= 1")
        if not 0 < self.width <= math.pi:
            raise ValueError("proposal width must lie in (0, pi]")
        if self.init not in ("ordered", "random"):
            raise ValueError(f"unknown init {self.init!r}")
        for name in self.observables:
            if name not in OBSERVABLES:
                raise ValueError(f"unknown observable {name!r}")
        self.observables = tuple(self.observables)


def _static_field(alpha, params: ModelParams, geom: LatticeGeometry) -> np.ndarray:
    b, _ = boundary_field(geom, params)
    return np.ascontiguousarray(params.eps * _alpha_embedded(alpha, params.n) + b)


def _parity(geom: LatticeGeometry) -> np.ndarray:
    if geom.periodic and any(s % 2 for s in geom.shape):
        raise ValueError("checkerboard sweeps need a bipartite lattice")
    return (np.indices(geom.shape).reshape(geom.d, -1).sum(axis=0) % 2).astype(np.int64)


def metropolis_sweep(
    spins: np.ndarray,
    alpha,
    params: ModelParams,
    geom: LatticeGeometry,
    rng: np.random.Generator,
    width: float = 1.0,
    checkerboard: bool = False,
    _h0: np.ndarray | None = None,
) -> float:
    """One Metropolis sweep targeting ``exp(-beta H)``, in place; returns the acceptance rate.

    Sequential sweeps visit sites in index order. ``checkerboard`` updates
    the two sublattices as vectorised half-sweeps instead.
    """
    h0 = _static_field(alpha, params, geom) if _h0 is None else _h0
    n_sites, n = spins.shape
    axes = rng.standard_normal((n_sites, n))
    uni = rng.random((n_sites, 2))
    two_j = 2.0 * params.coupling
    if not checkerboard:
        order = np.arange(n_sites, dtype=np.int64)
        acc = _kernels.metropolis_sweep(spins, geom.neighbors, h0, two_j, float(params.beta), float(width), axes, uni, order)
        return acc / n_sites
    parity = _parity(geom)
    acc = 0
    nbr = geom.neighbors
    for p in (0, 1):
        idx = np.flatnonzero(parity == p)
        s = spins[idx]
        t = axes[idx] - np.einsum("ij,ij->i", axes[idx], s)[:, None] * s
        tn = np.linalg.norm(t, axis=1)
        ok = tn > 1e-12
        t[ok] /= tn[ok, None]
        ang = width * (2.0 * uni[idx, 0] - 1.0)
        new = normalize(np.cos(ang)[:, None] * s + np.sin(ang)[:, None] * t)
        nb = nbr[idx]
        padded = np.vstack([spins, np.zeros((1, n))])
        h = h0[idx] + two_j * padded[np.where(nb < 0, n_sites, nb)].sum(axis=1)
        de = -np.einsum("ij,ij->i", h, new - s)
        with np.errstate(over="ignore"):
            accept = ok & ((de <= 0) | (uni[idx, 1] < np.exp(-params.beta * de)))
        spins[idx[accept]] = new[accept]
        acc += int(accept.sum())
    return acc / n_sites


def overrelaxation_sweep(
    spins: np.ndarray, alpha, params: ModelParams, geom: LatticeGeometry, _h0: np.ndarray | None = None
) -> np.ndarray:
    """Reflect every spin about its local field (microcanonical, deterministic), in place."""
    h0 = _static_field(alpha, params, geom) if _h0 is None else _h0
    order = np.arange(geom.n_sites, dtype=np.int64)
    _kernels.overrelax_sweep(spins, geom.neighbors, h0, 2.0 * params.coupling, order)
    return spins


def make_observables(
    names: Sequence[str],
    geom: LatticeGeometry,
    alpha,
    params: ModelParams,
    z: Sequence[int] | None = None,
    block_eps: float | None = None,
) -> dict[str, Callable[[np.ndarray], float]]:
    z = tuple(z) if z is not None else (0,) * geom.d
    beps = params.eps if block_eps is None else block_eps
    out: dict[str, Callable[[np.ndarray], float]] = {}
    k = params.k
    zi = geom.index(z)
    for name in names:
        if name == "sigma_par":
            out[name] = lambda s, zi=zi: float(s[zi, 0])
        elif name in ("m_par", "p_norm_sq"):
            sites = block_sites(geom, z, beps)
            scale = beps**geom.d
            if name == "m_par":
                out[name] = lambda s, sites=sites, scale=scale: float(scale * s[sites, 0].sum())
            else:

                def pn(s, sites=sites, scale=scale):
                    m = scale * s[sites, -k:].sum(axis=0)
                    return float(m @ m)

                out[name] = pn
        elif name == "energy_density":
            out[name] = lambda s: total_energy(s, alpha, params, geom).total / geom.n_sites
        elif name in ("bad_box_density", "contour_count"):
            from .contour import bad_box_density, contour_count

            sc = params.scales(geom.d)
            if name == "bad_box_density":
                out[name] = lambda s, sc=sc: bad_box_density(s, geom, sc)
            else:
                out[name] = lambda s, sc=sc: float(contour_count(s, geom, sc))
        else:
            raise ValueError(f"unknown observable {name!r}")
    return out


@dataclass
class ChainResult:
    sweeps: np.ndarray
    series: dict[str, np.ndarray]
    mean: dict[str, float]
    stderr: dict[str, float]
    acceptance: float
    width: float
    final_spins: np.ndarray = field(repr=False)


def initial_spins(geom: LatticeGeometry, params: ModelParams, init: str, rng: np.random.Generator) -> np.ndarray:
    """``ordered``: every spin along e_1; ``random``: uniform on the sphere."""
    if init == "ordered":
        v = np.zeros(params.n)
        v[0] = 1.0
        return uniform_spins(geom.n_sites, v)
    return random_spins(geom.n_sites, params.n, rng)


def run_chain(
    geom: LatticeGeometry,
    alpha,
    params: ModelParams,
    chain: ChainConfig,
    rng: np.random.Generator,
    spins: np.ndarray | None = None,
) -> ChainResult:
    """Thermalize, then measure every ``stride`` sweeps.

    Errors on the means come from blocking. Bit-reproducible for a fixed
    generator state.
    """
    if spins is None:
        spins = initial_spins(geom, params, chain.init, rng)
    spins = np.ascontiguousarray(spins, dtype=float).copy()
    h0 = _static_field(alpha, params, geom)
    obs = make_observables(chain.observables, geom, alpha, params, chain.z, chain.block_eps)
    width = chain.width

    def step(w):
        acc = metropolis_sweep(spins, alpha, params, geom, rng, w, chain.checkerboard, _h0=h0)
        for _ in range(chain.overrelax):
            overrelaxation_sweep(spins, alpha, params, geom, _h0=h0)
        return acc

    window = []
    for t in range(chain.therm_sweeps):
        window.append(step(width))
        if chain.tune and len(window) == 20:
            rate = float(np.mean(window))
            width = float(np.clip(width * math.exp(rate - chain.target_acceptance), 1e-3, math.pi))
            window = []
    n_meas = chain.meas_sweeps // chain.stride
    series = {name: np.empty(n_meas) for name in obs}
    sweeps = np.empty(n_meas, dtype=np.int64)
    acc_total = 0.0
    done = 0
    for i in range(n_meas):
        for _ in range(chain.stride):
            acc_total += step(width)
            done += 1
        sweeps[i] = chain.therm_sweeps + done
        for name, f in obs.items():
            series[name][i] = f(spins)
    mean = {k: float(v.mean()) for k, v in series.items()}
    err = {k: blocking_stderr(v) for k, v in series.items()}
    return ChainResult(sweeps, series, mean, err, acc_total / max(done, 1), width, spins)


def write_series_csv(path, result: ChainResult) -> None:
    """Time series as CSV: ``sweep`` column then one column per observable."""
    names = list(result.series)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sweep", *names])
        for i, sw in enumerate(result.sweeps):
            w.writerow([int(sw), *[repr(float(result.series[n][i])) for n in names]])


def read_series_csv(path) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    sweeps = np.array([int(r[0]) for r in body], dtype=np.int64)
    series = {name: np.array([float(r[j + 1]) for r in body]) for j, name in enumerate(header[1:])}
    return sweeps, series


# ---------------------------------------------------------------------------
# quadrature oracle

MAX_ORACLE_SITES = 6


@dataclass
class OracleResult:
    """Exact (up to quadrature) Gibbs expectations for a tiny n=2 system."""

    log_z: float
    mean: np.ndarray = field(repr=False)
    second: np.ndarray = field(repr=False)
    free_sites: np.ndarray = field(repr=False)

    def block(self, sites: Sequence[int], scale: float) -> tuple[float, float]:
        """``<M . e_1>`` and ``<|P M|^2>`` for ``M = scale * sum_{y in sites} s_y``."""
        sites = np.asarray(sites)
        m_par = scale * float(self.mean[sites, 0].sum())
        pn = scale * scale * float(self.second[np.ix_(sites, sites)][:, :, 1, 1].sum())
        return m_par, pn


_LETTERS = "abcdefghijklmnopqrstuvwxyz"


def _elimination_order(m: int, edges) -> list[int]:
    """Greedy min-degree order for summing out the site variables."""
    adj = {i: set() for i in range(m)}
    for i, j in edges:
        adj[i].add(j)
        adj[j].add(i)
    order = []
    while adj:
        v = min(adj, key=lambda u: (len(adj[u]), u))
        nbrs = adj.pop(v)
        for a in nbrs:
            adj[a] |= nbrs - {a}
            adj[a].discard(v)
        order.append(v)
    return order


def _eliminate(site_w, edges, edge_w, order) -> float:
    """Sum the product of site and edge weights over all angle tuples.

    Variable elimination: the quadrature sum is exact, only its evaluation
    order is factorised.
    """
    factors = [(w, (i,)) for i, w in enumerate(site_w)] + [(edge_w, (i, j)) for i, j in edges]
    for v in order:
        touching = [f for f in factors if v in f[1]]
        factors = [f for f in factors if v not in f[1]]
        out_vars = sorted({u for _, vs in touching for u in vs} - {v})
        subs = ",".join("".join(_LETTERS[u] for u in vs) for _, vs in touching)
        expr = subs + "->" + "".join(_LETTERS[u] for u in out_vars)
        new = np.einsum(expr, *[t for t, _ in touching])
        factors.append((new, tuple(out_vars)))
    total = 1.0
    for t, vs in factors:
        total *= float(t)
    return total


def quadrature_oracle(
    geom: LatticeGeometry,
    alpha,
    params: ModelParams,
    points: int = 64,
    fixed: dict[int, Sequence[float]] | None = None,
) -> OracleResult:
    """Trapezoidal quadrature of ``exp(-beta H)`` over the angles of every free spin.

    The tensor-product sum over ``points^m`` angle tuples is evaluated by
    contracting site weights and edge weights (``einsum``), which is the same
    sum factorised, so it stays exact for up to ``MAX_ORACLE_SITES`` free
    sites. Returns ``<s_x>`` and ``<s_x^a s_y^b>`` for all sites (fixed sites
    contribute their frozen values).
    """
    if params.n != 2:
        raise ValueError("quadrature oracle is for n = 2")
    if points < 64:
        raise ValueError("use at least 64 quadrature points per site")
    fixed = {int(k): np.asarray(v, dtype=float) for k, v in (fixed or {}).items()}
    free = np.array([x for x in range(geom.n_sites) if x not in fixed], dtype=np.int64)
    if len(free) > MAX_ORACLE_SITES or len(free) == 0:
        raise ValueError(f"oracle handles 1..{MAX_ORACLE_SITES} free sites, got {len(free)}")
    beta = float(params.beta)
    two_j = 2.0 * params.coupling
    theta = 2.0 * np.pi * np.arange(points) / points
    circle = np.stack([np.cos(theta), np.sin(theta)], axis=1)

    # static field plus couplings to frozen neighbours
    h0 = _static_field(alpha, params, geom).copy()
    for x in free:
        for y in geom.neighbors[x]:
            if y >= 0 and int(y) in fixed:
                h0[x] += two_j * fixed[int(y)]
    pos = {int(x): i for i, x in enumerate(free)}
    site_w = []
    for x in free:
        hx = h0[x]
        site_w.append(np.exp(beta * (circle @ hx - np.linalg.norm(hx))) / points)
    e = geom.edges
    edges = [(pos[int(a)], pos[int(b)]) for a, b in e if int(a) in pos and int(b) in pos]
    cosdiff = np.cos(theta[:, None] - theta[None, :])
    edge_w = np.exp(-beta * two_j * (1.0 - cosdiff))

    order = _elimination_order(len(free), edges)

    def contract(weights):
        return _eliminate(weights, edges, edge_w, order)

    z = contract(site_w)
    m = len(free)
    n_sites = geom.n_sites
    mean = np.zeros((n_sites, 2))
    second = np.zeros((n_sites, n_sites, 2, 2))
    for i in range(m):
        for a in range(2):
            w = list(site_w)
            w[i] = site_w[i] * circle[:, a]
            mean[free[i], a] = contract(w) / z
    for x, v in fixed.items():
        mean[x] = v
    for i in range(m):
        for j in range(i, m):
            for a in range(2):
                for b in range(2):
                    w = list(site_w)
                    if i == j:
                        w[i] = site_w[i] * circle[:, a] * circle[:, b]
                    else:
                        w[i] = site_w[i] * circle[:, a]
                        w[j] = site_w[j] * circle[:, b]
                    val = contract(w) / z
                    second[free[i], free[j], a, b] = val
                    second[free[j], free[i], b, a] = val
    for x, v in fixed.items():
        for y in range(n_sites):
            if y in fixed:
                second[x, y] = np.outer(v, fixed[y])
            else:
                second[x, y] = np.outer(v, mean[y])
                second[y, x] = np.outer(mean[y], v)
    # spin-independent energy: boundary constant, frozen spins and free-frozen edge constants
    static = _static_field(alpha, params, geom)
    const = boundary_field(geom, params)[1]
    for a, b in e:
        a, b = int(a), int(b)
        if a in fixed and b in fixed:
            const += params.coupling * float(np.sum((fixed[a] - fixed[b]) ** 2))
        elif a in fixed or b in fixed:
            const += two_j
    for x, v in fixed.items():
        const -= float(static[x] @ v)
    shift = beta * sum(np.linalg.norm(h0[x]) for x in free)
    return OracleResult(math.log(z) + shift - beta * const, mean, second, free)
