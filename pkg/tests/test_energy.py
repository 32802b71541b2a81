import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import special_ortho_group

from rfo.energy import (
    block_magnetization,
    dirichlet_energy,
    energy_gradient,
    local_energy_delta,
    projected_block_norm_sq,
    region_hamiltonian,
    total_energy,
)
from rfo.fields import BoundaryCondition, ModelParams, derive_rng, random_spins, reflect_spins, sample_disorder
from rfo.lattice import build_box_lattice, build_lattice, make_box


def naive_energy(spins, alpha_emb, geom, eps, J, bc):
    """Site-by-site summation written without the vectorized edge list."""
    coords = [tuple(c) for c in geom.coords()]
    pos = {c: i for i, c in enumerate(coords)}
    lower = geom.coords().min(axis=0)
    upper = geom.coords().max(axis=0)
    H = 0.0
    for c, i in pos.items():
        for a in range(geom.d):
            for step in (1, -1):
                nb = list(c)
                nb[a] += step
                nb = tuple(nb)
                if nb in pos:
                    if step == 1:
                        H += J * float(np.sum((spins[i] - spins[pos[nb]]) ** 2))
                elif bc.kind == "fixed":
                    v = np.asarray(bc.vector)
                    H += J * float(np.sum((spins[i] - v) ** 2))
        H -= eps * float(alpha_emb[i] @ spins[i])
        on_face = any(c[a] in (lower[a], upper[a]) for a in range(geom.d))
        if bc.kind == "field" and on_face:
            H -= bc.strength * float(np.dot(bc.vector, spins[i]))
    return H


def instance(seed, shape=(3, 3), n=3, k=1, eps=0.7, bc=None, J=1.0):
    geom = build_box_lattice(shape)
    rng = derive_rng(seed, 0)
    spins = random_spins(geom.n_sites, n, rng)
    alpha = sample_disorder(geom, k, seed=(seed, 1))
    if bc is None:
        bc = BoundaryCondition("field", tuple(np.eye(n)[0]), 0.8)
    params = ModelParams(n=n, k=k, eps=eps, coupling=J, boundary=bc)
    return geom, spins, alpha, params


BCS = [
    BoundaryCondition("free"),
    BoundaryCondition("field", (1.0, 0.0, 0.0), 0.8),
    BoundaryCondition("fixed", (0.0, 0.6, 0.8)),
]


def test_trivial_examples():
    g = build_lattice(2, 2)
    e1 = np.tile([1.0, 0.0], (4, 1))
    free = ModelParams(eps=0.0, boundary=BoundaryCondition("free"))
    alpha = np.zeros(4)
    assert total_energy(e1, alpha, free, g).total == 0.0
    sign = np.where(g.coords().sum(axis=1) % 2 == 0, 1.0, -1.0)
    checker = sign[:, None] * e1
    assert total_energy(checker, alpha, free, g).exchange == 16.0
    assert dirichlet_energy(checker, g, np.arange(4)) == 16.0


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("bc", BCS, ids=lambda b: b.kind)
@pytest.mark.parametrize("J", [1.0, 0.5])
def test_total_matches_naive_sum(seed, bc, J):
    geom, spins, alpha, params = instance(seed, bc=bc, J=J)
    got = total_energy(spins, alpha, params, geom)
    ref = naive_energy(spins, alpha.embedded(3), geom, params.eps, J, bc)
    assert got.total == pytest.approx(ref, rel=1e-12, abs=1e-12)
    assert got.total == pytest.approx(got.exchange + got.field + got.boundary, rel=1e-10)


def test_rejects_shape_mismatch():
    geom, spins, alpha, params = instance(0)
    with pytest.raises(ValueError):
        total_energy(spins[:, :2], alpha, params, geom)


@pytest.mark.parametrize("bc", BCS, ids=lambda b: b.kind)
def test_local_delta_matches_recompute(bc):
    geom, spins, alpha, params = instance(3, shape=(4, 5), bc=bc)
    rng = derive_rng(3, 5)
    base = total_energy(spins, alpha, params, geom).total
    for site in range(geom.n_sites):
        new = random_spins(1, 3, rng)[0]
        trial = spins.copy()
        trial[site] = new
        want = total_energy(trial, alpha, params, geom).total - base
        assert local_energy_delta(spins, site, new, alpha, params, geom) == pytest.approx(want, abs=1e-10)
        assert local_energy_delta(spins, site, spins[site], alpha, params, geom) == 0.0


@pytest.mark.parametrize("d", [2, 3])
def test_interior_flip(d):
    g = build_lattice(d, 4)
    s = np.tile([1.0, 0.0], (g.n_sites, 1))
    p = ModelParams(eps=0.0, boundary=BoundaryCondition("free"))
    x = g.index((0,) * d)
    assert local_energy_delta(s, x, -s[x], np.zeros(g.n_sites), p, g) == pytest.approx(8 * d)


def test_sequential_deltas_track_total():
    g = build_lattice(2, 32)
    rng = derive_rng(4, 0)
    s = random_spins(g.n_sites, 2, rng)
    alpha = sample_disorder(g, 1, seed=(4, 0))
    p = ModelParams(eps=0.5, boundary=BoundaryCondition("field", (1.0, 0.0)))
    start = total_energy(s, alpha, p, g).total
    acc = 0.0
    for x in range(g.n_sites):
        new = random_spins(1, 2, rng)[0]
        acc += local_energy_delta(s, x, new, alpha, p, g)
        s[x] = new
    assert abs(total_energy(s, alpha, p, g).total - start - acc) < 1e-8


def test_dirichlet_is_free_exchange_on_region():
    geom, spins, alpha, _ = instance(1, shape=(6, 6))
    box = make_box(geom, (-3, -3), 4)
    sub = build_box_lattice((4, 4))
    inner = spins[box.sites]
    free = ModelParams(n=3, eps=0.0, boundary=BoundaryCondition("free"))
    assert dirichlet_energy(spins, geom, box.sites) == pytest.approx(
        total_energy(inner, np.zeros((16, 1)), free, sub).exchange, rel=1e-12
    )
    assert dirichlet_energy(np.tile([0, 0, 1.0], (36, 1)), geom, box.sites) == 0.0
    with pytest.raises(ValueError):
        dirichlet_energy(spins, geom, [])


def test_region_hamiltonian_whole_lattice():
    geom, spins, alpha, params = instance(2, shape=(5, 5), bc=BoundaryCondition("free"))
    full = total_energy(spins, alpha, params, geom).total
    assert region_hamiltonian(spins, alpha, geom, np.arange(25), params.eps) == pytest.approx(full, rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_rotation_invariance(seed):
    n = 3
    geom, spins, alpha, _ = instance(seed, shape=(3, 4), n=n, k=2)
    Q = special_ortho_group.rvs(n, random_state=seed)
    u = np.array([0.3, -0.2, 0.9])
    a = alpha.embedded(n)
    p = ModelParams(n=n, k=2, eps=0.6, boundary=BoundaryCondition("field", tuple(u)))
    pq = ModelParams(n=n, k=2, eps=0.6, boundary=BoundaryCondition("field", tuple(Q @ u)))
    e0 = total_energy(spins, a, p, geom).total
    e1 = total_energy(spins @ Q.T, a @ Q.T, pq, geom).total
    assert e1 == pytest.approx(e0, rel=1e-10, abs=1e-10)


@pytest.mark.parametrize("seed", range(4))
def test_z2_symmetry(seed):
    geom, spins, alpha, _ = instance(seed, shape=(4, 4), n=3, k=1)
    allsites = np.arange(geom.n_sites)
    r = reflect_spins(spins, allsites, 1)
    in_field = ModelParams(n=3, eps=0.5, boundary=BoundaryCondition("field", (0.0, 0.0, 1.0)))
    assert total_energy(r, alpha, in_field, geom).total == pytest.approx(total_energy(spins, alpha, in_field, geom).total)
    u = np.array([0.6, 0.0, 0.8])
    general = ModelParams(n=3, eps=0.5, boundary=BoundaryCondition("field", tuple(u)))
    diff = total_energy(r, alpha, general, geom).total - total_energy(spins, alpha, general, geom).total
    pu = u * np.array([1.0, 1.0, 0.0])
    expect = 2.0 * float(np.sum(spins[geom.boundary] @ pu))
    assert diff == pytest.approx(expect, abs=1e-10)


def test_block_examples():
    g = build_lattice(2, 8)
    e1 = np.tile([1.0, 0.0], (g.n_sites, 1))
    assert np.allclose(block_magnetization(e1, g, (0, 0), 0.5), [1.25, 0.0])
    assert projected_block_norm_sq(e1, g, (0, 0), 0.5, 1) == 0.0
    e2 = np.tile([0.0, 1.0], (g.n_sites, 1))
    assert projected_block_norm_sq(e2, g, (0, 0), 0.5, 1) == pytest.approx(1.5625)
    s = random_spins(g.n_sites, 2, derive_rng(0, 3))
    x = g.index((1, -2))
    assert np.allclose(block_magnetization(s, g, (1, -2), 0.6), 0.36 * s[x])


@pytest.mark.parametrize("eps", [0.5, 0.2, 0.13, 0.08])
def test_block_matches_enumeration(eps):
    g = build_lattice(2, 16)
    s = random_spins(g.n_sites, 3, derive_rng(1, 2))
    z = (3, -5)
    r = 1 / (2 * eps)
    acc = np.zeros(3)
    for i, c in enumerate(g.coords()):
        if math.dist(c, z) <= r:
            acc += s[i]
    m = block_magnetization(s, g, z, eps)
    assert np.allclose(m, eps**2 * acc, atol=1e-12)
    pn = projected_block_norm_sq(s, g, z, eps, 2)
    assert pn == pytest.approx(float(m @ m - m[0] ** 2), abs=1e-12)


def geodesic_fd(spins, alpha, params, geom, step=1e-5):
    """Directional derivatives along random tangent directions, by central differences."""
    rng = derive_rng(99, 0)
    out = []
    for x in range(geom.n_sites):
        v = rng.standard_normal(spins.shape[1])
        v -= (v @ spins[x]) * spins[x]
        v /= np.linalg.norm(v)

        def at(t):
            s = spins.copy()
            s[x] = math.cos(t) * spins[x] + math.sin(t) * v
            return total_energy(s, alpha, params, geom).total

        out.append((x, v, (at(step) - at(-step)) / (2 * step)))
    return out


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("bc", BCS, ids=lambda b: b.kind)
def test_gradient_finite_differences(seed, bc):
    geom, spins, alpha, params = instance(seed, shape=(4, 4), bc=bc)
    g = energy_gradient(spins, alpha, params, geom)
    assert np.allclose(np.einsum("ij,ij->i", g, spins), 0.0, atol=1e-12)
    for x, v, fd in geodesic_fd(spins, alpha, params, geom):
        an = float(g[x] @ v)
        assert abs(an - fd) <= 1e-6 * max(1.0, abs(fd))


def test_gradient_zero_at_aligned_minimum():
    g = build_lattice(2, 6)
    s = np.tile([0.0, 1.0], (g.n_sites, 1))
    p = ModelParams(eps=0.0, boundary=BoundaryCondition("free"))
    assert np.all(energy_gradient(s, np.zeros(g.n_sites), p, g) == 0.0)


def test_gradient_stationarity_single_site():
    geom, spins, alpha, params = instance(0, shape=(3, 3))
    x = geom.index((0, 0))
    nb = [i for i in geom.neighbors[x] if i >= 0]
    h = 2 * spins[nb].sum(axis=0) + params.eps * alpha.embedded(3)[x]
    s = spins.copy()
    s[x] = h / np.linalg.norm(h)
    assert np.allclose(energy_gradient(s, alpha, params, geom)[x], 0.0, atol=1e-12)
    s[x] = -s[x]
    assert np.allclose(energy_gradient(s, alpha, params, geom)[x], 0.0, atol=1e-12)
    s[x] = np.cross(h, [1.0, 2.0, 3.0])
    s[x] /= np.linalg.norm(s[x])
    assert np.linalg.norm(energy_gradient(s, alpha, params, geom)[x]) > 1e-3


def test_lattice_sizes_consistent():
    for shape in itertools.product([2, 3], repeat=2):
        geom, spins, alpha, params = instance(0, shape=shape)
        assert total_energy(spins, alpha, params, geom).total == pytest.approx(
            naive_energy(spins, alpha.embedded(3), geom, params.eps, 1.0, params.boundary), rel=1e-12
        )
