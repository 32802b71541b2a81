"""Executable cross-checks against exact references: quadrature for tiny lattices, dense algebra for the Gaussian model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .elliptic import dense_laplacian, gaussian_model_covariance, sample_gaussian_covariance
from .energy import block_sites
from .fields import CHAIN_STREAM, ModelParams, derive_rng, sample_disorder
from .lattice import build_box_lattice, build_lattice
from .sampler import ChainConfig, quadrature_oracle, run_chain

ORACLE_OBSERVABLES = ("sigma_par", "m_par", "p_norm_sq")


@dataclass(frozen=True)
class OracleCell:
    shape: tuple[int, ...]
    beta: float
    eps: float
    seed: int
    observable: str
    estimate: float
    stderr: float
    exact: float

    @property
    def z(self) -> float:
        diff = abs(self.estimate - self.exact)
        if self.stderr == 0.0:
            return 0.0 if diff < 1e-12 else float("inf")
        return diff / self.stderr

    def ok(self, nsigma: float = 3.0) -> bool:
        return self.z <= nsigma


def oracle_check(
    shapes=((2, 2), (2, 3)),
    betas=(0.5, 2.0),
    epss=(0.0, 0.5),
    seeds=(0, 1),
    sweeps: int = 40_000,
    therm: int = 2_000,
    master: int = 0,
    points: int = 64,
    block_eps: float = 0.5,
) -> list[OracleCell]:
    """Metropolis means of ``s_0 . e1``, ``M_0 . e1`` and ``|P M_0|^2`` next to quadrature values.

    One fixed gaussian field per lattice (realization 0 of ``master``); each
    seed is an independent chain. The block observable uses radius
    ``1 / (2 block_eps)`` so it stays non-trivial at ``eps = 0``.
    """
    cells = []
    for shape in shapes:
        geom = build_box_lattice(shape)
        alpha = sample_disorder(geom, 1, seed=(master, 0))
        z = (0,) * geom.d
        sites = block_sites(geom, z, block_eps)
        scale = block_eps**geom.d
        zi = geom.index(z)
        for beta in betas:
            for eps in epss:
                params = ModelParams(eps=eps, beta=beta)
                ref = quadrature_oracle(geom, alpha, params, points)
                m_par, pn = ref.block(sites, scale)
                exact = {"sigma_par": float(ref.mean[zi, 0]), "m_par": m_par, "p_norm_sq": pn}
                chain = ChainConfig(therm_sweeps=therm, meas_sweeps=sweeps, observables=ORACLE_OBSERVABLES, block_eps=block_eps)
                for seed in seeds:
                    res = run_chain(geom, alpha, params, chain, derive_rng(master, CHAIN_STREAM, 0, int(seed)))
                    for name in ORACLE_OBSERVABLES:
                        cells.append(
                            OracleCell(tuple(shape), beta, eps, int(seed), name, res.mean[name], res.stderr[name], exact[name])
                        )
    return cells


@dataclass(frozen=True)
class GaussianComparison:
    eps: float
    entries: int
    outside: int
    max_z: float

    @property
    def fraction(self) -> float:
        return 1.0 - self.outside / self.entries


def gaussian_check(
    N: int = 8, eps_values=(0.0, 0.3), beta: float = 1.0, draws: int = 10_000, master: int = 0, nsigma: float = 3.0
) -> list[GaussianComparison]:
    """Sampled disorder average vs the exact covariance, over the unique (upper-triangle) entries."""
    geom = build_lattice(2, N)
    iu = np.triu_indices(geom.n_sites)
    out = []
    for i, eps in enumerate(eps_values):
        exact = gaussian_model_covariance(geom, eps, beta)
        s = sample_gaussian_covariance(geom, eps, beta, draws, derive_rng(master, 9, i))
        diff = np.abs(s.mean - exact)[iu]
        se = s.stderr[iu]
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(se > 0, diff / se, np.where(diff < 1e-12, 0.0, np.inf))
        out.append(GaussianComparison(float(eps), len(z), int(np.sum(z > nsigma)), float(z.max())))
    return out


@dataclass(frozen=True)
class GradientVariance:
    N: int
    exact: float
    sampled: float
    stderr: float


def gradient_variance_growth(
    Ns=(8, 16, 32), eps: float = 0.3, draws: int = 10_000, master: int = 0, batch: int = 1000
) -> list[GradientVariance]:
    """Disorder variance of the mean-field gradient ``m_x - m_y`` across the central bond.

    ``m = (eps / 2) (-Delta)^-1 alpha`` with Dirichlet boundary (J = 1); the
    exact value is the same bond read off ``(eps/2)^2 G^2``.
    """
    out = []
    c = eps / 2.0
    for i, N in enumerate(Ns):
        geom = build_lattice(2, N)
        x, y = geom.index((0, 0)), geom.index((1, 0))
        G = np.linalg.inv(dense_laplacian(geom, "dirichlet"))
        G2 = G @ G
        exact = c * c * float(G2[x, x] + G2[y, y] - 2.0 * G2[x, y])
        row = c * (G[x] - G[y])
        rng = derive_rng(master, 10, i)
        vals = []
        done = 0
        while done < draws:
            b = min(batch, draws - done)
            vals.append(row @ rng.standard_normal((geom.n_sites, b)))
            done += b
        g = np.concatenate(vals)
        sq = g * g
        out.append(GradientVariance(N, exact, float(sq.mean()), float(sq.std(ddof=1) / np.sqrt(draws))))
    return out
