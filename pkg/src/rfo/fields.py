"""Quenched disorder, spin configurations and model parameters.

Orientation convention used everywhere in the package: the random field
lives in the LAST ``k`` coordinates of R^n, the ordering subspace is the
first ``n - k`` coordinates. For the XY model in a uniaxial field (n=2, k=1)
the field points along e_2 and the ordered phases are near +e_1 and -e_1.

Spin configurations are plain float arrays of shape ``(n_sites, n)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .lattice import Box, LatticeGeometry

# stream tags for SeedSequence spawn keys
DISORDER_STREAM = 0
CHAIN_STREAM = 1
INIT_STREAM = 2

DISTRIBUTIONS = ("gaussian", "subgaussian")


def derive_rng(master: int, *key: int) -> np.random.Generator:
    """Counter-based stream: ``(master, *key)`` maps to an independent generator.

    The stream for a given key never depends on how many other keys were
    used, so realization ``i`` is reproducible on its own and across workers.
    """
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True, eq=False)
class DisorderField:
    """Per-site k-vectors ``alpha_x`` with their seed provenance."""

    values: np.ndarray = field(repr=False)
    master: int
    realization: int
    dist: str = "gaussian"
    bound: float = 6.0

    @property
    def k(self) -> int:
        return self.values.shape[1]

    def embedded(self, n: int) -> np.ndarray:
        """Field as ``(n_sites, n)`` vectors occupying the last k coordinates."""
        if self.k >= n:
            raise ValueError(f"field dimension k={self.k} must be < n={n}")
        out = np.zeros((self.values.shape[0], n))
        out[:, n - self.k :] = self.values
        return out


def sample_disorder(
    geom: LatticeGeometry,
    k: int,
    seed: tuple[int, int] = (0, 0),
    dist: str = "gaussian",
    bound: float = 6.0,
) -> DisorderField:
    """Draw i.i.d. k-dimensional field vectors, one per site.

    Values are filled row-major over (site, component) from the stream
    ``(master, DISORDER_STREAM, realization)``. The ``subgaussian`` option is
    a standard gaussian truncated symmetrically at ``bound`` (resampled).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if dist not in DISTRIBUTIONS:
        raise ValueError(f"unknown distribution {dist!r}; choose from {DISTRIBUTIONS}")
    master, realization = seed
    rng = derive_rng(master, DISORDER_STREAM, realization)
    vals = rng.standard_normal((geom.n_sites, k))
    if dist == "subgaussian":
        bad = np.abs(vals) > bound
        while bad.any():
            vals[bad] = rng.standard_normal(int(bad.sum()))
            bad = np.abs(vals) > bound
    vals.flags.writeable = False
    return DisorderField(vals, int(master), int(realization), dist, float(bound))


def disorder_from_values(values: np.ndarray, master: int = -1, realization: int = -1) -> DisorderField:
    """Wrap a hand-made field (tests, snapshots)."""
    vals = np.array(values, dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    vals.flags.writeable = False
    return DisorderField(vals, master, realization, "given")


def center_disorder(alpha: DisorderField | np.ndarray, box: Box | np.ndarray) -> np.ndarray:
    """Field on the box minus its box average; returns ``(box size, k)``."""
    vals = alpha.values if isinstance(alpha, DisorderField) else np.asarray(alpha, dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    sites = box.sites if isinstance(box, Box) else np.asarray(box)
    if len(sites) == 0:
        raise ValueError("empty box")
    sub = vals[sites]
    return sub - sub.mean(axis=0)


def normalize(spins: np.ndarray) -> np.ndarray:
    return spins / np.linalg.norm(spins, axis=1, keepdims=True)


def uniform_spins(n_sites: int, vector: Sequence[float]) -> np.ndarray:
    v = np.asarray(vector, dtype=float)
    return np.tile(v / np.linalg.norm(v), (n_sites, 1))


def random_spins(n_sites: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Independent uniform points on S^{n-1}."""
    return normalize(rng.standard_normal((n_sites, n)))


def reflect_spins(spins: np.ndarray, sites, k: int) -> np.ndarray:
    """Negate the ordering components (first n-k) on the given sites.

    For n=2, k=1 this is the reflection across the e_2 axis.
    """
    out = np.array(spins, dtype=float, copy=True)
    n = out.shape[1]
    idx = np.asarray(sites, dtype=np.int64) if not isinstance(sites, slice) else sites
    out[idx, : n - k] *= -1.0
    return out


@dataclass(frozen=True)
class BoundaryCondition:
    """Boundary term of the Hamiltonian.

    ``kind``:
      * ``"field"``: ``-strength * sum_{x in boundary} u . sigma_x`` with ``u = vector``.
      * ``"fixed"``: spins outside the lattice are frozen to ``vector`` (or to the
        padded configuration ``outside`` of shape ``(*[s+2 for s in shape], n)``)
        and coupled through the exchange term.
      * ``"free"``: nothing.
    """

    kind: str = "field"
    vector: tuple[float, ...] | None = None
    strength: float = 1.0
    outside: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("field", "fixed", "free"):
            raise ValueError(f"unknown boundary kind {self.kind!r}")


@dataclass(frozen=True)
class Scales:
    eps_d: float
    ell: int
    L: int
    gamma: float
    xi: float
    delta: float


def effective_eps(eps: float, d: int) -> float:
    """``eps * sqrt(|log eps|)`` in two dimensions, ``eps`` otherwise."""
    if eps <= 0:
        return 0.0
    if d == 2:
        return eps * math.sqrt(abs(math.log(eps)))
    return eps


def derive_scales(
    eps: float,
    d: int,
    gamma: float = 0.25,
    ell: int | None = None,
    L: int | None = None,
    xi: float = 0.3,
    delta: float | None = None,
) -> Scales:
    """Small box side ``ell``, contour box side ``L`` and the cutoffs.

    Defaults: ``ell = round(eps^-1 |log eps|^(-1/2-gamma))``;
    ``L ~ eps^-1 |log eps|^(-1/2+gamma)`` in d=2 and ``eps^-1 log^4 eps`` in
    d>=3, rounded up to a multiple of ``ell``. Overrides must respect
    ``ell < 1/eps_d < L``.
    """
    if not 0 < gamma < 0.5:
        raise ValueError("gamma must lie in (0, 1/2)")
    if not 0 < eps < 1:
        raise ValueError("scales need 0 < eps < 1")
    eps_d = effective_eps(eps, d)
    lg = abs(math.log(eps))
    overridden = ell is not None or L is not None
    if ell is None:
        ell = max(1, int(round(lg ** (-0.5 - gamma) / eps)))
    if L is None:
        raw = lg ** (-0.5 + gamma) / eps if d == 2 else lg**4 / eps
        L = ell * max(1, math.ceil(raw / ell))
    if L % ell:
        raise ValueError(f"L={L} must be a multiple of ell={ell}")
    if overridden and not (ell < 1.0 / eps_d < L):
        raise ValueError(f"need ell < 1/eps_d < L, got {ell}, {1 / eps_d:.4g}, {L}")
    if delta is None:
        delta = xi / 10.0
    return Scales(eps_d, int(ell), int(L), gamma, xi, delta)


@dataclass(frozen=True)
class ModelParams:
    """Parameters of the RFO(n;k) model.

    The Hamiltonian is ``H = J sum_<xy> |s_x - s_y|^2 - eps sum_x alpha_x . s_x
    + boundary term`` with Gibbs weight ``exp(-beta H)``. ``coupling`` is J;
    the second-order constants quoted for the spin-wave optimum and the
    renormalized Hamiltonian take their textbook form at ``J = 1/2``.
    """

    n: int = 2
    k: int = 1
    eps: float = 0.5
    beta: float = 1.0
    coupling: float = 1.0
    boundary: BoundaryCondition = field(default_factory=lambda: BoundaryCondition("field", None, 1.0))
    gamma: float = 0.25
    ell: int | None = None
    L: int | None = None
    xi: float = 0.3
    delta: float | None = None

    def __post_init__(self):
        if not 1 <= self.k < self.n:
            raise ValueError(f"need 1 <= k < n, got n={self.n}, k={self.k}")
        if self.eps < 0 or self.beta < 0 or self.coupling <= 0:
            raise ValueError("eps and beta must be >= 0 and coupling > 0")
        bc = self.boundary
        if bc.kind != "free" and bc.outside is None and bc.vector is None:
            # unspecified boundary direction: the ordered direction e_1
            bc = replace(bc, vector=(1.0,) + (0.0,) * (self.n - 1))
            object.__setattr__(self, "boundary", bc)
        if bc.kind != "free" and bc.outside is None:
            if len(bc.vector) != self.n:
                raise ValueError(f"boundary vector must have {self.n} components")

    def scales(self, d: int) -> Scales:
        return derive_scales(self.eps, d, self.gamma, self.ell, self.L, self.xi, self.delta)

    def with_(self, **changes) -> "ModelParams":
        return replace(self, **changes)
