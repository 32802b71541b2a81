"""Finite hypercubic lattices, boxes on several scales, and connected regions.

Sites are indexed row-major over array coordinates ``0..s-1`` on each axis.
The physical coordinate of array index ``i`` along an axis of length ``s`` is
``i - s // 2``, so a cube of side ``N`` covers ``{-N/2, ..., N/2 - 1}^d`` and
the origin sits at array index ``N/2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.ndimage import distance_transform_cdt
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components as _cc


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class LatticeGeometry:
    """Immutable nearest-neighbour geometry of a rectangular box in Z^d.

    Attributes:
        shape: side length along each axis.
        periodic: wrap-around neighbours (off by default).
        neighbors: ``(n_sites, 2d)`` neighbour table, ``-1`` for a missing
            neighbour. Column ``2a`` is the ``+e_a`` neighbour, ``2a + 1``
            the ``-e_a`` neighbour.
        edges: ``(n_edges, 2)`` unordered nearest-neighbour pairs, each once.
        boundary: boolean mask of sites with fewer than ``2d`` neighbours.
    """

    shape: tuple[int, ...]
    periodic: bool
    neighbors: np.ndarray = field(repr=False)
    edges: np.ndarray = field(repr=False)
    boundary: np.ndarray = field(repr=False)

    @property
    def d(self) -> int:
        return len(self.shape)

    @property
    def N(self) -> int:
        if len(set(self.shape)) != 1:
            raise AttributeError("N is only defined for cubic lattices")
        return self.shape[0]

    @property
    def n_sites(self) -> int:
        return int(np.prod(self.shape))

    @property
    def origin_offset(self) -> np.ndarray:
        return np.array([s // 2 for s in self.shape])

    def coords(self) -> np.ndarray:
        """Physical coordinates of every site, shape ``(n_sites, d)``."""
        grid = np.indices(self.shape).reshape(self.d, -1).T
        return grid - self.origin_offset

    def index(self, coord: Sequence[int]) -> int:
        """Site index of a physical coordinate."""
        arr = np.asarray(coord) + self.origin_offset
        if np.any(arr < 0) or np.any(arr >= np.asarray(self.shape)):
            raise IndexError(f"coordinate {tuple(coord)} outside the lattice")
        return int(np.ravel_multi_index(tuple(arr), self.shape))

    def degree(self) -> np.ndarray:
        return (self.neighbors >= 0).sum(axis=1)

    def boundary_sites(self) -> np.ndarray:
        return np.flatnonzero(self.boundary)


def _build(shape: tuple[int, ...], periodic: bool) -> LatticeGeometry:
    d = len(shape)
    n_sites = int(np.prod(shape))
    grid = np.indices(shape).reshape(d, -1).T
    nbr = np.full((n_sites, 2 * d), -1, dtype=np.int64)
    edges = []
    for a, s in enumerate(shape):
        for col, step in ((2 * a, 1), (2 * a + 1, -1)):
            target = grid[:, a] + step
            if periodic:
                ok = np.ones(n_sites, dtype=bool)
                target = target % s
            else:
                ok = (target >= 0) & (target < s)
            moved = grid.copy()
            moved[:, a] = target
            tidx = np.full(n_sites, -1, dtype=np.int64)
            tidx[ok] = np.ravel_multi_index(tuple(moved[ok].T), shape)
            # periodic axes of length <= 2 would double-count edges; drop self loops
            tidx[tidx == np.arange(n_sites)] = -1
            nbr[:, col] = tidx
        plus = nbr[:, 2 * a]
        src = np.flatnonzero(plus >= 0)
        pairs = np.stack([src, plus[src]], axis=1)
        edges.append(pairs)
    edges = np.concatenate(edges) if edges else np.empty((0, 2), dtype=np.int64)
    # periodic length-2 axes: +e and -e reach the same site, keep one copy
    edges = np.unique(np.sort(edges, axis=1), axis=0)
    boundary = np.zeros(n_sites, dtype=bool)
    if not periodic:
        for a, s in enumerate(shape):
            boundary |= (grid[:, a] == 0) | (grid[:, a] == s - 1)
    return LatticeGeometry(
        shape=tuple(int(s) for s in shape),
        periodic=periodic,
        neighbors=_readonly(nbr),
        edges=_readonly(edges.astype(np.int64)),
        boundary=_readonly(boundary),
    )


def build_lattice(d: int, N: int, periodic: bool = False) -> LatticeGeometry:
    """The cube ``Lambda_N = {-N/2, ..., N/2-1}^d`` with open boundary."""
    if int(d) != d or d < 2:
        raise ValueError(f"dimension must be an integer >= 2, got {d}")
    if int(N) != N or N < 2 or N % 2:
        raise ValueError(f"side length must be an even integer >= 2, got {N}")
    return _build((int(N),) * int(d), periodic)


def build_box_lattice(shape: Sequence[int], periodic: bool = False) -> LatticeGeometry:
    """Rectangular lattice of arbitrary side lengths (used for tiny oracle systems)."""
    shape = tuple(int(s) for s in shape)
    if len(shape) < 1 or min(shape) < 1:
        raise ValueError(f"invalid shape {shape}")
    return _build(shape, periodic)


@dataclass(frozen=True, eq=False)
class Box:
    """An axis-aligned box clipped to the lattice.

    ``anchor`` and ``side`` describe the unclipped box
    ``anchor + {0, ..., side-1}^d``; ``lower``/``upper`` are the inclusive
    physical bounds after clipping and ``sites`` the contained site indices.
    """

    anchor: tuple[int, ...]
    side: int
    lower: tuple[int, ...]
    upper: tuple[int, ...]
    sites: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.sites)

    def linf_distance(self, other: "Box") -> int:
        """Chebyshev distance between the two clipped site sets."""
        gaps = [
            max(0, lo_b - hi_a, lo_a - hi_b)
            for lo_a, hi_a, lo_b, hi_b in zip(self.lower, self.upper, other.lower, other.upper)
        ]
        return max(gaps)


def _box_sites(geom: LatticeGeometry, lower, upper) -> np.ndarray:
    off = geom.origin_offset
    ranges = [np.arange(lo + o, hi + o + 1) for lo, hi, o in zip(lower, upper, off)]
    mesh = np.meshgrid(*ranges, indexing="ij")
    return np.sort(np.ravel_multi_index(tuple(m.ravel() for m in mesh), geom.shape))


def make_box(geom: LatticeGeometry, anchor: Sequence[int], side: int) -> Box:
    lo_lat = -geom.origin_offset
    hi_lat = np.asarray(geom.shape) - geom.origin_offset - 1
    lower = tuple(int(max(a, lo)) for a, lo in zip(anchor, lo_lat))
    upper = tuple(int(min(a + side - 1, hi)) for a, hi in zip(anchor, hi_lat))
    if any(lo > hi for lo, hi in zip(lower, upper)):
        raise ValueError(f"box at {tuple(anchor)} with side {side} misses the lattice")
    return Box(tuple(int(a) for a in anchor), int(side), lower, upper, _box_sites(geom, lower, upper))


def tile_boxes(geom: LatticeGeometry, side: int, offset: Sequence[int] | None = None) -> list[Box]:
    """Partition the lattice into boxes of the given side.

    Anchors lie on ``offset + side * Z^d`` where ``offset`` is measured in
    array coordinates, i.e. from the lattice corner (default: the corner
    itself). Boxes that stick out of the lattice are clipped, not dropped,
    so the result is always an exact partition.
    """
    if side < 1 or side > max(geom.shape):
        raise ValueError(f"box side must lie in [1, {max(geom.shape)}], got {side}")
    if offset is None:
        offset = (0,) * geom.d
    per_axis = []
    for a, s in enumerate(geom.shape):
        first = offset[a] - side * int(np.ceil(offset[a] / side))
        per_axis.append([v - s // 2 for v in range(first, s, side)])
    boxes = []
    for anchor in np.array(np.meshgrid(*per_axis, indexing="ij")).reshape(geom.d, -1).T:
        boxes.append(make_box(geom, tuple(int(v) for v in anchor), side))
    return boxes


@dataclass(frozen=True, eq=False)
class Region:
    """A set of sites with its internal edges and outer vertex boundary."""

    sites: np.ndarray = field(repr=False)
    connected: bool
    internal_edges: np.ndarray = field(repr=False)
    external_boundary: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.sites)

    def mask(self, n_sites: int) -> np.ndarray:
        m = np.zeros(n_sites, dtype=bool)
        m[self.sites] = True
        return m


def site_mask(geom: LatticeGeometry, sites: Iterable[int]) -> np.ndarray:
    m = np.zeros(geom.n_sites, dtype=bool)
    m[np.asarray(list(sites) if not isinstance(sites, np.ndarray) else sites, dtype=np.int64)] = True
    return m


def _components_of_mask(geom: LatticeGeometry, mask: np.ndarray) -> tuple[int, np.ndarray]:
    e = geom.edges
    keep = mask[e[:, 0]] & mask[e[:, 1]]
    e = e[keep]
    n = geom.n_sites
    adj = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
    ncomp, labels = _cc(adj, directed=False)
    return ncomp, labels


def make_region(geom: LatticeGeometry, sites: Iterable[int]) -> Region:
    mask = site_mask(geom, sites)
    idx = np.flatnonzero(mask)
    e = geom.edges
    internal = e[mask[e[:, 0]] & mask[e[:, 1]]]
    nb = geom.neighbors[idx].ravel()
    nb = nb[nb >= 0]
    ext = np.unique(nb[~mask[nb]])
    if len(idx) == 0:
        connected = False
    else:
        _, labels = _components_of_mask(geom, mask)
        connected = len(np.unique(labels[idx])) == 1
    return Region(idx, connected, internal, ext)


def connected_components(geom: LatticeGeometry, sites: Iterable[int]) -> list[Region]:
    """Split a site set into maximal nearest-neighbour connected regions.

    Regions come back ordered by their smallest site index.
    """
    mask = site_mask(geom, sites)
    idx = np.flatnonzero(mask)
    if len(idx) == 0:
        return []
    _, labels = _components_of_mask(geom, mask)
    comp = labels[idx]
    groups: dict[int, list[int]] = {}
    for s, c in zip(idx, comp):
        groups.setdefault(int(c), []).append(int(s))
    regions = [make_region(geom, g) for g in groups.values()]
    regions.sort(key=lambda r: int(r.sites[0]))
    return regions


def linf_distance_to_set(geom: LatticeGeometry, target: np.ndarray) -> np.ndarray:
    """Chebyshev distance from every site to a site set (``inf`` if the set is empty)."""
    target = np.asarray(target, dtype=np.int64)
    if len(target) == 0:
        return np.full(geom.n_sites, np.inf)
    free = np.ones(geom.n_sites, dtype=bool)
    free[target] = False
    dist = distance_transform_cdt(free.reshape(geom.shape), metric="chessboard")
    return dist.ravel().astype(float)
