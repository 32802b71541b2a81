"""Bad boxes, contours, boundary layers and the reflection surgery.

The machinery is angle based and therefore restricted to XY spins in a
uniaxial field (n = 2, k = 1), with the ordered phases near ``+e1`` and
``-e1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .elliptic import massive_green_field
from .energy import dirichlet_energy, total_energy
from .fields import ModelParams, Scales, reflect_spins
from .lattice import Box, LatticeGeometry, connected_components, linf_distance_to_set, tile_boxes
from .renorm import (
    RenormalizedProblem,
    change_of_variables,
    from_angles,
    invert_change_of_variables,
    renormalized_mass,
    to_angles,
)

DIRICHLET_EXCESS = "dirichlet-excess"
ANGLE_DEVIATION = "angle-deviation"


@dataclass(frozen=True)
class BoxReport:
    """Classification of one ell-box. ``reason`` is None for a good box."""

    box: Box
    reason: str | None
    energy: float
    threshold: float
    psi: float
    angle_distance: float

    @property
    def bad(self) -> bool:
        return self.reason is not None


def _scales(params, d: int) -> Scales:
    return params.scales(d) if isinstance(params, ModelParams) else params


def _check_xy(spins):
    if spins.ndim != 2 or spins.shape[1] != 2:
        raise ValueError("contour analysis needs n = 2 spins")


def classify_boxes(
    spins: np.ndarray, geom: LatticeGeometry, params, factor: float = 1.0, offset=None
) -> list[BoxReport]:
    """Classify every box of the ell-tiling.

    A box is bad by Dirichlet excess when ``E_Q > factor * 4 eps_d^2 |Q|``;
    otherwise it is bad when the circular-mean angle ``psi`` of its spins is
    farther than ``xi`` from both 0 and pi. A block mean of norm below 1e-9
    has no angle and counts as an angle deviation with ``psi = nan``.
    """
    _check_xy(spins)
    sc = _scales(params, geom.d)
    reports = []
    for box in tile_boxes(geom, sc.ell, offset):
        E = dirichlet_energy(spins, geom, box.sites)
        thr = factor * 4.0 * sc.eps_d**2 * box.size
        mean = spins[box.sites].mean(axis=0)
        if np.hypot(mean[0], mean[1]) < 1e-9:
            psi, dist = math.nan, math.nan
        else:
            psi = math.atan2(mean[1], mean[0])
            dist = min(abs(psi), math.pi - abs(psi))
        if E > thr:
            reason = DIRICHLET_EXCESS
        elif math.isnan(psi) or dist > sc.xi:
            reason = ANGLE_DEVIATION
        else:
            reason = None
        reports.append(BoxReport(box, reason, E, thr, psi, dist))
    reports.sort(key=lambda r: r.box.anchor)
    return reports


def detect_bad_boxes(spins: np.ndarray, geom: LatticeGeometry, params, factor: float = 1.0, offset=None) -> list[BoxReport]:
    """The bad ell-boxes of ``spins``, ordered by anchor."""
    return [r for r in classify_boxes(spins, geom, params, factor, offset) if r.bad]


@dataclass(eq=False)
class Layer:
    """Boundary layer around a contour, split into connected components.

    ``signs[i]`` is the sign of ``s . e1`` on the tested sites of component i
    and ``outer[i]`` marks the components facing the lattice exterior.
    """

    sites: np.ndarray = field(repr=False)
    components: list = field(repr=False)
    signs: list[int]
    outer: list[bool]
    thickness: int
    attempts: int


@dataclass(eq=False)
class Contour:
    boxes: list[Box] = field(repr=False)
    sites: np.ndarray = field(repr=False)
    label: str = "undetermined"
    layer: Layer | None = None
    failure: str | None = None


@dataclass(eq=False)
class ContourSet:
    contours: list[Contour]
    bad: list[BoxReport] = field(repr=False)
    scales: Scales

    def __len__(self) -> int:
        return len(self.contours)


def build_contours(bad: list[BoxReport], geom: LatticeGeometry, params, offset=None) -> ContourSet:
    """Group the L-boxes with a bad ell-box within sup-distance 3L/2 into contours.

    Flagged L-boxes are merged into maximal nearest-neighbour connected
    unions; contours come back ordered by their smallest site.
    """
    sc = _scales(params, geom.d)
    if sc.L % sc.ell:
        raise ValueError("L must be a multiple of ell")
    bad = [r for r in bad if r.bad]
    if not bad:
        return ContourSet([], bad, sc)
    bad_sites = np.concatenate([r.box.sites for r in bad])
    dist = linf_distance_to_set(geom, bad_sites)
    reach = 1.5 * sc.L
    flagged = [b for b in tile_boxes(geom, sc.L, offset) if dist[b.sites].min() <= reach]
    owner = np.full(geom.n_sites, -1, dtype=np.int64)
    for i, b in enumerate(flagged):
        owner[b.sites] = i
    contours = []
    for region in connected_components(geom, np.concatenate([b.sites for b in flagged])):
        members = sorted(set(owner[region.sites].tolist()))
        contours.append(Contour([flagged[i] for i in members], region.sites))
    return ContourSet(contours, bad, sc)


def _exterior_mask(geom: LatticeGeometry, covered: np.ndarray) -> np.ndarray:
    """The largest component of the uncovered sites (ties: smallest site), standing in for infinity."""
    comps = connected_components(geom, np.flatnonzero(~covered))
    ext = np.zeros(geom.n_sites, dtype=bool)
    if comps:
        ext[max(comps, key=lambda r: (r.size, -int(r.sites[0]))).sites] = True
    return ext


def _adjacent(geom: LatticeGeometry, mask: np.ndarray) -> np.ndarray:
    """Sites with at least one neighbour in ``mask``."""
    out = np.zeros(geom.n_sites, dtype=bool)
    for c in range(geom.neighbors.shape[1]):
        y = geom.neighbors[:, c]
        ok = y >= 0
        out[ok] |= mask[y[ok]]
    return out


def find_layer(spins: np.ndarray, contour: Contour, geom: LatticeGeometry, params, attempts: int = 5) -> Contour:
    """Find a layer of thickness ``j L`` around the contour, j = 1..attempts.

    The layer is ``{x not in Gamma : dist(x, Gamma) <= j L}``. It is accepted
    when, on each of its connected components, the tested sites satisfy
    ``|s . e1| > 1/2`` with one common sign. Tested sites are those adjacent
    to the rest of the lattice or on the lattice boundary; a component
    enclosed by the contour with no such sites is tested on all its sites.
    The outer components are those adjacent to the largest component of
    the rest of the lattice (or, if nothing is left, those on the lattice
    boundary); the label is their common sign. On failure the contour
    carries a failure message and label ``undetermined``.
    """
    _check_xy(spins)
    sc = _scales(params, geom.d)
    gamma = np.zeros(geom.n_sites, dtype=bool)
    gamma[contour.sites] = True
    dist = linf_distance_to_set(geom, contour.sites)
    reason = "empty contour"
    for j in range(1, attempts + 1):
        t = j * sc.L
        layer = (~gamma) & (dist <= t)
        covered = layer | gamma
        if not layer.any():
            reason = "layer covers no sites"
            break
        edge = _adjacent(geom, ~covered) | geom.boundary
        ext = _exterior_mask(geom, covered)
        near_ext = _adjacent(geom, ext) if ext.any() else geom.boundary.copy()
        comps = connected_components(geom, np.flatnonzero(layer))
        signs, outer, good = [], [], True
        for comp in comps:
            test = comp.sites[edge[comp.sites]]
            if len(test) == 0:
                test = comp.sites
            proj = spins[test, 0]
            if np.any(np.abs(proj) <= 0.5) or not (np.all(proj > 0) or np.all(proj < 0)):
                good = False
                break
            signs.append(1 if proj[0] > 0 else -1)
            outer.append(bool(near_ext[comp.sites].any()))
        if not good:
            reason = f"layer conditions fail up to thickness {t}"
            continue
        outer_signs = {s for s, o in zip(signs, outer) if o}
        if len(outer_signs) != 1:
            reason = "outer layer components disagree in sign" if outer_signs else "no outer layer component"
            continue
        contour.layer = Layer(np.flatnonzero(layer), comps, signs, outer, t, j)
        contour.label = "+" if outer_signs.pop() > 0 else "-"
        contour.failure = None
        return contour
    contour.layer = None
    contour.label = "undetermined"
    contour.failure = reason
    return contour


@dataclass
class SurgeryRecord:
    energy_before: float
    energy_after: float
    gap: float
    region_size: int
    near_axis_fraction: float
    reflected_components: int
    converged: bool
    failure: str | None = None


@dataclass(eq=False)
class SurgeryResult:
    spins: np.ndarray = field(repr=False)
    record: SurgeryRecord
    region: np.ndarray = field(repr=False)


def _optimize_k(theta, alpha, geom, sites, params, sc, free):
    """Maximise K on ``sites``; returns the spins there and a convergence flag."""
    gp = massive_green_field(geom, sites, alpha, sc.ell)[:, 0]
    m2 = renormalized_mass(geom, sites, gp, params.eps, params.coupling)
    prob = RenormalizedProblem(geom, sites, m2, None if free else theta, params.coupling, free=free)
    start = np.zeros(len(prob.sites)) if free else change_of_variables(theta[prob.sites], gp, params.eps, params.coupling)
    phi, ok, _ = prob.maximize(start)
    th = invert_change_of_variables(phi, gp, params.eps, params.coupling)
    return prob.sites, from_angles(th), ok


def surgery(spins: np.ndarray, contour: Contour, alpha, params: ModelParams, geom: LatticeGeometry) -> SurgeryResult:
    """Build the comparison configuration for one contour and account for the energy gap.

    Steps: re-optimise ``K`` on each layer component with the current spins
    as boundary; optimise ``K`` with free boundary on the deep region ``A``
    of Gamma and the layer (sup-distance > L/2 from the rest); reflect the
    interior components of the complement of ``A`` so that their layer parts
    carry the contour's sign; paste the ``A`` optimum (reflected if needed).
    ``gap = H(s) - H(s~)``. Failures are flagged in the record, which keeps
    whatever was computed.
    """
    _check_xy(spins)
    if contour.layer is None or contour.label == "undetermined":
        raise ValueError("surgery needs a contour with a layer and a sign label")
    sc = params.scales(geom.d)
    target = 1 if contour.label == "+" else -1
    h_before = total_energy(spins, alpha, params, geom).total
    record = SurgeryRecord(h_before, h_before, 0.0, 0, 1.0, 0, True)
    out = np.array(spins, dtype=float, copy=True)
    if len(contour.sites) == 0:
        return SurgeryResult(out, record, np.zeros(0, dtype=np.int64))
    try:
        # layer components re-optimised with everything else frozen
        for comp in contour.layer.components:
            sites, s, ok = _optimize_k(to_angles(out), alpha, geom, comp.sites, params, sc, free=False)
            out[sites] = s
            record.converged &= ok
        covered = np.zeros(geom.n_sites, dtype=bool)
        covered[contour.sites] = True
        covered[contour.layer.sites] = True
        dist = linf_distance_to_set(geom, np.flatnonzero(~covered))
        region = np.flatnonzero(covered & (dist > 0.5 * sc.L))
        record.region_size = len(region)
        if len(region):
            sites, eta, ok = _optimize_k(to_angles(out), alpha, geom, region, params, sc, free=True)
            record.converged &= ok
        else:
            eta = np.zeros((0, 2))
        in_region = np.zeros(geom.n_sites, dtype=bool)
        in_region[region] = True
        layer_mask = np.zeros(geom.n_sites, dtype=bool)
        layer_mask[contour.layer.sites] = True
        comps = connected_components(geom, np.flatnonzero(~in_region))
        ext = _exterior_mask(geom, covered)
        touching = [bool(ext[c.sites].any()) for c in comps]
        if comps and not any(touching):
            touching[max(range(len(comps)), key=lambda i: comps[i].size)] = True
        for comp, external in zip(comps, touching):
            if external:
                continue
            part = comp.sites[layer_mask[comp.sites]]
            probe = part if len(part) else comp.sites
            if np.sign(out[probe, 0].sum()) == -target:
                out = reflect_spins(out, comp.sites, 1)
                record.reflected_components += 1
        if len(region):
            if np.sign(eta[:, 0].sum()) == -target:
                eta = eta.copy()
                eta[:, 0] *= -1.0
            out[region] = eta
            th = to_angles(eta)
            near = np.minimum(np.abs(th), np.pi - np.abs(th)) <= sc.delta
            record.near_axis_fraction = float(near.mean())
    except (ValueError, RuntimeError) as exc:
        record.converged = False
        record.failure = str(exc)
        return SurgeryResult(out, record, np.zeros(0, dtype=np.int64))
    h_after = total_energy(out, alpha, params, geom).total
    record.energy_after = h_after
    record.gap = h_before - h_after
    if not record.converged:
        record.failure = "optimizer did not converge"
    return SurgeryResult(out, record, region)


def contour_analysis(spins: np.ndarray, geom: LatticeGeometry, params, factor: float = 1.0) -> ContourSet:
    """Bad boxes, contours and their layers for one configuration."""
    bad = detect_bad_boxes(spins, geom, params, factor)
    cs = build_contours(bad, geom, params)
    for c in cs.contours:
        find_layer(spins, c, geom, params)
    return cs


def bad_box_density(spins: np.ndarray, geom: LatticeGeometry, params, factor: float = 1.0) -> float:
    reports = classify_boxes(spins, geom, params, factor)
    return sum(r.bad for r in reports) / len(reports)


def contour_count(spins: np.ndarray, geom: LatticeGeometry, params, factor: float = 1.0) -> int:
    return len(build_contours(detect_bad_boxes(spins, geom, params, factor), geom, params))


def contour_report(cs: ContourSet, surgeries: list[SurgeryResult] | None = None) -> dict:
    """JSON-ready summary: bad boxes, contour boxes and labels, surgery gaps."""
    out = {
        "scales": {"eps_d": cs.scales.eps_d, "ell": cs.scales.ell, "L": cs.scales.L, "xi": cs.scales.xi, "delta": cs.scales.delta},
        "bad_boxes": [
            {"anchor": list(r.box.anchor), "reason": r.reason, "energy": r.energy, "threshold": r.threshold,
             "psi": None if math.isnan(r.psi) else r.psi}
            for r in cs.bad
        ],
        "contours": [],
    }
    for i, c in enumerate(cs.contours):
        entry = {
            "boxes": [list(b.anchor) for b in c.boxes],
            "size": int(len(c.sites)),
            "label": c.label,
            "failure": c.failure,
            "layer_thickness": c.layer.thickness if c.layer else None,
        }
        if surgeries is not None and surgeries[i] is not None:
            r = surgeries[i].record
            entry["surgery"] = {
                "energy_before": r.energy_before, "energy_after": r.energy_after, "gap": r.gap,
                "region_size": r.region_size, "near_axis_fraction": r.near_axis_fraction,
                "reflected_components": r.reflected_components, "converged": r.converged, "failure": r.failure,
            }
        out["contours"].append(entry)
    return out
