"""Billiard map in boundary coordinates and finite-horizon certification."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import Escape, Tangency
from .geometry import TANGENCY_TOL, Disc, Shape, shapes_distance


@dataclass(frozen=True)
class PhasePoint:
    """Outgoing line element ``(r, phi)`` on the boundary of ``scatterer``."""

    scatterer: Shape
    r: float
    phi: float

    def __post_init__(self):
        if not 0.0 <= self.r < self.scatterer.perimeter:
            raise ValueError(f"r={self.r} outside [0, {self.scatterer.perimeter})")
        if not 0.0 < self.phi < math.pi:
            raise ValueError(f"phi={self.phi} outside (0, pi)")


class Ray(NamedTuple):
    origin: np.ndarray
    direction: np.ndarray


class Hit(NamedTuple):
    index: int
    shape: Shape
    point: np.ndarray
    distance: float


def boundary_point(shape: Shape, r: float):
    """Position, unit tangent, outward normal and curvature at arc length ``r``."""
    return shape.boundary_point(r)


def phase_to_ray(x: PhasePoint) -> Ray:
    bp = x.scatterer.boundary_point(x.r)
    v = math.cos(x.phi) * bp.tangent + math.sin(x.phi) * bp.normal
    return Ray(bp.position, v / math.hypot(v[0], v[1]))


def ray_to_phase(ray: Ray, shape: Shape) -> PhasePoint:
    r = shape.arc_coordinate(ray.origin)
    bp = shape.boundary_point(r)
    v = ray.direction
    phi = math.atan2(float(v @ bp.normal), float(v @ bp.tangent))
    return PhasePoint(shape, r, phi)


def reflect(direction, normal) -> np.ndarray:
    v = np.asarray(direction, dtype=float)
    n = np.asarray(normal, dtype=float)
    return v - 2.0 * float(v @ n) * n


def mu_density(x: PhasePoint) -> float:
    return math.sin(x.phi)


def first_intersection(ray: Ray, shapes: Sequence[Shape], exclude: Optional[Shape] = None) -> Optional[Hit]:
    """Closest scatterer hit by ``ray``; raises Tangency if that hit is grazing."""
    best = None
    for i, s in enumerate(shapes):
        if exclude is not None and s is exclude:
            continue
        hit = s.intersect(ray.origin, ray.direction)
        if hit is None:
            continue
        if best is None or hit.distance < best[1].distance:
            best = (i, hit)
    if best is None:
        return None
    i, hit = best
    if hit.grazing <= TANGENCY_TOL:
        raise Tangency(f"grazing impact on scatterer {i} (grazing={hit.grazing:.3g})")
    return Hit(i, shapes[i], ray.origin + hit.distance * ray.direction, hit.distance)


def collide(ray: Ray, shapes: Sequence[Shape], exclude: Optional[Shape] = None):
    """Trace ``ray`` to its next collision; returns (hit, outgoing phase point).

    Raises Escape if nothing is hit.
    """
    hit = first_intersection(ray, shapes, exclude)
    if hit is None:
        raise Escape("no scatterer hit within the provided window")
    shape = hit.shape
    r1 = shape.arc_coordinate(hit.point)
    bp = shape.boundary_point(r1)
    v1 = reflect(ray.direction, bp.normal)
    phi1 = math.atan2(float(v1 @ bp.normal), float(v1 @ bp.tangent))
    if not 0.0 < phi1 < math.pi:
        raise Tangency("outgoing angle left (0, pi)")
    return hit, PhasePoint(shape, r1, phi1)


def billiard_map(x: PhasePoint, shapes: Sequence[Shape]) -> tuple[PhasePoint, float]:
    """One application of the collision map ``T``; returns ``(T x, free path)``.

    ``shapes`` must contain every scatterer within the maximal free path of
    ``x``; ``x.scatterer`` is recognised by identity or equality.
    """
    exclude = x.scatterer
    for s in shapes:
        if s == exclude:
            exclude = s
            break
    hit, x1 = collide(phase_to_ray(x), shapes, exclude)
    return x1, hit.distance


def involution(x: PhasePoint) -> PhasePoint:
    """Time reversal ``(r, phi) -> (r, pi - phi)``."""
    return PhasePoint(x.scatterer, x.r, math.pi - x.phi)


def jacobian(x: PhasePoint, shapes: Sequence[Shape], h: float = 1e-6) -> Optional[float]:
    """Central-difference Jacobian determinant of T in (r, phi).

    Returns None when the stencil straddles a singularity (different target
    scatterer, tangency or escape).
    """
    L = x.scatterer.perimeter
    try:
        x1, _ = billiard_map(x, shapes)
        cols = []
        for dr, dp in ((h, 0.0), (0.0, h)):
            plus = billiard_map(PhasePoint(x.scatterer, (x.r + dr) % L, x.phi + dp), shapes)[0]
            minus = billiard_map(PhasePoint(x.scatterer, (x.r - dr) % L, x.phi - dp), shapes)[0]
            if plus.scatterer != x1.scatterer or minus.scatterer != x1.scatterer:
                return None
            L1 = x1.scatterer.perimeter
            d_r = (plus.r - minus.r + L1 / 2) % L1 - L1 / 2
            cols.append(((d_r) / (2 * h), (plus.phi - minus.phi) / (2 * h)))
    except (Tangency, Escape, ValueError):
        return None
    (a, c), (b, d) = cols
    return a * d - b * c


# ---------------------------------------------------------------- certificates


class Corridor(NamedTuple):
    direction: tuple[int, int]
    unit: tuple[float, float]
    offset: float  # centre of the free strip along the normal to ``unit``
    width: float


@dataclass
class BoundsCertificate:
    k_min: float
    k_max: float
    tau_min: float
    tau_max: float
    horizon: str  # finite | infinite | undecided
    method: str  # exact | sampled
    n_samples: Optional[int] = None
    corridors: list = field(default_factory=list)
    notes: str = ""

    def as_dict(self) -> dict:
        return {
            "k_min": self.k_min, "k_max": self.k_max,
            "tau_min": self.tau_min, "tau_max": self.tau_max,
            "horizon": self.horizon, "method": self.method, "n_samples": self.n_samples,
            "corridors": [c._asdict() for c in self.corridors], "notes": self.notes,
        }


def find_corridors(shapes: Sequence[Shape], basis, gap_tol: float = 1e-12) -> tuple[list[Corridor], bool]:
    """Open corridors of a periodic configuration (``shapes`` tile by ``basis``).

    Returns the corridors found and whether every projection used was exact
    (support functions of discs and ellipses are closed form).
    """
    basis = np.asarray(basis, dtype=float)
    det = abs(float(np.linalg.det(basis)))
    exact = all(s.kind in ("disc", "ellipse") for s in shapes)
    # a direction v is blocked outright once the strip spacing det/|v| drops below a shape's width
    w_lo = max(s.min_width for s in shapes)
    corridors = []
    for v in _primitive_vectors(basis, det / w_lo):
        vp = v[0] * basis[0] + v[1] * basis[1]
        u = vp / np.linalg.norm(vp)
        nu = np.array([-u[1], u[0]])
        H = det / float(np.linalg.norm(vp))
        intervals = []
        for s in shapes:
            lo, hi = -s.support(-nu), s.support(nu)
            if hi - lo >= H:
                intervals = None
                break
            lo_m = lo % H
            intervals.append((lo_m, lo_m + (hi - lo)))
        if intervals is None:
            continue
        gaps = _circle_gaps(intervals, H)
        for start, width in gaps:
            if width > gap_tol:
                corridors.append(Corridor(tuple(v), (float(u[0]), float(u[1])), float((start + width / 2) % H), float(width)))
    return corridors, exact


def _primitive_vectors(basis, max_norm):
    """Primitive lattice vectors (one per direction) with plane norm below ``max_norm``."""
    inv = np.linalg.inv(basis.T)
    bound = int(math.ceil(max_norm * np.abs(inv).sum(axis=1).max())) + 2
    out = []
    for i in range(-bound, bound + 1):
        for j in range(0, bound + 1):
            if (j == 0 and i <= 0) or math.gcd(i, j) != 1:
                continue
            n = float(np.linalg.norm(i * basis[0] + j * basis[1]))
            if n < max_norm:
                out.append((n, (i, j)))
    return [v for _, v in sorted(out)]


def _circle_gaps(intervals, H):
    """Uncovered arcs of the circle [0, H) given intervals (lo in [0,H), hi = lo + len)."""
    expanded = []
    for lo, hi in intervals:
        expanded.append((lo, hi))
        expanded.append((lo - H, hi - H))
        expanded.append((lo + H, hi + H))
    expanded.sort()
    gaps = []
    reach = -math.inf
    for lo, hi in expanded:
        if reach > -math.inf and lo > reach and 0.0 <= reach < H:
            gaps.append((reach, lo - reach))
        reach = max(reach, hi)
    return gaps


def periodic_window(shapes: Sequence[Shape], basis, radius: float) -> list[Shape]:
    """Translates of the periodic pattern whose lattice offset has norm <= ``radius``."""
    basis = np.asarray(basis, dtype=float)
    inv = np.linalg.inv(basis.T)
    bound = int(math.ceil(radius * np.abs(inv).sum(axis=1).max())) + 1
    out = []
    for i in range(-bound, bound + 1):
        for j in range(-bound, bound + 1):
            off = i * basis[0] + j * basis[1]
            if np.linalg.norm(off) <= radius:
                out.extend(s if (i == 0 and j == 0) else s.translated(off) for s in shapes)
    return out


def _min_distance(shapes: Sequence[Shape], basis=None) -> float:
    if basis is None:
        pairs = [(a, b) for k, a in enumerate(shapes) for b in shapes[k + 1:]]
    else:
        reach = 2 * max(s.bounding_radius for s in shapes) + float(np.linalg.norm(basis, axis=1).max()) * 1.5
        window = periodic_window(shapes, basis, reach)
        base = list(shapes)
        pairs = [(a, b) for a in base for b in window
                 if b is not a and math.dist(a.center, b.center) < reach + a.bounding_radius + b.bounding_radius]
    if not pairs:
        return math.inf
    return min(shapes_distance(a, b) for a, b in pairs)


def certify_bounds(shapes: Sequence[Shape], basis=None, n_samples: int = 20000, seed: int = 0,
                   refine: int = 8) -> BoundsCertificate:
    """Curvature and free-path bounds with a horizon verdict.

    ``basis`` (2x2, rows are lattice vectors) marks ``shapes`` as one period of
    a periodic configuration; without it the configuration is finite and
    every horizon is infinite. Corridors are detected exactly through
    support functions for discs and ellipses; the maximal free path is found
    by sampling phase points and refining the largest ones.
    """
    if not shapes:
        raise ValueError("configuration must contain at least one scatterer")
    ks = [s.curvature_bounds for s in shapes]
    k_min, k_max = min(k[0] for k in ks), max(k[1] for k in ks)
    tau_min = _min_distance(shapes, basis)
    if basis is None:
        return BoundsCertificate(k_min, k_max, tau_min, math.inf, "infinite",
                                 "exact" if all(s.curvature_exact for s in shapes) else "sampled",
                                 notes="finite configuration: almost every ray escapes")
    corridors, exact = find_corridors(shapes, basis)
    if corridors:
        return BoundsCertificate(k_min, k_max, tau_min, math.inf, "infinite", "exact" if exact else "sampled",
                                 corridors=corridors)
    tau_max = _sample_tau_max(shapes, basis, n_samples, seed, refine)
    horizon = "finite" if exact and math.isfinite(tau_max) else "undecided"
    return BoundsCertificate(k_min, k_max, tau_min, tau_max, horizon, "sampled", n_samples=n_samples,
                             notes="" if exact else "parametric support functions are sampled")


def _sample_tau_max(shapes, basis, n_samples, seed, refine) -> float:
    rng = np.random.default_rng(seed)
    reach = 3.0 * float(np.linalg.norm(basis, axis=1).max()) + 2 * max(s.bounding_radius for s in shapes)
    for _ in range(6):
        window = periodic_window(shapes, basis, reach)
        try:
            return _tau_search(shapes, window, rng, n_samples, refine)
        except Escape:
            reach *= 2.0
    return math.inf


def _tau_search(base, window, rng, n_samples, refine) -> float:
    def tau(s, r, phi):
        if not 0 < phi < math.pi:
            return 0.0
        try:
            return billiard_map(PhasePoint(s, r % s.perimeter, phi), window)[1]
        except Tangency:
            return 0.0

    found = []
    per = max(1, n_samples // len(base))
    for s in base:
        rs = rng.uniform(0, s.perimeter, per)
        phis = rng.uniform(0, math.pi, per)
        for r, p in zip(rs, phis):
            found.append((tau(s, r, p), s, r, p))
    found.sort(key=lambda t: -t[0])
    best = found[0][0]
    for t0, s, r, p in found[:refine]:
        res = minimize(lambda z: -tau(s, z[0], z[1]), np.array([r, p]), method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 2000,
                                "initial_simplex": np.array([[r, p], [r + 1e-2, p], [r, p + 1e-2]])})
        best = max(best, -float(res.fun))
    return best


def certify_disc_lattice(radius: float, basis, n_samples: int = 20000, seed: int = 0) -> BoundsCertificate:
    """Shortcut for a Bravais lattice of equal discs centred at lattice points."""
    return certify_bounds([Disc((0.0, 0.0), radius)], basis, n_samples=n_samples, seed=seed)
