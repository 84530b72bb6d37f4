"""Cell-to-cell dynamics: transparent-wall cross-section, exit map, skew product, cocycle.

A point of the cross-section is a line element on the scatterer-free part of
the boundary of C_0 pointing into the cell. ``cell_exit_map`` follows it
through the cell until it leaves, ``skew_step`` re-bases it into C_0 and
shifts the environment by the exit direction, and ``cocycle`` accumulates
those directions into the lattice displacement ``S_n``.
"""
from __future__ import annotations

import csv
import functools
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .billiard import Ray, first_intersection, reflect
from .ensemble import CellLaw, Environment, scatterers_near, shift
from .errors import CornerCrossing, LorentzLabError, Tangency
from .geometry import Shape
from .lattice import Lattice

CORNER_TOL = 1e-12
MAX_CELL_COLLISIONS = 100_000
TRACE_SCHEMA = "lorentz-lab/trace/1"
TRACE_COLUMNS = ("step", "gamma_i", "gamma_j", "r", "phi", "collisions", "path_length")


class Segment(NamedTuple):
    edge: int
    lo: float  # open interval (lo, hi) of global arc coordinates
    hi: float


def _chord(shape: Shape, a: np.ndarray, d: np.ndarray, length: float) -> Optional[tuple[float, float]]:
    """Parameter interval of the line ``a + t d`` inside ``shape``, or None."""
    far = 4.0 * (length + shape.bounding_radius + float(np.linalg.norm(a - shape.center_array)))
    h1 = shape.intersect(a - far * d, d)
    if h1 is None:
        return None
    h2 = shape.intersect(a + (length + far) * d, -d)
    return float(h1.distance - far), float(length + far - h2.distance)


class CrossSection:
    """The scatterer-free part of the cell boundary as open arc-coordinate intervals.

    Arc coordinates run counterclockwise from the first vertex. The angle
    ``phi`` of a line element is measured from the edge tangent, so
    ``sin(phi) > 0`` means the velocity points into C_0.
    """

    def __init__(self, lattice: Lattice, fixed: Sequence[Shape] = ()):
        self.lattice = lattice
        self.edge_start = []
        self.edge_length = []
        self.tangent = []
        segs = []
        acc = 0.0
        for k, e in enumerate(lattice.edges):
            d = e.end - e.start
            L = float(np.linalg.norm(d))
            d = d / L
            self.edge_start.append(acc)
            self.edge_length.append(L)
            self.tangent.append(d)
            covered = sorted(c for c in (_chord(s, e.start, d, L) for s in fixed) if c is not None)
            t = 0.0
            for c0, c1 in covered:
                if c0 > t:
                    segs.append(Segment(k, acc + t, acc + min(c0, L)))
                t = max(t, c1)
                if t >= L:
                    break
            if t < L:
                segs.append(Segment(k, acc + t, acc + L))
            acc += L
        self.perimeter = acc
        self.segments = tuple(s for s in segs if s.hi > s.lo)
        if not self.segments:
            raise ValueError("the cell boundary is entirely covered by fixed scatterers")
        self.lengths = np.array([s.hi - s.lo for s in self.segments])
        self.total_length = float(self.lengths.sum())
        # opposite edge (normal -n) for re-basing
        self.opposite = []
        for e in lattice.edges:
            self.opposite.append(next(k for k, f in enumerate(lattice.edges) if np.allclose(f.normal, -e.normal)))

    def position(self, seg: int, r: float) -> np.ndarray:
        s = self.segments[seg]
        k = s.edge
        return self.lattice.edges[k].start + (r - self.edge_start[k]) * self.tangent[k]

    def velocity(self, seg: int, phi: float) -> np.ndarray:
        k = self.segments[seg].edge
        return math.cos(phi) * self.tangent[k] - math.sin(phi) * self.lattice.edges[k].normal

    def locate(self, edge: int, point) -> tuple[int, float]:
        """Segment index and arc coordinate of ``point`` on ``edge``; raises if not on a segment."""
        t = float((np.asarray(point) - self.lattice.edges[edge].start) @ self.tangent[edge])
        r = self.edge_start[edge] + t
        for i, s in enumerate(self.segments):
            if s.edge == edge and s.lo < r < s.hi:
                return i, r
        raise Tangency(f"boundary crossing at arc {r:.6g} is not on the transparent wall")

    def angle(self, edge: int, v) -> float:
        v = np.asarray(v)
        return math.atan2(-float(v @ self.lattice.edges[edge].normal), float(v @ self.tangent[edge]))


@functools.lru_cache(maxsize=64)
def cross_section(law: CellLaw) -> CrossSection:
    return CrossSection(law.lattice, law.cell_fixed)


@dataclass(frozen=True)
class CrossSectionPoint:
    segment: int
    r: float
    phi: float

    def __post_init__(self):
        if not 0.0 < self.phi < math.pi:
            raise ValueError(f"phi={self.phi} does not point into the cell")


@dataclass(frozen=True)
class ExitEvent:
    exit_point: CrossSectionPoint
    direction: tuple[int, int]
    collisions: int
    path_length: float
    free_paths: tuple = field(default=(), repr=False, compare=False)


@dataclass(frozen=True)
class SkewState:
    point: CrossSectionPoint
    env: Environment


@dataclass
class CocycleTrace:
    partial_sums: np.ndarray  # (n+1, 2) int64, S_0 = 0
    events: list
    first_return: Optional[int]
    truncated: Optional[str] = None  # reason, if stopped at a singular point
    final: Optional[SkewState] = None

    @property
    def n(self) -> int:
        return len(self.partial_sums) - 1


def sample_mu1(law: CellLaw, rng: np.random.Generator) -> CrossSectionPoint:
    """Draw from the normalized invariant measure of the cross-section."""
    cs = cross_section(law)
    u = rng.random(3)
    x = u[0] * cs.total_length
    i = int(np.searchsorted(np.cumsum(cs.lengths), x, side="right"))
    i = min(i, len(cs.segments) - 1)
    s = cs.segments[i]
    r = s.lo + (x - (cs.lengths[:i].sum() if i else 0.0))
    if not s.lo < r < s.hi:
        r = 0.5 * (s.lo + s.hi)
    phi = math.acos(1.0 - 2.0 * u[1])
    if not 0.0 < phi < math.pi:
        phi = 0.5 * math.pi
    return CrossSectionPoint(i, r, phi)


def _wall_exit(lattice: Lattice, pos: np.ndarray, v: np.ndarray) -> tuple[int, float]:
    best_k, best_t = -1, math.inf
    for k, e in enumerate(lattice.edges):
        vn = float(v @ e.normal)
        if vn <= 0.0:
            continue
        t = (e.offset - float(pos @ e.normal)) / vn
        if t < best_t:
            best_k, best_t = k, t
    return best_k, max(best_t, 0.0)


def _check_corner(lattice: Lattice, q: np.ndarray) -> None:
    d = np.min(np.hypot(*(lattice.vertices - q).T))
    if d < CORNER_TOL:
        raise CornerCrossing(f"exit within {d:.3g} of a cell vertex")


def trace_cell(law_or_cs, shapes: Sequence[Shape], pos: np.ndarray, v: np.ndarray):
    """Follow ``(pos, v)`` from the boundary of C_0 until it leaves the cell.

    Returns ``(edge, exit position, exit velocity, collisions, free paths)``.
    """
    cs = law_or_cs if isinstance(law_or_cs, CrossSection) else cross_section(law_or_cs)
    lat = cs.lattice
    exclude = None
    paths = []
    for _ in range(MAX_CELL_COLLISIONS):
        k, t_wall = _wall_exit(lat, pos, v)
        hit = first_intersection(Ray(pos, v), shapes, exclude)
        if hit is not None and hit.distance < t_wall:
            paths.append(hit.distance)
            normal = hit.shape.boundary_point(hit.shape.arc_coordinate(hit.point)).normal
            pos, v = hit.point, reflect(v, normal)
            v = v / math.hypot(v[0], v[1])
            exclude = hit.shape
            continue
        q = pos + t_wall * v
        paths.append(t_wall)
        _check_corner(lat, q)
        return k, q, v, len(paths) - 1, tuple(paths)
    raise Tangency("trajectory trapped inside the cell")


def cell_exit_map(x: CrossSectionPoint, omega, law: CellLaw, shapes: Optional[Sequence[Shape]] = None) -> ExitEvent:
    """The first-exit map of C_0 for the configuration ``omega``.

    ``shapes`` overrides the scatterers derived from ``omega`` (used for
    finitely modified environments).
    """
    cs = cross_section(law)
    if shapes is None:
        shapes = law.cell_shapes(omega)
    pos = cs.position(x.segment, x.r)
    v = cs.velocity(x.segment, x.phi)
    k, q, v1, ncoll, paths = trace_cell(cs, shapes, pos, v)
    edge = law.lattice.edges[k]
    gamma = edge.neighbor
    k2 = cs.opposite[k]
    seg, r = cs.locate(k2, q - law.lattice.to_plane(gamma))
    phi = cs.angle(k2, v1)
    if not 0.0 < phi < math.pi:
        raise Tangency("exit velocity tangent to the wall")
    return ExitEvent(CrossSectionPoint(seg, r, phi), gamma, ncoll, float(sum(paths)), paths)


def skew_step(state: SkewState) -> tuple[SkewState, ExitEvent]:
    env = state.env
    ev = cell_exit_map(state.point, None, env.law, env.cell_shapes((0, 0)))
    return SkewState(ev.exit_point, shift(env, ev.direction)), ev


def cocycle(state: SkewState, n: int, keep_events: bool = True) -> CocycleTrace:
    """``S_0 .. S_n`` along the skew-product orbit of ``state``.

    The trace stops early at the first singular point; ``truncated`` then
    names the reason and ``partial_sums`` is shorter than ``n + 1``.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    sums = np.zeros((n + 1, 2), dtype=np.int64)
    events = []
    first = None
    s0 = s1 = 0
    truncated = None
    k = 0
    for k in range(n):
        try:
            state, ev = skew_step(state)
        except (Tangency, CornerCrossing) as exc:
            truncated = f"{type(exc).__name__} at step {k}: {exc}"
            sums = sums[: k + 1]
            break
        s0 += ev.direction[0]
        s1 += ev.direction[1]
        sums[k + 1] = (s0, s1)
        if first is None and s0 == 0 and s1 == 0:
            first = k + 1
        if keep_events:
            events.append(ev)
    return CocycleTrace(sums, events, first, truncated, state)


# ---------------------------------------------------------------- full-plane oracle


class Crossing(NamedTuple):
    cell: tuple[int, int]
    point: np.ndarray
    velocity: np.ndarray


def full_plane_trace(pos, v, env: Environment, n_exits: int, cell: Optional[tuple[int, int]] = None,
                     relative: bool = False) -> list[Crossing]:
    """Billiard flow in the plane, recording each passage into a new lattice cell.

    Independent of the cell-exit machinery: scatterers come from
    ``scatterers_near`` windows and cell boundaries are the perpendicular
    bisectors between neighbouring lattice points. Arithmetic is done relative
    to the current lattice point, since the in-cell dynamics amplifies the
    rounding of large global coordinates. With ``relative`` the start
    position is given relative to the lattice point of ``cell``.
    """
    lat = env.lattice
    pos = np.asarray(pos, dtype=float)
    v = np.asarray(v, dtype=float)
    v = v / math.hypot(v[0], v[1])
    if cell is None:
        cell = lat.locate(pos)
    lo_box, hi_box = lat.vertices.min(axis=0), lat.vertices.max(axis=0)
    out = []
    last = None
    windows: dict = {}
    c = lat.to_plane(cell)
    p = pos if relative else pos - c
    while len(out) < n_exits:
        if cell not in windows:
            windows[cell] = [s.shape for s in scatterers_near(env, lo_box, hi_box, origin=cell)]
        shapes = windows[cell]
        exclude = next((s for s in shapes if s == last), None) if last is not None else None
        # leave the current Voronoi cell through the nearest bisector ahead
        t_cross, nb = math.inf, None
        for eta in lat.neighbors:
            d = lat.to_plane(eta)
            dv = float(v @ d)
            if dv <= 0.0:
                continue
            t = float((0.5 * d - p) @ d) / dv
            if t < t_cross:
                t_cross, nb = t, eta
        t_cross = max(t_cross, 0.0)
        hit = first_intersection(Ray(p, v), shapes, exclude)
        if hit is not None and hit.distance < t_cross:
            bp = hit.shape.boundary_point(hit.shape.arc_coordinate(hit.point))
            p, v = hit.point, reflect(v, bp.normal)
            v = v / math.hypot(v[0], v[1])
            last = hit.shape
            continue
        q = p + t_cross * v
        _check_corner(lat, q)
        new = lat.locate(c + q + lat.inradius * lat.to_plane(nb) / lat.norm(nb))
        if new != (cell[0] + nb[0], cell[1] + nb[1]):
            raise CornerCrossing("ambiguous cell after crossing")
        out.append(Crossing(new, c + q, v))
        shift_vec = lat.to_plane(nb)
        last = None
        cell = new
        c = lat.to_plane(cell)
        p = q - shift_vec
    return out


def lift(state_point: CrossSectionPoint, law: CellLaw, offset) -> tuple[np.ndarray, np.ndarray]:
    """Global position and velocity of a cross-section point of the cell ``offset``."""
    cs = cross_section(law)
    return cs.position(state_point.segment, state_point.r) + law.lattice.to_plane(offset), \
        cs.velocity(state_point.segment, state_point.phi)


@dataclass
class EquivalenceReport:
    seeds: int
    exits: int
    steps_checked: int
    direction_mismatches: int
    max_point_error: float
    truncated: int
    free_run_agreement: list  # per seed: exits before free-running oracle first disagrees

    @property
    def match(self) -> bool:
        return self.direction_mismatches == 0 and self.max_point_error <= 1e-9


def equivalence_check(env: Environment, start: CrossSectionPoint, n_exits: int, tol: float = 1e-9):
    """Compare ``cocycle`` with the full-plane oracle, one exit at a time.

    Each skew state is lifted to the plane at cell ``S_k`` of the unshifted
    environment and traced for one exit; the cell entered must equal
    ``S_{k+1}`` and the crossing, moved back by ``S_{k+1}``, must equal the
    re-based exit point. Returns ``(steps, mismatches, max_error,
    truncated, free_run_agreement)``.
    """
    law = env.law
    cs = cross_section(law)
    trace = cocycle(SkewState(start, env), n_exits)
    mismatches, max_err = 0, 0.0
    prev = start
    steps = len(trace.events)
    for k, ev in enumerate(trace.events):
        s_k = tuple(int(x) for x in trace.partial_sums[k])
        s_next = tuple(int(x) for x in trace.partial_sums[k + 1])
        pos, v = lift(prev, law, (0, 0))
        try:
            (cr,) = full_plane_trace(pos, v, env, 1, cell=s_k, relative=True)
        except LorentzLabError:
            mismatches += 1
            prev = ev.exit_point
            continue
        if cr.cell != s_next:
            mismatches += 1
        else:
            q = cs.position(ev.exit_point.segment, ev.exit_point.r)
            w = cs.velocity(ev.exit_point.segment, ev.exit_point.phi)
            local = cr.point - law.lattice.to_plane(s_next)
            max_err = max(max_err, float(np.max(np.abs(local - q))), float(np.max(np.abs(cr.velocity - w))))
        prev = ev.exit_point
    # free-running diagnostic
    agree = 0
    try:
        pos, v = lift(start, law, (0, 0))
        free = full_plane_trace(pos, v, env, min(steps, n_exits), cell=(0, 0))
        for k, cr in enumerate(free):
            if cr.cell != tuple(int(x) for x in trace.partial_sums[k + 1]):
                break
            agree = k + 1
    except LorentzLabError:
        pass
    return steps, mismatches, max_err, trace.truncated is not None, agree


def equivalence_test(law: CellLaw, seeds: Iterable[int], n_exits: int, tol: float = 1e-9) -> EquivalenceReport:
    seeds = list(seeds)
    total, mism, err, trunc, free = 0, 0, 0.0, 0, []
    for seed in seeds:
        env = Environment(law, seed)
        start = sample_mu1(law, np.random.default_rng(seed))
        steps, m, e, t, a = equivalence_check(env, start, n_exits, tol)
        total += steps
        mism += m
        err = max(err, e)
        trunc += int(t)
        free.append(a)
    return EquivalenceReport(len(seeds), n_exits, total, mism, err, trunc, free)


# ---------------------------------------------------------------- export


def trace_records(trace: CocycleTrace) -> Iterable[dict]:
    for k, ev in enumerate(trace.events):
        yield {"step": k + 1, "gamma_i": ev.direction[0], "gamma_j": ev.direction[1], "r": ev.exit_point.r,
               "phi": ev.exit_point.phi, "collisions": ev.collisions, "path_length": ev.path_length}


def trace_to_csv(trace: CocycleTrace) -> str:
    buf = io.StringIO()
    buf.write(f"# schema={TRACE_SCHEMA}\n")
    w = csv.DictWriter(buf, fieldnames=TRACE_COLUMNS, lineterminator="\n")
    w.writeheader()
    for rec in trace_records(trace):
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in rec.items()})
    return buf.getvalue()


def trace_to_jsonl(trace: CocycleTrace) -> str:
    return "".join(json.dumps(rec) + "\n" for rec in trace_records(trace))
