"""Random Lorentz-gas ensembles: cell laws, lazy i.i.d. environments, metrics.

An :class:`Environment` never materializes the infinite field of cell states.
``cell_state(env, g)`` hashes ``(seed, g + shift_offset)`` into uniforms and
pushes them through the law's sampler, so shifting is a pure re-indexing and
two processes with the same inputs see bit-identical cells.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .billiard import BoundsCertificate, certify_bounds
from .errors import MarginViolation, Overlap
from .geometry import Disc, Ellipse, Shape, shapes_distance
from .hashing import cell_uniforms, cell_uniforms_v
from .lattice import Lattice

Cell = tuple[int, int]


def _add(a: Cell, b: Cell) -> Cell:
    return (a[0] + b[0], a[1] + b[1])


def _meets_cell(shape: Shape, lattice: Lattice) -> bool:
    """Whether ``shape`` intersects the closed cell C_0."""
    if all(float(np.dot(shape.center, e.normal)) <= e.offset for e in lattice.edges):
        return True
    for e in lattice.edges:
        if shape.contains(e.start):
            return True
        d = e.end - e.start
        length = float(np.linalg.norm(d))
        hit = shape.intersect(e.start, d / length)
        if hit is not None and hit.distance <= length:
            return True
    return False


class CellLaw:
    """Law of the scatterer configuration of a single cell."""

    lattice: Lattice
    n_uniforms: int = 0
    name: str = "law"

    def sample(self, u: Sequence[float]):
        raise NotImplementedError

    def sample_v(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def random_shapes(self, omega) -> list[Shape]:
        return []

    def owned_fixed(self) -> list[Shape]:
        return list(getattr(self, "fixed", ()))

    @functools.cached_property
    def cell_fixed(self) -> list[Shape]:
        """Fixed scatterers (of this and neighbouring cells) that meet C_0."""
        owned = self.owned_fixed()
        if not owned:
            return []
        out = []
        for i in range(-1, 2):
            for j in range(-1, 2):
                off = self.lattice.to_plane((i, j))
                for s in owned:
                    t = s if (i, j) == (0, 0) else s.translated(off)
                    if _meets_cell(t, self.lattice):
                        out.append(t)
        return out

    def cell_shapes(self, omega) -> list[Shape]:
        return self.random_shapes(omega) + self.cell_fixed

    def d_omega(self, w1, w2) -> float:
        return float(max(abs(a - b) for a, b in zip(w1, w2))) if w1 != w2 else 0.0

    @property
    def diameter(self) -> float:
        raise NotImplementedError

    def core_shapes(self) -> list[Shape]:
        """Shapes contained in the scatterers of every realization (for certification)."""
        return []

    def validate(self, omega) -> None:
        """Raise MarginViolation / Overlap if ``omega`` breaks the geometric constraints."""
        shapes = self.random_shapes(omega)
        for s in shapes:
            for e in self.lattice.edges:
                gap = e.offset - s.support(e.normal)
                if gap < self.margin - 1e-12:
                    raise MarginViolation(f"scatterer within {gap:.3g} of the cell boundary (margin {self.margin})")
        everything = shapes + self.cell_fixed
        for k, a in enumerate(everything):
            for b in everything[k + 1:]:
                if a in shapes or b in shapes:
                    if shapes_distance(a, b) <= 0:
                        raise Overlap("scatterers in a cell intersect")

    def certify(self, n_samples: int = 20000, seed: int = 0) -> BoundsCertificate:
        """Bounds valid for every realization.

        Every realization contains the periodic core configuration, so its
        horizon verdict and maximal free path bound those of the ensemble.
        Curvature bounds and the minimal free path use the worst case over the
        parameter box.
        """
        cert = certify_bounds(self.core_shapes(), self.lattice.basis, n_samples=n_samples, seed=seed)
        k_min, k_max = self.curvature_range()
        cert.k_min, cert.k_max = k_min, k_max
        cert.tau_min = self.worst_tau_min()
        cert.notes = (cert.notes + " core-configuration bound").strip()
        return cert

    def curvature_range(self) -> tuple[float, float]:
        raise NotImplementedError

    def worst_tau_min(self) -> float:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


def _fixed_from_dicts(items) -> tuple:
    from .serialize import shape_from_dict
    return tuple(shape_from_dict(d) for d in items)


@dataclass(frozen=True)
class DiscLaw(CellLaw):
    """One disc of fixed radius and uniformly random centre in B(0, offset_radius)."""

    lattice: Lattice
    radius: float
    offset_radius: float
    margin: Optional[float] = None
    tau_bound: Optional[float] = None
    fixed: tuple = ()
    n_uniforms: int = field(default=2, init=False)
    name: str = field(default="disc", init=False)

    def __post_init__(self):
        gap = self.lattice.inradius - self.radius - self.offset_radius
        if self.margin is None:
            object.__setattr__(self, "margin", gap)
        if self.tau_bound is None:
            object.__setattr__(self, "tau_bound", 2 * self.lattice.circumradius)
        if self.radius <= 0 or self.offset_radius < 0:
            raise ValueError("radius must be positive and offset radius nonnegative")
        if self.margin <= 0 or gap < self.margin - 1e-12:
            raise MarginViolation(f"disc reaches within {gap:.3g} of the cell boundary; margin {self.margin}")

    def sample(self, u):
        rho = self.offset_radius * math.sqrt(u[0])
        th = 2.0 * math.pi * u[1]
        return (rho * math.cos(th), rho * math.sin(th))

    def sample_v(self, u):
        rho = self.offset_radius * np.sqrt(u[..., 0])
        th = 2.0 * np.pi * u[..., 1]
        return np.stack([rho * np.cos(th), rho * np.sin(th)], axis=-1)

    def random_shapes(self, omega):
        return [Disc(omega, self.radius)]

    @property
    def diameter(self) -> float:
        return 2.0 * self.offset_radius

    def core_shapes(self):
        return [Disc((0.0, 0.0), self.radius - self.offset_radius)] + list(self.fixed)

    def curvature_range(self):
        ks = [1.0 / self.radius] + [k for s in self.fixed for k in s.curvature_bounds]
        return min(ks), max(ks)

    def worst_tau_min(self) -> float:
        reach = self.radius + self.offset_radius
        d = min(self.lattice.norm(g) for g in self.lattice.neighbors) - 2 * reach
        for s in self.cell_fixed:
            d = min(d, math.hypot(*s.center) - s.radius - reach if isinstance(s, Disc)
                    else shapes_distance(s, Disc((0.0, 0.0), reach)))
        return d

    def to_dict(self) -> dict:
        from .serialize import shape_to_dict
        return {"law": "disc", "lattice": self.lattice.kind, "spacing": self.lattice.spacing,
                "radius": self.radius, "offset_radius": self.offset_radius, "margin": self.margin,
                "tau_bound": self.tau_bound, "fixed": [shape_to_dict(s) for s in self.fixed]}


@dataclass(frozen=True)
class EllipseLaw(CellLaw):
    """Axis-aligned ellipse with random centre in B(0, r) and semiaxes in two intervals.

    Fixed corner discs (radius ``corner_radius``, one owned per cell at its
    upper-right vertex) close the corridors of the square lattice.
    """

    lattice: Lattice
    offset_radius: float
    a_range: tuple[float, float]
    b_range: tuple[float, float]
    corner_radius: float
    margin: Optional[float] = None
    tau_bound: Optional[float] = None
    n_uniforms: int = field(default=4, init=False)
    name: str = field(default="ellipse", init=False)

    def __post_init__(self):
        if self.lattice.kind != "square":
            raise ValueError("the ellipse law lives on the square lattice")
        object.__setattr__(self, "a_range", tuple(float(x) for x in self.a_range))
        object.__setattr__(self, "b_range", tuple(float(x) for x in self.b_range))
        h = self.lattice.inradius
        gap = h - self.offset_radius - max(self.a_range[1], self.b_range[1])
        if self.margin is None:
            object.__setattr__(self, "margin", gap)
        if self.tau_bound is None:
            object.__setattr__(self, "tau_bound", 2 * self.lattice.spacing)
        if self.margin <= 0 or gap < self.margin - 1e-12:
            raise MarginViolation(f"ellipse reaches within {gap:.3g} of the cell boundary")
        corner = self.lattice.circumradius - self.corner_radius
        if corner - self.offset_radius - max(self.a_range[1], self.b_range[1]) <= 0:
            raise Overlap("random ellipse may touch a corner scatterer")

    @property
    def fixed(self):
        v = self.lattice.vertices[1]  # upper-right vertex (+h, +h)
        return (Disc((float(v[0]), float(v[1])), self.corner_radius),)

    def sample(self, u):
        rho = self.offset_radius * math.sqrt(u[0])
        th = 2.0 * math.pi * u[1]
        a0, a1 = self.a_range
        b0, b1 = self.b_range
        return (rho * math.cos(th), rho * math.sin(th), a0 + (a1 - a0) * u[2], b0 + (b1 - b0) * u[3])

    def sample_v(self, u):
        rho = self.offset_radius * np.sqrt(u[..., 0])
        th = 2.0 * np.pi * u[..., 1]
        a0, a1 = self.a_range
        b0, b1 = self.b_range
        return np.stack([rho * np.cos(th), rho * np.sin(th),
                         a0 + (a1 - a0) * u[..., 2], b0 + (b1 - b0) * u[..., 3]], axis=-1)

    def random_shapes(self, omega):
        return [Ellipse((omega[0], omega[1]), omega[2], omega[3])]

    @property
    def diameter(self) -> float:
        return max(2.0 * self.offset_radius, self.a_range[1] - self.a_range[0], self.b_range[1] - self.b_range[0])

    def core_shapes(self):
        inner = min(self.a_range[0], self.b_range[0]) - self.offset_radius
        return [Disc((0.0, 0.0), inner)] + list(self.fixed)

    def curvature_range(self):
        lo = min(self.a_range[0], self.b_range[0])
        hi = max(self.a_range[1], self.b_range[1])
        ks = [lo / hi**2, hi / lo**2, 1.0 / self.corner_radius]
        return min(ks), max(ks)

    def worst_tau_min(self) -> float:
        reach = self.offset_radius + max(self.a_range[1], self.b_range[1])
        corner_gap = self.lattice.circumradius - self.corner_radius - reach
        corner_corner = self.lattice.spacing - 2 * self.corner_radius
        ellipse_ellipse = self.lattice.spacing - 2 * reach
        return min(corner_gap, corner_corner, ellipse_ellipse)

    def to_dict(self) -> dict:
        return {"law": "ellipse", "lattice": self.lattice.kind, "spacing": self.lattice.spacing,
                "offset_radius": self.offset_radius, "a_range": list(self.a_range),
                "b_range": list(self.b_range), "corner_radius": self.corner_radius,
                "margin": self.margin, "tau_bound": self.tau_bound}


@dataclass(frozen=True)
class FiniteLaw(CellLaw):
    """Finite state space with weights (labels carry no geometry)."""

    lattice: Lattice
    labels: tuple
    weights: tuple
    n_uniforms: int = field(default=1, init=False)
    name: str = field(default="finite", init=False)
    margin: float = field(default=math.inf, init=False)

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if len(self.labels) != len(self.weights) or not self.labels:
            raise ValueError("labels and weights must be nonempty and of equal length")
        if any(w < 0 for w in self.weights) or abs(sum(self.weights) - 1.0) > 1e-12:
            raise ValueError("weights must be a probability vector")

    @functools.cached_property
    def _cdf(self) -> np.ndarray:
        c = np.cumsum(self.weights)
        c[-1] = 1.0
        return c

    def sample(self, u):
        k = int(np.searchsorted(self._cdf, u[0], side="right"))
        return self.labels[min(k, len(self.labels) - 1)]

    def sample_v(self, u):
        k = np.searchsorted(self._cdf, u[..., 0], side="right")
        return np.asarray(self.labels)[np.minimum(k, len(self.labels) - 1)]

    def d_omega(self, w1, w2) -> float:
        return 0.0 if w1 == w2 else 1.0

    @property
    def diameter(self) -> float:
        return 1.0 if sum(1 for w in self.weights if w > 0) > 1 else 0.0

    def validate(self, omega) -> None:
        if omega not in self.labels:
            raise ValueError(f"unknown label {omega!r}")

    def to_dict(self) -> dict:
        return {"law": "finite", "lattice": self.lattice.kind, "spacing": self.lattice.spacing,
                "labels": list(self.labels), "weights": list(self.weights)}


def hex_disc_law(radius: float = 0.47, offset_radius: float = 0.02) -> DiscLaw:
    """Hexagonal lattice, one disc of radius R with centre uniform in B(0, r)."""
    return DiscLaw(Lattice("hex"), radius, offset_radius)


def square_ellipse_law(offset_radius: float = 0.03, a_range=(0.2, 0.26), b_range=(0.2, 0.26),
                       corner_radius: float = 0.36) -> EllipseLaw:
    """Z^2, one random ellipse per cell plus fixed corner discs."""
    return EllipseLaw(Lattice("square"), offset_radius, a_range, b_range, corner_radius)


# ---------------------------------------------------------------- environments


class Scatterer(NamedTuple):
    shape: Shape
    cell: Cell
    index: int


@functools.lru_cache(maxsize=1 << 18)
def _hashed_state(law: CellLaw, seed: int, i: int, j: int):
    return law.sample(cell_uniforms(seed, i, j, law.n_uniforms))


@dataclass(frozen=True)
class Environment:
    """A lazily realized configuration ``lambda = {lambda_g}``.

    Overrides, removals and additions are stored in the base frame (before
    shifting), so :func:`shift` only moves ``shift_offset``.
    """

    law: CellLaw
    seed: int
    overrides: tuple = ()
    shift_offset: Cell = (0, 0)
    pattern: Optional[tuple] = None
    block: Optional[Cell] = None
    removals: frozenset = frozenset()
    additions: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "overrides", tuple(sorted((tuple(g), w) for g, w in self.overrides)))
        object.__setattr__(self, "shift_offset", (int(self.shift_offset[0]), int(self.shift_offset[1])))

    @property
    def lattice(self) -> Lattice:
        return self.law.lattice

    @functools.cached_property
    def _override_map(self) -> dict:
        return dict(self.overrides)

    @functools.cached_property
    def _pattern_map(self) -> dict:
        return dict(self.pattern) if self.pattern is not None else {}

    def base_state(self, base: Cell):
        w = self._override_map.get(base)
        if w is not None:
            return w
        if self.pattern is not None:
            return self._pattern_map[(base[0] % self.block[0], base[1] % self.block[1])]
        return _hashed_state(self.law, self.seed, base[0], base[1])

    def cell_shapes(self, gamma: Cell) -> list[Shape]:
        """Scatterers meeting cell ``gamma`` in that cell's local coordinates."""
        base = _add(gamma, self.shift_offset)
        shapes = self.law.random_shapes(self.base_state(base))
        if self.removals:
            shapes = [s for k, s in enumerate(shapes) if (base, k) not in self.removals]
        shapes = shapes + self.law.cell_fixed
        if self.additions:
            off = self.lattice.to_plane(base)
            for s in self.additions:
                local = s.translated(-off)
                if _meets_cell(local, self.lattice):
                    shapes.append(local)
        return shapes


def cell_state(env: Environment, gamma: Cell):
    return env.base_state(_add(gamma, env.shift_offset))


def cell_states_v(env: Environment, i: np.ndarray, j: np.ndarray) -> np.ndarray:
    """Vectorized cell states for a hash-based environment without overrides."""
    if env.overrides or env.pattern is not None:
        return np.array([cell_state(env, (int(a), int(b))) for a, b in zip(i, j)])
    u = cell_uniforms_v(env.seed, np.asarray(i) + env.shift_offset[0], np.asarray(j) + env.shift_offset[1],
                        env.law.n_uniforms)
    return env.law.sample_v(u)


def shift(env: Environment, eta: Cell) -> Environment:
    """``sigma_eta``: the environment seen from cell ``eta`` (``lambda'_g = lambda_{g+eta}``)."""
    return replace(env, shift_offset=_add(env.shift_offset, eta))


def with_overrides(env: Environment, states: dict) -> Environment:
    """Fix the states of finitely many cells (keys in the current frame)."""
    merged = dict(env.overrides)
    for g, w in states.items():
        merged[_add(tuple(g), env.shift_offset)] = w
    return replace(env, overrides=tuple(merged.items()))


def scatterers_near(env: Environment, lo, hi, origin: Cell = (0, 0)) -> list[Scatterer]:
    """Scatterers of every cell meeting the box [lo, hi] grown by half a lattice spacing.

    Shapes are in plane coordinates of the current frame, measured from the
    lattice point ``origin`` (the box too). Each fixed scatterer is owned by
    exactly one cell, so nothing is listed twice.
    """
    lat = env.lattice
    o = lat.to_plane(origin)
    pad = lat.inradius
    lo = (lo[0] - pad, lo[1] - pad)
    hi = (hi[0] + pad, hi[1] + pad)
    out = []
    for g_rel in lat.cells_in_box(lo, hi):
        g = _add(g_rel, origin)
        c = lat.to_plane(g_rel)
        vmin = c + lat.vertices.min(axis=0)
        vmax = c + lat.vertices.max(axis=0)
        if not (vmin[0] < hi[0] and vmax[0] > lo[0] and vmin[1] < hi[1] and vmax[1] > lo[1]):
            continue
        base = _add(g, env.shift_offset)
        local = env.law.random_shapes(env.base_state(base)) + env.law.owned_fixed()
        for k, s in enumerate(local):
            if (base, k) in env.removals:
                continue
            out.append(Scatterer(s.translated(c), g, k))
    if env.additions:
        off = lat.to_plane(env.shift_offset) + o
        for k, s in enumerate(env.additions):
            t = s.translated(-off)
            r = t.bounding_radius
            if lo[0] - r < t.center[0] < hi[0] + r and lo[1] - r < t.center[1] < hi[1] + r:
                out.append(Scatterer(t, _add(lat.locate(t.center), origin), -1 - k))
    return out


def window_shapes(env: Environment, center, reach: float) -> list[Shape]:
    """Every scatterer within ``reach`` of ``center`` (and then some)."""
    return [s.shape for s in scatterers_near(env, (center[0] - reach, center[1] - reach),
                                             (center[0] + reach, center[1] + reach))]


def d_omega(law: CellLaw, w1, w2) -> float:
    return law.d_omega(w1, w2)


def _tail_weight(lattice: Lattice, radius: float, extra: float = 80.0) -> float:
    """Upper bound on sum_{|g| > radius} 2^{-|g|}."""
    total = 0.0
    outer = radius + extra
    lim = int(math.ceil(outer / (0.5 * lattice.spacing))) + 2
    for i in range(-lim, lim + 1):
        for j in range(-lim, lim + 1):
            n = lattice.norm((i, j))
            if radius < n <= outer:
                total += 2.0 ** (-n)
    # beyond ``outer``: at most pi (k+1+rc)^2 / area points with |g| <= k+1
    rc, area = lattice.circumradius, lattice.area
    k = int(outer)
    while True:
        term = math.pi * (k + 1 + rc) ** 2 / area * 2.0 ** (-k)
        total += term
        if term < 1e-300:
            break
        k += 1
    return total


def d_clg(env1: Environment, env2: Environment, radius: float) -> tuple[float, float]:
    """Partial sum of ``sum_g 2^{-|g|} d_Omega`` over |g| <= radius, plus a tail bound."""
    if env1.law != env2.law:
        raise ValueError("environments must share lattice and law")
    lat = env1.lattice
    lim = int(math.ceil(radius / (0.5 * lat.spacing))) + 2
    value = 0.0
    for i in range(-lim, lim + 1):
        for j in range(-lim, lim + 1):
            n = lat.norm((i, j))
            if n <= radius:
                d = env1.law.d_omega(cell_state(env1, (i, j)), cell_state(env2, (i, j)))
                if d:
                    value += 2.0 ** (-n) * d
    return value, env1.law.diameter * _tail_weight(lat, radius)


def finite_modification(env: Environment, removals=(), additions: Sequence[Shape] = ()) -> Environment:
    """Remove finitely many scatterers and add finitely many new ones.

    ``removals`` are ``(cell, index)`` pairs as reported by
    :func:`scatterers_near`; ``additions`` are shapes in current-frame plane
    coordinates and must keep a positive distance from everything retained.
    """
    lat = env.lattice
    removed = set(env.removals) | {(_add(tuple(g), env.shift_offset), int(k)) for g, k in removals}
    new_env = replace(env, removals=frozenset(removed))
    additions = list(additions)
    for k, s in enumerate(additions):
        r = s.bounding_radius + 2 * lat.circumradius
        near = scatterers_near(new_env, (s.center[0] - r, s.center[1] - r), (s.center[0] + r, s.center[1] + r))
        others = [t.shape for t in near] + additions[:k]
        for t in others:
            if math.dist(s.center, t.center) > s.bounding_radius + t.bounding_radius:
                continue
            if shapes_distance(s, t) <= 0:
                raise Overlap(f"added scatterer {k} touches an existing one")
    off = lat.to_plane(env.shift_offset)
    base_adds = tuple(env.additions) + tuple(s.translated(off) for s in additions)
    return replace(new_env, additions=base_adds)


def periodic_env(law: CellLaw, pattern: dict, block: Cell = (1, 1), seed: int = 0) -> Environment:
    """Environment repeating ``pattern`` (keys cover the block ``[0,b1) x [0,b2)``)."""
    keys = {(i, j) for i in range(block[0]) for j in range(block[1])}
    if set(map(tuple, pattern)) != keys:
        raise ValueError("pattern must assign a state to every cell of the block")
    return Environment(law, seed, pattern=tuple(sorted((tuple(k), v) for k, v in pattern.items())),
                       block=tuple(block))


def law_from_dict(d: dict) -> CellLaw:
    lat = Lattice(d.get("lattice", "square"), float(d.get("spacing", 1.0)))
    kind = d["law"]
    if kind == "disc":
        return DiscLaw(lat, d["radius"], d["offset_radius"], d.get("margin"), d.get("tau_bound"),
                       _fixed_from_dicts(d.get("fixed", ())))
    if kind == "ellipse":
        return EllipseLaw(lat, d["offset_radius"], tuple(d["a_range"]), tuple(d["b_range"]),
                          d["corner_radius"], d.get("margin"), d.get("tau_bound"))
    if kind == "finite":
        return FiniteLaw(lat, tuple(d["labels"]), tuple(d["weights"]))
    raise ValueError(f"unknown law {kind!r}")
