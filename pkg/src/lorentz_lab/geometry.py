"""Strictly convex scatterer shapes.

Every shape exposes the same small surface used by the billiard code:

* ``perimeter`` and ``boundary_point(r)`` in arc-length coordinates, with
  ``r`` increasing counterclockwise;
* ``arc_coordinate(point)`` as the inverse of ``boundary_point``;
* ``intersect(origin, direction)`` returning the entry distance of a ray and
  a grazing measure (squared cosine between the ray and the normal);
* ``support(n)``, the support function used for corridor detection.

Arc-length origin ``r = 0`` is the boundary point at parameter angle 0 in the
shape's own frame (for a disc centred at ``c`` that is ``c + (R, 0)``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.optimize import brentq, minimize_scalar
from scipy.special import ellipeinc

TWO_PI = 2.0 * math.pi

# Grazing threshold applied to (v.n)^2 at impact, i.e. |v.n| < 1e-6.
TANGENCY_TOL = 1e-12


class BoundaryPoint(NamedTuple):
    position: np.ndarray
    tangent: np.ndarray
    normal: np.ndarray
    curvature: float


class RayHit(NamedTuple):
    distance: float
    grazing: float  # (v.n)^2 at impact, or the normalized discriminant


def _rot(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def _frame(tangent: np.ndarray) -> np.ndarray:
    # outward normal for a counterclockwise boundary
    return np.array([tangent[1], -tangent[0]])


class Shape:
    """Common behaviour. Subclasses are frozen dataclasses."""

    kind: str = "shape"

    @property
    def perimeter(self) -> float:
        raise NotImplementedError

    def boundary_point(self, r: float) -> BoundaryPoint:
        raise NotImplementedError

    def arc_coordinate(self, point) -> float:
        raise NotImplementedError

    def intersect(self, origin, direction) -> Optional[RayHit]:
        raise NotImplementedError

    def support(self, n) -> float:
        raise NotImplementedError

    def translated(self, offset) -> "Shape":
        raise NotImplementedError

    def contains(self, point) -> bool:
        raise NotImplementedError

    @property
    def bounding_radius(self) -> float:
        raise NotImplementedError

    @property
    def curvature_bounds(self) -> tuple[float, float]:
        raise NotImplementedError

    @property
    def curvature_exact(self) -> bool:
        return True

    @property
    def min_width(self) -> float:
        """Lower bound on the width of the shape in any direction."""
        raise NotImplementedError

    @property
    def center_array(self) -> np.ndarray:
        return np.asarray(self.center, dtype=float)

    def distance_to_line(self, normal, offset: float) -> float:
        """Signed gap between the shape and the line ``x.normal = offset``.

        Positive when the whole shape lies on the side ``x.normal < offset``.
        """
        n = np.asarray(normal, dtype=float)
        return offset - self.support(n)


@dataclass(frozen=True)
class Disc(Shape):
    center: tuple[float, float]
    radius: float
    kind: str = field(default="disc", init=False)

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("disc radius must be positive")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def perimeter(self) -> float:
        return TWO_PI * self.radius

    def boundary_point(self, r: float) -> BoundaryPoint:
        theta = r / self.radius
        c, s = math.cos(theta), math.sin(theta)
        pos = np.array([self.center[0] + self.radius * c, self.center[1] + self.radius * s])
        return BoundaryPoint(pos, np.array([-s, c]), np.array([c, s]), 1.0 / self.radius)

    def arc_coordinate(self, point) -> float:
        theta = math.atan2(point[1] - self.center[1], point[0] - self.center[0])
        r = (theta % TWO_PI) * self.radius
        return 0.0 if r >= self.perimeter else r

    def intersect(self, origin, direction) -> Optional[RayHit]:
        wx = origin[0] - self.center[0]
        wy = origin[1] - self.center[1]
        b = wx * direction[0] + wy * direction[1]
        c = wx * wx + wy * wy - self.radius * self.radius
        disc = b * b - c
        r2 = self.radius * self.radius
        g = disc / r2
        if g < -TANGENCY_TOL:
            return None
        if g <= TANGENCY_TOL:
            return RayHit(-b, max(g, 0.0)) if -b > 0 else None
        t = -b - math.sqrt(disc)
        if t <= 0:
            return None
        return RayHit(t, g)

    def support(self, n) -> float:
        return self.center[0] * n[0] + self.center[1] * n[1] + self.radius * math.hypot(n[0], n[1])

    def translated(self, offset) -> "Disc":
        return Disc((self.center[0] + offset[0], self.center[1] + offset[1]), self.radius)

    def contains(self, point) -> bool:
        return math.hypot(point[0] - self.center[0], point[1] - self.center[1]) < self.radius

    @property
    def bounding_radius(self) -> float:
        return self.radius

    @property
    def curvature_bounds(self) -> tuple[float, float]:
        k = 1.0 / self.radius
        return k, k

    @property
    def min_width(self) -> float:
        return 2.0 * self.radius


@dataclass(frozen=True)
class Ellipse(Shape):
    center: tuple[float, float]
    a: float
    b: float
    orientation: float = 0.0
    kind: str = field(default="ellipse", init=False)
    _m: float = field(init=False, repr=False, compare=False)
    _perimeter: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError("ellipse semiaxes must be positive")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "orientation", float(self.orientation))
        m = 1.0 - (self.a / self.b) ** 2
        object.__setattr__(self, "_m", m)
        object.__setattr__(self, "_perimeter", 4.0 * self.b * float(ellipeinc(math.pi / 2, m)))

    # arc length from parameter t, for t in [0, 2pi)
    def _arc(self, t: float) -> float:
        quarter = self._perimeter / 4.0
        k, rem = divmod(t, math.pi / 2)
        k = int(k)
        # ellipeinc is exact on [0, pi/2]; use the quarter symmetry elsewhere
        if k % 2 == 0:
            part = self.b * float(ellipeinc(rem, self._m))
        else:
            part = quarter - self.b * float(ellipeinc(math.pi / 2 - rem, self._m))
        return k * quarter + part

    def _speed(self, t: float) -> float:
        return math.hypot(self.a * math.sin(t), self.b * math.cos(t))

    def _param_of_arc(self, r: float) -> float:
        r = r % self._perimeter
        t = TWO_PI * r / self._perimeter
        for _ in range(50):
            step = (self._arc(t) - r) / self._speed(t)
            t -= step
            if abs(step) < 1e-15:
                break
        return t % TWO_PI

    @property
    def perimeter(self) -> float:
        return self._perimeter

    def point_at_param(self, t: float) -> BoundaryPoint:
        ct, st = math.cos(t), math.sin(t)
        rot = _rot(self.orientation)
        pos = np.asarray(self.center) + rot @ np.array([self.a * ct, self.b * st])
        d = rot @ np.array([-self.a * st, self.b * ct])
        speed = math.hypot(d[0], d[1])
        tangent = d / speed
        k = self.a * self.b / speed**3
        return BoundaryPoint(pos, tangent, _frame(tangent), k)

    def boundary_point(self, r: float) -> BoundaryPoint:
        return self.point_at_param(self._param_of_arc(r))

    def _local(self, point) -> np.ndarray:
        return _rot(-self.orientation) @ (np.asarray(point, dtype=float) - np.asarray(self.center))

    def arc_coordinate(self, point) -> float:
        x, y = self._local(point)
        t = math.atan2(y / self.b, x / self.a) % TWO_PI
        r = self._arc(t)
        return 0.0 if r >= self._perimeter else r

    def intersect(self, origin, direction) -> Optional[RayHit]:
        p = self._local(origin)
        v = _rot(-self.orientation) @ np.asarray(direction, dtype=float)
        px, py = p[0] / self.a, p[1] / self.b
        vx, vy = v[0] / self.a, v[1] / self.b
        A = vx * vx + vy * vy
        B = px * vx + py * vy
        C = px * px + py * py - 1.0
        disc = B * B - A * C
        g = disc / A
        if g < -TANGENCY_TOL:
            return None
        if g <= TANGENCY_TOL:
            t = -B / A
            return RayHit(t, max(g, 0.0)) if t > 0 else None
        t = (-B - math.sqrt(disc)) / A
        if t <= 0:
            return None
        return RayHit(t, g)

    def support(self, n) -> float:
        u = np.array([math.cos(self.orientation), math.sin(self.orientation)])
        w = np.array([-u[1], u[0]])
        nu, nw = u @ n, w @ n
        return float(np.dot(self.center, n)) + math.sqrt((self.a * nu) ** 2 + (self.b * nw) ** 2)

    def translated(self, offset) -> "Ellipse":
        return Ellipse((self.center[0] + offset[0], self.center[1] + offset[1]), self.a, self.b, self.orientation)

    def contains(self, point) -> bool:
        x, y = self._local(point)
        return (x / self.a) ** 2 + (y / self.b) ** 2 < 1.0

    @property
    def bounding_radius(self) -> float:
        return max(self.a, self.b)

    @property
    def curvature_bounds(self) -> tuple[float, float]:
        lo, hi = sorted((self.a, self.b))
        return lo / hi**2, hi / lo**2

    @property
    def min_width(self) -> float:
        return 2.0 * min(self.a, self.b)


# Gauss-Legendre nodes for the arc-length table of parametric curves.
_GL_X, _GL_W = np.polynomial.legendre.leggauss(10)


@dataclass(frozen=True)
class FourierShape(Shape):
    """Star-shaped curve ``c + rho(theta) (cos theta, sin theta)``.

    ``rho(theta) = mean_radius + sum_k cos_coeffs[k-1] cos(k theta)
    + sin_coeffs[k-1] sin(k theta)``. The curve is smooth to every order;
    construction fails unless the curvature is positive everywhere sampled.
    """

    center: tuple[float, float]
    mean_radius: float
    cos_coeffs: tuple[float, ...] = ()
    sin_coeffs: tuple[float, ...] = ()
    panels: int = 1024
    kind: str = field(default="parametric", init=False)
    _table: np.ndarray = field(init=False, repr=False, compare=False)
    _kbounds: tuple = field(init=False, repr=False, compare=False)
    _rbounds: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        cos_c = tuple(float(x) for x in self.cos_coeffs)
        sin_c = tuple(float(x) for x in self.sin_coeffs)
        n = max(len(cos_c), len(sin_c))
        cos_c = cos_c + (0.0,) * (n - len(cos_c))
        sin_c = sin_c + (0.0,) * (n - len(sin_c))
        object.__setattr__(self, "cos_coeffs", cos_c)
        object.__setattr__(self, "sin_coeffs", sin_c)
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        object.__setattr__(self, "mean_radius", float(self.mean_radius))

        theta = np.linspace(0.0, TWO_PI, 8192, endpoint=False)
        rho, d1, d2, _ = self._rho(theta)
        if np.any(rho <= 0):
            raise ValueError("radial function must stay positive")
        kappa = (rho**2 + 2 * d1**2 - rho * d2) / (rho**2 + d1**2) ** 1.5
        if np.any(kappa <= 0):
            raise ValueError("parametric curve is not strictly convex")
        object.__setattr__(self, "_kbounds", (float(kappa.min()), float(kappa.max())))
        object.__setattr__(self, "_rbounds", (float(rho.min()), float(rho.max())))

        edges = np.linspace(0.0, TWO_PI, self.panels + 1)
        half = 0.5 * (edges[1] - edges[0])
        mids = 0.5 * (edges[:-1] + edges[1:])
        nodes = mids[:, None] + half * _GL_X[None, :]
        seg = half * (self._speed(nodes.ravel()).reshape(nodes.shape) @ _GL_W)
        object.__setattr__(self, "_table", np.concatenate([[0.0], np.cumsum(seg)]))

    def _rho(self, theta):
        theta = np.asarray(theta, dtype=float)
        rho = np.full_like(theta, self.mean_radius)
        d1 = np.zeros_like(theta)
        d2 = np.zeros_like(theta)
        d3 = np.zeros_like(theta)
        for k, (ca, sa) in enumerate(zip(self.cos_coeffs, self.sin_coeffs), start=1):
            ck, sk = np.cos(k * theta), np.sin(k * theta)
            rho += ca * ck + sa * sk
            d1 += k * (-ca * sk + sa * ck)
            d2 += -(k**2) * (ca * ck + sa * sk)
            d3 += k**3 * (ca * sk - sa * ck)
        return rho, d1, d2, d3

    def _speed(self, theta):
        rho, d1, _, _ = self._rho(theta)
        return np.sqrt(rho**2 + d1**2)

    def _arc(self, theta: float) -> float:
        theta = theta % TWO_PI
        h = TWO_PI / self.panels
        i = min(int(theta / h), self.panels - 1)
        lo = i * h
        half = 0.5 * (theta - lo)
        if half <= 0:
            return float(self._table[i])
        nodes = lo + half + half * _GL_X
        return float(self._table[i] + half * (self._speed(nodes) @ _GL_W))

    def _param_of_arc(self, r: float) -> float:
        r = r % self.perimeter
        i = int(np.searchsorted(self._table, r, side="right")) - 1
        i = min(max(i, 0), self.panels - 1)
        h = TWO_PI / self.panels
        t = i * h + h * (r - self._table[i]) / (self._table[i + 1] - self._table[i])
        for _ in range(30):
            step = (self._arc(t) - r) / float(self._speed(t))
            t -= step
            if abs(step) < 1e-15:
                break
        return t % TWO_PI

    @property
    def perimeter(self) -> float:
        return float(self._table[-1])

    def point_at_param(self, theta: float) -> BoundaryPoint:
        rho, d1, d2, _ = (float(x) for x in self._rho(theta))
        c, s = math.cos(theta), math.sin(theta)
        pos = np.array([self.center[0] + rho * c, self.center[1] + rho * s])
        d = np.array([d1 * c - rho * s, d1 * s + rho * c])
        speed = math.hypot(d[0], d[1])
        tangent = d / speed
        k = (rho**2 + 2 * d1**2 - rho * d2) / (rho**2 + d1**2) ** 1.5
        return BoundaryPoint(pos, tangent, _frame(tangent), k)

    def boundary_point(self, r: float) -> BoundaryPoint:
        return self.point_at_param(self._param_of_arc(r))

    def arc_coordinate(self, point) -> float:
        theta = math.atan2(point[1] - self.center[1], point[0] - self.center[0]) % TWO_PI
        r = self._arc(theta)
        return 0.0 if r >= self.perimeter else r

    def _gauge(self, point) -> float:
        dx, dy = point[0] - self.center[0], point[1] - self.center[1]
        rho = float(self._rho(math.atan2(dy, dx))[0])
        return math.hypot(dx, dy) / rho

    def intersect(self, origin, direction) -> Optional[RayHit]:
        o = np.asarray(origin, dtype=float)
        v = np.asarray(direction, dtype=float)
        w = o - np.asarray(self.center)
        b = float(w @ v)
        c = float(w @ w) - self._rbounds[1] ** 2
        disc = b * b - c
        if disc <= 0:
            return None
        t0 = max(-b - math.sqrt(disc), 0.0)
        t1 = -b + math.sqrt(disc)
        if t1 <= 0:
            return None

        def g(t):
            return self._gauge(o + t * v) - 1.0

        res = minimize_scalar(g, bounds=(t0, t1), method="bounded", options={"xatol": 1e-13})
        tmin, gmin = float(res.x), float(res.fun)
        # a gauge gap g corresponds to a normalized discriminant of about -2g
        if gmin > TANGENCY_TOL / 2:
            return None
        if gmin >= -TANGENCY_TOL / 2:
            return RayHit(tmin, max(-2.0 * gmin, 0.0)) if tmin > 0 else None
        if g(t0) <= 0:
            return None  # origin inside the shape
        t = brentq(g, t0, tmin, xtol=1e-15, rtol=4 * np.finfo(float).eps)
        bp = self.boundary_point(self.arc_coordinate(o + t * v))
        return RayHit(t, float(bp.normal @ v) ** 2)

    def support(self, n) -> float:
        # sampled support function; exact up to the table resolution
        theta = np.linspace(0.0, TWO_PI, 4096, endpoint=False)
        rho = self._rho(theta)[0]
        px = self.center[0] + rho * np.cos(theta)
        py = self.center[1] + rho * np.sin(theta)
        return float(np.max(px * n[0] + py * n[1]))

    def translated(self, offset) -> "FourierShape":
        return FourierShape(
            (self.center[0] + offset[0], self.center[1] + offset[1]),
            self.mean_radius, self.cos_coeffs, self.sin_coeffs, self.panels,
        )

    def contains(self, point) -> bool:
        return self._gauge(point) < 1.0

    @property
    def bounding_radius(self) -> float:
        return self._rbounds[1]

    @property
    def curvature_bounds(self) -> tuple[float, float]:
        return self._kbounds

    @property
    def curvature_exact(self) -> bool:
        return False

    @property
    def min_width(self) -> float:
        return 2.0 * self._rbounds[0]


def shapes_distance(s1: Shape, s2: Shape, samples: int = 720) -> float:
    """Euclidean distance between two disjoint convex shapes (negative if they overlap).

    Exact for two discs; otherwise a dense boundary sampling refined locally.
    """
    if isinstance(s1, Disc) and isinstance(s2, Disc):
        return math.dist(s1.center, s2.center) - s1.radius - s2.radius
    if isinstance(s1, Disc) or isinstance(s2, Disc):
        disc, other = (s1, s2) if isinstance(s1, Disc) else (s2, s1)
        if other.contains(disc.center):
            return -disc.radius
        return _point_shape_distance(disc.center, other, samples) - disc.radius
    r1 = np.linspace(0, s1.perimeter, samples, endpoint=False)
    r2 = np.linspace(0, s2.perimeter, samples, endpoint=False)
    p1 = np.array([s1.boundary_point(r).position for r in r1])
    p2 = np.array([s2.boundary_point(r).position for r in r2])
    if any(s2.contains(p) for p in p1) or any(s1.contains(p) for p in p2):
        return -1.0
    d = np.linalg.norm(p1[:, None, :] - p2[None, :, :], axis=2)
    i, j = np.unravel_index(np.argmin(d), d.shape)
    a, b = r1[i], r2[j]
    h1, h2 = s1.perimeter / samples, s2.perimeter / samples
    # coordinate descent refinement
    for _ in range(60):
        a = minimize_scalar(lambda x: np.linalg.norm(s1.boundary_point(x).position - s2.boundary_point(b).position),
                            bounds=(a - h1, a + h1), method="bounded", options={"xatol": 1e-12}).x
        b = minimize_scalar(lambda y: np.linalg.norm(s1.boundary_point(a).position - s2.boundary_point(y).position),
                            bounds=(b - h2, b + h2), method="bounded", options={"xatol": 1e-12}).x
    return float(np.linalg.norm(s1.boundary_point(a).position - s2.boundary_point(b).position))


def _point_shape_distance(point, shape: Shape, samples: int) -> float:
    rs = np.linspace(0, shape.perimeter, samples, endpoint=False)
    pts = np.array([shape.boundary_point(r).position for r in rs])
    d = np.linalg.norm(pts - np.asarray(point), axis=1)
    i = int(np.argmin(d))
    h = shape.perimeter / samples
    res = minimize_scalar(lambda r: np.linalg.norm(shape.boundary_point(r).position - np.asarray(point)),
                          bounds=(rs[i] - h, rs[i] + h), method="bounded", options={"xatol": 1e-13})
    return float(res.fun)
