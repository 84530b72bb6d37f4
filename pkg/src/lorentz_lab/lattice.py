"""Co-compact planar lattices and their Voronoi fundamental cells."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

SQRT3 = math.sqrt(3.0)


class Edge(NamedTuple):
    start: np.ndarray
    end: np.ndarray
    normal: np.ndarray  # outward unit normal of C_0
    offset: float  # edge line is x.normal = offset
    neighbor: tuple[int, int]  # lattice vector of the cell across the edge


@dataclass(frozen=True)
class Lattice:
    """Square (Z^2) or hexagonal (Hex) lattice with nearest-neighbour spacing ``spacing``.

    Cells are the Voronoi cells of the lattice points, so ``C_0`` is centred at
    the origin. Edges of ``C_0`` are listed counterclockwise; for the square
    lattice they come in the order E, N, W, S.
    """

    kind: str = "square"
    spacing: float = 1.0
    basis: np.ndarray = field(init=False, repr=False, compare=False)
    vertices: np.ndarray = field(init=False, repr=False, compare=False)
    edges: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        s = float(self.spacing)
        object.__setattr__(self, "spacing", s)
        if self.kind == "square":
            basis = np.array([[s, 0.0], [0.0, s]])
            normals = [(1, 0), (0, 1), (-1, 0), (0, -1)]
            neighbors = [(1, 0), (0, 1), (-1, 0), (0, -1)]
        elif self.kind == "hex":
            basis = np.array([[s, 0.0], [0.5 * s, 0.5 * SQRT3 * s]])
            normals = [(math.cos(k * math.pi / 3), math.sin(k * math.pi / 3)) for k in range(6)]
            neighbors = [(1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1)]
        else:
            raise ValueError(f"unknown lattice kind {self.kind!r}")
        object.__setattr__(self, "basis", basis)

        h = 0.5 * s
        nvec = [np.array(n, dtype=float) for n in normals]
        # vertex k sits between edge k-1 and edge k
        verts = []
        m = len(nvec)
        for k in range(m):
            n0, n1 = nvec[k - 1], nvec[k]
            verts.append(np.linalg.solve(np.array([n0, n1]), np.array([h, h])))
        edges = []
        for k in range(m):
            start, end = verts[k], verts[(k + 1) % m]
            edges.append(Edge(start, end, nvec[k], h, neighbors[k]))
        object.__setattr__(self, "vertices", np.array(verts))
        object.__setattr__(self, "edges", tuple(edges))
        for e in edges:
            assert np.allclose(self.to_plane(e.neighbor), 2 * h * e.normal)

    @property
    def neighbors(self) -> list[tuple[int, int]]:
        return [e.neighbor for e in self.edges]

    @property
    def area(self) -> float:
        return abs(float(np.linalg.det(self.basis)))

    @property
    def inradius(self) -> float:
        return 0.5 * self.spacing

    @property
    def circumradius(self) -> float:
        return float(np.max(np.linalg.norm(self.vertices, axis=1)))

    @property
    def perimeter(self) -> float:
        return sum(float(np.linalg.norm(e.end - e.start)) for e in self.edges)

    def to_plane(self, gamma) -> np.ndarray:
        return gamma[0] * self.basis[0] + gamma[1] * self.basis[1]

    def norm(self, gamma) -> float:
        v = self.to_plane(gamma)
        return math.hypot(v[0], v[1])

    def locate(self, point) -> tuple[int, int]:
        """Index of the cell (nearest lattice point) containing ``point``."""
        x, y = float(point[0]), float(point[1])
        if self.kind == "square":
            return (int(math.floor(x / self.spacing + 0.5)), int(math.floor(y / self.spacing + 0.5)))
        c2 = y / (0.5 * SQRT3 * self.spacing)
        c1 = x / self.spacing - 0.5 * c2
        i0, j0 = math.floor(c1), math.floor(c2)
        best, best_d = None, math.inf
        for di in (0, 1):
            for dj in (0, 1):
                g = (i0 + di, j0 + dj)
                p = self.to_plane(g)
                d = (p[0] - x) ** 2 + (p[1] - y) ** 2
                if d < best_d:
                    best, best_d = g, d
        return (int(best[0]), int(best[1]))

    def cells_in_box(self, lo, hi) -> list[tuple[int, int]]:
        """All cells whose closure meets the axis-aligned box [lo, hi]."""
        rc = self.circumradius
        inv = np.linalg.inv(self.basis.T)
        corners = np.array([[lo[0] - rc, lo[1] - rc], [hi[0] + rc, lo[1] - rc],
                            [lo[0] - rc, hi[1] + rc], [hi[0] + rc, hi[1] + rc]])
        coords = corners @ inv.T
        i_lo, j_lo = np.floor(coords.min(axis=0)).astype(int)
        i_hi, j_hi = np.ceil(coords.max(axis=0)).astype(int)
        out = []
        for i in range(i_lo, i_hi + 1):
            for j in range(j_lo, j_hi + 1):
                c = self.to_plane((i, j))
                cmin = c + self.vertices.min(axis=0)
                cmax = c + self.vertices.max(axis=0)
                if cmin[0] <= hi[0] and cmax[0] >= lo[0] and cmin[1] <= hi[1] and cmax[1] >= lo[1]:
                    out.append((i, j))
        return out

    def primitive_vectors(self, max_norm: float) -> list[tuple[int, int]]:
        """Primitive lattice vectors up to sign with plane norm below ``max_norm``."""
        bound = int(math.ceil(max_norm / (self.spacing * 0.5))) + 2
        out = []
        for i in range(-bound, bound + 1):
            for j in range(0, bound + 1):
                if j == 0 and i <= 0:
                    continue
                if math.gcd(i, j) != 1:
                    continue
                if self.norm((i, j)) < max_norm:
                    out.append((i, j))
        return sorted(out, key=self.norm)
