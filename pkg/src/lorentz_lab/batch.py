"""Vectorized cocycle for disc laws: many trajectories stepped together with numpy.

Each trajectory has its own environment seed. Positions and velocities are
kept in the frame of the current cell, as in the scalar skew product, so a
batch state can be handed to ``cell_exit_map`` for cross-checking.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ensemble import DiscLaw
from .geometry import TANGENCY_TOL, Disc
from .hashing import cell_uniforms_v
from .skewprod import CORNER_TOL, MAX_CELL_COLLISIONS, CrossSectionPoint, cross_section


@dataclass
class BatchResult:
    partial_sums: np.ndarray  # (N, n+1, 2) int32; rows after truncation repeat the last value
    truncated_at: np.ndarray  # (N,) step index of the singular exit, -1 if none
    first_return: np.ndarray  # (N,) smallest k >= 1 with S_k = 0, -1 if none
    positions: np.ndarray  # (N, 2) final in-cell positions
    velocities: np.ndarray  # (N, 2)


class DiscBatch:
    def __init__(self, law: DiscLaw):
        if not isinstance(law, DiscLaw) or not all(isinstance(s, Disc) for s in law.cell_fixed):
            raise TypeError("the batch path supports disc laws with disc-shaped fixed scatterers")
        self.law = law
        lat = law.lattice
        self.normals = np.array([e.normal for e in lat.edges])
        self.offsets = np.array([e.offset for e in lat.edges])
        self.neighbors = np.array([e.neighbor for e in lat.edges], dtype=np.int64)
        self.shifts = np.array([lat.to_plane(g) for g in lat.neighbors])
        self.vertices = lat.vertices
        self.fixed_centers = np.array([s.center for s in law.cell_fixed]).reshape(-1, 2)
        self.radii = np.array([law.radius] + [s.radius for s in law.cell_fixed])

    def centers(self, seeds: np.ndarray, cells: np.ndarray) -> np.ndarray:
        """(N, 1 + n_fixed, 2) disc centres of each trajectory's current cell."""
        u = cell_uniforms_v(seeds, cells[:, 0], cells[:, 1], self.law.n_uniforms)
        rnd = self.law.sample_v(u)[:, None, :]
        if len(self.fixed_centers):
            fixed = np.broadcast_to(self.fixed_centers, (len(seeds),) + self.fixed_centers.shape)
            return np.concatenate([rnd, fixed], axis=1)
        return rnd

    def step(self, seeds, cells, P, V):
        """One cell exit for every trajectory.

        Returns ``(edge index, new P, new V, singular mask)``; singular rows
        (tangency, corner crossing, trapped) carry garbage.
        """
        n = len(P)
        C = self.centers(seeds, cells)
        R2 = self.radii**2
        edge = np.full(n, -1)
        P_out = np.empty_like(P)
        V_out = np.empty_like(V)
        bad = np.zeros(n, dtype=bool)
        idx = np.arange(n)
        P = P.copy()
        V = V.copy()
        last = np.full(n, -1)
        rows_all = np.arange(C.shape[1])
        for _ in range(MAX_CELL_COLLISIONS):
            if idx.size == 0:
                break
            vn = V @ self.normals.T
            with np.errstate(divide="ignore", invalid="ignore"):
                tw = np.where(vn > 0, (self.offsets - P @ self.normals.T) / vn, np.inf)
            k = np.argmin(tw, axis=1)
            r = np.arange(len(idx))
            t_wall = np.maximum(tw[r, k], 0.0)

            W = P[:, None, :] - C[idx]
            b = np.einsum("ijk,ik->ij", W, V)
            c = np.einsum("ijk,ijk->ij", W, W) - R2
            disc = b * b - c
            g = disc / R2
            with np.errstate(invalid="ignore"):
                t_hit = np.where(g <= TANGENCY_TOL, -b, -b - np.sqrt(np.maximum(disc, 0.0)))
            t_hit = np.where((g < -TANGENCY_TOL) | (t_hit <= 0) | (rows_all[None, :] == last[:, None]), np.inf, t_hit)
            j = np.argmin(t_hit, axis=1)
            th = t_hit[r, j]
            hits = th < t_wall
            grazing = hits & (g[r, j] <= TANGENCY_TOL)

            ex = ~hits
            if ex.any():
                q = P[ex] + t_wall[ex, None] * V[ex]
                dv = np.min(np.hypot(q[:, None, 0] - self.vertices[None, :, 0], q[:, None, 1] - self.vertices[None, :, 1]), axis=1)
                gi = idx[ex]
                ke = k[ex]
                edge[gi] = ke
                P_out[gi] = q - self.shifts[ke]
                V_out[gi] = V[ex]
                bad[gi] |= dv < CORNER_TOL
            if grazing.any():
                bad[idx[grazing]] = True
            cont = hits & ~grazing
            if not cont.any():
                idx = idx[:0]
                break
            Pc = P[cont] + th[cont, None] * V[cont]
            jc = j[cont]
            nrm = Pc - C[idx[cont], jc]
            nrm /= np.hypot(nrm[:, 0], nrm[:, 1])[:, None]
            Vc = V[cont]
            Vc = Vc - 2.0 * np.sum(Vc * nrm, axis=1)[:, None] * nrm
            Vc /= np.hypot(Vc[:, 0], Vc[:, 1])[:, None]
            idx = idx[cont]
            P, V, last = Pc, Vc, jc
        bad[idx] = True  # still inside after the collision cap
        return edge, P_out, V_out, bad

    def run(self, seeds, P0, V0, n_steps: int, keep_sums: bool = True) -> BatchResult:
        seeds = np.asarray(seeds, dtype=np.int64)
        N = len(seeds)
        cells = np.zeros((N, 2), dtype=np.int64)
        P = np.asarray(P0, dtype=float).copy()
        V = np.asarray(V0, dtype=float).copy()
        sums = np.zeros((N, n_steps + 1, 2), dtype=np.int32) if keep_sums else None
        trunc = np.full(N, -1)
        first = np.full(N, -1)
        alive = np.ones(N, dtype=bool)
        for s in range(n_steps):
            a = np.flatnonzero(alive)
            if a.size == 0:
                if keep_sums:
                    sums[:, s + 1:] = sums[:, s:s + 1]
                break
            e, Pn, Vn, bad = self.step(seeds[a], cells[a], P[a], V[a])
            ok = a[~bad]
            died = a[bad]
            trunc[died] = s
            alive[died] = False
            cells[ok] += self.neighbors[e[~bad]]
            P[ok] = Pn[~bad]
            V[ok] = Vn[~bad]
            at0 = ok[(cells[ok, 0] == 0) & (cells[ok, 1] == 0) & (first[ok] < 0)]
            first[at0] = s + 1
            if keep_sums:
                sums[:, s + 1] = cells
        return BatchResult(sums, trunc, first, P, V)


def starts_from_points(law: DiscLaw, points) -> tuple[np.ndarray, np.ndarray]:
    cs = cross_section(law)
    P = np.array([cs.position(x.segment, x.r) for x in points])
    V = np.array([cs.velocity(x.segment, x.phi) for x in points])
    return P, V


def to_cross_section_point(law: DiscLaw, p, v) -> CrossSectionPoint:
    """Re-express an in-cell boundary state as a cross-section point."""
    cs = cross_section(law)
    lat = law.lattice
    k = int(np.argmin([abs(float(np.dot(p, e.normal)) - e.offset) for e in lat.edges]))
    seg, r = cs.locate(k, p)
    return CrossSectionPoint(seg, r, cs.angle(k, v))
