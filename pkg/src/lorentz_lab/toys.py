"""Baker-map driven walks on Z^2 and the rotator walk in a frozen random environment.

Directions are numbered counterclockwise: E=1, N=2, W=3, S=4. A toy point is
``(y, i)`` with ``y`` in the unit square and ``i`` the direction the walker
arrived with; each step applies a baker map to ``y`` and picks the exit
direction from the first base-m digit of ``y1`` and the state of the current
cell.

Exact distributions are computed by refining rectangles with rational
endpoints. For long Monte Carlo runs ``y1`` is represented by its digit
string: ``K_m`` shifts the base-m digits of ``y1`` and ``y2`` never affects an
exit, so i.i.d. uniform digits reproduce the dynamics exactly.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .hashing import cell_uniforms, cell_uniforms_v, derive_seed

E, N, W, S = 1, 2, 3, 4
DIRS = {E: (1, 0), N: (0, 1), W: (-1, 0), S: (0, -1)}
DIR_ARRAY = np.array([(0, 0), (1, 0), (0, 1), (-1, 0), (0, -1)], dtype=np.int64)  # indexed by direction
L_, B_, R_, F_ = 1, 2, 3, 4
LABEL_NAMES = {L_: "L", B_: "B", R_: "R", F_: "F"}


def _wrap(k: int) -> int:
    """Representative of k mod 4 in {1, 2, 3, 4}."""
    return (k - 1) % 4 + 1


@dataclass(frozen=True)
class ToyPoint:
    y: tuple
    i: int

    def __post_init__(self):
        if self.i not in DIRS:
            raise ValueError(f"direction {self.i} not in 1..4")
        if not all(0 <= c < 1 for c in self.y):
            raise ValueError("y must lie in [0, 1)^2")


@dataclass(frozen=True)
class WalkState:
    cell: tuple
    dir: int


@dataclass(frozen=True)
class RotatorLaw:
    pi_l: float
    pi_b: float
    pi_r: float
    pi_f: float

    def __post_init__(self):
        p = (self.pi_l, self.pi_b, self.pi_r, self.pi_f)
        if any(x < 0 for x in p) or abs(sum(p) - 1.0) > 1e-12:
            raise ValueError(f"rotator probabilities {p} are not a probability vector")

    @property
    def weights(self) -> tuple:
        return (self.pi_l, self.pi_b, self.pi_r, self.pi_f)

    @property
    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.weights)
        c[-1] = 1.0
        return c

    @classmethod
    def sweep_point(cls, pi_b: float) -> "RotatorLaw":
        """Given pi_B, split the rest evenly over L, R, F."""
        rest = (1.0 - pi_b) / 3.0
        return cls(rest, pi_b, rest, 1.0 - pi_b - 2 * rest)


# ---------------------------------------------------------------- baker maps


def baker(m: int, y):
    """``K_m(y1, y2) = ({m y1}, (y2 + [m y1]) / m)``; exact for Fraction inputs."""
    y1, y2 = y
    j = math.floor(m * y1)
    return (m * y1 - j, (y2 + j) / m)


def ex1_exit(y, i: int, omega: int) -> int:
    j = math.floor(4 * y[0])
    return _wrap(i + j + omega)


def ex1_step(y, i: int, omega: int):
    return baker(4, y), ex1_exit(y, i, omega)


def left(i: int) -> int:
    return _wrap(i + 1)


def right(i: int) -> int:
    return _wrap(i + 3)


def ex2_exit(y, i: int, omega: int) -> int:
    j = math.floor(2 * y[0])
    return left(i) if (j + omega) % 2 == 0 else right(i)


def ex2_step(y, i: int, omega: int):
    return baker(2, y), ex2_exit(y, i, omega)


def ex3_exit(i: int, omega: int) -> int:
    return _wrap(i + omega)


# ---------------------------------------------------------------- exact oracles


@dataclass(frozen=True)
class DyadicRectangle:
    """Image, after some steps, of a set of initial points with a common itinerary.

    ``lo, hi`` bound the current ``y1`` interval (full height in ``y2`` at
    time 0; the ``y2`` extent never influences exits and is not tracked).
    """

    lo: Fraction
    hi: Fraction
    direction: int
    cell: tuple
    weight: Fraction


def refine(rects: Sequence[DyadicRectangle], m: int, exit_fn, env_fn) -> list[DyadicRectangle]:
    """One step: split each rectangle where ``[m y1]`` changes, then move it.

    Pieces with the same interval, direction and cell have the same future,
    so they are merged and their weights added.
    """
    merged: dict = defaultdict(Fraction)
    for R in rects:
        omega = env_fn(R.cell)
        j0 = math.floor(m * R.lo)
        j1 = math.ceil(m * R.hi) - 1
        for j in range(j0, j1 + 1):
            a = max(R.lo, Fraction(j, m))
            b = min(R.hi, Fraction(j + 1, m))
            if b <= a:
                continue
            e = exit_fn((a, Fraction(0)), R.direction, omega)
            g = DIRS[e]
            key = (m * a - j, m * b - j, e, (R.cell[0] + g[0], R.cell[1] + g[1]))
            merged[key] += R.weight * (b - a) / (R.hi - R.lo)
    return [DyadicRectangle(lo, hi, e, c, w) for (lo, hi, e, c), w in merged.items()]


def exact_distribution(example: int, n: int, env_fn, start_dirs=(E, N, W, S)) -> dict:
    """Exact law of ``S_n`` for Example 1 (m=4) or 2 (m=2) by rectangle refinement.

    The starting direction is uniform over ``start_dirs``. Returns a map from
    lattice point to Fraction.
    """
    m, fn = {1: (4, ex1_exit), 2: (2, ex2_exit)}[example]
    w0 = Fraction(1, len(start_dirs))
    rects = [DyadicRectangle(Fraction(0), Fraction(1), i, (0, 0), w0) for i in start_dirs]
    for _ in range(n):
        rects = refine(rects, m, fn, env_fn)
    dist: dict = defaultdict(Fraction)
    for R in rects:
        dist[R.cell] += R.weight
    return dict(dist)


def exact_paths(example: int, n: int, env_fn, start: int):
    """All rectangles after ``n`` steps from direction ``start`` (for path-level checks)."""
    m, fn = {1: (4, ex1_exit), 2: (2, ex2_exit)}[example]
    rects = [DyadicRectangle(Fraction(0), Fraction(1), start, (0, 0), Fraction(1))]
    history = [rects]
    for _ in range(n):
        rects = refine(rects, m, fn, env_fn)
        history.append(rects)
    return history


def srw_distribution(n: int) -> dict:
    """Simple random walk on Z^2 by direct path enumeration (dynamic programming)."""
    dist = {(0, 0): Fraction(1)}
    for _ in range(n):
        nxt: dict = defaultdict(Fraction)
        for (x, y), p in dist.items():
            for dx, dy in DIRS.values():
                nxt[(x + dx, y + dy)] += p / 4
        dist = dict(nxt)
    return dist


def left_right_distribution(n: int, start_dirs=(E, N, W, S)) -> dict:
    """Walk turning 90 degrees left or right with probability 1/2 each step."""
    states: dict = defaultdict(Fraction)
    for i in start_dirs:
        states[((0, 0), i)] += Fraction(1, len(start_dirs))
    for _ in range(n):
        nxt: dict = defaultdict(Fraction)
        for (c, i), p in states.items():
            for e in (left(i), right(i)):
                g = DIRS[e]
                nxt[((c[0] + g[0], c[1] + g[1]), e)] += p / 2
        states = nxt
    dist: dict = defaultdict(Fraction)
    for (c, _), p in states.items():
        dist[c] += p
    return dict(dist)


def binomial_1d(k: int) -> dict:
    """Law of a simple +-1 walk after k steps."""
    return {2 * j - k: Fraction(math.comb(k, j), 2**k) for j in range(k + 1)}


def frozen_env(seed: int, labels: Sequence[int], weights: Optional[Sequence[float]] = None):
    """Lazily hashed cell labels as a callable ``cell -> label``."""
    cdf = np.cumsum(weights if weights is not None else [1.0 / len(labels)] * len(labels))
    cdf[-1] = 1.0
    cache: dict = {}

    def env(cell):
        w = cache.get(cell)
        if w is None:
            u = cell_uniforms(seed, cell[0], cell[1], 1)[0]
            w = labels[min(int(np.searchsorted(cdf, u, side="right")), len(labels) - 1)]
            cache[cell] = w
        return w

    return env


def _labels_v(seeds, x, y, cdf, labels) -> np.ndarray:
    u = cell_uniforms_v(seeds, x, y, 1)[..., 0]
    k = np.minimum(np.searchsorted(cdf, u, side="right"), len(labels) - 1)
    return np.asarray(labels, dtype=np.int64)[k]


# ---------------------------------------------------------------- Monte Carlo for Examples 1-2


def toy_walks(example: int, n: int, trials: int, seed: int, env_weights=None) -> np.ndarray:
    """Partial sums ``(trials, n+1, 2)`` of Example 1 or 2 walks.

    Trial ``t`` gets environment seed ``derive_seed(seed, t)``; starting
    direction and the base-m digits of ``y1`` come from a generator seeded
    with ``seed``.
    """
    m, labels = {1: (4, (1, 2, 3)), 2: (2, (1, 2))}[example]
    cdf = np.cumsum(env_weights if env_weights is not None else [1.0 / len(labels)] * len(labels))
    cdf[-1] = 1.0
    rng = np.random.default_rng(seed)
    env_seeds = np.array([derive_seed(seed, t) for t in range(trials)], dtype=np.int64)
    i = rng.integers(1, 5, size=trials)
    digits = rng.integers(0, m, size=(trials, n)) if n else np.zeros((trials, 0), dtype=np.int64)
    pos = np.zeros((trials, 2), dtype=np.int64)
    out = np.zeros((trials, n + 1, 2), dtype=np.int32)
    for k in range(n):
        omega = _labels_v(env_seeds, pos[:, 0], pos[:, 1], cdf, labels)
        j = digits[:, k]
        if example == 1:
            e = (i + j + omega - 1) % 4 + 1
        else:
            e = np.where((j + omega) % 2 == 0, i % 4 + 1, (i + 2) % 4 + 1)
        pos += DIR_ARRAY[e]
        i = e
        out[:, k + 1] = pos
    return out


# ---------------------------------------------------------------- Example 3


@dataclass(frozen=True)
class Recurrent:
    period: int
    first_return_to_origin: Optional[int]
    visited: Optional[frozenset] = None


@dataclass(frozen=True)
class Undecided:
    steps: int
    visited: Optional[frozenset] = None


def ex3_walk(env_fn, start: WalkState, max_steps: int = 100_000, track_cells: bool = False):
    """Deterministic rotator walk; Recurrent with its period, or Undecided.

    The step map on (cell, direction) is invertible in a frozen environment,
    so a repeated state must be the starting one: checking for a return to
    ``start`` is equivalent to a visited-set search.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be at least 1")
    cell, i = tuple(start.cell), start.dir
    first = None
    visited = {cell} if track_cells else None
    for k in range(1, max_steps + 1):
        e = ex3_exit(i, env_fn(cell))
        g = DIRS[e]
        cell, i = (cell[0] + g[0], cell[1] + g[1]), e
        if track_cells:
            visited.add(cell)
        if first is None and cell == (0, 0):
            first = k
        if cell == start.cell and i == start.dir:
            return Recurrent(k, first, frozenset(visited) if track_cells else None)
    return Undecided(max_steps, frozenset(visited) if track_cells else None)


def ex3_walks_batch(seeds, law: RotatorLaw, start_dirs, max_steps: int = 100_000):
    """Vectorized ``ex3_walk`` from the origin, one environment per seed.

    Returns ``(period, first_return)`` arrays with -1 for Undecided / never.
    """
    seeds = np.asarray(seeds, dtype=np.int64)
    n = len(seeds)
    cdf = law.cdf
    labels = (L_, B_, R_, F_)
    d0 = np.asarray(start_dirs, dtype=np.int64)
    period = np.full(n, -1)
    first = np.full(n, -1)
    idx = np.arange(n)
    x = np.zeros(n, dtype=np.int64)
    y = np.zeros(n, dtype=np.int64)
    i = d0.copy()
    for k in range(1, max_steps + 1):
        omega = _labels_v(seeds[idx], x, y, cdf, labels)
        i = (i + omega - 1) % 4 + 1
        step = DIR_ARRAY[i]
        x += step[:, 0]
        y += step[:, 1]
        at0 = (x == 0) & (y == 0)
        newly = at0 & (first[idx] < 0)
        first[idx[newly]] = k
        done = at0 & (i == d0[idx])
        if done.any():
            period[idx[done]] = k
            keep = ~done
            idx, x, y, i = idx[keep], x[keep], y[keep], i[keep]
            if idx.size == 0:
                break
    return period, first


def blocking_loop_check(env_fn, labels=(L_, B_, R_), radius: int = 50):
    """Look for a circuit of equally labelled cells around the origin.

    For each label, cells without it are flood-filled from the origin with
    8-connectivity inside the box of the given Chebyshev radius; the fill
    stays bounded exactly when a 4-connected circuit of that label encloses
    the origin. Returns ``(found, loop, label, interior)`` with ``loop`` the
    labelled cells bordering the fill.
    """
    if radius < 1:
        raise ValueError("radius must be at least 1")
    for lab in labels:
        seen = {(0, 0)}
        stack = [(0, 0)]
        loop = set()
        escaped = False
        while stack:
            cx, cy = stack.pop()
            for dx in (-1, 0, 1):
                for dy in (-1, 0, 1):
                    c = (cx + dx, cy + dy)
                    if c in seen or c in loop:
                        continue
                    if env_fn(c) == lab:
                        loop.add(c)
                        continue
                    if max(abs(c[0]), abs(c[1])) >= radius:
                        escaped = True
                        stack.clear()
                        break
                    seen.add(c)
                    stack.append(c)
                if escaped:
                    break
        if not escaped:
            return True, sorted(loop), lab, frozenset(seen)
    return False, None, None, None


@dataclass
class SweepRow:
    pi_l: float
    pi_b: float
    pi_r: float
    pi_f: float
    trials: int
    recurrent: int

    @property
    def fraction(self) -> float:
        return self.recurrent / self.trials

    @property
    def wilson(self) -> tuple[float, float]:
        return wilson_interval(self.recurrent, self.trials)


def wilson_interval(k: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if n == 0:
        return (0.0, 1.0)
    p = k / n
    den = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return (max(0.0, centre - half), min(1.0, centre + half))


def ex3_trial_inputs(seed: int, trials: int):
    """Per-trial environment seeds and starting directions."""
    seeds = np.array([derive_seed(seed, t) for t in range(trials)], dtype=np.int64)
    dirs = np.random.default_rng(seed).integers(1, 5, size=trials)
    return seeds, dirs


def ex3_sweep(laws: Sequence[RotatorLaw], trials: int, max_steps: int, seed: int) -> list[SweepRow]:
    rows = []
    for law in laws:
        seeds, dirs = ex3_trial_inputs(seed, trials)
        period, _ = ex3_walks_batch(seeds, law, dirs, max_steps)
        rows.append(SweepRow(*law.weights, trials, int((period > 0).sum())))
    return rows


def ex3_paths(seeds, law: RotatorLaw, start_dirs, n: int) -> np.ndarray:
    """Displacement paths ``(trials, n+1, 2)`` of rotator walks from the origin."""
    seeds = np.asarray(seeds, dtype=np.int64)
    cdf = law.cdf
    labels = (L_, B_, R_, F_)
    pos = np.zeros((len(seeds), 2), dtype=np.int64)
    i = np.asarray(start_dirs, dtype=np.int64).copy()
    out = np.zeros((len(seeds), n + 1, 2), dtype=np.int32)
    for k in range(n):
        omega = _labels_v(seeds, pos[:, 0], pos[:, 1], cdf, labels)
        i = (i + omega - 1) % 4 + 1
        pos += DIR_ARRAY[i]
        out[:, k + 1] = pos
    return out
