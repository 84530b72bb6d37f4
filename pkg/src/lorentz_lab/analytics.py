"""Recurrence and diffusion diagnostics over ensembles of displacement paths."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .ensemble import CellLaw, DiscLaw, Environment, hex_disc_law
from .errors import ExcessiveSingularity
from .hashing import derive_seed
from .skewprod import SkewState, cocycle, sample_mu1
from .toys import RotatorLaw, ex3_paths, ex3_trial_inputs, toy_walks, wilson_interval

SINGULAR_LIMIT = 0.01
LINEAR_R2 = 0.99  # below this the MSD is not called linear (a ballistic curve gives 15/16)
Z95 = 1.959963984540054


@dataclass
class TraceEnsemble:
    sums: np.ndarray  # (trials, n+1, 2) lattice coordinates of S_k
    basis: np.ndarray  # rows: lattice basis in the plane
    meta: dict = field(default_factory=dict)

    @property
    def trials(self) -> int:
        return self.sums.shape[0]

    @property
    def n(self) -> int:
        return self.sums.shape[1] - 1

    def plane(self, k: Optional[int] = None) -> np.ndarray:
        s = self.sums if k is None else self.sums[:, k]
        return s.astype(float) @ self.basis


def collect(system: str, n: int, trials: int, seed: int, law: Optional[CellLaw] = None,
            rotator: Optional[RotatorLaw] = None, vectorized: bool = True) -> TraceEnsemble:
    """Reproducible ensemble of ``trials`` paths of length ``n``.

    ``system`` is ``lorentz`` (skew product of ``law``, default the hex-disc
    law), ``ex1``, ``ex2`` or ``ex3`` (rotator walk with law ``rotator``).
    Lorentz trials whose orbit hits a singular point are dropped; more than
    1% dropped raises ExcessiveSingularity.
    """
    if trials < 1 or n < 0:
        raise ValueError("need trials >= 1 and n >= 0")
    meta = {"system": system, "n": n, "trials": trials, "seed": seed}
    if system in ("ex1", "ex2"):
        sums = toy_walks(int(system[-1]), n, trials, seed)
        return TraceEnsemble(sums, np.eye(2), meta)
    if system == "ex3":
        rotator = rotator or RotatorLaw.sweep_point(0.5)
        seeds, dirs = ex3_trial_inputs(seed, trials)
        meta["rotator"] = rotator.weights
        return TraceEnsemble(ex3_paths(seeds, rotator, dirs, n), np.eye(2), meta)
    if system != "lorentz":
        raise ValueError(f"unknown system {system!r}")

    law = law or hex_disc_law()
    env_seeds = [derive_seed(seed, t) for t in range(trials)]
    starts = [sample_mu1(law, np.random.default_rng([seed, t])) for t in range(trials)]
    if vectorized and isinstance(law, DiscLaw):
        from .batch import DiscBatch, starts_from_points
        P, V = starts_from_points(law, starts)
        res = DiscBatch(law).run(np.array(env_seeds, dtype=np.int64), P, V, n)
        ok = res.truncated_at < 0
        sums = res.partial_sums[ok]
    else:
        kept = []
        for s, x in zip(env_seeds, starts):
            tr = cocycle(SkewState(x, Environment(law, s)), n, keep_events=False)
            if tr.truncated is None:
                kept.append(tr.partial_sums.astype(np.int32))
        ok = np.zeros(trials, dtype=bool)
        ok[: len(kept)] = True
        sums = np.array(kept).reshape(len(kept), n + 1, 2)
    dropped = trials - int(ok.sum())
    meta.update(law=law.to_dict(), singular=dropped, singular_fraction=dropped / trials)
    if dropped / trials > SINGULAR_LIMIT:
        raise ExcessiveSingularity(f"{dropped} of {trials} trajectories hit a singular point")
    return TraceEnsemble(sums, law.lattice.basis.copy(), meta)


def first_returns(ens: TraceEnsemble) -> np.ndarray:
    """Smallest k >= 1 with S_k = 0 per trace, -1 if none."""
    at0 = np.all(ens.sums[:, 1:] == 0, axis=2)
    hit = at0.any(axis=1)
    return np.where(hit, np.argmax(at0, axis=1) + 1, -1)


@dataclass
class ReturnStats:
    horizons: list
    counts: list
    trials: int
    histogram: dict  # first-return time -> count

    @property
    def fractions(self) -> list:
        return [c / self.trials for c in self.counts]

    @property
    def intervals(self) -> list:
        return [wilson_interval(c, self.trials) for c in self.counts]

    def rows(self) -> list[dict]:
        return [{"N": h, "trials": self.trials, "returned": c, "fraction": c / self.trials,
                 "ci_lo": lo, "ci_hi": hi} for h, c, (lo, hi) in zip(self.horizons, self.counts, self.intervals)]


def return_statistics(ens: TraceEnsemble, horizons: Sequence[int]) -> ReturnStats:
    horizons = sorted(int(h) for h in horizons)
    if horizons and horizons[-1] > ens.n:
        raise ValueError("horizon beyond trace length")
    fr = first_returns(ens)
    counts = [int(((fr > 0) & (fr <= h)).sum()) for h in horizons]
    top = horizons[-1] if horizons else 0
    ks, cs = np.unique(fr[(fr > 0) & (fr <= top)], return_counts=True)
    return ReturnStats(horizons, counts, ens.trials, {int(k): int(c) for k, c in zip(ks, cs)})


@dataclass
class ScaledDistribution:
    n: int
    d: int
    samples: np.ndarray
    rho: np.ndarray
    masses: np.ndarray
    half_widths: np.ndarray  # 95% binomial (Wilson) half-widths
    trials: int

    def rows(self) -> list[dict]:
        return [{"n": self.n, "rho": float(r), "mass": float(m), "ci": float(h), "trials": self.trials}
                for r, m, h in zip(self.rho, self.masses, self.half_widths)]


def scaled_distribution(ens: TraceEnsemble, n: int, d: int = 2, rho_grid: Sequence[float] = ()) -> ScaledDistribution:
    """Empirical law of ``S_n / n^(1/d)`` and its open-ball masses around 0."""
    if n > ens.n or n < 1:
        raise ValueError("n outside the trace length")
    x = ens.plane(n) / n ** (1.0 / d)
    radius = np.hypot(x[:, 0], x[:, 1])
    rho = np.asarray(sorted(rho_grid), dtype=float)
    counts = np.array([(radius < r).sum() for r in rho], dtype=int)
    T = ens.trials
    masses = counts / T
    half = np.array([0.5 * (hi - lo) for lo, hi in (wilson_interval(int(c), T) for c in counts)])
    return ScaledDistribution(n, d, x, rho, masses, half, T)


def gaussian_ball_coefficient(samples: np.ndarray) -> float:
    """``pi * f(0)`` for the centred normal fitted to ``samples`` (2D small-ball coefficient)."""
    cov = np.cov(samples.T)
    return 1.0 / (2.0 * math.sqrt(np.linalg.det(cov)))


@dataclass
class SchmidtVerdict:
    times: list
    rho: list
    c: float
    passed: np.ndarray  # (len(times), len(rho))
    gaps: np.ndarray  # p_hat - c rho^d
    half_widths: np.ndarray
    note: str = ("necessary-condition screen: finite samples at finite times cannot establish the "
                 "small-ball bound, and the bound itself presumes ergodicity")

    @property
    def passed_all(self) -> bool:
        return bool(self.passed.all())

    @property
    def margin(self) -> tuple[float, float]:
        """Smallest ``p_hat - c rho^d`` over the grid and the CI half-width at that point."""
        k = np.unravel_index(np.argmin(self.gaps), self.gaps.shape)
        return float(self.gaps[k]), float(self.half_widths[k])

    @property
    def margin_beyond_ci(self) -> float:
        """Smallest ``p_hat - c rho^d - half_width``; positive means clear of Monte Carlo noise."""
        return float(np.min(self.gaps - self.half_widths))

    def rows(self) -> list[dict]:
        out = []
        for a, n in enumerate(self.times):
            for b, r in enumerate(self.rho):
                out.append({"n": n, "rho": r, "c_rho_d": self.c * r**2, "gap": float(self.gaps[a, b]),
                            "ci": float(self.half_widths[a, b]), "pass": bool(self.passed[a, b])})
        return out


def schmidt_check(dists: Sequence[ScaledDistribution], c: Optional[float] = None,
                  rho_max: Optional[float] = None) -> SchmidtVerdict:
    """Check ``p_n(B(0, rho)) >= c rho^d`` up to Monte Carlo error on every grid point.

    Without ``c``, uses half the Gaussian small-ball coefficient fitted at the
    latest time.
    """
    dists = sorted(dists, key=lambda s: s.n)
    rho = dists[0].rho
    if any(not np.array_equal(s.rho, rho) for s in dists):
        raise ValueError("all distributions must share the rho grid")
    if rho_max is not None and (rho.max() > rho_max or rho.min() <= 0):
        raise ValueError("rho grid must lie in (0, rho_max]")
    d = dists[0].d
    if c is None:
        c = 0.5 * gaussian_ball_coefficient(dists[-1].samples)
    gaps = np.array([s.masses - c * rho**d for s in dists])
    half = np.array([s.half_widths for s in dists])
    return SchmidtVerdict([s.n for s in dists], list(map(float, rho)), float(c), gaps >= -half, gaps, half)


@dataclass
class CLTReport:
    n: int
    trials: int
    mean: np.ndarray
    mean_se: np.ndarray
    cov: np.ndarray
    ks: np.ndarray  # per-component KS distance to the fitted normal
    ks_threshold: float

    def rows(self) -> list[dict]:
        out = []
        for k in range(len(self.mean)):
            out.append({"n": self.n, "component": k, "mean": float(self.mean[k]), "mean_se": float(self.mean_se[k]),
                        "var": float(self.cov[k, k]), "ks": float(self.ks[k]), "ks_threshold": self.ks_threshold,
                        "trials": self.trials})
        return out


def clt_diagnostics(ens: TraceEnsemble, n: int) -> CLTReport:
    if ens.trials < 100:
        raise ValueError("need at least 100 trials")
    x = ens.plane(n)
    T = len(x)
    mean = x.mean(axis=0)
    cov = np.cov(x.T)
    se = np.sqrt(np.diag(cov) / T)
    ks = np.array([stats.kstest(x[:, k], "norm", args=(mean[k], math.sqrt(cov[k, k]) or 1.0)).statistic
                   for k in range(x.shape[1])])
    return CLTReport(n, T, mean, se, cov, ks, 1.36 / math.sqrt(T))


@dataclass
class MSDReport:
    steps: np.ndarray
    msd: np.ndarray
    se: np.ndarray
    slope: float
    slope_ci: tuple
    intercept: float
    r2: float
    trials: int

    @property
    def linear(self) -> bool:
        return self.r2 >= LINEAR_R2

    def rows(self) -> list[dict]:
        return [{"n": int(k), "msd": float(m), "ci": float(Z95 * s), "trials": self.trials}
                for k, m, s in zip(self.steps, self.msd, self.se)]


def msd_curve(ens: TraceEnsemble, stride: int = 1) -> MSDReport:
    """Mean squared displacement per step with a least-squares line through it."""
    ks = np.arange(0, ens.n + 1, max(1, stride))
    x = ens.plane()[:, ks]
    sq = (x**2).sum(axis=2)
    msd = sq.mean(axis=0)
    se = sq.std(axis=0, ddof=1) / math.sqrt(ens.trials) if ens.trials > 1 else np.zeros_like(msd)
    fit = stats.linregress(ks, msd)
    t = stats.t.ppf(0.975, max(len(ks) - 2, 1))
    return MSDReport(ks, msd, se, float(fit.slope), (fit.slope - t * fit.stderr, fit.slope + t * fit.stderr),
                     float(fit.intercept), float(fit.rvalue**2), ens.trials)


# ---------------------------------------------------------------- tables


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return v


def table_text(rows: Sequence[dict], schema: str, fmt: str = "csv") -> str:
    """CSV with a one-line schema header, or line-delimited JSON."""
    if fmt == "jsonl":
        return "".join(json.dumps({k: _json_safe(v) for k, v in r.items()}) + "\n" for r in rows)
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    buf = io.StringIO()
    buf.write(f"# schema={schema}\n")
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()

