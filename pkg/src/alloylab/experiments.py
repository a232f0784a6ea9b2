"""Monte Carlo disorder experiments.

Every sample is an independent work unit keyed by ``(seed, index)``.  Results
are gathered in index order before any reduction, so serial and parallel
runs produce identical floating point output.  Samples whose linear algebra
breaks down are dropped and counted, never replaced.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Sequence

import numpy as np

from .errors import ArgumentError, NumericalError, ScheduleError, UnsupportedError
from .model import (
    ModelConfig,
    assemble_hamiltonian,
    sample_disorder,
    sub_box,
    zero_disorder,
)
from .spectral import (
    EnergyInterval,
    RegularityProbe,
    count_below_many,
    eigenvalues,
    linear_fit,
    m_regular,
)

log = logging.getLogger(__name__)

FEASIBLE_SIDE = {1: 96, 2: 24, 3: 8}


def _guarded(fn: Callable, index: int):
    try:
        return fn(index)
    except NumericalError as exc:
        log.warning("sample %d excluded: %s", index, exc)
        return None


def run_samples(fn: Callable[[int], object], n_samples: int, workers: int = 1) -> tuple[list, int]:
    """Evaluate ``fn(i)`` for ``i < n_samples``; returns ``(kept results, excluded count)``.

    ``fn`` must be picklable when ``workers > 1``.
    """
    job = partial(_guarded, fn)
    if workers <= 1 or n_samples < 2:
        out = [job(i) for i in range(n_samples)]
    else:
        chunk = max(1, n_samples // (4 * workers))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(job, range(n_samples), chunksize=chunk))
    kept = [r for r in out if r is not None]
    return kept, n_samples - len(kept)


def _mean_stderr(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = values.shape[0]
    mean = values.mean(axis=0)
    if n < 2:
        return mean, np.full_like(mean, np.nan, dtype=float)
    return mean, values.std(axis=0, ddof=1) / math.sqrt(n)


# --------------------------------------------------------------------------
# Wegner bound


def _interval_traces(config: ModelConfig, seed: int, edges: np.ndarray, index: int) -> np.ndarray:
    ham = assemble_hamiltonian(config, sample_disorder(config, seed, index))
    counts = count_below_many(ham, edges.ravel()).reshape(edges.shape)
    return counts[:, 1] - counts[:, 0]


@dataclass(frozen=True, eq=False)
class WegnerResult:
    l: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    n: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    d: int
    omega_plus: float
    a_star: float
    excluded: int = 0

    columns = ("l", "e1", "e2", "n", "mean", "stderr", "ratio")

    @property
    def width(self) -> np.ndarray:
        return self.e2 - self.e1

    @property
    def ratio(self) -> np.ndarray:
        """Mean trace per unit energy and unit volume."""
        denom = self.width * self.l.astype(float) ** self.d
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(denom > 0, self.mean / np.where(denom > 0, denom, 1.0), 0.0)

    @property
    def constant_disorder_scaled(self) -> np.ndarray:
        """Ratio times ``omega_plus``: the constant in ``C w^-1 |I| l^d``."""
        return self.ratio * self.omega_plus

    @property
    def constant_site_scaled(self) -> np.ndarray:
        """Ratio times ``omega_plus * (1 - a*)``: the constant relative to ``|I| / (w (1 - a*))``."""
        return self.ratio * self.omega_plus * (1.0 - self.a_star)

    def rows(self):
        for i in range(self.l.size):
            yield (
                int(self.l[i]),
                float(self.e1[i]),
                float(self.e2[i]),
                int(self.n[i]),
                float(self.mean[i]),
                float(self.stderr[i]),
                float(self.ratio[i]),
            )

    def spread(self) -> float:
        """max/min of the positive ratios."""
        r = self.ratio[self.width > 0]
        if r.size == 0:
            return float("nan")
        return float(r.max() / r.min()) if r.min() > 0 else float("inf")

    def width_fit_r2(self) -> dict:
        """R^2 of mean trace against |I| at each fixed box side."""
        out = {}
        for l in np.unique(self.l):
            sel = self.l == l
            out[int(l)] = linear_fit(self.width[sel], self.mean[sel])[2]
        return out

    def volume_fit_r2(self) -> dict:
        """R^2 of mean trace against l^d at each fixed interval."""
        out = {}
        keys = sorted(set(zip(self.e1.tolist(), self.e2.tolist())))
        for e1, e2 in keys:
            sel = (self.e1 == e1) & (self.e2 == e2)
            out[(e1, e2)] = linear_fit(self.l[sel].astype(float) ** self.d, self.mean[sel])[2]
        return out


def wegner_experiment(
    config: ModelConfig,
    intervals: Sequence[EnergyInterval],
    sides: Sequence[int],
    n_samples: int,
    seed: int,
    workers: int = 1,
) -> WegnerResult:
    """Average the number of eigenvalues in each interval over disorder, per box side.

    The same ``(seed, index)`` streams are used for every box side (common
    random numbers), so differences between sides are not inflated by
    independent noise.
    """
    edges = np.array([[iv.e1, iv.e2] for iv in intervals], dtype=np.float64)
    cols = {k: [] for k in ("l", "e1", "e2", "n", "mean", "stderr")}
    excluded = 0
    for l in sides:
        cfg = config.replace(l=int(l))
        kept, bad = run_samples(partial(_interval_traces, cfg, seed, edges), n_samples, workers)
        excluded += bad
        traces = np.array(kept, dtype=float).reshape(len(kept), len(intervals))
        mean, err = _mean_stderr(traces)
        for k, iv in enumerate(intervals):
            cols["l"].append(int(l))
            cols["e1"].append(iv.e1)
            cols["e2"].append(iv.e2)
            cols["n"].append(len(kept))
            cols["mean"].append(mean[k])
            cols["stderr"].append(err[k])
    return WegnerResult(
        l=np.array(cols["l"]),
        e1=np.array(cols["e1"]),
        e2=np.array(cols["e2"]),
        n=np.array(cols["n"]),
        mean=np.array(cols["mean"]),
        stderr=np.array(cols["stderr"]),
        d=config.d,
        omega_plus=config.omega_plus,
        a_star=config.site.a_star,
        excluded=excluded,
    )


# --------------------------------------------------------------------------
# Eigenvalue proximity and initial-scale estimates


def _spectrum(config: ModelConfig, seed: int, index: int) -> np.ndarray:
    return eigenvalues(assemble_hamiltonian(config, sample_disorder(config, seed, index)))


def _distance_to_energy(config, seed, E, index):
    return float(np.min(np.abs(_spectrum(config, seed, index) - E)))


@dataclass(frozen=True)
class ProbabilityEstimate:
    estimate: float
    stderr: float
    n: int
    excluded: int = 0


def _fraction(flags) -> ProbabilityEstimate:
    flags = np.asarray(flags, dtype=float)
    n = flags.size
    p = float(flags.mean()) if n else float("nan")
    return ProbabilityEstimate(p, math.sqrt(p * (1 - p) / n) if n else float("nan"), n)


def proximity_distances(config: ModelConfig, E: float, n_samples: int, seed: int, workers: int = 1):
    kept, bad = run_samples(partial(_distance_to_energy, config, seed, float(E)), n_samples, workers)
    return np.asarray(kept), bad


def eigenvalue_proximity(
    config: ModelConfig, E: float, eps: float, n_samples: int, seed: int, workers: int = 1
) -> ProbabilityEstimate:
    """Fraction of samples with an eigenvalue within ``eps`` of ``E``."""
    if not eps > 0:
        raise ArgumentError("eps must be positive")
    dist, bad = proximity_distances(config, E, n_samples, seed, workers)
    est = _fraction(dist <= eps)
    return ProbabilityEstimate(est.estimate, est.stderr, est.n, bad)


def _distance_to_interval(config, seed, interval, index):
    return float(np.min(interval.distance(_spectrum(config, seed, index))))


def initial_scale_probability(
    config: ModelConfig,
    interval: EnergyInterval,
    l: int,
    alpha: float,
    n_samples: int,
    seed: int,
    workers: int = 1,
) -> ProbabilityEstimate:
    """Fraction of samples whose spectrum comes within ``l^-alpha / 2`` of ``interval``."""
    if not 0 < alpha <= 0.25:
        raise ArgumentError(f"alpha must lie in ]0, 1/4], got {alpha}")
    cfg = config.replace(l=int(l))
    kept, bad = run_samples(partial(_distance_to_interval, cfg, seed, interval), n_samples, workers)
    est = _fraction(np.asarray(kept) < l ** (-alpha) / 2)
    return ProbabilityEstimate(est.estimate, est.stderr, est.n, bad)


# --------------------------------------------------------------------------
# Integrated density of states


@dataclass(frozen=True, eq=False)
class IdsTable:
    energies: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    l: int
    bc: str
    n_samples: int
    excluded: int = 0

    columns = ("energy", "ids_mean", "ids_stderr", "l", "bc")

    def rows(self):
        for e, m, s in zip(self.energies, self.mean, self.stderr):
            yield float(e), float(m), float(s), self.l, self.bc


def _normalised_counts(config, seed, energies, disorder, index):
    sample = sample_disorder(config, seed, index) if disorder else zero_disorder(config)
    ham = assemble_hamiltonian(config, sample)
    return count_below_many(ham, energies) / float(config.l**config.d)


def ids_estimate(
    config: ModelConfig,
    energies,
    n_samples: int,
    seed: int,
    workers: int = 1,
    disorder: bool = True,
) -> IdsTable:
    """Disorder average of ``l^-d #{eigenvalues < E}`` on a sorted energy grid.

    ``disorder=False`` evaluates the background operator alone (one sample).
    """
    energies = np.asarray(energies, dtype=np.float64)
    if np.any(np.diff(energies) < 0):
        raise ArgumentError("energy grid must be sorted")
    n = n_samples if disorder else 1
    kept, bad = run_samples(partial(_normalised_counts, config, seed, energies, disorder), n, workers)
    vals = np.array(kept).reshape(len(kept), energies.size)
    mean, err = _mean_stderr(vals)
    if n == 1:
        err = np.zeros_like(mean)
    return IdsTable(energies, mean, err, config.l, config.bc, len(kept), bad)


def lipschitz_modulus(table: IdsTable, eps: float) -> float:
    """``max_E (N(E) - N(E - eps)) / eps`` over grid points with ``E - eps`` on the grid range."""
    if not eps > 0:
        raise ArgumentError("eps must be positive")
    e = table.energies
    ok = e - eps >= e[0]
    if not ok.any():
        raise ArgumentError("eps exceeds the energy grid span")
    lower = np.interp(e[ok] - eps, e, table.mean)
    return float(np.max((table.mean[ok] - lower) / eps))


# --------------------------------------------------------------------------
# Dirichlet monotonicity


def _nested_counts(config, sides, energies, seed, index):
    big = config.replace(l=int(max(sides)))
    ham = assemble_hamiltonian(big, sample_disorder(big, seed, index))
    out = []
    for side in sides:
        n = side * config.r
        part = sub_box(ham, (0,) * config.d, (n,) * config.d, "dirichlet")
        out.append(count_below_many(part, energies))
    return np.array(out)


@dataclass(frozen=True)
class MonotonicityReport:
    violations: int
    checks: int
    excluded: int = 0

    @property
    def holds(self) -> bool:
        return self.violations == 0


def dirichlet_monotonicity(
    config: ModelConfig,
    sides: Sequence[int],
    energies,
    n_samples: int,
    seed: int = 0,
    workers: int = 1,
) -> MonotonicityReport:
    """Check that Dirichlet eigenvalue counts never drop when the box grows.

    Every sample draws one disorder field on the largest box; the smaller
    boxes ``[0, side]^d`` see its restriction.
    """
    if config.bc != "dirichlet":
        raise ArgumentError("monotonicity under box inclusion needs Dirichlet boundary conditions")
    sides = sorted(int(s) for s in sides)
    energies = np.atleast_1d(np.asarray(energies, dtype=np.float64))
    kept, bad = run_samples(partial(_nested_counts, config, sides, energies, seed), n_samples, workers)
    violations = 0
    checks = 0
    for counts in kept:
        steps = np.diff(counts, axis=0)
        violations += int(np.count_nonzero(steps < 0))
        checks += steps.size
    return MonotonicityReport(violations, checks, bad)


# --------------------------------------------------------------------------
# Lifshitz tail probe


@dataclass(frozen=True, eq=False)
class LifshitzSeries:
    energies: np.ndarray
    ids: np.ndarray
    e0: float
    exponent: np.ndarray
    skipped: np.ndarray

    columns = ("energy", "ids", "e_minus_e0", "exponent")

    def rows(self):
        for e, n, x in zip(self.energies, self.ids, self.exponent):
            yield float(e), float(n), float(e - self.e0), float(x)


def lifshitz_probe(
    config: ModelConfig, energies, n_samples: int, seed: int = 0, workers: int = 1
) -> LifshitzSeries:
    """``log|log N(E)| / log|E - E0|`` above the empirical spectral bottom ``E0``.

    Energies where the ratio is undefined (``N(E)`` equal to 0 or 1, or
    ``|E - E0|`` equal to 1, or ``E <= E0``) are skipped and reported.
    """
    if not config.site.sign_definite:
        raise UnsupportedError(
            "Lifshitz probe at the spectral bottom needs a sign-definite single site (all a_k >= 0)"
        )
    energies = np.asarray(energies, dtype=np.float64)
    kept, _ = run_samples(partial(_spectrum, config, seed), n_samples, workers)
    spectra = np.array(kept)
    e0 = float(spectra[:, 0].min())
    ids = np.array([np.mean(np.sum(spectra < e, axis=1)) for e in energies]) / float(config.l**config.d)
    gap = energies - e0
    ok = (gap > 0) & (ids > 0) & (ids < 1) & (np.abs(gap) != 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = np.log(np.abs(np.log(ids))) / np.log(np.abs(gap))
    ok &= np.isfinite(raw)
    for e in energies[~ok]:
        log.info("Lifshitz probe: E=%g skipped (undefined ratio)", e)
    return LifshitzSeries(energies[ok], ids[ok], e0, raw[ok], energies[~ok])


# --------------------------------------------------------------------------
# Multi-scale schedule


def bracket3(x: float, strict: bool = True) -> int:
    """Greatest multiple of 3 below ``x`` (strictly below unless ``strict=False``)."""
    k = 3 * math.floor(x / 3)
    if strict and k >= x:
        k -= 3
    return int(k)


@dataclass(frozen=True)
class MsaSchedule:
    zeta: float
    l: tuple
    m: tuple
    q: tuple
    p: tuple
    c1: float
    c2: float
    c3: float
    xi_exponent: float
    d: int

    columns = ("j", "l", "m", "q", "failure_bound")

    def rows(self):
        for j in range(len(self.l)):
            yield j, self.l[j], self.m[j], self.q[j], self.p[j]

    @property
    def mass_retained(self) -> bool:
        return all(m >= self.m[0] / 2 for m in self.m)

    @property
    def probability_improves(self) -> bool:
        return all(b < a for a, b in zip(self.p, self.p[1:]))


def msa_schedule(
    l0: int,
    zeta: float,
    m0: float,
    q0: float,
    c1: float = 0.0,
    c2: float = 0.0,
    c3: float = 1.0,
    xi: float = 1.0,
    steps: int = 5,
    d: int = 1,
    strict: bool = True,
) -> MsaSchedule:
    """Scale sequence with its masses and failure bounds, recursion inequalities taken as equalities.

    The failure probability at scale ``l`` is written ``p = l^-q``;
    ``p_{j+1} = c3 (l_{j+1}/l_j)^{2d} p_j^2 + l_{j+1}^-xi / 2``.
    """
    if not 1 < zeta < 2:
        raise ArgumentError(f"zeta must lie in ]1, 2[, got {zeta}")
    if l0 < 3 or l0 % 3:
        raise ArgumentError(f"l0 must be a multiple of 3 and >= 3, got {l0}")
    ls, ms, qs, ps = [int(l0)], [float(m0)], [float(q0)], [float(l0) ** -q0]
    for _ in range(steps):
        lj = ls[-1]
        nxt = bracket3(lj**zeta, strict)
        if nxt <= lj:
            raise ScheduleError(f"scale does not grow: [{lj}^{zeta}]_3 = {nxt}")
        m_next = ms[-1] * (1 - 4 * lj / nxt) - c1 / lj - c2 * math.log(nxt) / nxt
        p_next = c3 * (nxt / lj) ** (2 * d) * ps[-1] ** 2 + 0.5 * nxt ** (-xi)
        ls.append(nxt)
        ms.append(m_next)
        ps.append(p_next)
        qs.append(-math.log(p_next) / math.log(nxt))
    return MsaSchedule(float(zeta), tuple(ls), tuple(ms), tuple(qs), tuple(ps), c1, c2, c3, xi, d)


def _regular_flag(config, E, probe, seed, index):
    ham = assemble_hamiltonian(config, sample_disorder(config, seed, index))
    return m_regular(ham, E, probe)


def regularity_fraction(
    config: ModelConfig,
    l: int,
    m: float,
    E: float,
    n_samples: int,
    seed: int = 0,
    delta: float = 1.0,
    workers: int = 1,
) -> ProbabilityEstimate:
    cfg = config.replace(l=int(l))
    probe = RegularityProbe(float(l), float(m), float(delta))
    kept, bad = run_samples(partial(_regular_flag, cfg, E, probe, seed), n_samples, workers)
    est = _fraction(kept)
    return ProbabilityEstimate(est.estimate, est.stderr, est.n, bad)


@dataclass(frozen=True)
class SurveyRow:
    j: int
    l: int
    m: float
    fraction: float
    n: int
    status: str = "ok"


def regularity_survey(
    config: ModelConfig,
    schedule: MsaSchedule,
    E: float,
    n_samples: int,
    seed: int = 0,
    delta: float = 1.0,
    workers: int = 1,
) -> list[SurveyRow]:
    """Fraction of m_j-regular samples at each desk-feasible scale of ``schedule``."""
    cap = FEASIBLE_SIDE[config.d]
    rows = []
    for j, (l, m) in enumerate(zip(schedule.l, schedule.m)):
        if l > cap:
            rows.append(SurveyRow(j, l, m, float("nan"), 0, "skipped: scale infeasible"))
        elif m <= 0:
            rows.append(SurveyRow(j, l, m, float("nan"), 0, "skipped: nonpositive mass"))
        else:
            est = regularity_fraction(config, l, m, E, n_samples, seed, delta, workers)
            rows.append(SurveyRow(j, l, m, est.estimate, est.n))
    return rows
