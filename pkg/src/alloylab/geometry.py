"""Volumes of sheared cube unions and the factorised integration domain.

Every exact formula here has a Monte Carlo counterpart (:func:`mc_volume`)
that only evaluates membership predicates; the predicates are inequality
checks on ``B eta`` and never enumerate polytope vertices.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _kernels
from .errors import ArgumentError
from .toeplitz import ConeToeplitzSystem, cone_determinant

log = logging.getLogger(__name__)

MC_CHUNK = 1 << 16


@dataclass(frozen=True)
class ShearedUnion:
    """``S = union over s in [0, w] of ([0, w]^n + s t)`` with ``w = omega_plus``."""

    n: int
    t: tuple
    omega_plus: float = 1.0

    def __post_init__(self):
        t = tuple(float(x) for x in np.atleast_1d(self.t))
        object.__setattr__(self, "t", t)
        if self.n < 1 or len(t) != self.n:
            raise ArgumentError(f"shear vector must have length n = {self.n}")
        if not self.omega_plus > 0:
            raise ArgumentError("omega_plus must be positive")

    def contains(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return _kernels.shear_feasible(pts, np.asarray(self.t), self.omega_plus, 0.0, self.omega_plus)

    def bbox(self):
        w = self.omega_plus
        t = np.asarray(self.t)
        return np.minimum(0.0, w * t), w + np.maximum(0.0, w * t)


def sheared_union_volume(u: ShearedUnion) -> float:
    return (1.0 + float(np.abs(u.t).sum())) * u.omega_plus**u.n


@dataclass(frozen=True, eq=False)
class AffinePiece:
    """Image ``x -> matrix @ x + offset`` of the cube ``[0, w]^n``."""

    matrix: np.ndarray
    offset: np.ndarray
    omega_plus: float

    @property
    def volume(self) -> float:
        return abs(float(np.linalg.det(self.matrix))) * self.omega_plus ** self.matrix.shape[0]

    def contains(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        pre = np.linalg.solve(self.matrix, (pts - self.offset).T).T
        return np.all((pre >= 0.0) & (pre <= self.omega_plus), axis=1)


def sheared_union_decomposition(u: ShearedUnion) -> list[AffinePiece]:
    """Split ``S`` into the cube ``Q`` and one prism per visible face.

    The prism for coordinate ``i`` sweeps the face of ``Q`` that faces
    along ``t``: ``x_i = w`` when ``t_i > 0`` and ``x_i = 0`` when ``t_i < 0``.
    Its linear part is the identity with column ``i`` replaced by ``t``.
    Components with ``t_i = 0`` give null prisms and are dropped.
    """
    n, w = u.n, u.omega_plus
    t = np.asarray(u.t)
    pieces = [AffinePiece(np.eye(n), np.zeros(n), w)]
    for i in range(n):
        if t[i] == 0.0:
            log.debug("shear component %d is zero; prism skipped", i)
            continue
        lin = np.eye(n)
        lin[:, i] = t
        offset = np.zeros(n)
        if t[i] > 0.0:
            offset[i] = w
        pieces.append(AffinePiece(lin, offset, w))
    return pieces


def mc_volume(
    membership: Callable[[np.ndarray], np.ndarray],
    bbox,
    samples: int,
    seed: int = 0,
) -> tuple[float, float]:
    """Hit-or-miss volume estimate with its binomial standard error.

    Points are drawn uniformly in ``bbox = (lo, hi)`` in fixed-size chunks,
    each chunk from its own ``(seed, chunk)`` stream.
    """
    if samples <= 0:
        raise ArgumentError("mc_volume needs at least one sample")
    lo = np.atleast_1d(np.asarray(bbox[0], dtype=np.float64))
    hi = np.atleast_1d(np.asarray(bbox[1], dtype=np.float64))
    box_vol = float(np.prod(hi - lo))
    hits = 0
    done = 0
    chunk = 0
    while done < samples:
        m = min(MC_CHUNK, samples - done)
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), chunk]))
        pts = lo + (hi - lo) * rng.random((m, lo.size))
        hits += int(np.count_nonzero(membership(pts)))
        done += m
        chunk += 1
    p = hits / samples
    return box_vol * p, box_vol * np.sqrt(p * (1.0 - p) / samples)


# --------------------------------------------------------------------------
# Factorisation of M = {eta | B eta in [0, w]^L} around a pivot site


@dataclass(frozen=True, eq=False)
class DomainFactorization:
    system: ConeToeplitzSystem
    j: int
    less: np.ndarray
    greater: np.ndarray
    omega_plus: float

    @property
    def b_j(self) -> np.ndarray:
        return self.system.B[self.greater, self.j]

    @property
    def A_greater(self) -> np.ndarray:
        return self.system.A[np.ix_(self.greater, self.greater)]

    @property
    def B_greater(self) -> np.ndarray:
        return self.system.B[np.ix_(self.greater, self.greater)]

    def split(self, eta):
        eta = np.atleast_2d(eta)
        return eta[:, self.less], eta[:, self.j], eta[:, self.greater]

    def xi(self, eta_less) -> np.ndarray:
        return -(np.atleast_2d(eta_less) @ self.system.B[self.j, self.less])

    def Xi(self, eta_less) -> np.ndarray:
        return -(np.atleast_2d(eta_less) @ self.system.B[np.ix_(self.greater, self.less)].T)

    def in_M(self, eta) -> np.ndarray:
        x = np.atleast_2d(eta) @ self.system.B.T
        return np.all((x >= 0.0) & (x <= self.omega_plus), axis=1)

    def in_M_less(self, eta_less) -> np.ndarray:
        x = np.atleast_2d(eta_less) @ self.system.B[np.ix_(self.less, self.less)].T
        return np.all((x >= 0.0) & (x <= self.omega_plus), axis=1)

    def in_M_j(self, eta_less, eta_j) -> np.ndarray:
        xi = self.xi(eta_less)
        eta_j = np.asarray(eta_j)
        return (eta_j >= xi) & (eta_j <= xi + self.omega_plus)

    def in_M_greater(self, eta_less, eta_j, eta_greater) -> np.ndarray:
        eta_j = np.atleast_1d(eta_j)
        x = np.atleast_2d(eta_greater) @ self.B_greater.T + eta_j[:, None] * self.b_j - self.Xi(eta_less)
        return np.all((x >= 0.0) & (x <= self.omega_plus), axis=1)

    def in_M_greater_plus(self, eta_less, eta_greater) -> np.ndarray:
        """Membership in the ``eta_j``-independent enlargement of ``M_>``."""
        eta_less = np.atleast_1d(eta_less)
        if eta_less.ndim != 1:
            raise ArgumentError("the enlarged domain is defined for one fixed eta_<")
        xi = float(self.xi(eta_less)[0])
        base = np.atleast_2d(eta_greater) @ self.B_greater.T - self.Xi(eta_less)
        return _kernels.shear_feasible(
            np.ascontiguousarray(base), -self.b_j, self.omega_plus, xi, xi + self.omega_plus
        )

    def sample_M_greater(self, eta_less, eta_j, rng) -> np.ndarray:
        """One uniform point of ``M_>(eta_<, eta_j)`` per entry of ``eta_j``."""
        eta_j = np.atleast_1d(eta_j)
        c = rng.uniform(0.0, self.omega_plus, size=(eta_j.size, self.greater.size))
        y = c - eta_j[:, None] * self.b_j + self.Xi(eta_less)
        return y @ self.A_greater.T

    def enlarged_bbox(self, eta_less):
        """Axis box enclosing ``M_>^+(eta_<)``."""
        w = self.omega_plus
        xi = float(self.xi(eta_less)[0])
        b = self.b_j
        shift_a, shift_b = xi * b, (xi + w) * b
        lo = -np.maximum(shift_a, shift_b)
        hi = w - np.minimum(shift_a, shift_b)
        centre = self.A_greater @ ((lo + hi) / 2 + self.Xi(eta_less)[0])
        radius = np.abs(self.A_greater) @ ((hi - lo) / 2)
        return centre - radius, centre + radius

    def box_of_M(self):
        """Axis box enclosing ``M = A([0, w]^L)``."""
        A = self.system.A
        centre = A @ np.full(A.shape[0], self.omega_plus / 2)
        radius = np.abs(A) @ np.full(A.shape[0], self.omega_plus / 2)
        return centre - radius, centre + radius


def factorize_domain(
    system: ConeToeplitzSystem, j, omega_plus: float = 1.0, *, by_index: bool = False
) -> DomainFactorization:
    """Partition Lambda+ into sites not above ``j``, ``j`` itself, and sites strictly above.

    ``j`` is a lattice point, or a position in ``system.lambda_plus`` when
    ``by_index`` is set.
    """
    if by_index:
        idx = int(j)
        if not 0 <= idx < system.size:
            raise ArgumentError(f"index {j} is not in Lambda+")
    else:
        try:
            idx = system.index_of(j)
        except ValueError:
            raise ArgumentError(f"pivot {j} is not in Lambda+") from None
    pts = system.lambda_plus
    above = np.all(pts >= pts[idx], axis=1)
    less = np.flatnonzero(~above)
    greater = np.flatnonzero(above & (np.arange(system.size) != idx))
    return DomainFactorization(system, idx, less, greater, float(omega_plus))


def enclosure_violations(
    fact: DomainFactorization,
    eta_less,
    samples: int = 1000,
    seed: int = 0,
) -> int:
    """Count sampled ``(eta_j, eta_>)`` with ``eta_>`` in ``M_>`` but not in ``M_>^+``.

    ``eta_j`` is drawn uniformly from ``[xi, xi + w]``; the first two draws
    are pinned to the endpoints.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1]))
    xi = float(fact.xi(eta_less)[0])
    eta_j = rng.uniform(xi, xi + fact.omega_plus, size=samples)
    eta_j[:2] = [xi, xi + fact.omega_plus][: min(2, samples)]
    if fact.greater.size == 0:
        return 0
    eta_g = fact.sample_M_greater(eta_less, eta_j, rng)
    inside = fact.in_M_greater(eta_less, eta_j, eta_g)
    if not np.all(inside):
        raise ArgumentError("sampler produced a point outside M_>; factorisation is inconsistent")
    return int(np.count_nonzero(~fact.in_M_greater_plus(eta_less, eta_g)))


def enclosure_check(fact: DomainFactorization, eta_less, samples: int = 1000, seed: int = 0) -> bool:
    return enclosure_violations(fact, eta_less, samples, seed) == 0


def enlarged_volume(fact: DomainFactorization) -> float:
    """Exact volume of ``M_>^+``: ``|det A_>| * sum |B_nj| * w^{|Lambda_>|}``."""
    pts = fact.system.lambda_plus[fact.greater]
    det = cone_determinant(fact.A_greater, pts) if fact.greater.size else 1.0
    col = np.abs(fact.system.B[np.append(fact.greater, fact.j), fact.j]).sum()
    return abs(det) * float(col) * fact.omega_plus ** fact.greater.size
