"""Spectral kernels for finite-box Hamiltonians.

Eigenvalue counting goes through the inertia of ``H - E`` (Sylvester's law):
a Sturm sequence for tridiagonal matrices and a Bunch-Kaufman ``LDL^T``
factorisation otherwise.  Resolvent blocks use a sparse LU of ``H - z``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import trapezoid

from . import _kernels
from .errors import ArgumentError, DomainError, NumericalError, UnsupportedError
from .model import Hamiltonian, ModelConfig, assemble_hamiltonian, laplacian
from .toeplitz import system_for_config, transform
from .geometry import factorize_domain

log = logging.getLogger(__name__)

NUDGE = 1e-12
MAX_NUDGES = 4
EXPLICIT_BLOCK_MAX = 256
POWER_MAX_ITER = 1000
POWER_RTOL = 1e-6


@dataclass(frozen=True)
class EnergyInterval:
    """Open interval ``]e1, e2[``."""

    e1: float
    e2: float

    def __post_init__(self):
        if not self.e1 <= self.e2:
            raise ArgumentError(f"interval needs e1 <= e2, got ]{self.e1}, {self.e2}[")

    @property
    def width(self) -> float:
        return self.e2 - self.e1

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x)
        return (x > self.e1) & (x < self.e2)

    def distance(self, x) -> np.ndarray:
        x = np.asarray(x)
        return np.maximum(0.0, np.maximum(self.e1 - x, x - self.e2))


def _matrix(H):
    return H.matrix if isinstance(H, Hamiltonian) else H


def _dense(H) -> np.ndarray:
    m = _matrix(H)
    return m.toarray() if sp.issparse(m) else np.asarray(m, dtype=np.float64)


def _tridiagonal_parts(H):
    if isinstance(H, Hamiltonian):
        return H.tridiagonal()
    m = sp.coo_matrix(H)
    if m.nnz and np.max(np.abs(m.row - m.col)) > 1:
        return None
    m = m.tocsr()
    return m.diagonal(0).copy(), m.diagonal(1).copy()


def eigenvalues(H) -> np.ndarray:
    """All eigenvalues, ascending (dense solver)."""
    return np.linalg.eigvalsh(_dense(H))


def _ldl_inertia(dense: np.ndarray, energy: float) -> tuple[int, bool]:
    _, d, _ = sla.ldl(dense - energy * np.eye(dense.shape[0]), lower=True)
    n = d.shape[0]
    neg = 0
    i = 0
    while i < n:
        if i + 1 < n and d[i + 1, i] != 0.0:
            a, b, c = d[i, i], d[i + 1, i], d[i + 1, i + 1]
            det = a * c - b * b
            if det == 0.0:
                return 0, True
            if det < 0.0:
                neg += 1
            elif a + c < 0.0:
                neg += 2
            i += 2
        else:
            if d[i, i] == 0.0:
                return 0, True
            neg += d[i, i] < 0.0
            i += 1
    return int(neg), False


def count_below_many(H, energies) -> np.ndarray:
    """Number of eigenvalues strictly below each energy.

    An energy that hits an exactly singular pivot is nudged upward by
    ``1e-12`` and retried; persistent breakdown raises :class:`NumericalError`.
    """
    energies = np.atleast_1d(np.asarray(energies, dtype=np.float64)).copy()
    parts = _tridiagonal_parts(H)
    if parts is not None:
        diag, off = parts
        off2 = off * off
        counts, singular = _kernels.sturm_count(diag, off2, energies)
        for attempt in range(MAX_NUDGES):
            if not singular.any():
                return counts
            log.info("zero pivot at %d energies; nudging by %g", int(singular.sum()), NUDGE)
            energies[singular] += NUDGE
            redo, bad = _kernels.sturm_count(diag, off2, energies[singular])
            idx = np.flatnonzero(singular)
            counts[idx] = redo
            singular[:] = False
            singular[idx] = bad
        if singular.any():
            raise NumericalError("Sturm sequence broke down after repeated nudges")
        return counts
    dense = _dense(H)
    out = np.empty(energies.size, dtype=np.int64)
    for k, e in enumerate(energies):
        for attempt in range(MAX_NUDGES + 1):
            neg, singular = _ldl_inertia(dense, e)
            if not singular:
                break
            log.info("zero pivot at E=%r; nudging by %g", e, NUDGE)
            e += NUDGE
        else:
            raise NumericalError(f"LDL factorisation singular near E={energies[k]}")
        out[k] = neg
    return out


def count_below(H, E: float) -> int:
    return int(count_below_many(H, [E])[0])


def trace_projector(H, interval: EnergyInterval) -> int:
    """Number of eigenvalues in ``[e1, e2[`` (equal to the open interval almost surely)."""
    if interval.e1 == interval.e2:
        return 0
    lo, hi = count_below_many(H, [interval.e1, interval.e2])
    return int(hi - lo)


# --------------------------------------------------------------------------
# Resolvent blocks


class _Resolvent:
    """Sparse LU of ``H - z`` reused across many block queries."""

    def __init__(self, H, z: complex):
        m = sp.csc_matrix(_matrix(H), dtype=np.complex128)
        self.n = m.shape[0]
        self.z = complex(z)
        self.lu = spla.splu((m - self.z * sp.identity(self.n, format="csc")).tocsc())

    def columns(self, cols) -> np.ndarray:
        rhs = np.zeros((self.n, len(cols)), dtype=np.complex128)
        rhs[cols, np.arange(len(cols))] = 1.0
        return self.lu.solve(rhs)

    def block_norm(self, X, Y) -> float:
        X = np.asarray(X, dtype=np.int64)
        Y = np.asarray(Y, dtype=np.int64)
        if min(X.size, Y.size) == 0:
            return 0.0
        if Y.size <= EXPLICIT_BLOCK_MAX:
            return float(np.linalg.norm(self.columns(Y)[X], 2))
        if X.size <= EXPLICIT_BLOCK_MAX:
            # ||P_X R P_Y|| = ||P_Y R^* P_X||
            rhs = np.zeros((self.n, X.size), dtype=np.complex128)
            rhs[X, np.arange(X.size)] = 1.0
            return float(np.linalg.norm(self.lu.solve(rhs, trans="H")[Y], 2))
        return self._power_norm(X, Y)

    def _power_norm(self, X, Y) -> float:
        """Largest eigenvalue of ``P_Y R^* P_X R P_Y`` by implicitly restarted Lanczos."""

        def apply(v):
            full = np.zeros(self.n, dtype=np.complex128)
            full[Y] = np.ravel(v)
            u = np.zeros(self.n, dtype=np.complex128)
            u[X] = self.lu.solve(full)[X]
            return self.lu.solve(u, trans="H")[Y]

        op = spla.LinearOperator((Y.size, Y.size), matvec=apply, dtype=np.complex128)
        try:
            val = spla.eigsh(
                op, k=1, which="LA", tol=POWER_RTOL, maxiter=POWER_MAX_ITER,
                v0=np.ones(Y.size, dtype=np.complex128), return_eigenvectors=False,
            )
        except spla.ArpackNoConvergence as exc:
            raise NumericalError(f"block norm iteration did not converge in {POWER_MAX_ITER} steps") from exc
        return float(np.sqrt(max(float(val[0].real), 0.0)))


def resolvent_block_norm(H, z: complex, X, Y) -> float:
    """Operator norm of the ``X x Y`` block of ``(H - z)^-1``.

    Small blocks are formed explicitly from shifted solves; large ones go
    through a Lanczos iteration on ``P_Y R^* P_X R P_Y``.
    """
    return _Resolvent(H, z).block_norm(X, Y)


@dataclass(frozen=True, eq=False)
class DecayFit:
    rate: float
    intercept: float
    r2: float
    separation: np.ndarray
    log_norm: np.ndarray

    def prediction(self) -> np.ndarray:
        return self.intercept - self.rate * self.separation


def linear_fit(x, y) -> tuple[float, float, float]:
    """Least-squares ``y = slope * x + intercept``; returns ``(slope, intercept, R^2)``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def combes_thomas_fit(H: Hamiltonian, z: complex, pairs) -> DecayFit:
    """Fit ``log ||chi_x R(z) chi_y||`` against ``|x - y|`` over lattice cell pairs."""
    pairs = list(pairs)
    if len(pairs) < 3:
        raise ArgumentError("need at least 3 (x, y) pairs for a decay fit")
    res = _Resolvent(H, z)
    sep, lognorm = [], []
    for x, y in pairs:
        nrm = res.block_norm(H.cell_nodes(x), H.cell_nodes(y))
        sep.append(float(np.linalg.norm(np.atleast_1d(x) - np.atleast_1d(y))))
        lognorm.append(np.log(nrm))
    slope, intercept, r2 = linear_fit(sep, lognorm)
    return DecayFit(-slope, intercept, r2, np.asarray(sep), np.asarray(lognorm))


# --------------------------------------------------------------------------
# m-regularity and the geometric resolvent identity


@dataclass(frozen=True)
class RegularityProbe:
    """Box side ``l``, decay mass ``m`` and collar width ``delta`` (all in length units)."""

    l: float
    m: float
    delta: float = 1.0
    epsilons: tuple = (1e-1, 1e-2, 1e-3)

    def __post_init__(self):
        if not self.m > 0:
            raise ArgumentError(f"decay mass must be positive, got {self.m}")
        if not 2 * self.delta < self.l / 3:
            raise ArgumentError(f"collar 2*delta={2 * self.delta} must be < l/3={self.l / 3}")


def _probe_regions(H: Hamiltonian, probe: RegularityProbe):
    if probe.delta < H.h:
        raise ArgumentError("collar width must be at least one grid spacing")
    side = H.shape[0] * H.h
    if abs(side - probe.l) > 1e-9:
        raise ArgumentError(f"probe is for l={probe.l}, Hamiltonian box has side {side}")
    x = H.node_coordinates()
    to_wall = np.minimum(x, side - x).min(axis=1)
    collar = np.flatnonzero(to_wall < 2 * probe.delta)
    centre = np.flatnonzero(np.max(np.abs(x - side / 2), axis=1) <= side / 6)
    return collar, centre


def regularity_norm(H: Hamiltonian, E: float, probe: RegularityProbe) -> float:
    """Largest collar-to-centre resolvent block norm over the probe's epsilon grid."""
    collar, centre = _probe_regions(H, probe)
    return max(resolvent_block_norm(H, E + 1j * eps, collar, centre) for eps in probe.epsilons)


def m_regular(H: Hamiltonian, E: float, probe: RegularityProbe) -> bool:
    return regularity_norm(H, E, probe) <= np.exp(-probe.m * probe.l)


def geometric_resolvent_residual(
    H_inner: Hamiltonian,
    H_outer: Hamiltonian,
    phi: np.ndarray,
    z: complex,
    offset,
) -> float:
    """Max-entry residual of ``phi R' = R phi + R W(phi) R'``.

    ``R'`` is the outer resolvent, ``R`` the inner one, ``W(phi)`` the
    commutator of the outer finite-difference Laplacian with ``phi``.  The
    inner box occupies the outer nodes ``offset <= i < offset + shape``;
    ``phi`` is an outer grid function that must vanish outside the inner box
    and on its outermost node layer, unless the two boxes coincide.
    """
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape != H_outer.shape:
        raise ArgumentError(f"phi has shape {phi.shape}, outer grid is {H_outer.shape}")
    if H_inner.h != H_outer.h:
        raise ArgumentError("inner and outer grids have different spacings")
    offset = np.asarray(offset, dtype=np.int64)
    block = tuple(slice(o, o + n) for o, n in zip(offset, H_inner.shape))
    interior = tuple(slice(o + 1, o + n - 1) for o, n in zip(offset, H_inner.shape))
    if any(o < 0 or o + n > m for o, n, m in zip(offset, H_inner.shape, H_outer.shape)):
        raise ArgumentError("inner box does not fit inside the outer box")
    same_box = tuple(H_inner.shape) == tuple(H_outer.shape) and not offset.any()
    mask = np.zeros(phi.shape, dtype=bool)
    mask[interior] = True
    if not same_box and np.any(phi[~mask] != 0.0):
        raise ArgumentError("phi must be supported strictly inside the inner box")
    if not np.array_equal(H_inner.potential, H_outer.potential[block]):
        raise ArgumentError("inner potential is not the restriction of the outer one")

    n_out = H_outer.dim
    emb = np.ravel_multi_index(
        tuple(g.ravel() for g in np.meshgrid(*[np.arange(s.start, s.stop) for s in block], indexing="ij")),
        H_outer.shape,
    )
    r_out = np.linalg.inv(H_outer.dense() - z * np.eye(n_out))
    r_in = np.linalg.inv(H_inner.dense() - z * np.eye(H_inner.dim))
    phi_flat = phi.ravel()
    lap = laplacian(H_outer.shape, H_outer.h, H_outer.bc)
    phi_op = sp.diags(phi_flat)
    commutator = (lap @ phi_op - phi_op @ lap).toarray()

    lhs = (phi_flat[:, None] * r_out)[emb]
    phi_rows = np.zeros((H_inner.dim, n_out))
    phi_rows[np.arange(H_inner.dim), emb] = phi_flat[emb]
    rhs = r_in @ phi_rows + r_in @ (commutator @ r_out)[emb]
    return float(np.max(np.abs(lhs - rhs)))


# --------------------------------------------------------------------------
# Spectral averaging along one coordinate eta_j


def spectral_averaging_check(
    config: ModelConfig,
    j,
    f: np.ndarray,
    interval: EnergyInterval,
    t: float,
    sample,
    n_grid: int = 200,
) -> tuple[float, float]:
    """Quadrature of ``eta_j -> <f, chi_j P(I) chi_j f> / (1 + t eta_j^2)`` over ``[xi, xi + w]``.

    All other ``eta`` coordinates stay at the values produced by ``sample``;
    ``eta_j`` ranges over the slice of the integration domain it is allowed
    to occupy.  Returns ``(integral, |I|)``.
    """
    if not config.site.is_step:
        raise UnsupportedError("spectral averaging check needs the step bump")
    f = np.asarray(f, dtype=np.float64).ravel()
    if f.size != config.n_nodes:
        raise ArgumentError(f"f has {f.size} entries, grid has {config.n_nodes}")
    if abs(np.linalg.norm(f) - 1.0) > 1e-10:
        raise ArgumentError("f must be normalised")
    if interval.width == 0.0:
        return 0.0, 0.0
    system = system_for_config(config)
    fact = factorize_domain(system, j, config.omega_plus)
    eta = transform(system, sample.omega)
    eta_less = eta[fact.less]
    xi = float(fact.xi(eta_less)[0])

    ham = assemble_hamiltonian(config, sample)
    nodes = ham.cell_nodes(j)
    chi_f = np.zeros_like(f)
    chi_f[nodes] = f[nodes]
    level = float(config.site.bump(config.r).flat[0])
    base = ham.dense()
    base[nodes, nodes] -= level * eta[fact.j]

    grid = np.linspace(xi, xi + config.omega_plus, n_grid)
    vals = np.empty(n_grid)
    for k, s in enumerate(grid):
        mat = base.copy()
        mat[nodes, nodes] += level * s
        lam, vec = np.linalg.eigh(mat)
        sel = interval.contains(lam)
        weight = float(np.sum(np.abs(vec[:, sel].T @ chi_f) ** 2))
        vals[k] = weight / (1.0 + t * s * s)
    return float(trapezoid(vals, grid)), interval.width


# --------------------------------------------------------------------------
# Birman-Schwinger reduction


@dataclass(frozen=True, eq=False)
class BirmanSchwingerOperator:
    gamma: np.ndarray
    energy: float
    h0_floor: float
    sqrt_resolvent: np.ndarray = field(repr=False)

    @property
    def delta(self) -> float:
        """``1 / (inf sigma(H0) - E)``, the norm of ``(H0 - E)^-1``."""
        return 1.0 / (self.h0_floor - self.energy)


def birman_schwinger(H0, V, E: float) -> BirmanSchwingerOperator:
    """``(H0 - E)^-1/2 V (H0 - E)^-1/2`` for ``E`` below the spectrum of ``H0``."""
    lam, vec = np.linalg.eigh(_dense(H0))
    floor = float(lam[0])
    if E > floor - 1e-6:
        raise DomainError(f"E={E} must lie below inf sigma(H0)={floor} by at least 1e-6")
    s = (vec / np.sqrt(lam - E)) @ vec.T
    v = np.asarray(V, dtype=np.float64).ravel()
    gamma = s @ (v[:, None] * s)
    gamma = 0.5 * (gamma + gamma.T)
    return BirmanSchwingerOperator(gamma, float(E), floor, s)


def bs_resolvent_residual(bs: BirmanSchwingerOperator, H0, V) -> float:
    """Max-entry gap between ``(H0 + V - E)^-1`` and ``S (1 + Gamma)^-1 S``."""
    n = bs.gamma.shape[0]
    full = _dense(H0) + np.diag(np.asarray(V, dtype=np.float64).ravel()) - bs.energy * np.eye(n)
    lhs = np.linalg.inv(full)
    rhs = bs.sqrt_resolvent @ np.linalg.solve(np.eye(n) + bs.gamma, bs.sqrt_resolvent)
    return float(np.max(np.abs(lhs - rhs)))


@dataclass(frozen=True)
class BSReport:
    eps: float
    dist_spectrum: float
    resolvent_norm: float
    near: bool
    large_norm: bool
    delta: float
    gamma_inverse_norm: float
    radius: float
    dist_gamma: float
    gamma_trace: int

    @property
    def equivalent(self) -> bool:
        return self.near == self.large_norm

    @property
    def norm_implication(self) -> bool:
        return (not self.large_norm) or self.gamma_inverse_norm > 1.0 / (self.delta * self.eps)

    @property
    def chebyshev_step(self) -> bool:
        return (not self.dist_gamma < self.radius) or self.gamma_trace >= 1

    @property
    def holds(self) -> bool:
        return self.equivalent and self.norm_implication and self.chebyshev_step


def bs_equivalence_check(H0, V, E: float, eps: float) -> BSReport:
    """Check the proximity/norm equivalence and the Birman-Schwinger reduction for one sample.

    The eigenvalue distance comes from ``eigvalsh`` and the resolvent norm
    from the singular values of an explicitly solved inverse, so the two
    sides of the equivalence are computed separately.  The proximity radius
    for ``Gamma`` near ``-1`` is ``delta * eps``.
    """
    if not eps > 0:
        raise ArgumentError("eps must be positive")
    bs = birman_schwinger(H0, V, E)
    n = bs.gamma.shape[0]
    full = _dense(H0) + np.diag(np.asarray(V, dtype=np.float64).ravel())
    dist = float(np.min(np.abs(np.linalg.eigvalsh(full) - E)))
    rnorm = float(np.linalg.norm(np.linalg.solve(full - E * np.eye(n), np.eye(n)), 2))
    g_inv = float(np.linalg.norm(np.linalg.inv(np.eye(n) + bs.gamma), 2))
    radius = bs.delta * eps
    g_eig = np.linalg.eigvalsh(bs.gamma)
    return BSReport(
        eps=float(eps),
        dist_spectrum=dist,
        resolvent_norm=rnorm,
        near=dist < eps,
        large_norm=rnorm > 1.0 / eps,
        delta=bs.delta,
        gamma_inverse_norm=g_inv,
        radius=radius,
        dist_gamma=float(np.min(np.abs(g_eig + 1.0))),
        gamma_trace=int(np.count_nonzero(np.abs(g_eig + 1.0) < radius)),
    )
