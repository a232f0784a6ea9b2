"""Cone-triangular block-Toeplitz matrices built from a convolution vector.

Sites are compared with the componentwise order ``j >= k``.  A convolution
vector supported in the positive cone produces a matrix ``A_jk = a_{j-k}``
that is lower triangular with respect to any linear extension of that order,
so its inverse can be built row by row with no pivoting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import AdmissibilityError, ContractError, ResourceError, UnsupportedError
from .model import ModelConfig, SingleSite, assemble_potential, cube_points

MAX_SIDE = 20000


def cone_leq(j, k) -> bool:
    """True iff ``j >= k`` in every coordinate (``k`` precedes ``j``)."""
    j = np.atleast_1d(j)
    k = np.atleast_1d(k)
    if j.shape != k.shape:
        raise ValueError(f"points of different dimension: {j.shape} vs {k.shape}")
    return bool(np.all(j >= k))


def linear_extension(points) -> np.ndarray:
    """Permutation listing ``points`` by coordinate sum, ties lexicographic."""
    pts = np.atleast_2d(np.asarray(points))
    keys = [pts[:, i] for i in range(pts.shape[1] - 1, -1, -1)]
    keys.append(pts.sum(axis=1))
    return np.lexsort(keys)


def _as_array(a) -> np.ndarray:
    if isinstance(a, SingleSite):
        return np.asarray(a.a)
    return np.asarray(a, dtype=np.float64)


def a_star(a) -> float:
    arr = _as_array(a)
    return float(np.abs(arr).sum() - abs(arr.flat[0]))


def toeplitz_matrix(a, points: np.ndarray) -> np.ndarray:
    """Dense ``A_jk = a_{j-k}`` over a row-major cube of ``points``."""
    arr = _as_array(a)
    lo = points.min(axis=0)
    shape = tuple(points.max(axis=0) - lo + 1)
    n = points.shape[0]
    if n != int(np.prod(shape)):
        raise ValueError("points must enumerate a full cube")
    out = np.zeros((n, n))
    cols = np.arange(n)
    for gamma in cube_points(0, arr.shape[0] - 1, arr.ndim):
        coef = arr[tuple(gamma)]
        if coef == 0.0:
            continue
        target = points + gamma
        inside = np.all(target - lo < np.asarray(shape), axis=1)
        rows = np.ravel_multi_index(tuple((target[inside] - lo).T), shape)
        out[rows, cols[inside]] = coef
    return out


def _check_cone_support(A: np.ndarray, points: np.ndarray) -> None:
    rows, cols = np.nonzero(A)
    bad = ~np.all(points[rows] >= points[cols], axis=1)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise ContractError(
            f"A[{tuple(points[rows[i]])}, {tuple(points[cols[i]])}] = {A[rows[i], cols[i]]} "
            "is nonzero outside the cone"
        )


def invert_by_substitution(A: np.ndarray, points: np.ndarray, order=None) -> np.ndarray:
    """Inverse of a unit-diagonal cone-triangular matrix.

    Rows of the inverse are produced in ``order`` (default: the
    sum-then-lexicographic extension); each row uses only rows already built.

    Raises
    ------
    ContractError
        If ``A`` has a non-unit diagonal entry or a nonzero entry ``A_jk``
        with ``j`` not dominating ``k``.
    """
    A = np.asarray(A, dtype=np.float64)
    points = np.atleast_2d(np.asarray(points))
    if A.shape[0] > MAX_SIDE:
        raise ResourceError(f"|Lambda+| = {A.shape[0]} exceeds dense cap {MAX_SIDE}")
    if np.any(np.diag(A) != 1.0):
        raise ContractError("diagonal of A must be identically 1")
    _check_cone_support(A, points)
    order = linear_extension(points) if order is None else np.asarray(order, dtype=np.int64)
    return _kernels.cone_substitution(np.ascontiguousarray(A), order)


def cone_determinant(A: np.ndarray, points: np.ndarray) -> float:
    """Determinant of a cone-supported matrix as the product of its diagonal."""
    A = np.asarray(A, dtype=np.float64)
    _check_cone_support(A, np.atleast_2d(np.asarray(points)))
    return float(np.prod(np.diag(A)))


def column_sum_norm(B: np.ndarray) -> float:
    return float(np.abs(B).sum(axis=0).max())


@dataclass(frozen=True, eq=False)
class ConeToeplitzSystem:
    lambda_plus: np.ndarray
    order: np.ndarray
    A: np.ndarray
    B: np.ndarray
    a_star: float
    a: np.ndarray

    @property
    def size(self) -> int:
        return self.A.shape[0]

    def index_of(self, point) -> int:
        lo = self.lambda_plus.min(axis=0)
        shape = tuple(self.lambda_plus.max(axis=0) - lo + 1)
        return int(np.ravel_multi_index(tuple(np.atleast_1d(point) - lo), shape))


def build_system(site, lambda_tilde) -> ConeToeplitzSystem:
    """Assemble ``A`` over ``Lambda+ = Lambda~ - Gamma`` (padded to a cube) and invert it.

    ``site`` is a :class:`SingleSite` or a cube-shaped convolution array.
    ``lambda_tilde`` is a box side ``l`` (meaning ``{0..l}^d``) or an array
    of lattice points.
    """
    arr = _as_array(site)
    if arr.flat[0] != 1.0:
        raise AdmissibilityError(f"a_0 must equal 1, got {arr.flat[0]}")
    star = a_star(arr)
    if star >= 1.0:
        raise AdmissibilityError(f"a* = {star} must be < 1")
    d = arr.ndim
    g = arr.shape[0] - 1
    if np.ndim(lambda_tilde) == 0:
        lo_t, hi_t = np.zeros(d, dtype=np.int64), np.full(d, int(lambda_tilde))
    else:
        pts = np.atleast_2d(np.asarray(lambda_tilde, dtype=np.int64))
        lo_t, hi_t = pts.min(axis=0), pts.max(axis=0)
    # pad Lambda~ - Gamma out to its bounding cube
    lo, hi = int((lo_t - g).min()), int(hi_t.max())
    points = cube_points(lo, hi, d)
    if points.shape[0] > MAX_SIDE:
        raise ResourceError(f"|Lambda+| = {points.shape[0]} exceeds dense cap {MAX_SIDE}")
    A = toeplitz_matrix(arr, points)
    order = linear_extension(points)
    B = invert_by_substitution(A, points, order)
    for m in (A, B, points, order):
        m.setflags(write=False)
    return ConeToeplitzSystem(points, order, A, B, star, arr)


def system_for_config(config: ModelConfig) -> ConeToeplitzSystem:
    return build_system(config.site, config.l)


def transform(system: ConeToeplitzSystem, omega) -> np.ndarray:
    """``eta = A omega``."""
    return system.A @ np.asarray(omega, dtype=np.float64)


def inverse_transform(system: ConeToeplitzSystem, eta) -> np.ndarray:
    """``omega = B eta``."""
    return system.B @ np.asarray(eta, dtype=np.float64)


def verify_cell_representation(config: ModelConfig, sample, system: ConeToeplitzSystem | None = None) -> float:
    """Largest gap between the assembled potential and ``w * (A omega)`` on box cells.

    The potential side comes from the alloy sum in :mod:`alloylab.model`; the
    other side from the dense Toeplitz product, so the two are independent.
    """
    if not config.site.is_step:
        raise UnsupportedError("cell representation needs a constant (step) bump")
    system = system_for_config(config) if system is None else system
    eta = transform(system, sample.omega).reshape(config.lambda_plus_shape)
    g = config.site.g
    inside = tuple(slice(g, g + config.l) for _ in range(config.d))
    level = float(config.site.bump(config.r).flat[0])
    expected = np.kron(eta[inside], np.full((config.r,) * config.d, level))
    return float(np.max(np.abs(assemble_potential(config, sample) - expected)))


# --------------------------------------------------------------------------
# Symbol analysis


def symbol_eval(a, theta) -> np.ndarray:
    """``S_A(theta) = sum_k a_k exp(i k . theta)``; ``theta`` has trailing axis ``d``."""
    arr = _as_array(a)
    theta = np.asarray(theta, dtype=np.float64)
    if arr.ndim == 1 and (theta.ndim == 0 or theta.shape[-1] != 1):
        theta = theta[..., None]
    out = np.zeros(theta.shape[:-1], dtype=np.complex128)
    for k in cube_points(0, arr.shape[0] - 1, arr.ndim):
        coef = arr[tuple(k)]
        if coef != 0.0:
            out += coef * np.exp(1j * (theta @ k))
    return out


def symbol_sweep(a, n_points: int = 256) -> np.ndarray:
    """Rows ``(theta, re, im, |S|)`` along the diagonal ``theta * (1, ..., 1)``."""
    arr = _as_array(a)
    theta = np.linspace(-np.pi, np.pi, n_points)
    vals = symbol_eval(arr, np.repeat(theta[:, None], arr.ndim, axis=1))
    return np.column_stack([theta, vals.real, vals.imag, np.abs(vals)])


def nu_trend(a, sizes) -> np.ndarray:
    """Smallest singular value of ``A`` over ``Lambda+`` of each box side."""
    arr = _as_array(a)
    out = []
    for l in sizes:
        points = cube_points(-(arr.shape[0] - 1), int(l), arr.ndim)
        A = toeplitz_matrix(arr, points)
        out.append(np.linalg.svd(A, compute_uv=False)[-1])
    return np.asarray(out)
