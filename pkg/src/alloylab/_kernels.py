"""Hot inner loops, compiled with numba when available.

Each kernel exists twice: a loop form compiled by ``numba.njit`` and a
vectorised numpy form.  The public names at the bottom of the module point at
the compiled form unless numba is missing or ``ALLOYLAB_NO_NUMBA`` is set to a
truthy value before import.  Both forms are always importable so tests and
the benchmark can compare them.
"""

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_DISABLED = os.environ.get("ALLOYLAB_NO_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}
HAS_NUMBA = numba is not None
USE_NUMBA = HAS_NUMBA and not _DISABLED


def _njit(func):
    if not HAS_NUMBA:
        return func
    return numba.njit(cache=True)(func)


# --------------------------------------------------------------------------
# Sturm sequence count for a symmetric tridiagonal matrix


def _sturm_count_loop(diag, off2, energies):
    n = diag.shape[0]
    m = energies.shape[0]
    counts = np.zeros(m, dtype=np.int64)
    singular = np.zeros(m, dtype=np.bool_)
    for k in range(m):
        e = energies[k]
        c = 0
        q = diag[0] - e
        for i in range(n):
            if i > 0:
                q = diag[i] - e - off2[i - 1] / q
            if q == 0.0:
                singular[k] = True
                break
            if q < 0.0:
                c += 1
        counts[k] = c
    return counts, singular


sturm_count_numba = _njit(_sturm_count_loop)


def sturm_count_numpy(diag, off2, energies):
    """Pivot signs of ``T - E`` for every energy at once.

    Parameters
    ----------
    diag : (n,) array
        Diagonal of the tridiagonal matrix.
    off2 : (n - 1,) array
        Squared off-diagonal entries.
    energies : (m,) array

    Returns
    -------
    counts : (m,) int64 array
        Number of negative pivots, i.e. eigenvalues below each energy.
    singular : (m,) bool array
        True where an exactly zero pivot was met; counts there are invalid.
    """
    energies = np.asarray(energies, dtype=np.float64)
    counts = np.zeros(energies.shape[0], dtype=np.int64)
    singular = np.zeros(energies.shape[0], dtype=bool)
    q = diag[0] - energies
    with np.errstate(divide="ignore", invalid="ignore"):
        for i in range(diag.shape[0]):
            if i > 0:
                q = diag[i] - energies - off2[i - 1] / q
            singular |= q == 0.0
            counts += q < 0.0
    return counts, singular


# --------------------------------------------------------------------------
# Row-wise forward substitution for a cone-triangular unit-diagonal matrix


def _cone_substitution_loop(a, order):
    n = a.shape[0]
    b = np.zeros((n, n))
    for p in range(order.shape[0]):
        m = order[p]
        b[m, m] = 1.0
        for j in range(n):
            c = a[m, j]
            if j != m and c != 0.0:
                for k in range(n):
                    b[m, k] -= c * b[j, k]
    return b


cone_substitution_numba = _njit(_cone_substitution_loop)


def cone_substitution_numpy(a, order):
    """Solve ``A B = I`` one row at a time along ``order``.

    Row ``m`` of ``B`` only needs the rows of ``B`` indexed by the
    off-diagonal support of row ``m`` of ``A``, which all precede ``m`` in a
    linear extension of the cone order.
    """
    n = a.shape[0]
    b = np.zeros((n, n))
    for m in order:
        nz = np.flatnonzero(a[m])
        nz = nz[nz != m]
        if nz.size:
            b[m] = -(a[m, nz] @ b[nz])
        b[m, m] += 1.0
    return b


# --------------------------------------------------------------------------
# Membership in a union of translated boxes along a segment


def _shear_feasible_loop(base, direction, width, s_lo, s_hi):
    npts, n = base.shape
    out = np.zeros(npts, dtype=np.bool_)
    for p in range(npts):
        lo = s_lo
        hi = s_hi
        ok = True
        for i in range(n):
            x = base[p, i]
            t = direction[i]
            if t > 0.0:
                a = (x - width) / t
                b = x / t
            elif t < 0.0:
                a = x / t
                b = (x - width) / t
            else:
                if x < 0.0 or x > width:
                    ok = False
                    break
                continue
            if a > lo:
                lo = a
            if b < hi:
                hi = b
            if lo > hi:
                ok = False
                break
        out[p] = ok
    return out


shear_feasible_numba = _njit(_shear_feasible_loop)


def shear_feasible_numpy(base, direction, width, s_lo, s_hi):
    """Rows ``x`` of ``base`` for which some ``s`` in ``[s_lo, s_hi]`` gives
    ``0 <= x - s * direction <= width`` componentwise."""
    base = np.asarray(base, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    lo = np.full(base.shape[0], float(s_lo))
    hi = np.full(base.shape[0], float(s_hi))
    ok = np.ones(base.shape[0], dtype=bool)
    for i, t in enumerate(direction):
        x = base[:, i]
        if t > 0.0:
            lo = np.maximum(lo, (x - width) / t)
            hi = np.minimum(hi, x / t)
        elif t < 0.0:
            lo = np.maximum(lo, x / t)
            hi = np.minimum(hi, (x - width) / t)
        else:
            ok &= (x >= 0.0) & (x <= width)
    return ok & (lo <= hi)


if USE_NUMBA:
    BACKEND = "numba"
    sturm_count = sturm_count_numba
    cone_substitution = cone_substitution_numba
    shear_feasible = shear_feasible_numba
else:
    BACKEND = "numpy"
    sturm_count = sturm_count_numpy
    cone_substitution = cone_substitution_numpy
    shear_feasible = shear_feasible_numpy
