"""Finite-box alloy-type Hamiltonians.

The continuum operator ``-Laplace + V0 + V_omega`` on ``[0, l]^d`` is replaced
by the standard second-order finite-difference operator on a cell-centred
grid with ``r`` nodes per unit length.  For ``r = 1`` and a constant bump the
potential on cell ``j`` is exactly the coordinate ``eta_j = (A omega)_j`` of
the Toeplitz system, so the algebra of :mod:`alloylab.toeplitz` applies with no
discretisation error.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
import yaml

from .errors import AdmissibilityError, ArgumentError, ConfigError, ResourceError

BOUNDARY_CONDITIONS = ("dirichlet", "neumann", "periodic")
REQUIRED_KEYS = ("d", "l", "bc", "omega_plus", "gamma", "a")
OPTIONAL_KEYS = ("r", "kappa", "v0", "w")

DEFAULT_MAX_DIM = 20000


def max_dimension() -> int:
    """Matrix size cap, overridable through ``ALLOYLAB_MAX_DIM``."""
    raw = os.environ.get("ALLOYLAB_MAX_DIM")
    if raw is None:
        return DEFAULT_MAX_DIM
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"ALLOYLAB_MAX_DIM must be an integer, got {raw!r}") from None


def _frozen(arr) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


def cube_points(lo: int, hi: int, d: int) -> np.ndarray:
    """All integer points of ``[lo, hi]^d`` in row-major order, shape ``(n, d)``."""
    axis = np.arange(lo, hi + 1)
    grids = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1).astype(np.int64)


@dataclass(frozen=True, eq=False)
class SingleSite:
    """Generalised step function ``u = sum_g a_g w(. - g)``.

    ``a`` is stored on the padded cube ``{0..g}^d`` (zeros where the user gave
    no coefficient), ``a[0, ..., 0] == 1``.  ``w`` holds ``r^d`` node samples of
    the bump on one unit cell; ``None`` means the constant ``kappa``.
    """

    a: np.ndarray
    kappa: float = 1.0
    w: np.ndarray | None = None

    def __post_init__(self):
        a = _frozen(self.a)
        if a.ndim < 1 or a.ndim > 3:
            raise AdmissibilityError("convolution array must have 1 to 3 axes")
        if len(set(a.shape)) != 1:
            raise AdmissibilityError(f"convolution array must be a cube, got shape {a.shape}")
        object.__setattr__(self, "a", a)
        if self.w is not None:
            object.__setattr__(self, "w", _frozen(self.w))
        if not self.kappa > 0:
            raise AdmissibilityError(f"kappa must be positive, got {self.kappa}")
        if a.flat[0] != 1.0:
            raise AdmissibilityError(f"a_0 must equal 1, got {a.flat[0]}")
        if self.a_star >= 1.0:
            raise AdmissibilityError(f"a* = {self.a_star} must be < 1")
        if self.w is not None and np.any(self.w < self.kappa):
            raise AdmissibilityError("bump samples must be >= kappa on the unit cell")

    @classmethod
    def from_coefficients(cls, gamma, a, kappa: float = 1.0, w=None) -> "SingleSite":
        """Build from a support list ``gamma`` and matching coefficients ``a``.

        ``gamma`` holds lattice points (ints in one dimension).  Every point
        must satisfy ``k >= 0`` componentwise and the origin must be present.
        """
        pts = np.atleast_2d(np.asarray(gamma, dtype=np.int64))
        if pts.shape[0] == 1 and np.ndim(gamma) == 1:
            pts = pts.T
        coef = np.asarray(a, dtype=np.float64).ravel()
        if pts.shape[0] != coef.size:
            raise AdmissibilityError(f"gamma has {pts.shape[0]} points but a has {coef.size} values")
        if np.any(pts < 0):
            raise AdmissibilityError("gamma must lie in the positive cone k >= 0")
        if not np.any(np.all(pts == 0, axis=1)):
            raise AdmissibilityError("gamma must contain the origin")
        d = pts.shape[1]
        side = int(pts.max()) + 1
        arr = np.zeros((side,) * d)
        for p, c in zip(pts, coef):
            arr[tuple(p)] += c
        return cls(arr, kappa=kappa, w=w)

    @property
    def d(self) -> int:
        return self.a.ndim

    @property
    def g(self) -> int:
        """Largest offset in the padded support cube."""
        return self.a.shape[0] - 1

    @property
    def a_star(self) -> float:
        return float(np.abs(self.a).sum() - abs(self.a.flat[0]))

    def support(self) -> np.ndarray:
        return cube_points(0, self.g, self.d)

    def bump(self, r: int) -> np.ndarray:
        if self.w is None:
            return np.full((r,) * self.d, float(self.kappa))
        return np.asarray(self.w)

    @property
    def is_step(self) -> bool:
        return self.w is None or bool(np.all(self.w == self.w.flat[0]))

    @property
    def sign_definite(self) -> bool:
        return bool(np.all(self.a >= 0))


@dataclass(frozen=True, eq=False)
class ModelConfig:
    d: int
    l: int
    bc: str
    site: SingleSite
    omega_plus: float
    r: int = 1
    v0: np.ndarray | None = None

    def __post_init__(self):
        bc = str(self.bc).lower()
        object.__setattr__(self, "bc", bc)
        if bc not in BOUNDARY_CONDITIONS:
            raise ConfigError(f"bc must be one of {BOUNDARY_CONDITIONS}, got {self.bc!r}")
        if not 1 <= self.d <= 3:
            raise ConfigError(f"d must be 1, 2 or 3, got {self.d}")
        if self.l < 1 or self.r < 1:
            raise ConfigError(f"l and r must be >= 1, got l={self.l}, r={self.r}")
        if not self.omega_plus > 0:
            raise ConfigError(f"omega_plus must be positive, got {self.omega_plus}")
        if self.site.d != self.d:
            raise ConfigError(f"single site lives in d={self.site.d}, config has d={self.d}")
        cell = (self.r,) * self.d
        if self.site.w is not None and self.site.w.shape != cell:
            raise ConfigError(f"w must have shape {cell}, got {self.site.w.shape}")
        v0 = np.zeros(cell) if self.v0 is None else np.broadcast_to(np.asarray(self.v0, float), cell)
        object.__setattr__(self, "v0", _frozen(v0))

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    @property
    def h(self) -> float:
        return 1.0 / self.r

    @property
    def grid_shape(self) -> tuple[int, ...]:
        return (self.r * self.l,) * self.d

    @property
    def n_nodes(self) -> int:
        return (self.r * self.l) ** self.d

    @property
    def lambda_plus_shape(self) -> tuple[int, ...]:
        return (self.l + self.site.g + 1,) * self.d

    def lambda_plus(self) -> np.ndarray:
        """Sites ``{-g..l}^d`` whose couplings reach the box, row-major."""
        return cube_points(-self.site.g, self.l, self.d)

    def lambda_tilde(self) -> np.ndarray:
        return cube_points(0, self.l, self.d)


@dataclass(frozen=True, eq=False)
class DisorderSample:
    lambda_plus: np.ndarray
    omega: np.ndarray
    seed: int
    index: int

    def grid(self, shape) -> np.ndarray:
        return self.omega.reshape(shape)


@dataclass(frozen=True, eq=False)
class Hamiltonian:
    """Sparse lattice operator plus the grid data needed to interpret it."""

    matrix: sp.csr_matrix
    potential: np.ndarray
    shape: tuple[int, ...]
    h: float
    bc: str

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def tridiagonal(self):
        """``(diag, offdiag)`` when the matrix is tridiagonal, else ``None``."""
        if len(self.shape) != 1 or (self.bc == "periodic" and self.dim > 2):
            return None
        m = self.matrix
        return m.diagonal(0).copy(), m.diagonal(1).copy()

    def node_coordinates(self) -> np.ndarray:
        """Cell-centred positions of the nodes, shape ``(dim, d)``."""
        axes = [(np.arange(n) + 0.5) * self.h for n in self.shape]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def cell_nodes(self, cell) -> np.ndarray:
        """Flat indices of the nodes inside the unit cell at lattice site ``cell``."""
        r = int(round(1.0 / self.h))
        cell = np.atleast_1d(np.asarray(cell, dtype=np.int64))
        ranges = [np.arange(c * r, (c + 1) * r) for c in cell]
        if any(rg[0] < 0 or rg[-1] >= n for rg, n in zip(ranges, self.shape)):
            raise ArgumentError(f"cell {tuple(cell)} lies outside the box")
        idx = np.meshgrid(*ranges, indexing="ij")
        return np.ravel_multi_index(tuple(i.ravel() for i in idx), self.shape)


# --------------------------------------------------------------------------
# Operations


def sample_disorder(config: ModelConfig, seed: int, index: int) -> DisorderSample:
    """I.i.d. uniform couplings on ``[0, omega_plus]`` over Lambda+.

    The stream is keyed by ``(seed, index)`` only, so samples can be produced
    in any order or in parallel.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))
    pts = config.lambda_plus()
    omega = rng.uniform(0.0, config.omega_plus, size=pts.shape[0])
    return DisorderSample(pts, omega, int(seed), int(index))


def zero_disorder(config: ModelConfig) -> DisorderSample:
    pts = config.lambda_plus()
    return DisorderSample(pts, np.zeros(pts.shape[0]), 0, 0)


def _check_sample(config: ModelConfig, sample: DisorderSample) -> None:
    pts = config.lambda_plus()
    if sample.omega.shape != (pts.shape[0],) or not np.array_equal(sample.lambda_plus, pts):
        raise ConfigError(
            f"disorder sample indexed by {sample.lambda_plus.shape[0]} sites, "
            f"config expects Lambda+ with {pts.shape[0]} sites"
        )


def cell_potential(config: ModelConfig, sample: DisorderSample) -> np.ndarray:
    """Coefficient of the bump on each unit cell of the box, shape ``(l,)*d``.

    Computed by summing ``omega_k a_g`` over all pairs ``(k, g)`` with
    ``k + g`` landing in the cell, i.e. the alloy sum taken literally.
    """
    _check_sample(config, sample)
    site = config.site
    out = np.zeros((config.l,) * config.d)
    cells = sample.lambda_plus
    for gamma in site.support():
        coef = site.a[tuple(gamma)]
        if coef == 0.0:
            continue
        target = cells + gamma
        inside = np.all((target >= 0) & (target < config.l), axis=1)
        np.add.at(out, tuple(target[inside].T), coef * sample.omega[inside])
    return out


def assemble_potential(config: ModelConfig, sample: DisorderSample) -> np.ndarray:
    """Random potential ``V_omega`` at every grid node, shape ``grid_shape``."""
    cells = cell_potential(config, sample)
    return np.kron(cells, config.site.bump(config.r))


def laplacian_1d(n: int, bc: str) -> sp.csr_matrix:
    """``-d^2/dx^2`` on ``n`` cell-centred nodes with unit spacing."""
    rows = [np.arange(n), np.arange(n - 1), np.arange(1, n)]
    cols = [np.arange(n), np.arange(1, n), np.arange(n - 1)]
    vals = [np.full(n, 2.0), -np.ones(n - 1), -np.ones(n - 1)]
    if bc == "neumann":
        # mirror ghost node: psi(-1) = psi(0), psi(n) = psi(n - 1)
        rows += [np.array([0, n - 1])]
        cols += [np.array([0, n - 1])]
        vals += [np.array([-1.0, -1.0])]
    elif bc == "periodic":
        rows += [np.array([0, n - 1])]
        cols += [np.array([n - 1, 0])]
        vals += [np.array([-1.0, -1.0])]
    m = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return m.tocsr()


def laplacian(shape: Sequence[int], h: float, bc: str) -> sp.csr_matrix:
    """Kronecker sum of 1D Laplacians, row-major node order, scaled by ``h^-2``."""
    out = None
    for axis, n in enumerate(shape):
        term = laplacian_1d(n, bc)
        for other, m in enumerate(shape):
            if other < axis:
                term = sp.kron(sp.identity(m), term)
            elif other > axis:
                term = sp.kron(term, sp.identity(m))
        out = term if out is None else out + term
    return (out / h**2).tocsr()


def hamiltonian_from_potential(potential: np.ndarray, h: float, bc: str) -> Hamiltonian:
    shape = tuple(potential.shape)
    dim = int(np.prod(shape))
    if dim > max_dimension():
        raise ResourceError(f"matrix dimension {dim} exceeds cap {max_dimension()}")
    mat = laplacian(shape, h, bc) + sp.diags(potential.ravel())
    return Hamiltonian(mat.tocsr(), np.array(potential, dtype=float), shape, h, bc)


def assemble_hamiltonian(config: ModelConfig, sample: DisorderSample) -> Hamiltonian:
    dim = config.n_nodes
    if dim > max_dimension():
        raise ResourceError(f"matrix dimension {dim} exceeds cap {max_dimension()}")
    background = np.tile(config.v0, (config.l,) * config.d)
    return hamiltonian_from_potential(background + assemble_potential(config, sample), config.h, config.bc)


def sub_box(ham: Hamiltonian, lo: Sequence[int], hi: Sequence[int], bc: str = "dirichlet") -> Hamiltonian:
    """Restriction to the node block ``lo <= i < hi`` with its own boundary rule."""
    sl = tuple(slice(a, b) for a, b in zip(lo, hi))
    return hamiltonian_from_potential(ham.potential[sl], ham.h, bc)


# --------------------------------------------------------------------------
# Configuration files


def config_from_mapping(data: Mapping[str, Any]) -> ModelConfig:
    missing = [k for k in REQUIRED_KEYS if k not in data]
    if missing:
        raise ConfigError(f"missing config key: {', '.join(missing)}")
    try:
        d = int(data["d"])
        r = int(data.get("r", 1))
        kappa = float(data.get("kappa", 1.0))
        w = data.get("w")
        if w is not None:
            w = np.asarray(w, dtype=float)
            w = np.full((r,) * d, float(w)) if w.ndim == 0 else w.reshape((r,) * d)
        v0 = data.get("v0")
        if v0 is not None:
            v0 = np.asarray(v0, dtype=float)
            v0 = np.full((r,) * d, float(v0)) if v0.ndim == 0 else v0.reshape((r,) * d)
        gamma = data["gamma"]
        if d == 1 and np.ndim(gamma) == 1:
            gamma = [[int(g)] for g in gamma]
        site = SingleSite.from_coefficients(gamma, data["a"], kappa=kappa, w=w)
        return ModelConfig(
            d=d,
            l=int(data["l"]),
            bc=str(data["bc"]),
            site=site,
            omega_plus=float(data["omega_plus"]),
            r=r,
            v0=v0,
        )
    except (ConfigError, AdmissibilityError):
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from exc


def config_to_mapping(config: ModelConfig) -> dict:
    site = config.site
    pts = site.support()
    keep = [i for i, p in enumerate(pts) if site.a[tuple(p)] != 0.0]
    out = {
        "d": config.d,
        "l": config.l,
        "bc": config.bc,
        "r": config.r,
        "omega_plus": config.omega_plus,
        "gamma": [pts[i].tolist() for i in keep],
        "a": [float(site.a[tuple(pts[i])]) for i in keep],
        "kappa": float(site.kappa),
        "v0": np.asarray(config.v0).ravel().tolist(),
    }
    if site.w is not None:
        out["w"] = np.asarray(site.w).ravel().tolist()
    return out


def read_config_file(path) -> dict:
    """Parse a YAML key/value file into a plain dict."""
    try:
        data = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a key/value mapping")
    return data


def load_config(path) -> ModelConfig:
    return config_from_mapping(read_config_file(path))
