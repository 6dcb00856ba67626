"""Grids, potentials, wave fields and densities.

All grids are cell-centred: along an axis ``[a, b]`` split into ``n`` cells of
width ``h = (b - a) / n`` the nodes sit at ``a + (i + 1/2) h``. Histogram bins
therefore coincide with cells. ``line``/``box`` axes use homogeneous Dirichlet
data outside the domain, ``ring`` axes are periodic with circumference
``b - a``.
"""

from dataclasses import dataclass, field, replace
import math

import numpy as np
import scipy.sparse as sp

from ..errors import InvalidSpecError
from ..noise import DiffusionConstant

TOPOLOGIES = ("line", "box", "ring", "spacetime-box")
MIN_CELLS = 8


@dataclass(frozen=True)
class GridSpec:
    topology: str
    bounds: tuple
    shape: tuple
    dt: float = 1e-3

    def __post_init__(self):
        if self.topology not in TOPOLOGIES:
            raise InvalidSpecError(f"unknown topology {self.topology!r}")
        bounds = tuple((float(a), float(b)) for a, b in self.bounds)
        shape = tuple(int(n) for n in self.shape)
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "shape", shape)
        if len(bounds) != len(shape) or not shape:
            raise InvalidSpecError("bounds and shape must have one entry per axis")
        for (a, b), n in zip(bounds, shape):
            if not b > a:
                raise InvalidSpecError(f"empty axis interval [{a}, {b}]")
            if n < MIN_CELLS:
                raise InvalidSpecError(f"need at least {MIN_CELLS} cells per axis, got {n}")
        if self.topology in ("line", "ring") and len(shape) != 1:
            raise InvalidSpecError(f"{self.topology} grids are one-dimensional")
        if not self.dt > 0:
            raise InvalidSpecError("time step must be positive")

    @classmethod
    def line(cls, a, b, n, dt=1e-3):
        return cls("line", ((a, b),), (n,), dt)

    @classmethod
    def ring(cls, n, circumference=2 * math.pi, dt=1e-3, start=0.0):
        return cls("ring", ((start, start + circumference),), (n,), dt)

    @classmethod
    def box(cls, bounds, shape, dt=1e-3):
        return cls("box", tuple(bounds), tuple(shape), dt)

    @property
    def ndim(self):
        return len(self.shape)

    @property
    def periodic(self):
        return self.topology == "ring"

    @property
    def spacing(self):
        return tuple((b - a) / n for (a, b), n in zip(self.bounds, self.shape))

    @property
    def lengths(self):
        return tuple(b - a for a, b in self.bounds)

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    def axis(self, k=0):
        (a, _), n, h = self.bounds[k], self.shape[k], self.spacing[k]
        return a + (np.arange(n) + 0.5) * h

    def edges(self, k=0):
        (a, b), n = self.bounds[k], self.shape[k]
        return np.linspace(a, b, n + 1)

    @property
    def x(self):
        """Node coordinates of a one-dimensional grid."""
        return self.axis(0)

    def mesh(self):
        return np.meshgrid(*[self.axis(k) for k in range(self.ndim)], indexing="ij")

    def points(self):
        """Node coordinates as an ``(n_nodes, ndim)`` array in C order."""
        return np.stack([m.ravel() for m in self.mesh()], axis=-1)

    def refined(self, factor=2):
        return replace(self, shape=tuple(n * factor for n in self.shape), dt=self.dt / factor)

    def with_dt(self, dt):
        return replace(self, dt=dt)

    def matches(self, other):
        return (
            self.topology == other.topology
            and self.shape == other.shape
            and np.allclose(self.bounds, other.bounds, rtol=0, atol=1e-12)
        )


# --- discrete operators ---------------------------------------------------


def gradient(f, grid, axis=0):
    """Second-order central derivative of a smooth grid function.

    Periodic wrap on rings, second-order one-sided stencils at line edges.
    """
    h = grid.spacing[axis]
    if grid.periodic:
        return (np.roll(f, -1, axis=axis) - np.roll(f, 1, axis=axis)) / (2 * h)
    return np.gradient(f, h, axis=axis, edge_order=2)


def second_derivative(f, grid, axis=0):
    h = grid.spacing[axis]
    if grid.periodic:
        return (np.roll(f, -1, axis=axis) - 2 * f + np.roll(f, 1, axis=axis)) / h**2
    d = np.empty_like(f)
    sl = [slice(None)] * f.ndim

    def at(s):
        idx = list(sl)
        idx[axis] = s
        return tuple(idx)

    d[at(slice(1, -1))] = (f[at(slice(2, None))] - 2 * f[at(slice(1, -1))] + f[at(slice(None, -2))]) / h**2
    # second-order one-sided second derivatives at the edges
    d[at(0)] = (2 * f[at(0)] - 5 * f[at(1)] + 4 * f[at(2)] - f[at(3)]) / h**2
    d[at(-1)] = (2 * f[at(-1)] - 5 * f[at(-2)] + 4 * f[at(-3)] - f[at(-4)]) / h**2
    return d


def _axis_matrices(n, h, periodic):
    """Central first- and second-difference matrices on one axis with the grid's BC."""
    ones = np.ones(n)
    d1 = sp.diags([-ones[:-1], ones[:-1]], [-1, 1], shape=(n, n), format="lil")
    d2 = sp.diags([ones[:-1], -2 * ones, ones[:-1]], [-1, 0, 1], shape=(n, n), format="lil")
    if periodic:
        d1[0, n - 1], d1[n - 1, 0] = -1.0, 1.0
        d2[0, n - 1], d2[n - 1, 0] = 1.0, 1.0
    return d1.tocsr() / (2 * h), d2.tocsr() / h**2


def covariant_laplacian(grid, vector_potential=None, coupling=0.0):
    """Sparse matrix of ``sum_i (d_i - c A_i)^2`` with central differences.

    ``c`` is a complex coupling constant; the cross term uses the symmetric
    form ``d(A psi) + A d psi`` so that for real ``A`` and imaginary ``c`` the
    operator is Hermitian. Dirichlet (zero ghost values) on line/box axes,
    periodic on rings.
    """
    shape = grid.shape
    total = int(np.prod(shape))
    op = sp.csr_matrix((total, total), dtype=complex)
    for k, (n, h) in enumerate(zip(shape, grid.spacing)):
        d1, d2 = _axis_matrices(n, h, grid.periodic)
        left = sp.identity(int(np.prod(shape[:k])), format="csr")
        right = sp.identity(int(np.prod(shape[k + 1 :])), format="csr")
        D1 = sp.kron(sp.kron(left, d1), right, format="csr")
        D2 = sp.kron(sp.kron(left, d2), right, format="csr")
        op = op + D2
        if vector_potential is not None and coupling != 0.0:
            a = sp.diags(np.asarray(vector_potential[k], dtype=float).ravel())
            op = op - coupling * (D1 @ a + a @ D1) + coupling**2 * (a @ a)
    return op.tocsr()


# --- potentials -----------------------------------------------------------


@dataclass
class PotentialSet:
    """Scalar potential, covector potential and charge on a grid.

    ``scalar`` has the grid shape; ``vector`` has shape ``(ndim, *grid.shape)``.
    Either may be ``None`` meaning identically zero.
    """

    scalar: np.ndarray | None = None
    vector: np.ndarray | None = None
    charge: float = 0.0

    def __post_init__(self):
        for name in ("scalar", "vector"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=float)
                if not np.all(np.isfinite(arr)):
                    raise InvalidSpecError(f"{name} potential has non-finite values")
                setattr(self, name, arr)

    @classmethod
    def zero(cls):
        return cls()

    def scalar_on(self, grid):
        return np.zeros(grid.shape) if self.scalar is None else self.scalar

    def vector_on(self, grid):
        return np.zeros((grid.ndim,) + grid.shape) if self.vector is None else self.vector

    @property
    def has_vector(self):
        return self.vector is not None and self.charge != 0.0 and np.any(self.vector != 0)

    def field_strength(self, grid):
        """``F_ij = d_i A_j - d_j A_i``, antisymmetric by construction."""
        A = self.vector_on(grid)
        n = grid.ndim
        F = np.zeros((n, n) + grid.shape)
        for i in range(n):
            for j in range(i + 1, n):
                fij = gradient(A[j], grid, i) - gradient(A[i], grid, j)
                F[i, j] = fij
                F[j, i] = -fij
        return F

    def plus(self, other):
        s = None if self.scalar is None and other.scalar is None else (
            (0 if self.scalar is None else self.scalar) + (0 if other.scalar is None else other.scalar)
        )
        return PotentialSet(s, self.vector, self.charge)


def harmonic_potential(grid, mass, omega, sign=1.0):
    """``sign * m omega^2 |x|^2 / 2`` sampled on the grid."""
    r2 = sum(m**2 for m in grid.mesh())
    return PotentialSet(sign * 0.5 * mass * omega**2 * r2)


# --- wave fields and densities --------------------------------------------


@dataclass
class WaveField:
    """Complex amplitudes on a grid for branch ``+1`` or ``-1``.

    The branch ``-1`` field solves ``alpha d_t Psi = H Psi`` (the standard
    Schroedinger equation at ``alpha = i``); branch ``+1`` solves the
    time-reversed equation with the opposite sign of the gauge coupling.
    """

    grid: GridSpec
    amplitudes: np.ndarray
    alpha: DiffusionConstant
    branch: int = -1
    time: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != self.grid.shape:
            raise InvalidSpecError(
                f"amplitude shape {self.amplitudes.shape} does not match grid {self.grid.shape}"
            )
        if self.branch not in (1, -1):
            raise InvalidSpecError("branch must be +1 or -1")
        if not np.all(np.isfinite(self.amplitudes)):
            raise InvalidSpecError("wave field contains NaN or Inf")
        if not np.any(self.amplitudes != 0):
            raise InvalidSpecError("wave field is identically zero")

    def norm2(self):
        return float(np.sum(np.abs(self.amplitudes) ** 2) * self.grid.cell_volume)

    def normalized(self):
        return replace(self, amplitudes=self.amplitudes / math.sqrt(self.norm2()))

    def density(self, convention="L2"):
        """Probability density of the field under the L1 (|Psi|) or L2 (|Psi|^2) convention."""
        if convention == "L2":
            vals = np.abs(self.amplitudes) ** 2
        elif convention == "L1":
            vals = np.abs(self.amplitudes)
        else:
            raise InvalidSpecError(f"unknown norm convention {convention!r}")
        return DensityField(self.grid, vals, convention, self.time).normalized()

    def with_amplitudes(self, amplitudes, time=None):
        return replace(self, amplitudes=amplitudes, time=self.time if time is None else time)


@dataclass
class DensityField:
    grid: GridSpec
    values: np.ndarray
    convention: str = "L2"
    time: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise InvalidSpecError("density shape does not match grid")
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise InvalidSpecError("density must be finite and nonnegative")

    def mass(self):
        return float(np.sum(self.values) * self.grid.cell_volume)

    def normalized(self):
        total = self.mass()
        if not total > 0:
            raise InvalidSpecError("density is not normalizable")
        return replace(self, values=self.values / total)

    def cell_probabilities(self):
        return self.values * self.grid.cell_volume

    def mean(self, axis=0):
        p = self.cell_probabilities()
        return float(np.sum(p * self.grid.mesh()[axis]) / np.sum(p))

    def variance(self, axis=0):
        p = self.cell_probabilities()
        x = self.grid.mesh()[axis]
        mu = np.sum(p * x) / np.sum(p)
        return float(np.sum(p * (x - mu) ** 2) / np.sum(p))

    def coarsen(self, factor):
        """Merge ``factor`` adjacent cells per axis (cell averages are preserved)."""
        if any(n % factor for n in self.grid.shape):
            raise InvalidSpecError("coarsening factor must divide the grid shape")
        grid = replace(self.grid, shape=tuple(n // factor for n in self.grid.shape))
        v = self.values
        for k in range(v.ndim):
            new_shape = v.shape[:k] + (v.shape[k] // factor, factor) + v.shape[k + 1 :]
            v = v.reshape(new_shape).mean(axis=k + 1)
        return replace(self, grid=grid, values=v)
