"""Complexified Wiener noise.

The noise ``M = M_x + i M_y`` of one coordinate channel is a bivariate real
Gaussian process whose covariance per unit evolution parameter is

    C = (c / 2) [[|a| (1 + cos p) + g,  |a| sin p          ],
                 [|a| sin p,            |a| (1 - cos p) + g]]

with ``c = 1/m`` (non-relativistic) or ``c = eps`` (relativistic), ``g`` the
extra real-part correlation and ``p`` the effective phase: the phase of the
diffusion constant for spatial channels, shifted by pi for the Minkowski time
channel. For ``g = 0`` the matrix is ``c |a| e e^T`` with
``e = (cos p/2, sin p/2)`` and the noise lives on the real line ``e^{ip/2} R``.
"""

from dataclasses import dataclass, field
import math
from typing import NamedTuple

import numpy as np

from . import rng
from .errors import InvalidSpecError

PSD_TOL = 1e-12


@dataclass(frozen=True)
class DiffusionConstant:
    """Complex diffusion constant ``|alpha| e^{i phase}`` plus correlation offset ``gamma``."""

    magnitude: float = 1.0
    phase: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.magnitude) and self.magnitude > 0):
            raise InvalidSpecError(f"diffusion constant magnitude must be > 0, got {self.magnitude}")
        if not (-math.pi < self.phase <= math.pi):
            raise InvalidSpecError(f"phase must lie in (-pi, pi], got {self.phase}")
        if not (math.isfinite(self.gamma) and self.gamma >= 0):
            raise InvalidSpecError(f"gamma must be >= 0, got {self.gamma}")

    @classmethod
    def from_complex(cls, value, gamma=0.0):
        value = complex(value)
        phase = math.atan2(value.imag, value.real)
        if phase <= -math.pi:
            phase = math.pi
        return cls(abs(value), phase, gamma)

    @property
    def value(self) -> complex:
        return self.magnitude * complex(math.cos(self.phase), math.sin(self.phase))

    @property
    def is_imaginary(self) -> bool:
        return abs(abs(self.phase) - math.pi / 2) < 1e-12

    @property
    def is_real(self) -> bool:
        return abs(math.sin(self.phase)) < 1e-12

    def re_channel_variance(self, mass):
        """Variance rate ``|a| (1 + cos phase) / 2m`` of the real noise channel."""
        return self.magnitude * (1.0 + math.cos(self.phase)) / (2.0 * mass) + self.gamma / (2.0 * mass)


@dataclass(frozen=True)
class ParticleSpec:
    mass: float = 1.0
    charge: float = 0.0
    dimension: int = 1

    def __post_init__(self):
        if not (math.isfinite(self.mass) and self.mass >= 0):
            raise InvalidSpecError(f"mass must be >= 0, got {self.mass}")
        if not math.isfinite(self.charge):
            raise InvalidSpecError("charge must be finite")
        if int(self.dimension) != self.dimension or self.dimension < 1:
            raise InvalidSpecError(f"dimension must be a positive integer, got {self.dimension}")


@dataclass
class ChannelCovariance:
    """Covariance rate of ``(Re dM, Im dM)`` for one channel.

    ``rank_one_scale`` and ``effective_phase`` carry the analytic factorization
    ``C = rank_one_scale * e e^T + isotropic * I`` when the matrix was built
    from a :class:`DiffusionConstant`; they are ``None`` for matrices supplied
    directly.
    """

    matrix: np.ndarray
    signature: int = 1
    effective_phase: float | None = None
    rank_one_scale: float | None = None
    isotropic: float = 0.0

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        if self.matrix.shape != (2, 2):
            raise InvalidSpecError("channel covariance must be 2x2")
        if not np.allclose(self.matrix, self.matrix.T, rtol=0, atol=1e-15):
            raise InvalidSpecError("channel covariance must be symmetric")
        if self.signature not in (1, -1):
            raise InvalidSpecError("signature must be +1 or -1")

    @property
    def direction(self):
        """Unit vector spanning the noise line when the covariance has rank one."""
        if self.effective_phase is None:
            w, v = np.linalg.eigh(self.matrix)
            return v[:, -1]
        half = 0.5 * self.effective_phase
        return np.array([math.cos(half), math.sin(half)])

    @property
    def re_variance(self) -> float:
        return float(self.matrix[0, 0])


def build_channel_covariance(alpha, mass=None, epsilon=None, signature=1):
    """Covariance per unit parameter of one channel of the complex noise.

    Exactly one of ``mass`` (non-relativistic, rate divided by ``m``) or
    ``epsilon`` (relativistic, rate multiplied by the gauge variable) must be
    given. ``signature=-1`` selects the Minkowski time channel, whose
    structure relation carries an extra minus sign, i.e. the phase shifts by pi.
    """
    if (mass is None) == (epsilon is None):
        raise InvalidSpecError("give exactly one of mass or epsilon")
    if mass is not None:
        if not (mass > 0 and math.isfinite(mass)):
            raise InvalidSpecError(f"non-relativistic channel needs mass > 0, got {mass}")
        scale = 1.0 / mass
    else:
        if not (epsilon > 0 and math.isfinite(epsilon)):
            raise InvalidSpecError(f"relativistic channel needs epsilon > 0, got {epsilon}")
        scale = float(epsilon)
    if signature not in (1, -1):
        raise InvalidSpecError("signature must be +1 or -1")

    phase = alpha.phase if signature == 1 else alpha.phase + math.pi
    a, g = alpha.magnitude, alpha.gamma
    c, s = math.cos(phase), math.sin(phase)
    matrix = 0.5 * scale * np.array([[a * (1 + c) + g, a * s], [a * s, a * (1 - c) + g]])
    return ChannelCovariance(
        matrix,
        signature=signature,
        effective_phase=phase,
        rank_one_scale=scale * a,
        isotropic=0.5 * scale * g,
    )


class Realizability(NamedTuple):
    eigenvalues: np.ndarray
    determinant: float
    realizable: bool


def assert_realizable(cov):
    """Eigenvalues of the channel covariance and whether it is PSD within round-off."""
    eig = np.linalg.eigvalsh(cov.matrix)
    m = cov.matrix
    det = float(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0])
    return Realizability(eig, det, bool(eig.min() >= -PSD_TOL))


def _require_realizable(cov):
    if not assert_realizable(cov).realizable:
        raise InvalidSpecError("covariance is not positive semi-definite; the noise does not exist")


def channel_increments(cov, dt, seed, step, channel, start, count):
    """Complex increments ``dM`` for paths ``start .. start+count-1`` of one (step, channel).

    Rank-one covariances draw a single normal per increment and place it on
    the noise line, so the hyperplane relation holds by construction.
    """
    if cov.rank_one_scale is not None:
        e = cov.direction
        z = rng.normals(seed, rng.stream_id(step, channel, 0), start, count)
        amp = math.sqrt(cov.rank_one_scale * dt)
        if cov.isotropic == 0.0:
            return (amp * e[0]) * z + 1j * ((amp * e[1]) * z)
        # extra isotropic part added along both principal axes
        lam1 = (cov.rank_one_scale + cov.isotropic) * dt
        lam2 = cov.isotropic * dt
        z2 = rng.normals(seed, rng.stream_id(step, channel, 1), start, count)
        a1, a2 = math.sqrt(lam1), math.sqrt(lam2)
        re = a1 * e[0] * z - a2 * e[1] * z2
        im = a1 * e[1] * z + a2 * e[0] * z2
        return re + 1j * im
    w, v = np.linalg.eigh(cov.matrix * dt)
    w = np.clip(w, 0.0, None)
    z1 = rng.normals(seed, rng.stream_id(step, channel, 0), start, count)
    z2 = rng.normals(seed, rng.stream_id(step, channel, 1), start, count)
    a1, a2 = math.sqrt(w[1]), math.sqrt(w[0])
    re = a1 * v[0, 1] * z1 + a2 * v[0, 0] * z2
    im = a1 * v[1, 1] * z1 + a2 * v[1, 0] * z2
    return re + 1j * im


@dataclass
class IncrementBatch:
    """Complex noise increments, shape ``(count, steps, channels)``."""

    values: np.ndarray
    step: float
    seed: int
    counter_offset: int = 0
    covariance: ChannelCovariance | None = field(default=None, repr=False)

    @property
    def parameter_length(self) -> float:
        """Total evolution parameter covered, pooled over all increments of one channel."""
        return self.values.shape[0] * self.values.shape[1] * self.step

    def hyperplane_residual(self):
        """Max |Im cos(p/2) - Re sin(p/2)| over the batch."""
        e = self.covariance.direction
        return float(np.max(np.abs(self.values.imag * e[0] - self.values.real * e[1])))


def sample_increments(cov, step, count, channels=1, seed=0, counter_offset=0, steps=1):
    """Draw ``count`` independent increments per step and channel.

    The value at (path p, step k, channel c) is keyed by
    ``(seed, p, counter_offset + k, c)`` and nothing else.
    """
    if not step > 0:
        raise InvalidSpecError("step must be positive")
    _require_realizable(cov)
    out = np.empty((count, steps, channels), dtype=complex)
    for k in range(steps):
        for c in range(channels):
            out[:, k, c] = channel_increments(cov, step, seed, counter_offset + k, c, 0, count)
    return IncrementBatch(out, float(step), int(seed), int(counter_offset), cov)


@dataclass
class QuadraticVariation:
    """Realized brackets per unit parameter (``channels x channels`` matrices)."""

    complex_bracket: np.ndarray
    mixed_bracket: np.ndarray
    conjugate_bracket: np.ndarray
    complex_stderr: np.ndarray
    mixed_stderr: np.ndarray


def estimate_quadratic_variation(batch):
    """Pooled realized quadratic variation of a batch.

    Returns sum(dM x dM)/T, sum(dM x conj dM)/T and sum(conj dM x conj dM)/T
    with T the pooled parameter length, together with normal-approximation
    standard errors for the first two.
    """
    v = batch.values
    if v.size == 0:
        raise ValueError("empty increment batch")
    flat = v.reshape(-1, v.shape[-1])
    if flat.shape[0] < 2:
        raise ValueError("quadratic variation needs at least two increments")
    T = batch.parameter_length
    n = flat.shape[0]
    mm = np.einsum("ka,kb->ab", flat, flat) / T
    mc = np.einsum("ka,kb->ab", flat, flat.conj()) / T
    cc = np.einsum("ka,kb->ab", flat.conj(), flat.conj()) / T
    # per-increment rates, for standard errors of the diagonal estimates
    rate_mm = flat * flat / batch.step
    rate_mc = (flat * flat.conj()).real / batch.step
    se_mm = (np.std(rate_mm.real, axis=0) + 1j * np.std(rate_mm.imag, axis=0)) / math.sqrt(n)
    se_mc = np.std(rate_mc, axis=0) / math.sqrt(n)
    return QuadraticVariation(mm, mc, cc, np.diag(se_mm), np.diag(se_mc))
