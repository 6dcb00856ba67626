"""Complex drift fields derived from wave functions, and their consistency checks.

For a branch field ``Psi_b`` (``b = +1`` or ``-1``) the complex velocity is

    w_b = (1/m) (b alpha d ln Psi_b - q A) ,

with real part ``v_b`` and imaginary part ``u_b``. A drift field always holds
both branches; the partner of a given field is fixed by a *pairing*:

``"conjugate"``
    ``Psi_{-b} = conj(Psi_b)``. Both branches then carry the density
    ``|Psi|^2`` and, for real ``alpha``, the two drifts are the forward and
    backward drifts of one stationary diffusion.
``"reciprocal"``
    ``Psi_{-b} = 1 / Psi_b``, which gives ``w_+ = w_-`` identically.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import InvalidSpecError
from .noise import ParticleSpec
from .wavefield.fields import DensityField, PotentialSet, gradient, second_derivative

PAIRINGS = ("conjugate", "reciprocal")
DENSITY_FLOOR = 1e-12
WINDING_TOL = 1e-6


@dataclass
class DriftField:
    """Complex velocities of both branches on a grid, shape ``(ndim, *grid.shape)``."""

    grid: object
    w_plus: np.ndarray
    w_minus: np.ndarray
    alpha: object
    mass: float = 1.0
    time: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        shape = (self.grid.ndim,) + self.grid.shape
        self.w_plus = np.asarray(self.w_plus, dtype=complex).reshape(shape)
        self.w_minus = np.asarray(self.w_minus, dtype=complex).reshape(shape)
        if not (np.all(np.isfinite(self.w_plus)) and np.all(np.isfinite(self.w_minus))):
            raise InvalidSpecError("drift field has non-finite values")

    def branch(self, b):
        return self.w_plus if b == 1 else self.w_minus

    @property
    def v_plus(self):
        return self.w_plus.real

    @property
    def v_minus(self):
        return self.w_minus.real

    @property
    def u_plus(self):
        return self.w_plus.imag

    @property
    def u_minus(self):
        return self.w_minus.imag

    @property
    def w_circ(self):
        return 0.5 * (self.w_plus + self.w_minus)

    @property
    def v2(self):
        """Second-order velocity ``(alpha/m) I``."""
        return (self.alpha.value / self.mass) * np.eye(self.grid.ndim)


def log_gradient(amplitudes, grid):
    """``d ln Psi`` on the grid, shape ``(ndim, *grid.shape)``.

    In one dimension the derivative is assembled from principal logarithms of
    neighbour ratios, ``Log(Psi_{i+1}/Psi_i)``, which never needs a
    single-valued phase and is unchanged by ``Psi -> -Psi``. Elsewhere
    ``dPsi / Psi`` is used directly.
    """
    f = np.asarray(amplitudes, dtype=complex)
    mag = np.abs(f)
    if not np.any(mag > 0):
        raise InvalidSpecError("wave field is identically zero")
    zero = mag == 0
    if grid.ndim == 1 and np.any(zero[1:] & zero[:-1]):
        raise InvalidSpecError("wave field vanishes on a region; drift undefined there")
    if np.any(zero):
        f = np.where(zero, 1e-300 * mag.max(), f)
    if grid.ndim == 1:
        h = grid.spacing[0]
        if grid.periodic:
            steps = np.log(np.roll(f, -1) / f)
            d = (steps + np.roll(steps, 1)) / (2 * h)
        else:
            steps = np.log(f[1:] / f[:-1])
            level = np.concatenate([[0.0], np.cumsum(steps)])
            d = np.gradient(level, h, edge_order=2)
        return d[None, :]
    return np.stack([gradient(f, grid, k) / f for k in range(grid.ndim)])


def _clip(w, w_max):
    if w_max is None:
        return w
    mag = np.abs(w)
    return np.where(mag > w_max, w * (w_max / np.maximum(mag, 1e-300)), w)


def drift_from_wave(psi, pot=None, particle=None, branch=None, pairing="conjugate", w_max=None):
    """Complex drift field of a wave function.

    Parameters
    ----------
    psi : WaveField
        Field of branch ``branch`` (defaults to ``psi.branch``).
    pot : PotentialSet, optional
        Only the vector potential and charge enter.
    particle : ParticleSpec, optional
    branch : int, optional
        Which branch ``psi`` represents.
    pairing : {"conjugate", "reciprocal"}
        How the partner branch is built from ``psi``.
    w_max : float, optional
        Magnitude clip applied near nodes.

    Returns
    -------
    DriftField
    """
    pot = pot or PotentialSet.zero()
    particle = particle or ParticleSpec()
    if particle.mass <= 0:
        raise InvalidSpecError("drift needs mass > 0")
    if pairing not in PAIRINGS:
        raise InvalidSpecError(f"pairing must be one of {PAIRINGS}")
    b = psi.branch if branch is None else branch
    if b not in (1, -1):
        raise InvalidSpecError("branch must be +1 or -1")
    grid = psi.grid
    a = psi.alpha.value
    dlog = log_gradient(psi.amplitudes, grid)
    partner = np.conj(dlog) if pairing == "conjugate" else -dlog
    qA = pot.charge * pot.vector_on(grid) if pot.has_vector else 0.0
    w_b = _clip((b * a * dlog - qA) / particle.mass, w_max)
    w_other = _clip((-b * a * partner - qA) / particle.mass, w_max)
    w_plus, w_minus = (w_b, w_other) if b == 1 else (w_other, w_b)
    meta = {"pairing": pairing, "source_branch": b}
    return DriftField(grid, w_plus, w_minus, psi.alpha, particle.mass, psi.time, meta)


def log_amplitude_from_drift(drift, branch=1):
    """Integrate ``Re(m w_b / (b alpha))`` along a line to recover ``ln|Psi_b|`` up to a constant.

    Valid for ``A = 0`` on one-dimensional grids; uses the trapezoid rule
    anchored at the first node.
    """
    if drift.grid.ndim != 1:
        raise InvalidSpecError("log-amplitude reconstruction is one-dimensional")
    d = (drift.mass * drift.branch(branch)[0] / (branch * drift.alpha.value)).real
    h = drift.grid.spacing[0]
    return np.concatenate([[0.0], np.cumsum(0.5 * h * (d[1:] + d[:-1]))])


# --- hyperplane constraint ---------------------------------------------------


@dataclass
class HyperplaneReport:
    v_plus: np.ndarray
    v_minus: np.ndarray
    u_circ: np.ndarray
    u_plus: np.ndarray  # reconstructed
    u_minus: np.ndarray
    residual: float


def reconstruct_osmotic(v_plus, v_minus, u_circ, alpha):
    """``u_+- = u_circ +- (v_+ - v_-) tan(phi/2) / 2``."""
    phi = alpha.phase
    if abs(abs(phi) - math.pi) < 1e-12:
        raise InvalidSpecError("phase +-pi makes tan(phi/2) singular; reconstruction unsupported")
    half = 0.5 * (np.asarray(v_plus) - np.asarray(v_minus)) * math.tan(phi / 2)
    return u_circ + half, u_circ - half


def hyperplane_residual(drift, alpha=None):
    """Max-norm of ``(u_+ - u_-) cos(phi/2) - (v_+ - v_-) sin(phi/2)``."""
    phi = (alpha or drift.alpha).phase
    r = (drift.u_plus - drift.u_minus) * math.cos(phi / 2) - (drift.v_plus - drift.v_minus) * math.sin(phi / 2)
    return float(np.max(np.abs(r)))


def decompose_and_check_hyperplane(drift, alpha=None):
    """Split a drift into ``(v_+, v_-, u_circ)``, rebuild ``u_+-`` and measure the constraint."""
    alpha = alpha or drift.alpha
    u_circ = 0.5 * (drift.u_plus + drift.u_minus)
    up, um = reconstruct_osmotic(drift.v_plus, drift.v_minus, u_circ, alpha)
    return HyperplaneReport(drift.v_plus, drift.v_minus, u_circ, up, um, hyperplane_residual(drift, alpha))


# --- Hamilton-Jacobi residual -------------------------------------------------


@dataclass
class HJResult:
    residual: dict  # branch -> array (ndim, *interior shape)
    max_norm: float

    def for_branch(self, b):
        return self.residual[b]


def _interior(arr, ndim, trim):
    if trim == 0:
        return arr
    return arr[(slice(None),) + tuple(slice(trim, -trim) for _ in range(ndim))]


def hamilton_jacobi_residual(
    drift,
    pot=None,
    particle=None,
    alpha=None,
    branches=(1, -1),
    dwdt=None,
    slices=None,
    stationary=False,
    dAdt=None,
    trim=1,
):
    """Residual of the stochastic Hamilton-Jacobi equation for each branch.

    For branch ``b`` and component ``i``::

        m (d_t w_i + w^k d_k w_i + b (alpha/2m) d_k d_k w_i) - q F_ij w^j
          - [ b (alpha q / 2m) d_k F_ik - q d_t A_i - d_i U ]

    Parameters
    ----------
    drift : DriftField
    pot : PotentialSet, optional
    particle : ParticleSpec, optional
        Mass and charge; charge defaults to ``pot.charge``.
    dwdt : dict, optional
        Time derivatives ``{b: array}``.
    slices : tuple, optional
        ``(earlier, later, delta_t)`` drift fields for a central time difference.
    stationary : bool
        Declare ``d_t w = 0``.
    dAdt : ndarray, optional
        Time derivative of the vector potential.
    trim : int
        Nodes dropped at each non-periodic edge.

    Returns
    -------
    HJResult
    """
    pot = pot or PotentialSet.zero()
    particle = particle or ParticleSpec(mass=drift.mass, charge=pot.charge)
    alpha = alpha or drift.alpha
    grid = drift.grid
    n = grid.ndim
    a = alpha.value
    m = particle.mass
    q = pot.charge
    if sum(x is not None for x in (dwdt, slices)) + bool(stationary) != 1:
        raise InvalidSpecError("supply exactly one of dwdt, slices or stationary=True for the time derivative")
    F = pot.field_strength(grid) if pot.has_vector else np.zeros((n, n) + grid.shape)
    gradU = np.stack([gradient(pot.scalar_on(grid), grid, k) for k in range(n)])
    divF = np.stack([sum(gradient(F[i, k], grid, k) for k in range(n)) for i in range(n)])
    dA = np.zeros((n,) + grid.shape) if dAdt is None else np.asarray(dAdt, dtype=float)
    if grid.periodic:
        trim = 0
    out = {}
    worst = 0.0
    for b in branches:
        w = drift.branch(b)
        if stationary:
            wt = np.zeros_like(w)
        elif dwdt is not None:
            wt = np.asarray(dwdt[b], dtype=complex)
        else:
            early, late, delta = slices
            wt = (late.branch(b) - early.branch(b)) / (2 * delta)
        res = np.empty_like(w)
        for i in range(n):
            adv = sum(w[k] * gradient(w[i], grid, k) for k in range(n))
            lap = sum(second_derivative(w[i], grid, k) for k in range(n))
            lorentz = sum(F[i, j] * w[j] for j in range(n))
            lhs = m * (wt[i] + adv + b * (a / (2 * m)) * lap) - q * lorentz
            rhs = b * (a * q / (2 * m)) * divF[i] - q * dA[i] - gradU[i]
            res[i] = lhs - rhs
        res = _interior(res, n, trim)
        out[b] = res
        worst = max(worst, float(np.max(np.abs(res))))
    return HJResult(out, worst)


# --- winding -----------------------------------------------------------------


def loop_integral(psi):
    """``oint d ln Psi`` around a ring, assembled from principal-log increments."""
    if psi.grid.topology != "ring":
        raise InvalidSpecError("winding needs a ring grid")
    f = psi.amplitudes
    mag = np.abs(f)
    if mag.min() < 1e-8 * mag.max():
        raise InvalidSpecError("wave field has a node on the loop; winding undefined")
    return complex(np.sum(np.log(np.roll(f, -1) / f)))


def winding_number(psi, tol=WINDING_TOL):
    """Integer phase winding ``(1/2 pi i) oint d ln Psi`` of a ring field."""
    value = loop_integral(psi).imag / (2 * math.pi)
    k = round(value)
    if abs(value - k) > tol:
        raise InvalidSpecError(f"loop phase {value:.9f} turns is not an integer within {tol}")
    return int(k)


# --- generative drift ----------------------------------------------------------


def re_channel_sigma2(alpha, mass):
    """Variance rate ``|alpha| (1 + cos phi) / 2m`` of the real noise channel."""
    return alpha.magnitude * (1 + math.cos(alpha.phase)) / (2 * mass)


def generative_drift(drift, density, sigma2=None, direction="forward", mode="density-consistent", w_max=None, floor=DENSITY_FLOOR):
    """Real drift used to move sample paths.

    ``"density-consistent"`` returns ``b_+- = v_circ +- (sigma2/2) d ln rho``,
    whose Fokker-Planck flow keeps ``rho`` when ``rho`` and ``v_circ`` satisfy
    the continuity equation. ``"literal"`` returns ``Re w_+-`` unchanged.

    Parameters
    ----------
    drift : DriftField
    density : DensityField or ndarray
    sigma2 : float, optional
        Real-channel variance rate; derived from the drift's ``alpha`` and mass
        when omitted.
    direction : {"forward", "backward"}
        ``+`` branch for forward, ``-`` for backward.
    mode : {"density-consistent", "literal"}
    w_max : float, optional
        Magnitude clip.
    floor : float
        Relative density floor used inside the logarithm.

    Returns
    -------
    ndarray, shape ``(ndim, *grid.shape)``
    """
    if direction not in ("forward", "backward"):
        raise InvalidSpecError("direction must be 'forward' or 'backward'")
    b = 1 if direction == "forward" else -1
    if mode == "literal":
        out = drift.branch(b).real.copy()
    elif mode == "density-consistent":
        if sigma2 is None:
            sigma2 = re_channel_sigma2(drift.alpha, drift.mass)
        if not sigma2 > 0:
            raise InvalidSpecError(f"density-consistent drift needs sigma2 > 0, got {sigma2}")
        rho = density.values if isinstance(density, DensityField) else np.asarray(density, dtype=float)
        lr = np.log(np.maximum(rho, floor * rho.max()))
        grid = drift.grid
        dl = np.stack([gradient(lr, grid, k) for k in range(grid.ndim)])
        out = drift.w_circ.real + b * 0.5 * sigma2 * dl
    else:
        raise InvalidSpecError(f"unknown drift mode {mode!r}")
    if w_max is not None:
        out = np.clip(out, -w_max, w_max)
    return out
