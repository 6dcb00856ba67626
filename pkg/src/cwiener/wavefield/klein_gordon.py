"""Flat-space Klein-Gordon fields as sums of mass-shell modes.

Conventions: coordinates ``x = (x0, x1, .., xn)`` with metric
``eta = diag(-1, 1, .., 1)``. A field ``Phi`` solves

    (eta^{mu nu} d_mu d_nu + m^2 / alpha^2) Phi = 0 ,

so the mode ``exp(i (k.x - w x0))`` is on shell when
``w^2 = |k|^2 - m^2 / alpha^2`` (``|k|^2 + m^2`` at ``alpha = i``).
The affine-parameter dependence of the branch fields is the separable factor

    Psi_b(x, lam) = Phi_b(x) exp(b eps m^2 lam / (2 alpha)) ,

which solves ``-b alpha d_lam Psi = (alpha^2 eps / 2) box Psi``. The branch
``-1`` field is ``Phi`` itself and the branch ``+1`` field is its complex
conjugate.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from ..errors import InvalidSpecError
from .fields import GridSpec, PotentialSet, WaveField

SHELL_TOL = 1e-9


def mass_shell_frequency(k, mass, alpha):
    """Positive-branch frequency ``sqrt(|k|^2 - m^2/alpha^2)`` (principal root)."""
    k = np.atleast_2d(np.asarray(k, dtype=float))
    a = alpha.value
    w2 = np.sum(k**2, axis=-1) - mass**2 / a**2
    w = np.sqrt(w2.astype(complex))
    if abs(a.imag) > 0 and abs(a.real) < 1e-15:
        w = w.real.astype(complex)
    return w


def shell_residual(k, omega, mass, alpha):
    """``-w^2 + |k|^2 - m^2/alpha^2``: the equation applied to one mode, divided by the mode."""
    k = np.atleast_2d(np.asarray(k, dtype=float))
    return np.asarray(-np.asarray(omega) ** 2 + np.sum(k**2, axis=-1) - mass**2 / alpha.value**2)


@dataclass
class KGModes:
    """Finite superposition ``sum_j c_j exp(i (k_j.x - w_j x0))``.

    ``wavevectors`` has shape ``(M, n)``; frequencies may come with either
    sign (negative-frequency parts of general initial data).
    """

    wavevectors: np.ndarray
    amplitudes: np.ndarray
    frequencies: np.ndarray
    mass: float
    alpha: object
    tol: float = SHELL_TOL

    def __post_init__(self):
        self.wavevectors = np.atleast_2d(np.asarray(self.wavevectors, dtype=float))
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex).ravel()
        self.frequencies = np.asarray(self.frequencies, dtype=complex).ravel()
        if not (len(self.wavevectors) == len(self.amplitudes) == len(self.frequencies)):
            raise InvalidSpecError("need one amplitude and frequency per wavevector")
        res = np.abs(shell_residual(self.wavevectors, self.frequencies, self.mass, self.alpha))
        scale = 1.0 + np.abs(self.frequencies) ** 2
        self.off_shell = float(np.max(res / scale)) if res.size else 0.0
        if self.off_shell > self.tol:
            raise InvalidSpecError(
                f"modes are off the mass shell by {self.off_shell:.3e} (tolerance {self.tol:.1e})"
            )

    @property
    def spatial_dim(self):
        return self.wavevectors.shape[1]

    def _phases(self, points):
        points = np.asarray(points, dtype=float)
        t = points[..., :1]
        x = points[..., 1:]
        return np.exp(1j * (x @ self.wavevectors.T - t * self.frequencies))

    def evaluate(self, points):
        """``Phi`` at spacetime points of shape ``(..., n + 1)``."""
        return self._phases(points) @ self.amplitudes

    def gradient(self, points):
        """Covariant derivatives ``d_mu Phi``, shape ``(..., n + 1)``."""
        e = self._phases(points) * self.amplitudes
        kmu = np.concatenate([-self.frequencies[:, None], self.wavevectors.astype(complex)], axis=1)
        return 1j * (e @ kmu)

    def log_gradient(self, points, chunk=4096):
        """``d_mu ln Phi`` evaluated in chunks to bound memory."""
        points = np.asarray(points, dtype=float)
        flat = points.reshape(-1, points.shape[-1])
        out = np.empty(flat.shape, dtype=complex)
        kmu = np.concatenate([-self.frequencies[:, None], self.wavevectors.astype(complex)], axis=1)
        for s in range(0, len(flat), chunk):
            e = self._phases(flat[s : s + chunk]) * self.amplitudes
            phi = e.sum(axis=1)
            out[s : s + chunk] = 1j * (e @ kmu) / phi[:, None]
        return out.reshape(points.shape)


def minkowski_metric(spatial_dim):
    return np.diag([-1.0] + [1.0] * spatial_dim)


def relativistic_drift(modes, points, epsilon, branch=-1):
    """``w_b^mu = eps eta^{mu nu} b alpha d_nu ln Psi_b`` for ``A = 0``.

    ``Psi_- = Phi`` and ``Psi_+ = conj(Phi)``; the affine-parameter factor
    does not depend on ``x`` and drops out.
    """
    a = modes.alpha.value
    dlog = modes.log_gradient(points)
    if branch == 1:
        dlog = np.conj(dlog)
    eta = np.diag(minkowski_metric(modes.spatial_dim))
    return epsilon * branch * a * dlog * eta


@dataclass
class KGSpectral:
    """Mode decomposition of initial data on a periodic spatial grid.

    ``positive`` and ``negative`` hold the Fourier amplitudes of the
    ``exp(-i w x0)`` and ``exp(+i w x0)`` parts respectively.
    """

    grid: GridSpec
    wavevectors: np.ndarray  # (n, *grid.shape)
    omega: np.ndarray
    positive: np.ndarray
    negative: np.ndarray
    mass: float
    alpha: object
    epsilon: float
    meta: dict = field(default_factory=dict)

    def field_hat(self, x0):
        return self.positive * np.exp(-1j * self.omega * x0) + self.negative * np.exp(1j * self.omega * x0)

    def field(self, x0):
        """``Phi(x0, .)`` on the spatial grid."""
        vals = np.fft.ifftn(self.field_hat(x0))
        return WaveField(self.grid, vals, self.alpha, -1, float(x0), {"kg_time": float(x0)})

    def psi(self, x0, lam, branch=-1):
        """Branch field ``Psi_b`` on the spatial slice ``x0`` at affine parameter ``lam``."""
        phi = self.field(x0).amplitudes
        if branch == 1:
            phi = np.conj(phi)
        factor = np.exp(branch * self.epsilon * self.mass**2 * lam / (2 * self.alpha.value))
        return WaveField(self.grid, phi * factor, self.alpha, branch, float(lam), {"kg_time": float(x0)})

    def shell_residual(self):
        k = np.moveaxis(self.wavevectors, 0, -1).reshape(-1, self.grid.ndim)
        return float(np.max(np.abs(shell_residual(k, self.omega.ravel(), self.mass, self.alpha))))

    def as_modes(self, threshold=0.0):
        """Non-negligible Fourier modes as an explicit :class:`KGModes` superposition."""
        k = np.moveaxis(self.wavevectors, 0, -1).reshape(-1, self.grid.ndim)
        w = self.omega.ravel()
        n = self.positive.size
        # grid origin shift: fft assumes x starts at 0 on index 0
        x_start = np.array([self.grid.axis(d)[0] for d in range(self.grid.ndim)])
        shift = np.exp(-1j * (k @ x_start)) / n
        cp, cn = self.positive.ravel() * shift, self.negative.ravel() * shift
        amps = np.concatenate([cp, cn])
        ks = np.concatenate([k, k])
        ws = np.concatenate([w, -w])
        keep = np.abs(amps) > threshold * np.abs(amps).max()
        return KGModes(ks[keep], amps[keep], ws[keep], self.mass, self.alpha)


def evolve_kg_spectral(phi, particle, alpha, epsilon, dphi_dx0=None):
    """Decompose ``Phi(x0 = 0, x)`` into mass-shell modes.

    Parameters
    ----------
    phi : WaveField
        Initial data on a line or box grid, treated as periodic.
    particle : ParticleSpec
        Mass ``m >= 0``; charged fields are not integrated numerically.
    alpha : DiffusionConstant
    epsilon : float
        Gauge variable entering the affine-parameter factor.
    dphi_dx0 : ndarray, optional
        Initial time derivative. Without it the data are taken to be purely
        positive-frequency.

    Returns
    -------
    KGSpectral
    """
    if particle.charge != 0:
        raise InvalidSpecError("charged Klein-Gordon fields have no numerical integrator")
    if particle.mass < 0:
        raise InvalidSpecError("mass must be >= 0")
    if not epsilon > 0:
        raise InvalidSpecError("epsilon must be positive")
    grid = phi.grid
    if grid.topology not in ("line", "box", "ring"):
        raise InvalidSpecError("spectral evolution needs a spatial grid")
    ks = np.meshgrid(
        *[2 * math.pi * np.fft.fftfreq(n, d=h) for n, h in zip(grid.shape, grid.spacing)], indexing="ij"
    )
    kvec = np.stack(ks)
    k2 = np.sum(kvec**2, axis=0)
    a = alpha.value
    omega = np.sqrt((k2 - particle.mass**2 / a**2).astype(complex))
    if alpha.is_imaginary:
        omega = omega.real.astype(complex)
    data_hat = np.fft.fftn(phi.amplitudes)
    if dphi_dx0 is None:
        pos, neg = data_hat, np.zeros_like(data_hat)
    else:
        dhat = np.fft.fftn(np.asarray(dphi_dx0, dtype=complex))
        safe = np.where(np.abs(omega) > 0, omega, 1.0)
        pos = np.where(np.abs(omega) > 0, 0.5 * (data_hat + 1j * dhat / safe), data_hat)
        neg = np.where(np.abs(omega) > 0, 0.5 * (data_hat - 1j * dhat / safe), 0.0)
    return KGSpectral(grid, kvec, omega, pos, neg, particle.mass, alpha, float(epsilon))


def gaussian_packet_modes(k0, sigma_k, mass, alpha, nodes=6, x0=None):
    """On-shell Gaussian packet by Gauss-Hermite quadrature in momentum space.

    ``Phi(x) = sum_j w_j exp(i (k_j.(x - x0) - w(k_j) (x^0 - x0^0)))`` with
    nodes ``k_j = k0 + sqrt(2) sigma_k z_j`` per axis. Every term is an exact
    solution, so the packet is too; its spatial envelope at ``x^0 = x0^0`` is
    Gaussian with width ``1 / (2 sigma_k)`` in ``|Phi|^2`` up to quadrature
    truncation far from the centre.
    """
    k0 = np.atleast_1d(np.asarray(k0, dtype=float))
    n = k0.size
    x0 = np.zeros(n + 1) if x0 is None else np.asarray(x0, dtype=float)
    z, wq = np.polynomial.hermite.hermgauss(nodes)
    grids = np.meshgrid(*[z] * n, indexing="ij")
    weights = np.ones_like(grids[0])
    for g in np.meshgrid(*[wq] * n, indexing="ij"):
        weights = weights * g
    kz = np.stack([g.ravel() for g in grids], axis=-1)
    k = k0 + math.sqrt(2.0) * sigma_k * kz
    w = mass_shell_frequency(k, mass, alpha)
    amps = weights.ravel() / math.pi ** (n / 2)
    # translate the packet centre to x0: factor exp(-i(k.x0_spatial - w x0^0))
    amps = amps * np.exp(-1j * (k @ x0[1:] - w * x0[0]))
    return KGModes(k, amps, w, mass, alpha)


def kg_catalog_state(name, grid, alpha, particle, t=0.0, branch=-1, **params):
    """Catalog entries on a ``spacetime-box`` grid whose first axis is ``x^0``.

    The state depends on the affine parameter through the separable factor, so
    ``evaluate(points, lam)`` returns ``Psi_b`` and ``time_derivative`` its
    ``lam`` derivative.
    """
    from .catalog import CatalogState

    if grid.topology != "spacetime-box" or grid.ndim < 2:
        raise InvalidSpecError(f"{name} needs a spacetime-box grid with time and space axes")
    eps = float(params.get("epsilon", 1.0))
    if not eps > 0:
        raise InvalidSpecError("epsilon must be positive")
    n = grid.ndim - 1
    if name == "kg-plane-wave":
        allowed = {"k", "epsilon"}
        if set(params) - allowed or "k" not in params:
            raise InvalidSpecError("kg-plane-wave takes k (spatial wavevector) and epsilon")
        k = np.broadcast_to(np.asarray(params["k"], dtype=float), (n,)).copy()
        modes = KGModes(k[None, :], [1.0], mass_shell_frequency(k, particle.mass, alpha), particle.mass, alpha)
        clean = {"k": k.tolist(), "epsilon": eps}
    else:
        allowed = {"k0", "sigma_k", "nodes", "epsilon"}
        if set(params) - allowed or "k0" not in params or "sigma_k" not in params:
            raise InvalidSpecError("kg-packet takes k0, sigma_k, nodes and epsilon")
        k0 = np.broadcast_to(np.asarray(params["k0"], dtype=float), (n,)).copy()
        nodes = int(params.get("nodes", 6))
        modes = gaussian_packet_modes(k0, float(params["sigma_k"]), particle.mass, alpha, nodes)
        clean = {"k0": k0.tolist(), "sigma_k": float(params["sigma_k"]), "nodes": nodes, "epsilon": eps}

    a = alpha.value
    rate = branch * eps * particle.mass**2 / (2 * a)

    def evaluate(pts, lam):
        phi = modes.evaluate(pts)
        if branch == 1:
            phi = np.conj(phi)
        return phi * np.exp(rate * lam)

    def time_derivative(pts, lam):
        return rate * evaluate(pts, lam)

    state = CatalogState(name, grid, alpha, particle, branch, PotentialSet.zero(), None, clean, evaluate, time_derivative, t)
    state.modes = modes
    return state


def spacetime_residual(state, lam=None):
    """Residual of ``-b alpha d_lam Psi - (alpha^2 eps / 2) box_h Psi`` on interior nodes."""
    lam = state.t if lam is None else lam
    grid = state.grid
    a = state.alpha.value
    eps = state.params["epsilon"]
    pts = np.stack(grid.mesh(), axis=-1)
    psi = state.evaluate(pts, lam)
    box = np.zeros_like(psi)
    inner = tuple(slice(1, -1) for _ in range(grid.ndim))
    for k, h in enumerate(grid.spacing):
        sign = -1.0 if k == 0 else 1.0
        box = box + sign * (np.roll(psi, -1, axis=k) - 2 * psi + np.roll(psi, 1, axis=k)) / h**2
    res = -state.branch * a * state.time_derivative(pts, lam) - 0.5 * a * a * eps * box
    return res[inner]
