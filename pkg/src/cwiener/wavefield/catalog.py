"""Closed-form solutions of the complex diffusion equation.

For branch ``b`` (``+1`` or ``-1``) and vanishing vector potential every entry
solves

    -b alpha d_t Psi = (alpha^2 / 2m) Laplacian Psi + U Psi .

Stationary entries have the form ``psi(x) exp(-b E t / alpha)`` with
``H psi = E psi``. The potential ``U`` that pairs with each state and the
energy ``E`` are carried in the returned :class:`CatalogState`; their signs
are checked against the equation by symbolic substitution in the test suite.
"""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy.special import eval_hermite

from ..errors import InvalidSpecError
from ..noise import ParticleSpec
from .fields import GridSpec, PotentialSet, WaveField, covariant_laplacian

CATALOG = (
    "free-gaussian-packet",
    "harmonic-ground",
    "harmonic-excited-k",
    "ring-eigenstate-k",
    "plane-wave",
    "kg-plane-wave",
    "kg-packet",
)


@dataclass
class CatalogState:
    """An analytic state together with the potential it solves the equation for."""

    name: str
    grid: GridSpec
    alpha: object
    particle: ParticleSpec
    branch: int
    potential: PotentialSet
    energy: complex | None
    params: dict
    evaluate: object = field(repr=False)  # (points array (..., ndim), t) -> Psi
    time_derivative: object = field(repr=False)  # (points, t) -> d_t Psi
    t: float = 0.0

    @property
    def wave(self):
        pts = np.stack(self.grid.mesh(), axis=-1)
        amps = self.evaluate(pts, self.t)
        meta = {"catalog": self.name, "params": dict(self.params), "energy": self.energy}
        return WaveField(self.grid, amps, self.alpha, self.branch, self.t, meta)

    def at(self, t):
        return CatalogState(**{**self.__dict__, "t": t})

    def on(self, grid):
        return analytic_state(self.name, grid, self.alpha, self.particle, t=self.t, branch=self.branch, **self.params)

    def time_factor(self, t):
        """``exp(-b E t / alpha)`` for stationary states."""
        return np.exp(-self.branch * self.energy * t / self.alpha.value)


def analytic_state(name, grid, alpha, particle=None, t=0.0, branch=-1, **params):
    """Sample a catalog state on ``grid``.

    Parameters
    ----------
    name : str
        One of :data:`CATALOG`.
    grid : GridSpec
    alpha : DiffusionConstant
    particle : ParticleSpec, optional
        Defaults to unit mass.
    t : float
        Evolution time at which the state is sampled.
    branch : int
        ``-1`` (forward/standard branch) or ``+1``.
    **params
        Entry specific: ``s, p, x0, norm`` for the free packet, ``omega`` and
        ``k`` for oscillator states, ``k`` for ring eigenstates and plane waves.

    Returns
    -------
    CatalogState
    """
    particle = particle or ParticleSpec()
    if branch not in (1, -1):
        raise InvalidSpecError("branch must be +1 or -1")
    if name not in CATALOG:
        raise InvalidSpecError(f"unknown catalog state {name!r}; known: {', '.join(CATALOG)}")
    if name in ("kg-plane-wave", "kg-packet"):
        from .klein_gordon import kg_catalog_state

        return kg_catalog_state(name, grid, alpha, particle, t=t, branch=branch, **params)
    if particle.mass <= 0:
        raise InvalidSpecError("non-relativistic states need mass > 0")
    builder = {
        "free-gaussian-packet": _free_packet,
        "harmonic-ground": _harmonic,
        "harmonic-excited-k": _harmonic,
        "ring-eigenstate-k": _ring_eigenstate,
        "plane-wave": _plane_wave,
    }[name]
    if name == "harmonic-ground":
        if params.get("k", 0) != 0:
            raise InvalidSpecError("harmonic-ground has k = 0")
        params = {**params, "k": 0}
    return builder(name, grid, alpha, particle, t, branch, params)


def _check_params(name, params, allowed, required=()):
    unknown = set(params) - set(allowed)
    if unknown:
        raise InvalidSpecError(f"{name}: unknown parameters {sorted(unknown)}")
    missing = [p for p in required if p not in params]
    if missing:
        raise InvalidSpecError(f"{name}: missing parameters {missing}")


def _free_packet(name, grid, alpha, particle, t, branch, params):
    """Gaussian packet of density standard deviation ``s`` and momentum ``p``.

    With complex diffusivity ``D = -b alpha / 2m`` and ``kappa = -p / alpha``
    (eigenvalue ``p`` of ``-alpha d``),
    ``Psi = sqrt(a0/a) exp(-(x - x0 + 2 D kappa t)^2 / 4a + kappa (x - x0) + D kappa^2 t)``,
    ``a = a0 + D t``. ``a0 = s^2`` makes ``|Psi|^2`` have variance ``s^2``
    (``norm='L2'``); ``a0 = s^2 / 2`` makes ``|Psi|`` have variance ``s^2``
    (``norm='L1'``). On a box the packet is a product over axes.
    """
    _check_params(name, params, ("s", "p", "x0", "norm"), ("s",))
    if grid.topology not in ("line", "box"):
        raise InvalidSpecError("free-gaussian-packet needs a line or box grid")
    s = float(params["s"])
    if not s > 0:
        raise InvalidSpecError("packet width s must be positive")
    norm = params.get("norm", "L2")
    if norm not in ("L1", "L2"):
        raise InvalidSpecError("norm must be 'L1' or 'L2'")
    n = grid.ndim
    p = np.broadcast_to(np.asarray(params.get("p", 0.0), dtype=float), (n,))
    x0 = np.broadcast_to(np.asarray(params.get("x0", 0.0), dtype=float), (n,))
    a = alpha.value
    D = -branch * a / (2 * particle.mass)
    a0 = s**2 if norm == "L2" else s**2 / 2
    kappa = -p / a

    def evaluate(pts, tt):
        out = 1.0 + 0j
        at = a0 + D * tt
        for k in range(n):
            y = pts[..., k] - x0[k]
            out = out * np.sqrt(a0 / at) * np.exp(
                -((y + 2 * D * kappa[k] * tt) ** 2) / (4 * at) + kappa[k] * y + D * kappa[k] ** 2 * tt
            )
        return out

    def time_derivative(pts, tt):
        # d_t Psi = D Laplacian Psi, written out per axis
        at = a0 + D * tt
        psi = evaluate(pts, tt)
        lap = 0.0
        for k in range(n):
            y = pts[..., k] - x0[k]
            g = -(y + 2 * D * kappa[k] * tt) / (2 * at) + kappa[k]
            lap = lap + g**2 - 1 / (2 * at)
        return D * lap * psi

    params = {"s": s, "p": p.tolist() if n > 1 else float(p[0]), "x0": x0.tolist() if n > 1 else float(x0[0]), "norm": norm}
    return CatalogState(name, grid, alpha, particle, branch, PotentialSet.zero(), None, params, evaluate, time_derivative, t)


def _harmonic(name, grid, alpha, particle, t, branch, params):
    """Oscillator eigenstates, defined when ``alpha^2`` is real.

    ``U = -(alpha^2/|alpha|^2) m omega^2 x^2 / 2`` is real, and with
    ``xi = sqrt(m omega / |alpha|) x`` the eigenfunctions are
    ``H_k(xi) exp(-xi^2/2)`` (L2-normalised) with
    ``E_k = -(alpha^2/|alpha|) omega (k + 1/2)``.
    """
    _check_params(name, params, ("omega", "k"), ("omega",))
    if grid.topology != "line":
        raise InvalidSpecError("oscillator states need a line grid")
    a = alpha.value
    if abs(math.sin(2 * alpha.phase)) > 1e-12:
        raise InvalidSpecError("oscillator catalog needs alpha^2 real (phase 0, +-pi/2 or pi)")
    sgn = round((a * a).real / alpha.magnitude**2)
    k = int(params.get("k", 0))
    if k < 0:
        raise InvalidSpecError("oscillator level must be >= 0")
    omega = float(params["omega"])
    if not omega > 0:
        raise InvalidSpecError("omega must be positive")
    m, mag = particle.mass, alpha.magnitude
    scale = math.sqrt(m * omega / mag)
    norm = (m * omega / (math.pi * mag)) ** 0.25 / math.sqrt(2.0**k * math.factorial(k))
    energy = complex(-sgn * mag * omega * (k + 0.5))

    def spatial(x):
        xi = scale * x
        return norm * eval_hermite(k, xi) * np.exp(-0.5 * xi**2)

    def evaluate(pts, tt):
        return spatial(pts[..., 0]) * np.exp(-branch * energy * tt / a)

    def time_derivative(pts, tt):
        return (-branch * energy / a) * evaluate(pts, tt)

    pot = PotentialSet(-sgn * 0.5 * m * omega**2 * grid.x**2)
    return CatalogState(name, grid, alpha, particle, branch, pot, energy, {"omega": omega, "k": k}, evaluate, time_derivative, t)


def _stationary_wave(name, grid, alpha, particle, t, branch, params, wavenumber):
    a = alpha.value
    energy = complex(-(a * a) * wavenumber**2 / (2 * particle.mass))
    x0 = grid.bounds[0][0]

    def evaluate(pts, tt):
        return np.exp(1j * wavenumber * (pts[..., 0] - x0)) * np.exp(-branch * energy * tt / a)

    def time_derivative(pts, tt):
        return (-branch * energy / a) * evaluate(pts, tt)

    return CatalogState(name, grid, alpha, particle, branch, PotentialSet.zero(), energy, params, evaluate, time_derivative, t)


def _ring_eigenstate(name, grid, alpha, particle, t, branch, params):
    _check_params(name, params, ("k",), ("k",))
    if grid.topology != "ring":
        raise InvalidSpecError("ring-eigenstate-k needs a ring grid")
    k = params["k"]
    if int(k) != k:
        raise InvalidSpecError("ring eigenstate index must be an integer")
    k = int(k)
    wavenumber = 2 * math.pi * k / grid.lengths[0]
    return _stationary_wave(name, grid, alpha, particle, t, branch, {"k": k}, wavenumber)


def _plane_wave(name, grid, alpha, particle, t, branch, params):
    _check_params(name, params, ("k",), ("k",))
    if grid.ndim != 1:
        raise InvalidSpecError("plane-wave is one-dimensional")
    k = float(params["k"])
    if grid.periodic:
        turns = k * grid.lengths[0] / (2 * math.pi)
        if abs(turns - round(turns)) > 1e-9:
            raise InvalidSpecError("plane wave on a ring needs k L / 2pi integer")
    return _stationary_wave(name, grid, alpha, particle, t, branch, {"k": k}, k)


def superpose(coefficients, states, t=0.0):
    """``sum_k c_k psi_k exp(-b E_k t / alpha)`` as a wave field."""
    coefficients = np.asarray(coefficients, dtype=complex)
    if len(coefficients) != len(states) or not states:
        raise InvalidSpecError("need one coefficient per state")
    ref = states[0]
    for s in states[1:]:
        if not s.grid.matches(ref.grid) or s.alpha != ref.alpha or s.branch != ref.branch:
            raise InvalidSpecError("superposed states must share grid, alpha and branch")
        if s.energy is None:
            raise InvalidSpecError("superposition needs stationary states")
    if not np.any(coefficients != 0):
        raise InvalidSpecError("all superposition coefficients are zero")
    pts = np.stack(ref.grid.mesh(), axis=-1)
    amps = sum(c * s.evaluate(pts, t) for c, s in zip(coefficients, states))
    meta = {"superposition": [s.name + str(s.params) for s in states], "coefficients": coefficients.tolist()}
    return WaveField(ref.grid, amps, ref.alpha, ref.branch, t, meta)


def diffusion_residual(state, t=None):
    """Discrete residual of the branch equation for an analytic state.

    Evaluates ``-b alpha d_t Psi - [(alpha^2/2m)(d - b q A/alpha)^2 + U] Psi``
    with the exact time derivative and the central-difference operator,
    returned on interior nodes (one node trimmed at each Dirichlet edge).
    """
    if state.name.startswith("kg-"):
        from .klein_gordon import spacetime_residual

        return spacetime_residual(state, t)
    t = state.t if t is None else t
    grid = state.grid
    a = state.alpha.value
    pts = np.stack(grid.mesh(), axis=-1)
    psi = state.evaluate(pts, t)
    dpsi = state.time_derivative(pts, t)
    pot = state.potential
    coupling = state.branch * pot.charge / a
    lap = covariant_laplacian(grid, pot.vector if pot.has_vector else None, coupling)
    h_psi = (a * a / (2 * state.particle.mass)) * (lap @ psi.ravel()).reshape(grid.shape) + pot.scalar_on(grid) * psi
    res = -state.branch * a * dpsi - h_psi
    if not grid.periodic:
        res = res[tuple(slice(1, -1) for _ in range(grid.ndim))]
    return res


def residual_certificate(state, levels=2, factor=2):
    """Max-norm residuals on successively refined grids and the observed order.

    Returns ``(residuals, orders)`` where ``orders[i] = log(r_i / r_{i+1}) / log(factor)``.
    Residuals are measured on the nodes of the coarsest grid's interior region
    so that boundary stencils do not enter.
    """
    residuals = []
    grid = state.grid
    for _ in range(levels):
        s = state.on(grid)
        r = np.abs(diffusion_residual(s))
        residuals.append(float(r.max()))
        grid = grid.refined(factor)
    residuals = np.array(residuals)
    with np.errstate(divide="ignore"):
        orders = np.log(residuals[:-1] / residuals[1:]) / math.log(factor)
    return residuals, orders


def discrete_eigenstates(grid, potential, alpha, particle=None, count=1):
    """Eigenpairs of the discrete Hamiltonian ``(alpha^2/2m) L_h + U`` on a line.

    Requires real ``alpha^2`` so the matrix is real symmetric. Levels are
    ordered like the analytic ladder ``E_k = -(alpha^2/|alpha|) omega (k+1/2)``,
    and each eigenvector is L2-normalised with a positive first lobe.
    Evolving these exactly stationary vectors isolates time-stepping error
    from spatial discretisation error.
    """
    from scipy.linalg import eigh_tridiagonal

    particle = particle or ParticleSpec()
    if grid.topology != "line":
        raise InvalidSpecError("discrete eigenstates are implemented on line grids")
    a = alpha.value
    if abs(math.sin(2 * alpha.phase)) > 1e-12:
        raise InvalidSpecError("discrete eigenstates need alpha^2 real")
    c = (a * a).real / (2 * particle.mass)
    h = grid.spacing[0]
    n = grid.shape[0]
    diag = -2 * c / h**2 + potential.scalar_on(grid)
    off = np.full(n - 1, c / h**2)
    w, v = eigh_tridiagonal(diag, off)
    order = np.argsort(-np.sign((a * a).real) * w)
    out = []
    for idx in order[:count]:
        vec = v[:, idx] / math.sqrt(h)
        first = vec[np.argmax(np.abs(vec) > 1e-3 * np.abs(vec).max())]
        out.append((complex(w[idx]), np.sign(first) * vec))
    return out
