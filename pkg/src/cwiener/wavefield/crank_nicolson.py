"""Crank-Nicolson integration of the branch diffusion equation.

For branch ``b`` the field obeys ``d_t Psi = -(b / alpha) H Psi`` with
``H = (alpha^2 / 2m)(d - b q A / alpha)^2 + U``. One step of size ``s dt``
(``s = +1`` forward, ``-1`` backward) solves

    (I + s dt b H / 2 alpha) Psi_new = (I - s dt b H / 2 alpha) Psi_old .
"""

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from ..errors import IllPosedError, InvalidSpecError, NumericalGuardError
from ..noise import ParticleSpec
from .fields import PotentialSet, covariant_laplacian

STABILITY_LIMIT = 0.5
WELL_POSED_TOL = 1e-12


def hamiltonian(grid, alpha, particle, pot, branch):
    a = alpha.value
    vec = pot.vector if pot.has_vector else None
    lap = covariant_laplacian(grid, vec, branch * pot.charge / a)
    return (a * a / (2 * particle.mass)) * lap + sp.diags(pot.scalar_on(grid).ravel().astype(complex))


def well_posed_direction(alpha, branch):
    """Time direction in which the branch equation is a forward heat flow.

    The kinetic part reads ``d_t Psi = D Laplacian Psi`` with
    ``D = -b alpha / 2m``; integrating in direction ``s`` is well posed when
    ``Re(s D) >= 0``. Returns ``"forward"``, ``"backward"`` or ``"both"``.
    """
    re = (-branch * alpha.value).real
    if abs(re) <= WELL_POSED_TOL:
        return "both"
    return "forward" if re > 0 else "backward"


def evolve_crank_nicolson(
    psi, pot=None, steps=1, direction="forward", particle=None, dt=None, snapshots=None, track_norm=False
):
    """Advance a wave field ``steps`` Crank-Nicolson steps.

    Parameters
    ----------
    psi : WaveField
    pot : PotentialSet, optional
        Static potentials; zero when omitted.
    steps : int
    direction : {"forward", "backward"}
    particle : ParticleSpec, optional
        Unit mass when omitted.
    dt : float, optional
        Defaults to ``psi.grid.dt``.
    snapshots : iterable of int, optional
        Step indices at which to also return intermediate fields.
    track_norm : bool
        Record the squared L2 norm after every step in
        ``meta["norm_history"]`` of the result.

    Returns
    -------
    WaveField, or ``(WaveField, dict)`` when ``snapshots`` is given.
    """
    pot = pot or PotentialSet.zero()
    particle = particle or ParticleSpec()
    if particle.mass <= 0:
        raise InvalidSpecError("Crank-Nicolson needs mass > 0")
    if direction not in ("forward", "backward"):
        raise InvalidSpecError("direction must be 'forward' or 'backward'")
    if int(steps) != steps or steps < 0:
        raise InvalidSpecError("steps must be a nonnegative integer")
    grid = psi.grid
    if grid.topology == "spacetime-box":
        raise InvalidSpecError("use the spectral solver for spacetime fields")
    dt = grid.dt if dt is None else float(dt)
    umax = float(np.max(np.abs(pot.scalar_on(grid))))
    if dt * umax >= STABILITY_LIMIT:
        raise NumericalGuardError(
            f"dt * max|U| = {dt * umax:.3g} must stay below {STABILITY_LIMIT}; "
            f"use dt < {STABILITY_LIMIT / umax:.3g}",
            guard="stability",
        )
    ok = well_posed_direction(psi.alpha, psi.branch)
    if ok != "both" and ok != direction:
        raise IllPosedError(
            f"branch {psi.branch:+d} with alpha = {psi.alpha.value:.4g} is ill posed in the "
            f"{direction} direction; integrate {ok}",
            well_posed_direction=ok,
        )

    sgn = 1.0 if direction == "forward" else -1.0
    H = hamiltonian(grid, psi.alpha, particle, pot, psi.branch)
    c = sgn * dt * psi.branch / (2 * psi.alpha.value)
    eye = sp.identity(H.shape[0], dtype=complex, format="csc")
    lu = splu((eye + c * H).tocsc())
    rhs_op = (eye - c * H).tocsr()
    v = psi.amplitudes.ravel().copy()
    wanted = set(snapshots or ())
    saved = {}
    if 0 in wanted:
        saved[0] = psi
    vol = grid.cell_volume
    norms = [float(np.vdot(v, v).real * vol)] if track_norm else None
    for k in range(1, steps + 1):
        v = lu.solve(rhs_op @ v)
        if track_norm:
            norms.append(float(np.vdot(v, v).real * vol))
        if k in wanted:
            saved[k] = psi.with_amplitudes(v.reshape(grid.shape).copy(), time=psi.time + sgn * k * dt)
    out = psi.with_amplitudes(v.reshape(grid.shape), time=psi.time + sgn * steps * dt)
    out.meta = {**psi.meta, "norm_history": norms} if track_norm else dict(psi.meta)
    return (out, saved) if snapshots is not None else out
