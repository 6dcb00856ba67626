"""Expectation values of position and momentum operators.

The momentum operator is ``p = -alpha d/dx`` and expectations are
``<O> = int conj(Psi) O Psi / int |Psi|^2``. Derivatives use fourth-order
central differences so that grid error stays well below 1e-6 on the
resolutions used for uncertainty checks.
"""

import numpy as np

from ..errors import InvalidSpecError

MOMENTS = ("X", "X2", "P", "P2", "XP")


def _d1(f, h, periodic):
    if periodic:
        return (np.roll(f, 2) - 8 * np.roll(f, 1) + 8 * np.roll(f, -1) - np.roll(f, -2)) / (12 * h)
    g = np.concatenate([[0, 0], f, [0, 0]])  # zero Dirichlet ghosts
    return (g[:-4] - 8 * g[1:-3] + 8 * g[3:-1] - g[4:]) / (12 * h)


def operator_moments(psi, which=MOMENTS):
    """Moments of a one-dimensional wave field.

    Parameters
    ----------
    psi : WaveField
        Line or ring field; normalisation is handled internally.
    which : iterable of str
        Subset of ``("X", "X2", "P", "P2", "XP")``. ``XP`` is the symmetrised
        product ``(XP + PX) / 2``.

    Returns
    -------
    dict
        The requested moments (complex in general) plus ``VarX`` and ``VarP``
        whenever the needed first and second moments were requested.

    Notes
    -----
    ``<P^2>`` is evaluated as ``-alpha^2 int |dPsi|^2 / int |Psi|^2``, which
    equals ``int conj(Psi) alpha^2 d^2 Psi`` after integrating by parts with
    vanishing (or periodic) boundary terms.
    """
    grid = psi.grid
    if grid.ndim != 1:
        raise InvalidSpecError("operator moments are implemented for one-dimensional grids")
    bad = set(which) - set(MOMENTS)
    if bad:
        raise InvalidSpecError(f"unknown moments {sorted(bad)}")
    f = psi.amplitudes
    norm = np.sum(np.abs(f) ** 2)
    if not np.isfinite(norm) or norm <= 0:
        raise InvalidSpecError("wave field is not normalizable")
    x = grid.x
    h = grid.spacing[0]
    a = psi.alpha.value
    df = _d1(f, h, grid.periodic)
    out = {}
    if "X" in which:
        out["X"] = complex(np.sum(x * np.abs(f) ** 2) / norm)
    if "X2" in which:
        out["X2"] = complex(np.sum(x**2 * np.abs(f) ** 2) / norm)
    if "P" in which:
        out["P"] = complex(np.sum(np.conj(f) * (-a) * df) / norm)
    if "P2" in which:
        out["P2"] = complex(-(a * a) * np.sum(np.abs(df) ** 2) / norm)
    if "XP" in which:
        # PX = XP - alpha, so the symmetrised product is XP - alpha/2
        xp = np.sum(np.conj(f) * x * (-a) * df) / norm
        out["XP"] = complex(xp - a / 2)
    if "X" in out and "X2" in out:
        out["VarX"] = out["X2"] - out["X"] ** 2
    if "P" in out and "P2" in out:
        out["VarP"] = out["P2"] - out["P"] ** 2
    return out
