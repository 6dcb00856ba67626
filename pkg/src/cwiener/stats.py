"""Estimators and comparators for ensembles, densities and wave fields."""

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import BoundViolationError, InvalidSpecError
from .wavefield.fields import DensityField
from .wavefield.moments import operator_moments

KL_FLOOR = 1e-15
UNCERTAINTY_TOL = 1e-8


# --- densities ----------------------------------------------------------------


def empirical_density(ensemble, snapshot, grid, axis=0):
    """Histogram of one recorded snapshot on the cells of ``grid``.

    ``ensemble`` may also be a plain ``(N,)`` or ``(N, n)`` array of positions.
    The histogram is normalised by the number of samples that fall inside the
    grid; that count is stored in ``meta["inside"]``.
    """
    if hasattr(ensemble, "positions"):
        if not (-ensemble.positions.shape[1] <= snapshot < ensemble.positions.shape[1]):
            raise InvalidSpecError(f"snapshot {snapshot} out of range")
        x = ensemble.positions[:, snapshot, :]
    else:
        x = np.asarray(ensemble, dtype=float)
        x = x[:, None] if x.ndim == 1 else x
    if x.shape[0] == 0:
        raise InvalidSpecError("empty ensemble")
    if grid.ndim == 1:
        xs = x[:, axis]
        if grid.periodic:
            a, _ = grid.bounds[0]
            xs = a + np.mod(xs - a, grid.lengths[0])
        counts, _ = np.histogram(xs, bins=grid.edges(0))
    else:
        counts, _ = np.histogramdd(x[:, : grid.ndim], bins=[grid.edges(k) for k in range(grid.ndim)])
    inside = int(counts.sum())
    if inside == 0:
        raise InvalidSpecError("no samples fall inside the grid")
    values = counts / (inside * grid.cell_volume)
    return DensityField(grid, values, "L2", meta={"inside": inside, "total": int(x.shape[0]), "counts": counts})


@dataclass
class ComparisonReport:
    l1: float
    kl: float
    max_abs: float
    criteria: dict = field(default_factory=dict)

    def add(self, name, value, threshold, passed=None, relation="<"):
        if passed is None:
            passed = value < threshold if relation == "<" else value > threshold
        self.criteria[name] = {"value": float(value), "threshold": float(threshold), "pass": bool(passed)}
        return bool(passed)

    @property
    def passed(self):
        return all(c["pass"] for c in self.criteria.values())


def l1_distance(a, b):
    return float(np.sum(np.abs(a.values - b.values)) * a.grid.cell_volume)


def kl_divergence(a, b, floor=KL_FLOOR):
    """``KL(a || b)`` in nats with ``b`` floored at ``floor``."""
    p = a.values
    q = np.maximum(b.values, floor)
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])) * a.grid.cell_volume)


def compare_densities(a, b):
    """L1 distance, KL divergence and max abs difference of two densities on one grid."""
    if not a.grid.matches(b.grid):
        raise InvalidSpecError("densities live on different grids")
    return ComparisonReport(l1_distance(a, b), max(kl_divergence(a, b), 0.0), float(np.max(np.abs(a.values - b.values))))


# --- Ito velocity -------------------------------------------------------------


@dataclass
class VelocityEstimate:
    centers: np.ndarray
    values: np.ndarray
    counts: np.ndarray
    stderr: np.ndarray
    direction: str
    dropped: int = 0

    def fit_slope(self):
        """Weighted least-squares slope and intercept of the binned estimate."""
        w = 1.0 / self.stderr**2
        A = np.stack([self.centers, np.ones_like(self.centers)], axis=1)
        coef = np.linalg.solve(A.T @ (A * w[:, None]), A.T @ (w * self.values))
        return float(coef[0]), float(coef[1])


def _consecutive_pairs(ensemble):
    rec = ensemble.record_steps
    return [r for r in range(len(rec) - 1) if rec[r + 1] == rec[r] + 1]


def estimate_ito_velocity(ensemble, direction="forward", edges=None, min_count=20, axis=0):
    """Binned conditional mean of increment rates.

    Forward: ``E[(X_{k+1} - X_k)/dt | X_k in bin]``; backward:
    ``E[(X_{k+1} - X_k)/dt | X_{k+1} in bin]``. Pools every consecutive pair
    of recorded steps. Bins with fewer than ``min_count`` samples are dropped.
    """
    if direction not in ("forward", "backward"):
        raise InvalidSpecError("direction must be 'forward' or 'backward'")
    pairs = _consecutive_pairs(ensemble)
    if not pairs:
        raise InvalidSpecError("ensemble has no consecutive recorded steps")
    dt = ensemble.step
    cond, rate = [], []
    for r in pairs:
        x0 = ensemble.unwrapped(r)[:, axis]
        x1 = ensemble.unwrapped(r + 1)[:, axis]
        cond.append(ensemble.positions[:, r if direction == "forward" else r + 1, axis])
        rate.append((x1 - x0) / dt)
    cond = np.concatenate(cond)
    rate = np.concatenate(rate)
    if edges is None:
        lo, hi = np.quantile(cond, [0.001, 0.999])
        edges = np.linspace(lo, hi, 41)
    idx = np.digitize(cond, edges) - 1
    nb = len(edges) - 1
    ok = (idx >= 0) & (idx < nb)
    counts = np.bincount(idx[ok], minlength=nb)
    sums = np.bincount(idx[ok], weights=rate[ok], minlength=nb)
    sq = np.bincount(idx[ok], weights=rate[ok] ** 2, minlength=nb)
    keep = counts >= max(min_count, 2)
    c = counts[keep]
    mean = sums[keep] / c
    var = np.maximum(sq[keep] / c - mean**2, 0.0)
    centers = 0.5 * (edges[:-1] + edges[1:])[keep]
    return VelocityEstimate(centers, mean, c, np.sqrt(var / c), direction, int(np.sum(~keep)))


@dataclass
class OsmoticCheck:
    relative_error: float
    slope_ratio: float
    difference: np.ndarray
    target: np.ndarray
    centers: np.ndarray


def osmotic_check(forward, backward, dlog_rho, sigma2):
    """Compare ``b_+ - b_-`` with ``sigma2 d ln rho`` on the bins both estimates kept.

    ``dlog_rho`` is a callable evaluated at bin centres. Returns the
    count-weighted relative L2 error and the ratio of fitted slopes.
    """
    common, i_f, i_b = np.intersect1d(np.round(forward.centers, 12), np.round(backward.centers, 12), return_indices=True)
    if common.size < 3:
        raise InvalidSpecError("too few common bins for the osmotic check")
    diff = forward.values[i_f] - backward.values[i_b]
    target = sigma2 * np.asarray(dlog_rho(forward.centers[i_f]), dtype=float)
    w = np.minimum(forward.counts[i_f], backward.counts[i_b]).astype(float)
    rel = math.sqrt(np.sum(w * (diff - target) ** 2) / np.sum(w * target**2))
    x = forward.centers[i_f]
    slope_d = np.polyfit(x, diff, 1, w=np.sqrt(w))[0]
    slope_t = np.polyfit(x, target, 1, w=np.sqrt(w))[0]
    return OsmoticCheck(rel, float(slope_d / slope_t), diff, target, x)


# --- uncertainty ----------------------------------------------------------------


@dataclass
class UncertaintyResult:
    product: complex
    bound: float
    var_x: complex
    var_p: complex
    quantum: bool
    holds: bool | None


def uncertainty_bound(alpha):
    """``(|alpha|/2)(1 + cos phi)``."""
    return 0.5 * alpha.magnitude * (1 + math.cos(alpha.phase))


def uncertainty_product(psi, tol=UNCERTAINTY_TOL):
    """``sqrt(Var X Var P)`` with the bound check in the quantum case.

    For purely imaginary ``alpha`` the product is real and a value below the
    bound by more than ``tol`` raises :class:`BoundViolationError`. For other
    phases the (generally complex) product is only reported.
    """
    mom = operator_moments(psi, ("X", "X2", "P", "P2"))
    vx, vp = mom["VarX"], mom["VarP"]
    bound = uncertainty_bound(psi.alpha)
    quantum = psi.alpha.is_imaginary
    if quantum:
        prod = math.sqrt(max(vx.real, 0.0) * max(vp.real, 0.0))
        holds = prod >= bound - tol
        if not holds:
            raise BoundViolationError(f"uncertainty product {prod:.12g} below bound {bound:.12g}")
        return UncertaintyResult(complex(prod), bound, vx, vp, True, True)
    return UncertaintyResult(complex(np.sqrt(complex(vx * vp))), bound, vx, vp, False, None)


# --- relativistic statistics ----------------------------------------------------


@dataclass
class CausalityResult:
    em_expectation: float
    em_stderr: float
    windows: list
    fractions: list
    threshold: float
    counts: list


def minkowski_square(v):
    return -v[..., 0] ** 2 + np.sum(v[..., 1:] ** 2, axis=-1)


def causality_statistics(w_circ, ensemble, spec, windows, alpha, mass, em_snapshots=None):
    """Energy-momentum expectation and coarse-grained spacelike fractions.

    Parameters
    ----------
    w_circ : callable
        ``w_circ(points (M, n+1)) -> (M, n+1)`` mean velocity field.
    ensemble : PathEnsemble
        Spacetime paths, every step recorded.
    spec : RelativisticSpec
    windows : sequence of float
        Affine-parameter windows; each must be a multiple of the step.
    alpha : DiffusionConstant
    mass : float
    em_snapshots : sequence of int, optional
        Recorded snapshots at which ``E[eta w w]`` is averaged; all by default.

    Returns
    -------
    CausalityResult
        ``fractions[j]`` is the share of non-overlapping window displacements
        ``Delta X`` with ``eta(Delta X, Delta X) > 0``.
    """
    X = ensemble.positions
    N, R, d = X.shape
    if d != spec.spatial_dim + 1:
        raise InvalidSpecError("ensemble dimension does not match the relativistic spec")
    snaps = range(R) if em_snapshots is None else em_snapshots
    vals = []
    for r in snaps:
        w = np.asarray(w_circ(X[:, r, :]))
        vals.append(minkowski_square(w.real if np.iscomplexobj(w) else w))
    vals = np.concatenate(vals)
    em = float(np.mean(vals))
    # snapshots along one path are correlated; use per-path means for the error
    per_path = np.mean(np.stack(np.split(vals, len(list(snaps)))), axis=0)
    em_se = float(np.std(per_path) / math.sqrt(N))
    fractions, counts = [], []
    steps = np.diff(ensemble.record_steps)
    if np.any(steps != 1):
        raise InvalidSpecError("causality windows need every step recorded")
    for dtau in windows:
        L = int(round(dtau / ensemble.step))
        if L < 1 or abs(L * ensemble.step - dtau) > 1e-9 * max(1.0, dtau):
            raise InvalidSpecError(f"window {dtau} is not a multiple of the affine step")
        starts = np.arange(0, R - L, L)
        if starts.size == 0:
            raise InvalidSpecError(f"window {dtau} longer than the recorded paths")
        disp = X[:, starts + L, :] - X[:, starts, :]
        q = minkowski_square(disp)
        fractions.append(float(np.mean(q > 0)))
        counts.append(int(q.size))
    threshold = spec.spatial_dim * (1 + math.cos(alpha.phase)) / (2 * mass)
    return CausalityResult(em, em_se, list(windows), fractions, threshold, counts)


# --- quadratic variation -----------------------------------------------------------


@dataclass
class RealizedVariation:
    rate: np.ndarray
    stderr: np.ndarray


def ensemble_quadratic_variation(ensemble, min_steps=1000):
    """Realized variance rate ``sum (Delta X)^2 / T`` per channel, pooled over paths."""
    if ensemble.steps < 2:
        raise InvalidSpecError("quadratic variation needs more than one step")
    if ensemble.steps < min_steps:
        raise InvalidSpecError(f"quadratic variation needs at least {min_steps} steps, got {ensemble.steps}")
    per_path = ensemble.qv_sum / ensemble.duration
    rate = per_path.mean(axis=0)
    se = per_path.std(axis=0) / math.sqrt(per_path.shape[0])
    return RealizedVariation(rate, se)
