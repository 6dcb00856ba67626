"""Euler-Maruyama ensembles of two-sided processes driven by complex noise.

A forward run advances ``X_{k+1} = X_k + b_+(X_k, t_k) dt + Re dM_k`` from
initial data; a backward run starts from terminal data and steps
``X_{k-1} = X_k - b_-(X_k, t_k) dt - Re dM_{k-1}``. Positions are always
stored in chronological order.

Paths are processed in fixed blocks of :data:`CHUNK` consecutive indices.
Every number produced for a path depends only on the seed, the path index and
the block it falls in, so splitting blocks across threads cannot change any
result bit.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import math

import numpy as np

from . import rng
from .errors import InvalidSpecError, NumericalGuardError
from .noise import ChannelCovariance, _require_realizable, channel_increments
from .wavefield.fields import DensityField

CHUNK = 16384
MASS_SIGNS = ("+", "0", "-")


# --- relativistic gauge ------------------------------------------------------


@dataclass(frozen=True)
class RelativisticSpec:
    epsilon: float
    affine_step: float = 0.02
    mass_squared_sign: str = "+"
    spatial_dim: int = 3

    @property
    def signature(self):
        return (-1,) + (1,) * self.spatial_dim

    @property
    def samplable(self):
        return self.mass_squared_sign != "-"


def fix_epsilon_gauge(particle, mass_squared_sign="+", affine_step=0.02):
    """Gauge-fix ``epsilon``: ``1/m`` for ``m^2 > 0``, ``1`` for ``m^2 = 0``, ``1/|m|`` for ``m^2 < 0``.

    For ``m^2 < 0`` the particle's ``mass`` field holds ``|m|``.
    """
    if mass_squared_sign not in MASS_SIGNS:
        raise InvalidSpecError(f"mass_squared_sign must be one of {MASS_SIGNS}")
    m = particle.mass
    if not affine_step > 0:
        raise InvalidSpecError("affine step must be positive")
    if mass_squared_sign == "+":
        if m <= 0:
            raise InvalidSpecError("m^2 > 0 needs a positive mass; use '0' for massless particles")
        eps = 1.0 / m
    elif mass_squared_sign == "0":
        if m != 0:
            raise InvalidSpecError("m^2 = 0 flag given with nonzero mass")
        eps = 1.0
    else:
        if m <= 0:
            raise InvalidSpecError("m^2 < 0 needs |m| > 0")
        eps = 1.0 / m
    return RelativisticSpec(eps, float(affine_step), mass_squared_sign, particle.dimension)


# --- initial positions --------------------------------------------------------


@dataclass(frozen=True)
class PointMass:
    location: tuple

    def __post_init__(self):
        object.__setattr__(self, "location", tuple(float(v) for v in np.atleast_1d(self.location)))


def _aux_uniforms(seed, slot, start, count, component=0):
    return rng.uniforms(seed, rng.stream_id(rng.AUX_STEP_BASE + slot, 0, component), start, count)


def draw_initial_positions(density, count, seed, slot=0):
    """Sample ``count`` positions from a grid density or a point mass.

    Grid densities are treated as piecewise constant on cells: a cell is
    chosen by inverse CDF over all cells (C order) and the position is uniform
    inside it. Uses the auxiliary random streams ``slot`` (cell choice) and
    ``slot + 1 + axis`` (offsets within the cell).
    """
    if int(count) != count or count < 1:
        raise InvalidSpecError("count must be a positive integer")
    if isinstance(density, PointMass):
        return np.tile(np.array(density.location), (count, 1))
    if not isinstance(density, DensityField):
        raise InvalidSpecError("density must be a DensityField or PointMass")
    grid = density.grid
    p = density.cell_probabilities().ravel()
    total = p.sum()
    if not (np.isfinite(total) and total > 0):
        raise InvalidSpecError("density is not normalizable")
    cdf = np.cumsum(p / total)
    cdf[-1] = 1.0
    u = _aux_uniforms(seed, slot, 0, count)
    cells = np.minimum(np.searchsorted(cdf, u, side="right"), p.size - 1)
    index = np.unravel_index(cells, grid.shape)
    out = np.empty((count, grid.ndim))
    for k in range(grid.ndim):
        edges = grid.edges(k)
        off = _aux_uniforms(seed, slot + 1 + k, 0, count)
        out[:, k] = edges[index[k]] + off * grid.spacing[k]
    return out


def draw_gaussian_positions(mean, std, count, seed, slot=8):
    """Exact normal draws ``mean + std z`` per axis from auxiliary streams ``slot + axis``."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    std = np.broadcast_to(np.asarray(std, dtype=float), mean.shape)
    if np.any(std < 0):
        raise InvalidSpecError("standard deviation must be >= 0")
    cols = [
        mean[k] + std[k] * rng.normals(seed, rng.stream_id(rng.AUX_STEP_BASE + slot + k, 0, 0), 0, count)
        for k in range(mean.size)
    ]
    return np.stack(cols, axis=-1)


def rejection_sample(target, propose, proposal_density, dims, count, seed, bound, slot=16, batch=None):
    """Rejection sampling with a deterministic, block-keyed proposal stream.

    Parameters
    ----------
    target : callable
        Unnormalised target density of points ``(M, d)``.
    propose : callable
        ``propose(normals (M, dims), uniforms (M,)) -> points (M, d)``.
    proposal_density : callable
        Density of the proposal at points ``(M, d)`` (unnormalised is fine).
    dims : int
        Number of normal variates the proposal consumes per point.
    bound : float
        Constant with ``target <= bound * proposal_density``; violations raise.
    """
    batch = batch or max(4 * count, 1024)
    got = []
    n_got = 0
    for round_ in range(10000):
        start = round_ * batch
        z = np.stack(
            [rng.normals(seed, rng.stream_id(rng.AUX_STEP_BASE + slot, d, 0), start, batch) for d in range(dims)],
            axis=-1,
        )
        u_extra = rng.uniforms(seed, rng.stream_id(rng.AUX_STEP_BASE + slot, 0, 1), start, batch)
        pts = propose(z, u_extra)
        ratio = target(pts) / (bound * proposal_density(pts))
        if np.any(ratio > 1.0):
            raise NumericalGuardError(
                f"rejection bound too small (max ratio {ratio.max():.3f})", guard="rejection-bound"
            )
        accept = rng.uniforms(seed, rng.stream_id(rng.AUX_STEP_BASE + slot + 1, 0, 0), start, batch) < ratio
        got.append(pts[accept])
        n_got += int(accept.sum())
        if n_got >= count:
            return np.concatenate(got)[:count]
    raise NumericalGuardError("rejection sampler acceptance too low", guard="rejection-bound")


# --- drift evaluation ---------------------------------------------------------


class GridInterpolator:
    """Multilinear interpolation of a vector field given on cell-centred nodes.

    Outside the node range on non-periodic axes the edge values are held
    constant; periodic axes wrap.
    """

    def __init__(self, grid, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.ndim,) + grid.shape:
            raise InvalidSpecError(f"drift array must have shape {(grid.ndim,) + grid.shape}")
        if not np.all(np.isfinite(values)):
            raise InvalidSpecError("drift contains NaN or Inf")
        self.grid = grid
        self.values = values
        self.origin = np.array([grid.axis(k)[0] for k in range(grid.ndim)])
        self.h = np.array(grid.spacing)

    def _axis_weights(self, x, k):
        n = self.grid.shape[k]
        s = (x - self.origin[k]) / self.h[k]
        if self.grid.periodic:
            i0 = np.floor(s)
            f = s - i0
            i0 = i0.astype(np.int64) % n
            return i0, (i0 + 1) % n, f
        s = np.clip(s, 0.0, n - 1.0)
        i0 = np.minimum(np.floor(s).astype(np.int64), n - 2)
        return i0, i0 + 1, s - i0

    def __call__(self, x, t=None):
        x = np.atleast_2d(x)
        nd = self.grid.ndim
        if nd == 1:
            i0, i1, f = self._axis_weights(x[:, 0], 0)
            v = self.values[0]
            return (v[i0] * (1.0 - f) + v[i1] * f)[:, None]
        parts = [self._axis_weights(x[:, k], k) for k in range(nd)]
        out = np.zeros((x.shape[0], nd))
        for corner in range(1 << nd):
            idx = []
            wgt = np.ones(x.shape[0])
            for k in range(nd):
                i0, i1, f = parts[k]
                if corner >> k & 1:
                    idx.append(i1)
                    wgt = wgt * f
                else:
                    idx.append(i0)
                    wgt = wgt * (1.0 - f)
            out += wgt[:, None] * self.values[(slice(None),) + tuple(idx)].T
        return out


def as_drift_function(drift, grid=None):
    """Normalise a drift argument to ``f(x (N, n), t) -> (N, n)``."""
    if callable(drift):
        return drift
    if grid is None:
        raise InvalidSpecError("grid drift arrays need the grid they live on")
    interp = GridInterpolator(grid, drift)
    return lambda x, t: interp(x)


# --- ensembles ---------------------------------------------------------------


@dataclass
class PathEnsemble:
    """Recorded sample paths.

    ``positions[p, r, c]`` is coordinate ``c`` of path ``p`` at recorded step
    ``record_steps[r]`` (time ``times[r]``). ``qv_sum[p, c]`` accumulates the
    squared real increments over every step, recorded or not.
    """

    positions: np.ndarray
    record_steps: np.ndarray
    times: np.ndarray
    step: float
    direction: str
    seed: int
    steps: int
    qv_sum: np.ndarray
    drift_mode: str = "density-consistent"
    companion: np.ndarray | None = None
    windings: np.ndarray | None = None
    circumference: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def count(self):
        return self.positions.shape[0]

    @property
    def ndim(self):
        return self.positions.shape[2]

    @property
    def duration(self):
        return self.steps * self.step

    def snapshot(self, r):
        return self.positions[:, r, :]

    def index_of_step(self, k):
        hits = np.nonzero(self.record_steps == k)[0]
        if hits.size == 0:
            raise InvalidSpecError(f"step {k} was not recorded")
        return int(hits[0])

    def unwrapped(self, r):
        if self.windings is None:
            return self.positions[:, r, :]
        return self.positions[:, r, :] + self.windings[:, r, None] * self.circumference


def _prepare_covariances(cov, channels):
    covs = list(cov) if isinstance(cov, (list, tuple)) else [cov] * channels
    if len(covs) != channels:
        raise InvalidSpecError("need one covariance per channel")
    for c in covs:
        if not isinstance(c, ChannelCovariance):
            raise InvalidSpecError("cov must be a ChannelCovariance or a list of them")
        _require_realizable(c)
    return covs


def simulate_ensemble(
    drift,
    cov,
    initial,
    steps,
    dt,
    direction="forward",
    seed=0,
    grid=None,
    record_steps=None,
    t0=0.0,
    companion=False,
    complex_drift=False,
    ring=None,
    drift_mode="density-consistent",
    threads=1,
):
    """Euler-Maruyama integration of an ensemble.

    Parameters
    ----------
    drift : callable or ndarray
        ``f(x, t)`` returning real drifts (or complex ones when
        ``complex_drift``), or a grid array of shape ``(ndim, *grid.shape)``.
        For backward runs this is the backward drift ``b_-``.
    cov : ChannelCovariance or list
        Noise law per coordinate channel.
    initial : ndarray, shape (N, n)
        Positions at ``t0`` (forward) or at ``t0 + steps dt`` (backward).
    steps : int
    dt : float
    direction : {"forward", "backward"}
    seed : int
    grid : GridSpec, optional
        Needed for array drifts; a ring grid also enables wrapping.
    record_steps : sequence of int, optional
        Step indices (0..steps) to keep; all steps by default.
    companion : bool
        Also integrate ``Y`` with the imaginary parts of drift and noise.
    complex_drift : bool
        Drift returns complex velocities ``w``; ``X`` takes the real part.
    ring : float, optional
        Circumference for periodic wrapping on ``[start, start + L)``;
        taken from ``grid`` when it is a ring.
    threads : int
        Worker threads; results do not depend on this value.

    Returns
    -------
    PathEnsemble
    """
    if int(steps) != steps or steps < 1:
        raise InvalidSpecError("steps must be a positive integer")
    if not dt > 0:
        raise InvalidSpecError("dt must be positive")
    if direction not in ("forward", "backward"):
        raise InvalidSpecError("direction must be 'forward' or 'backward'")
    initial = np.atleast_2d(np.asarray(initial, dtype=float))
    N, n = initial.shape
    if not np.all(np.isfinite(initial)):
        raise InvalidSpecError("initial positions contain NaN or Inf")
    covs = _prepare_covariances(cov, n)
    f = as_drift_function(drift, grid)
    rec = np.arange(steps + 1) if record_steps is None else np.unique(np.asarray(record_steps, dtype=np.int64))
    if rec.size == 0 or rec[0] < 0 or rec[-1] > steps:
        raise InvalidSpecError("record steps must lie in 0..steps")
    ring_start = None
    if ring is None and grid is not None and grid.periodic:
        ring = grid.lengths[0]
        ring_start = grid.bounds[0][0]
    if ring is not None:
        ring_start = 0.0 if ring_start is None else ring_start
        if n != 1:
            raise InvalidSpecError("ring wrapping is one-dimensional")

    R = rec.size
    positions = np.empty((N, R, n))
    comp = np.empty((N, R, n)) if companion else None
    winds = np.zeros((N, R), dtype=np.int64) if ring is not None else None
    qv = np.zeros((N, n))
    slot_of = {int(k): r for r, k in enumerate(rec)}
    sign = 1.0 if direction == "forward" else -1.0

    def run_block(start):
        stop = min(start + CHUNK, N)
        cnt = stop - start
        x = initial[start:stop].copy()
        y = np.zeros_like(x) if companion else None
        w = np.zeros(cnt, dtype=np.int64)
        if ring is not None:
            w0 = np.floor((x[:, 0] - ring_start) / ring).astype(np.int64)
            x[:, 0] -= w0 * ring
        acc = np.zeros((cnt, n))
        order = range(steps) if direction == "forward" else range(steps, 0, -1)
        k_first = 0 if direction == "forward" else steps

        def store(k):
            r = slot_of.get(k)
            if r is None:
                return
            positions[start:stop, r] = x
            if companion:
                comp[start:stop, r] = y
            if ring is not None:
                winds[start:stop, r] = w

        store(k_first)
        for k in order:
            t = t0 + k * dt
            b = f(x, t)
            noise_step = k if direction == "forward" else k - 1
            dM = np.empty((cnt, n), dtype=complex)
            for c in range(n):
                dM[:, c] = channel_increments(covs[c], dt, seed, noise_step, c, start, cnt)
            if complex_drift:
                dz = b * dt + dM
            else:
                dz = np.asarray(b, dtype=float) * dt + dM
            dx = sign * dz.real
            if not np.all(np.isfinite(dx)):
                raise NumericalGuardError(f"non-finite drift at step {k}", guard="finite-drift")
            x += dx
            acc += dx * dx
            if companion:
                y += sign * dz.imag
            if ring is not None:
                wrap = np.floor((x[:, 0] - ring_start) / ring).astype(np.int64)
                if np.any(wrap):
                    x[:, 0] -= wrap * ring
                    w += wrap
            store(k + 1 if direction == "forward" else k - 1)
        qv[start:stop] = acc

    starts = list(range(0, N, CHUNK))
    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_block, starts))
    else:
        for s in starts:
            run_block(s)

    return PathEnsemble(
        positions=positions,
        record_steps=rec,
        times=t0 + rec * dt,
        step=float(dt),
        direction=direction,
        seed=int(seed),
        steps=int(steps),
        qv_sum=qv,
        drift_mode=drift_mode,
        companion=comp,
        windings=winds,
        circumference=ring,
        meta={"ring_start": ring_start} if ring is not None else {},
    )
