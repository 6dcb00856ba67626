"""Deterministic file output: CSV tables, JSON documents and binary path dumps.

Floats are written with ``%.17g`` in CSV files and with Python's shortest
round-trip repr in JSON, so identical inputs give byte-identical files.

Binary path layout (little endian)
----------------------------------
======  =======  ==========================================
offset  type     content
======  =======  ==========================================
0       8 bytes  magic ``b"PATHENS1"``
8       int64    N (paths)
16      int64    R (recorded steps)
24      int64    n (coordinates)
32      float64  step size
40      uint64   seed
48      int64    direction (+1 forward, -1 backward)
56      float64  positions, C order, shape (N, R, n)
======  =======  ==========================================
"""

import json
import struct
from pathlib import Path

import numpy as np

PATH_MAGIC = b"PATHENS1"
_HEADER = struct.Struct("<8sqqqdQq")


def _fmt(v):
    return "%.17g" % v


def write_csv(path, header, columns):
    """Write equal-length columns under ``header``."""
    cols = [np.asarray(c).ravel() for c in columns]
    n = len(cols[0])
    if any(len(c) != n for c in cols):
        raise ValueError("CSV columns differ in length")
    lines = [",".join(header)]
    for i in range(n):
        lines.append(",".join(_fmt(c[i]) if np.issubdtype(c.dtype, np.floating) else str(c[i]) for c in cols))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n")


def _coordinate_columns(grid):
    mesh = grid.mesh()
    names = ["x"] if grid.ndim == 1 else [f"x{k}" for k in range(grid.ndim)]
    return names, [m.ravel() for m in mesh]


def write_density_csv(path, density):
    names, coords = _coordinate_columns(density.grid)
    write_csv(path, names + ["density"], coords + [density.values.ravel()])


def write_wave_csv(path, psi):
    names, coords = _coordinate_columns(psi.grid)
    a = psi.amplitudes.ravel()
    t = np.full(a.shape, float(psi.time))
    write_csv(path, names + ["re_psi", "im_psi", "abs2", "time"], coords + [a.real, a.imag, np.abs(a) ** 2, t])
    meta = {
        "grid": {"topology": psi.grid.topology, "bounds": psi.grid.bounds, "shape": psi.grid.shape, "dt": psi.grid.dt},
        "alpha": {"magnitude": psi.alpha.magnitude, "phase": psi.alpha.phase, "gamma": psi.alpha.gamma},
        "branch": psi.branch,
        "provenance": {k: v for k, v in psi.meta.items() if isinstance(v, (str, int, float, dict, list))},
    }
    write_json(Path(path).with_suffix(".json"), meta)


def write_drift_csv(path, drift):
    """Columns: coordinates, then Re/Im of ``w_+`` and ``w_-`` per axis."""
    names, coords = _coordinate_columns(drift.grid)
    cols, head = [], []
    for k in range(drift.grid.ndim):
        suffix = "" if drift.grid.ndim == 1 else str(k)
        head += [f"re_w_plus{suffix}", f"im_w_plus{suffix}", f"re_w_minus{suffix}", f"im_w_minus{suffix}"]
        cols += [drift.w_plus[k].real.ravel(), drift.w_plus[k].imag.ravel(), drift.w_minus[k].real.ravel(), drift.w_minus[k].imag.ravel()]
    write_csv(path, names + head, coords + cols)


def write_real_drift_csv(path, grid, values, label="b"):
    names, coords = _coordinate_columns(grid)
    values = np.asarray(values)
    head = [label] if grid.ndim == 1 else [f"{label}{k}" for k in range(grid.ndim)]
    write_csv(path, names + head, coords + [values[k].ravel() for k in range(grid.ndim)])


def write_ensemble_summary(path, ensemble, grid=None):
    """Per recorded step: time, mean and variance per coordinate, and histogram counts on ``grid``."""
    pos = ensemble.positions
    n = pos.shape[2]
    head = ["step", "time"]
    cols = [np.asarray(ensemble.record_steps), np.asarray(ensemble.times, dtype=float)]
    for k in range(n):
        suffix = "" if n == 1 else str(k)
        head += [f"mean{suffix}", f"variance{suffix}"]
        cols += [pos[:, :, k].mean(axis=0), pos[:, :, k].var(axis=0)]
    if grid is not None:
        edges = grid.edges(0)
        x = pos[:, :, 0]
        if grid.periodic:
            x = edges[0] + np.mod(x - edges[0], grid.lengths[0])
        counts = np.stack([np.histogram(x[:, r], bins=edges)[0] for r in range(pos.shape[1])])
        head += [f"bin{j}" for j in range(counts.shape[1])]
        cols += [counts[:, j] for j in range(counts.shape[1])]
    write_csv(path, head, cols)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def write_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")


def write_paths(path, ensemble):
    """Dump an ensemble's recorded positions in the documented binary layout."""
    pos = np.ascontiguousarray(ensemble.positions, dtype="<f8")
    N, R, n = pos.shape
    head = _HEADER.pack(
        PATH_MAGIC, N, R, n, float(ensemble.step), int(ensemble.seed) & (2**64 - 1),
        1 if ensemble.direction == "forward" else -1,
    )
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(pos.tobytes())


def read_paths(path):
    """Inverse of :func:`write_paths`; returns ``(header dict, positions)``."""
    raw = Path(path).read_bytes()
    magic, N, R, n, step, seed, direction = _HEADER.unpack_from(raw)
    if magic != PATH_MAGIC:
        raise ValueError("not a path ensemble file")
    pos = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(N, R, n)
    head = {"count": N, "recorded": R, "ndim": n, "step": step, "seed": seed,
            "direction": "forward" if direction == 1 else "backward"}
    return head, pos
