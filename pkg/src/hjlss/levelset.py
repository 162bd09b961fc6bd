"""Grid dynamic programming for 2-D games and exact composition to N-D values.

The 2-D solver marches the variational inequality

    V_t + min{0, H(x, grad V, t)} = 0,   V(x, t_f) = J(x)

backwards with a first-order local Lax-Friedrichs numerical Hamiltonian and
explicit Euler steps, applying the freeze V <- min(V_new, V_old) after every
step.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _io
from .dynamics import T_FINAL, AffineInputSystem, QuadraticTarget, input_matrices, merge_box_columns

log = logging.getLogger(__name__)

GRID_MAGIC = b"HJGRID\x00\x01"
GRID_VERSION = 1


class CFLError(FloatingPointError):
    pass


@dataclass
class ValueGrid2D:
    bounds: np.ndarray          # [[lo0, hi0], [lo1, hi1]]
    shape: tuple
    dt: float
    times: np.ndarray           # ascending snapshot times, last is t_f
    values: np.ndarray          # (Nt, Nx, Ny)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.bounds = np.asarray(self.bounds, dtype=float)
        self.shape = tuple(int(s) for s in self.shape)
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)

    @property
    def axes(self):
        return [np.linspace(self.bounds[i, 0], self.bounds[i, 1], self.shape[i]) for i in range(2)]

    @property
    def spacing(self):
        return (self.bounds[:, 1] - self.bounds[:, 0]) / (np.asarray(self.shape) - 1)

    def states(self):
        gx, gy = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([gx, gy], axis=-1)

    def save(self, path):
        header = {"bounds": self.bounds.tolist(), "shape": list(self.shape), "dt": self.dt,
                  "times": self.times.tolist(), "meta": self.meta}
        _io.write_container(path, GRID_MAGIC, GRID_VERSION, header, [("values", self.values)])

    @classmethod
    def load(cls, path):
        head, arrays = _io.read_container(path, GRID_MAGIC, GRID_VERSION)
        return cls(head["bounds"], head["shape"], head["dt"], head["times"], arrays["values"], head["meta"])


def _ghost_steps(grid, target):
    """Target increments from each edge node to its ghost, per axis: [(lo, hi), (lo, hi)]."""
    axes = grid.axes
    h = grid.spacing
    out = []
    for ax in range(2):
        pts = []
        for edge, step in ((0, -h[ax]), (-1, h[ax])):
            xs = [axes[0], axes[1]]
            xs[ax] = np.array([axes[ax][edge]])
            gx, gy = np.meshgrid(*xs, indexing="ij")
            edge_states = np.stack([gx, gy], axis=-1)
            ghost_states = edge_states.copy()
            ghost_states[..., ax] += step
            pts.append(np.squeeze(target(ghost_states) - target(edge_states), axis=ax))
        out.append(tuple(pts))
    return out


def _one_sided_diffs(V, h, axis, ghost=None):
    """Backward/forward differences with one ghost node per edge.

    The ghost is the edge value shifted by the target's increment across the
    edge. The ghost is then affine in the edge value with unit weight, which
    keeps the Lax-Friedrichs update monotone (stable under the CFL bound), and
    it is exact wherever V - J is locally constant, as it is outside the tube
    on inflow faces.
    """
    V = np.moveaxis(V, axis, 0)
    lo, hi = V[:1], V[-1:]
    if ghost is not None:
        lo, hi = lo + ghost[0][None], hi + ghost[1][None]
    padded = np.concatenate([lo, V, hi], axis=0)
    d = np.diff(padded, axis=0) / h
    back, fwd = d[:-1], d[1:]
    return np.moveaxis(back, 0, axis), np.moveaxis(fwd, 0, axis)


def _box_columns(sys, t):
    B1, B2 = input_matrices(sys, t)
    return merge_box_columns(B1, B2, sys.control_bound, sys.disturb_bound, sys.objective)


def _neighbour_max(a):
    """Max over each node and its 4-neighbours (edge-padded)."""
    p = np.pad(a, 1, mode="edge")
    return np.maximum.reduce([p[1:-1, 1:-1], p[:-2, 1:-1], p[2:, 1:-1], p[1:-1, :-2], p[1:-1, 2:]])


def dissipation(sys, states, t=T_FINAL):
    """Per-node, per-axis bound of |dH/dp_i|: local drift bound + merged input column weights.

    Returns an array of shape states.shape. The drift part takes the max over
    the node's stencil neighbours.
    """
    drift = np.abs(np.asarray(sys.drift(states, t), dtype=float))
    cols, coefs = _box_columns(sys, t)
    inputs = np.abs(cols) @ np.abs(coefs) if coefs.size else np.zeros(2)
    return np.stack([_neighbour_max(drift[..., i]) + inputs[i] for i in range(2)], axis=-1)


def dp_solve_2d(sys2d: AffineInputSystem, target: QuadraticTarget, bounds=((-3.0, 3.0), (-3.0, 3.0)),
                shape=(201, 201), horizon=1.0, cfl=0.5, n_snapshots=11, snapshot_times=None,
                meta=None) -> ValueGrid2D:
    """Backward local Lax-Friedrichs march of the reach/avoid variational inequality.

    Marching backwards, V(t - dt) = V(t) + dt * H, so the dissipation enters
    with a plus sign. Ghost cells follow the target's slope across each edge
    (see ``_one_sided_diffs``).
    """
    if sys2d.state_dim != 2:
        raise ValueError("dp_solve_2d needs a 2-D system")
    if not 0 < cfl <= 1:
        raise ValueError("cfl must lie in (0, 1]")
    bounds = np.asarray(bounds, dtype=float)
    grid = ValueGrid2D(bounds, shape, 0.0, [T_FINAL], np.zeros((1,) + tuple(shape)))
    states = grid.states()
    hx, hy = grid.spacing
    if snapshot_times is None:
        snapshot_times = np.linspace(T_FINAL - horizon, T_FINAL, n_snapshots)
    snaps = np.unique(np.concatenate([np.asarray(snapshot_times, dtype=float), [T_FINAL]]))

    alpha = dissipation(sys2d, states, T_FINAL)
    if not sys2d.time_invariant:
        for ts in snaps[:-1]:
            alpha = np.maximum(alpha, dissipation(sys2d, states, ts))
    ax, ay = alpha[..., 0], alpha[..., 1]
    rate = float(np.max(ax / hx + ay / hy))
    if not np.isfinite(rate):
        raise CFLError("non-finite dissipation bound; the drift is not finite on the grid")
    dt_max = cfl / rate if rate > 0 else math.inf

    drift_cache = np.asarray(sys2d.drift(states, T_FINAL), dtype=float) if sys2d.time_invariant else None
    cols_cache = _box_columns(sys2d, T_FINAL) if sys2d.time_invariant else None

    def ham(p0, p1, t):
        drift = drift_cache if drift_cache is not None else np.asarray(sys2d.drift(states, t), dtype=float)
        cols, coefs = cols_cache if cols_cache is not None else _box_columns(sys2d, t)
        h = p0 * drift[..., 0] + p1 * drift[..., 1]
        for j in range(coefs.size):
            h = h + coefs[j] * np.abs(p0 * cols[0, j] + p1 * cols[1, j])
        return h

    V = np.asarray(target(states), dtype=float)
    ghosts = _ghost_steps(grid, target)
    out = [V.copy()]
    t = T_FINAL
    dt_used = dt_max
    for t_next in snaps[::-1][1:]:
        span = t - t_next
        steps = max(1, int(math.ceil(span / dt_max - 1e-9))) if np.isfinite(dt_max) else 1
        dt = span / steps
        dt_used = min(dt_used, dt)
        for k in range(steps):
            bx, fx = _one_sided_diffs(V, hx, 0, ghosts[0])
            by, fy = _one_sided_diffs(V, hy, 1, ghosts[1])
            hnum = (ham(0.5 * (bx + fx), 0.5 * (by + fy), t - k * dt)
                    + 0.5 * ax * (fx - bx) + 0.5 * ay * (fy - by))
            V = np.minimum(V + dt * hnum, V)
            if not np.all(np.isfinite(V)):
                raise CFLError(f"non-finite values at t={t - (k + 1) * dt:g}; dt={dt:g}")
        t = t_next
        out.append(V.copy())
    values = np.stack(out[::-1])
    info = {"system": sys2d.name, "params": {k: float(v) for k, v in sys2d.params.items()},
            "objective": sys2d.objective, "target": target.to_dict(), "cfl": cfl, "horizon": horizon,
            "alpha_max": np.max(alpha.reshape(-1, 2), axis=0).tolist()}
    info.update(meta or {})
    return ValueGrid2D(bounds, shape, float(dt_used), snaps, values, info)


def _check_inside(grid, x, t, tol=1e-9):
    lo, hi = grid.bounds[:, 0] - tol, grid.bounds[:, 1] + tol
    if np.any(x < lo) or np.any(x > hi):
        raise ValueError("query outside the grid bounds (no extrapolation)")
    t = np.asarray(t, dtype=float)
    if np.any(t < grid.times[0] - tol) or np.any(t > grid.times[-1] + tol):
        raise ValueError("query time outside the solved horizon")


def _bilinear(grid, field, x):
    h = grid.spacing
    u = (x - grid.bounds[:, 0]) / h
    u = np.where(np.abs(u - np.rint(u)) < 1e-9, np.rint(u), u)   # snap nodes so they read back exactly
    n = np.asarray(grid.shape)
    i = np.clip(np.floor(u).astype(int), 0, n - 2)
    f = u - i
    i0, i1 = i[..., 0], i[..., 1]
    f0, f1 = f[..., 0], f[..., 1]
    return ((1 - f0) * (1 - f1) * field[..., i0, i1] + f0 * (1 - f1) * field[..., i0 + 1, i1]
            + (1 - f0) * f1 * field[..., i0, i1 + 1] + f0 * f1 * field[..., i0 + 1, i1 + 1])


def interpolate(grid: ValueGrid2D, x, t):
    """Bilinear in space, linear in time; raises outside the grid."""
    x = np.asarray(x, dtype=float)
    t_arr = np.broadcast_to(np.asarray(t, dtype=float), x.shape[:-1])
    _check_inside(grid, x, t_arr)
    times = grid.times
    if len(times) == 1:
        return _bilinear(grid, grid.values[0], x)
    k = np.clip(np.searchsorted(times, t_arr, side="right") - 1, 0, len(times) - 2)
    w = (t_arr - times[k]) / (times[k + 1] - times[k])
    flat = x.reshape(-1, 2)
    kf, wf = k.ravel(), w.ravel()
    out = np.empty(flat.shape[0])
    for kk in np.unique(kf):
        sel = kf == kk
        v0 = _bilinear(grid, grid.values[kk], flat[sel])
        v1 = _bilinear(grid, grid.values[kk + 1], flat[sel])
        out[sel] = (1 - wf[sel]) * v0 + wf[sel] * v1
    return out.reshape(x.shape[:-1])


def grid_gradient(grid: ValueGrid2D, x, t):
    """Central differences of the interpolated field with step equal to the grid spacing."""
    x = np.asarray(x, dtype=float)
    h = grid.spacing
    out = np.empty(x.shape)
    for i in range(2):
        e = np.zeros(2)
        e[i] = h[i]
        xp = x + e
        xm = x - e
        xp[..., i] = np.minimum(xp[..., i], grid.bounds[i, 1])
        xm[..., i] = np.maximum(xm[..., i], grid.bounds[i, 0])
        out[..., i] = (interpolate(grid, xp, t) - interpolate(grid, xm, t)) / (xp[..., i] - xm[..., i])
    return out


@dataclass
class ComposedOracle:
    """N-D value as a sum of 2-D parts over coordinate pairs (0, i)."""

    parts: list
    projections: list = None

    def __post_init__(self):
        if self.projections is None:
            self.projections = [(0, i + 1) for i in range(len(self.parts))]
        if len(self.projections) != len(self.parts):
            raise ValueError("one projection per part")
        ref = self.parts[0]
        for g in self.parts[1:]:
            if not np.array_equal(g.times, ref.times):
                raise ValueError("all parts must share snapshot times")
            if g.meta.get("target", {}).get("radius") != ref.meta.get("target", {}).get("radius"):
                raise ValueError("all parts must share the target radius")

    @property
    def state_dim(self):
        return 1 + max(j for _, j in self.projections)

    def value(self, x, t):
        return compose_value(self, x, t)

    def gradient(self, x, t):
        return compose_gradient(self, x, t)


def compose_value(oracle: ComposedOracle, x, t):
    x = np.asarray(x, dtype=float)
    total = 0.0
    for grid, (i, j) in zip(oracle.parts, oracle.projections):
        total = total + interpolate(grid, x[..., [i, j]], t)
    return total


def compose_gradient(oracle: ComposedOracle, x, t):
    x = np.asarray(x, dtype=float)
    g = np.zeros(x.shape)
    for grid, (i, j) in zip(oracle.parts, oracle.projections):
        gij = grid_gradient(grid, x[..., [i, j]], t)
        g[..., i] += gij[..., 0]
        g[..., j] += gij[..., 1]
    return g


class GridValue:
    """Value-function view of a single 2-D grid (value/gradient protocol)."""

    def __init__(self, grid: ValueGrid2D):
        self.grid = grid

    def value(self, x, t):
        return interpolate(self.grid, x, t)

    def gradient(self, x, t):
        return grid_gradient(self.grid, x, t)
