"""Systems, targets and analytic Hamiltonians.

All dynamics are affine in box-bounded inputs,

    x' = drift(x, t) + B1(t) u + B2(t) d,    |u_j| <= ub_j,  |d_j| <= db_j,

so the min-max Hamiltonian has a closed form. State arrays are batched along
leading axes, ``x.shape == (..., n)``. Time runs on ``[-T, 0]`` with the
terminal time fixed at ``T_FINAL = 0``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

log = logging.getLogger(__name__)

REACH = "reach"
AVOID = "avoid"
T_FINAL = 0.0
FD_STEP = 1e-6


def input_signs(objective):
    """(sigma_u, sigma_d): -1 where a player minimizes <p, f>, +1 where it maximizes."""
    if objective == REACH:
        return -1.0, 1.0
    if objective == AVOID:
        return 1.0, -1.0
    raise ValueError(f"unknown objective {objective!r}")


def _constant(mat):
    mat = np.asarray(mat, dtype=float)
    return lambda t: mat


@dataclass
class AffineInputSystem:
    state_dim: int
    control_dim: int
    disturb_dim: int
    drift: Callable
    control_matrix: Callable
    disturb_matrix: Callable
    control_bound: np.ndarray
    disturb_bound: np.ndarray
    objective: str = REACH
    drift_jacobian: Optional[Callable] = None
    time_invariant: bool = True
    name: str = "system"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.control_bound = np.asarray(self.control_bound, dtype=float).reshape(self.control_dim)
        self.disturb_bound = np.asarray(self.disturb_bound, dtype=float).reshape(self.disturb_dim)
        if np.any(self.control_bound < 0) or np.any(self.disturb_bound < 0):
            raise ValueError("input bounds must be non-negative")
        input_signs(self.objective)

    def B1(self, t=T_FINAL):
        return np.asarray(self.control_matrix(t), dtype=float).reshape(self.state_dim, self.control_dim)

    def B2(self, t=T_FINAL):
        return np.asarray(self.disturb_matrix(t), dtype=float).reshape(self.state_dim, self.disturb_dim)

    def jacobian(self, x, t=T_FINAL):
        """d drift / dx at a single state, analytic when registered."""
        x = np.asarray(x, dtype=float)
        if self.drift_jacobian is not None:
            jac = np.asarray(self.drift_jacobian(x, t), dtype=float)
        else:
            n = self.state_dim
            jac = np.empty((n, n))
            for j in range(n):
                e = np.zeros(n)
                e[j] = FD_STEP
                jac[:, j] = (self.drift(x + e, t) - self.drift(x - e, t)) / (2 * FD_STEP)
        if not np.all(np.isfinite(jac)):
            raise FloatingPointError(f"non-finite drift Jacobian at x={x}, t={t}")
        return jac


@dataclass
class LinearTVSystem:
    """x' = A(t) x + B1(t) u + B2(t) d + offset(t)."""

    A: Callable
    B1: Callable
    B2: Callable
    offset: Callable
    control_bound: np.ndarray
    disturb_bound: np.ndarray
    objective: str = REACH
    time_invariant: bool = True

    def __post_init__(self):
        self.control_bound = np.asarray(self.control_bound, dtype=float).ravel()
        self.disturb_bound = np.asarray(self.disturb_bound, dtype=float).ravel()

    @classmethod
    def constant(cls, A, B1, B2, offset=None, control_bound=(), disturb_bound=(), objective=REACH):
        A = np.asarray(A, dtype=float)
        n = A.shape[0]
        B1 = np.asarray(B1, dtype=float).reshape(n, -1)
        B2 = np.asarray(B2, dtype=float).reshape(n, -1)
        offset = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
        return cls(_constant(A), _constant(B1), _constant(B2), _constant(offset),
                   control_bound, disturb_bound, objective, True)

    @property
    def state_dim(self):
        return np.asarray(self.A(T_FINAL)).shape[0]

    def __call__(self, x, u, d, t=T_FINAL):
        x = np.asarray(x, dtype=float)
        out = x @ np.asarray(self.A(t)).T + np.asarray(self.offset(t))
        if len(self.control_bound):
            out = out + np.asarray(u, dtype=float) @ np.asarray(self.B1(t)).T
        if len(self.disturb_bound):
            out = out + np.asarray(d, dtype=float) @ np.asarray(self.B2(t)).T
        return out

    def as_affine(self, name="linear"):
        n = self.state_dim
        A, off = self.A, self.offset

        def drift(x, t=T_FINAL):
            return np.asarray(x, dtype=float) @ np.asarray(A(t)).T + np.asarray(off(t))

        return AffineInputSystem(
            n, len(self.control_bound), len(self.disturb_bound), drift,
            self.B1, self.B2, self.control_bound, self.disturb_bound, self.objective,
            drift_jacobian=lambda x, t=T_FINAL: np.asarray(A(t)),
            time_invariant=self.time_invariant, name=name)


@dataclass
class QuadraticTarget:
    """J(x) = 1/2 sum_i w_i x_i^2 - offset over the active (masked-in) coordinates."""

    weights: np.ndarray
    offset: float
    radius: float = 1.0
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.mask is None:
            self.mask = np.ones(self.weights.shape, dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool)
        self.offset = float(self.offset)
        self.radius = float(self.radius)

    @property
    def dim(self):
        return self.weights.size

    @property
    def active_weights(self):
        return np.where(self.mask, self.weights, 0.0)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * np.sum(self.active_weights * x * x, axis=-1) - self.offset

    def grad(self, x):
        return self.active_weights * np.asarray(x, dtype=float)

    def to_dict(self):
        return {"weights": self.weights.tolist(), "offset": self.offset,
                "radius": self.radius, "mask": self.mask.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["weights"], d["offset"], d.get("radius", 1.0), d.get("mask"))


@dataclass
class OperatingPoint:
    x0: np.ndarray
    u0: np.ndarray
    d0: np.ndarray
    t0: float = T_FINAL


def _batched_matrix(fn, t, shape, time_invariant):
    """Input matrix at time ``t``; returns (n, m) or (..., n, m) for varying t."""
    t = np.asarray(t, dtype=float)
    if time_invariant or t.ndim == 0:
        return np.asarray(fn(float(t.ravel()[0]) if t.size else T_FINAL), dtype=float).reshape(shape)
    mats = np.stack([np.asarray(fn(float(ti)), dtype=float).reshape(shape) for ti in t.ravel()])
    return mats.reshape(t.shape + shape)


def _apply_transpose(B, p):
    # (B^T p) for p of shape (..., n); B is (n, m) or batched (..., n, m)
    if B.ndim == 2:
        return p @ B
    return np.einsum("...nm,...n->...m", B, p)


def _apply(B, v):
    if B.ndim == 2:
        return v @ B.T
    return np.einsum("...nm,...m->...n", B, v)


def input_matrices(sys: AffineInputSystem, t):
    B1 = _batched_matrix(sys.control_matrix, t, (sys.state_dim, sys.control_dim), sys.time_invariant)
    B2 = _batched_matrix(sys.disturb_matrix, t, (sys.state_dim, sys.disturb_dim), sys.time_invariant)
    return B1, B2


def _clamp(v, bound, label):
    v = np.asarray(v, dtype=float)
    clipped = np.clip(v, -bound, bound)
    if np.any(clipped != v):
        log.warning("%s outside its box bound; clamped", label)
    return clipped


def eval_dynamics(sys: AffineInputSystem, x, u, d, t=T_FINAL):
    """drift(x, t) + B1(t) u + B2(t) d, with inputs clamped into their boxes."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != sys.state_dim:
        raise ValueError(f"state has dimension {x.shape[-1]}, system expects {sys.state_dim}")
    u = np.zeros(x.shape[:-1] + (sys.control_dim,)) if u is None else np.asarray(u, dtype=float)
    d = np.zeros(x.shape[:-1] + (sys.disturb_dim,)) if d is None else np.asarray(d, dtype=float)
    if u.shape[-1] != sys.control_dim or d.shape[-1] != sys.disturb_dim:
        raise ValueError("input dimension mismatch")
    u = _clamp(u, sys.control_bound, "control")
    d = _clamp(d, sys.disturb_bound, "disturbance")
    B1, B2 = input_matrices(sys, t)
    out = np.asarray(sys.drift(x, t), dtype=float)
    if sys.control_dim:
        out = out + _apply(B1, u)
    if sys.disturb_dim:
        out = out + _apply(B2, d)
    return out


def _box_terms(B1, B2, p, ub, db, objective):
    su, sd = input_signs(objective)
    h = 0.0
    if B1.shape[-1]:
        h = h + su * np.sum(ub * np.abs(_apply_transpose(B1, p)), axis=-1)
    if B2.shape[-1]:
        h = h + sd * np.sum(db * np.abs(_apply_transpose(B2, p)), axis=-1)
    return h


def merge_box_columns(B1, B2, control_bound, disturb_bound, objective):
    """Input columns and signed bound weights of the box Hamiltonian.

    The box part of H equals sum_k coef_k |<col_k, p>|. Parallel columns of
    equal or opposite direction are merged (their terms add linearly) and zero
    weights are dropped, so cancelling inputs vanish exactly.
    """
    su, sd = input_signs(objective)
    n = np.shape(B1)[0]
    cols, coefs = [], []
    for B, bound, sign in ((B1, control_bound, su), (B2, disturb_bound, sd)):
        B = np.asarray(B, dtype=float).reshape(n, -1)
        bound = np.broadcast_to(np.asarray(bound, dtype=float), (B.shape[1],))
        for j in range(B.shape[1]):
            col, c = B[:, j], sign * bound[j]
            for k, existing in enumerate(cols):
                if np.array_equal(existing, col) or np.array_equal(existing, -col):
                    coefs[k] += c
                    break
            else:
                cols.append(col.copy())
                coefs.append(c)
    keep = [k for k, c in enumerate(coefs) if c != 0 and np.any(cols[k] != 0)]
    if not keep:
        return np.zeros((n, 0)), np.zeros(0)
    return np.stack([cols[k] for k in keep], axis=1), np.array([coefs[k] for k in keep])


def hamiltonian(sys: AffineInputSystem, x, p, t=T_FINAL):
    """Exact min-max of <p, f> over the input boxes."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    B1, B2 = input_matrices(sys, t)
    drift = np.asarray(sys.drift(x, t), dtype=float)
    return np.sum(p * drift, axis=-1) + _box_terms(B1, B2, p, sys.control_bound, sys.disturb_bound, sys.objective)


def extremal_inputs(sys: AffineInputSystem, p, t=T_FINAL):
    """Bang-bang (u*, d*, degenerate) attaining the Hamiltonian at costate p.

    A zero switching component resolves to the upper bound and is reported in
    the boolean ``degenerate`` mask (per sample).
    """
    p = np.asarray(p, dtype=float)
    su, sd = input_signs(sys.objective)
    B1, B2 = input_matrices(sys, t)
    g1 = _apply_transpose(B1, p) if sys.control_dim else np.zeros(p.shape[:-1] + (0,))
    g2 = _apply_transpose(B2, p) if sys.disturb_dim else np.zeros(p.shape[:-1] + (0,))
    u = np.where(g1 == 0, sys.control_bound, su * sys.control_bound * np.sign(g1))
    d = np.where(g2 == 0, sys.disturb_bound, sd * sys.disturb_bound * np.sign(g2))
    degenerate = np.any(g1 == 0, axis=-1) | np.any(g2 == 0, axis=-1)
    return u, d, degenerate


def hamiltonian_dp(sys: AffineInputSystem, x, p, t=T_FINAL):
    """dH/dp (the dynamics under the extremal inputs, with sign(0) = 0)."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    su, sd = input_signs(sys.objective)
    B1, B2 = input_matrices(sys, t)
    out = np.asarray(sys.drift(x, t), dtype=float) + np.zeros_like(p)
    if sys.control_dim:
        out = out + _apply(B1, su * sys.control_bound * np.sign(_apply_transpose(B1, p)))
    if sys.disturb_dim:
        out = out + _apply(B2, sd * sys.disturb_bound * np.sign(_apply_transpose(B2, p)))
    return out


def taylor_linearize(sys: AffineInputSystem, m0: OperatingPoint) -> LinearTVSystem:
    """First-order expansion of the dynamics about ``m0`` (exact at m0)."""
    x0 = np.asarray(m0.x0, dtype=float)
    u0 = np.asarray(m0.u0, dtype=float).reshape(sys.control_dim)
    d0 = np.asarray(m0.d0, dtype=float).reshape(sys.disturb_dim)
    if np.any(np.abs(u0) > sys.control_bound) or np.any(np.abs(d0) > sys.disturb_bound):
        raise ValueError("operating point inputs outside their bounds")
    t0 = float(m0.t0)
    A = sys.jacobian(x0, t0)
    B1, B2 = sys.B1(t0), sys.B2(t0)
    f0 = eval_dynamics(sys, x0, u0, d0, t0)
    if sys.time_invariant:
        dfdt = np.zeros_like(f0)
    else:
        dfdt = (eval_dynamics(sys, x0, u0, d0, t0 + FD_STEP)
                - eval_dynamics(sys, x0, u0, d0, t0 - FD_STEP)) / (2 * FD_STEP)
    if not np.all(np.isfinite(dfdt)):
        raise FloatingPointError("non-finite time derivative at the operating point")
    base = f0 - A @ x0 - B1 @ u0 - B2 @ d0

    def offset(t=T_FINAL):
        t = np.asarray(t, dtype=float)
        return base + dfdt * (t[..., None] - t0) if t.ndim else base + dfdt * (float(t) - t0)

    return LinearTVSystem(_constant(A), _constant(B1), _constant(B2), offset,
                          sys.control_bound.copy(), sys.disturb_bound.copy(),
                          sys.objective, sys.time_invariant)


@dataclass
class SpectrumSystem:
    """Augmented state [x, lam]; x-dynamics blend (1 - lam) * linear + lam * base."""

    base: AffineInputSystem
    linear: LinearTVSystem

    def __post_init__(self):
        if self.linear.objective != self.base.objective:
            raise ValueError("base and linear systems disagree on the objective")
        self._lin = self.linear.as_affine()

    @property
    def state_dim(self):
        return self.base.state_dim

    def _split(self, xt):
        xt = np.asarray(xt, dtype=float)
        x, lam = xt[..., :-1], xt[..., -1]
        if np.any((lam < 0) | (lam > 1)):
            log.warning("spectrum parameter outside [0, 1]; clamped")
            lam = np.clip(lam, 0.0, 1.0)
        return x, lam

    def blended_drift(self, x, lam, t=T_FINAL):
        lam = np.asarray(lam, dtype=float)[..., None]
        return (1.0 - lam) * self._lin.drift(x, t) + lam * self.base.drift(x, t)

    def blended_matrices(self, lam, t=T_FINAL):
        lam = np.asarray(lam, dtype=float)
        B1l, B2l = input_matrices(self._lin, t)
        B1, B2 = input_matrices(self.base, t)
        if lam.ndim == 0:
            return (1.0 - lam) * B1l + lam * B1, (1.0 - lam) * B2l + lam * B2
        w = lam[..., None, None]
        return (1.0 - w) * B1l + w * B1, (1.0 - w) * B2l + w * B2

    def dynamics(self, xt, u, d, t=T_FINAL):
        x, lam = self._split(xt)
        fx = ((1.0 - lam)[..., None] * eval_dynamics(self._lin, x, u, d, t)
              + lam[..., None] * eval_dynamics(self.base, x, u, d, t))
        return np.concatenate([fx, np.zeros(fx.shape[:-1] + (1,))], axis=-1)

    def hamiltonian(self, xt, p, t=T_FINAL):
        x, lam = self._split(xt)
        p = np.asarray(p, dtype=float)
        B1, B2 = self.blended_matrices(lam, t)
        h = np.sum(p * self.blended_drift(x, lam, t), axis=-1)
        return h + _box_terms(B1, B2, p, self.base.control_bound, self.base.disturb_bound, self.base.objective)

    def hamiltonian_dp(self, xt, p, t=T_FINAL):
        x, lam = self._split(xt)
        p = np.asarray(p, dtype=float)
        su, sd = input_signs(self.base.objective)
        B1, B2 = self.blended_matrices(lam, t)
        out = self.blended_drift(x, lam, t) + np.zeros_like(p)
        if self.base.control_dim:
            out = out + _apply(B1, su * self.base.control_bound * np.sign(_apply_transpose(B1, p)))
        if self.base.disturb_dim:
            out = out + _apply(B2, sd * self.base.disturb_bound * np.sign(_apply_transpose(B2, p)))
        return out

    def slice(self, lam) -> AffineInputSystem:
        """The x-system at a frozen spectrum parameter."""
        lam = float(np.clip(lam, 0.0, 1.0))
        base, lin = self.base, self._lin

        def drift(x, t=T_FINAL):
            return (1.0 - lam) * lin.drift(x, t) + lam * base.drift(x, t)

        return AffineInputSystem(
            base.state_dim, base.control_dim, base.disturb_dim, drift,
            lambda t=T_FINAL: (1.0 - lam) * lin.B1(t) + lam * base.B1(t),
            lambda t=T_FINAL: (1.0 - lam) * lin.B2(t) + lam * base.B2(t),
            base.control_bound, base.disturb_bound, base.objective,
            time_invariant=base.time_invariant and lin.time_invariant,
            name=f"{base.name}@lambda={lam:g}", params=dict(base.params, spectrum=lam))


class ErrorBound:
    """Sampled linearization error delta*(tau) on a time grid (callable)."""

    def __init__(self, taus, values):
        order = np.argsort(taus)
        self.taus = np.asarray(taus, dtype=float)[order]
        self.values = np.asarray(values, dtype=float)[order]

    def __call__(self, tau):
        return np.interp(tau, self.taus, self.values)

    @classmethod
    def constant(cls, value, horizon=1.0):
        return cls([-horizon, T_FINAL], [value, value])


def linearization_error(sys: AffineInputSystem, lin: LinearTVSystem, region, n_samples=4096,
                        seed=0, horizon=1.0, n_times=17):
    """Monte-Carlo max of ||f - l|| over region x input boxes x [tau, t_f].

    ``region`` is an (n, 2) box of lower/upper bounds. The result is a lower
    bound on the true maximum; the running max over earlier tau keeps it
    monotone.
    """
    region = np.asarray(region, dtype=float)
    rng = np.random.default_rng(seed)
    taus = np.linspace(-horizon, T_FINAL, n_times)
    lin_sys = lin.as_affine()
    per_time = np.empty(n_times)
    for k, tau in enumerate(taus):
        x = rng.uniform(region[:, 0], region[:, 1], size=(n_samples, sys.state_dim))
        u = rng.uniform(-sys.control_bound, sys.control_bound, size=(n_samples, sys.control_dim))
        d = rng.uniform(-sys.disturb_bound, sys.disturb_bound, size=(n_samples, sys.disturb_dim))
        err = eval_dynamics(sys, x, u, d, tau) - lin(x, u, d, tau)
        per_time[k] = np.max(np.linalg.norm(err, axis=-1))
    # delta*(tau) covers [tau, t_f]: running max from the terminal time backwards
    values = np.maximum.accumulate(per_time[::-1])[::-1]
    return ErrorBound(taus, values)


# --------------------------------------------------------------------------
# registered systems

def pubsub_2d(a=-0.5, b=1.0, c=1.0, alpha=0.0, beta=0.0, control_bound=1.0, disturb_bound=1.0):
    """Publisher x0 driving one subscriber x1 (reach game)."""

    def drift(x, t=T_FINAL):
        x = np.asarray(x, dtype=float)
        x0, x1 = x[..., 0], x[..., 1]
        return np.stack([a * x0 + alpha * np.sin(x0) * x0 ** 2,
                         -x0 + a * x1 - beta * x0 * x1 ** 2], axis=-1)

    def jac(x, t=T_FINAL):
        x0, x1 = float(x[0]), float(x[1])
        return np.array([[a + alpha * (np.cos(x0) * x0 ** 2 + 2 * x0 * np.sin(x0)), 0.0],
                         [-1.0 - beta * x1 ** 2, a - 2 * beta * x0 * x1]])

    return AffineInputSystem(2, 1, 1, drift, _constant([[0.0], [b]]), _constant([[0.0], [c]]),
                             [control_bound], [disturb_bound], REACH, drift_jacobian=jac,
                             name="pubsub2d", params=dict(a=a, b=b, c=c, alpha=alpha, beta=beta))


def pubsub_nd(N=10, a=-0.5, b=1.0, c=1.0, alpha=0.0, beta=0.0, control_bound=1.0, disturb_bound=1.0):
    """Publisher x0 with N-1 decoupled subscribers; decomposes into 2-D games."""
    if N < 2:
        raise ValueError("need at least one subscriber")
    B1 = np.vstack([np.zeros((1, N - 1)), b * np.eye(N - 1)])
    B2 = np.vstack([np.zeros((1, N - 1)), c * np.eye(N - 1)])

    def drift(x, t=T_FINAL):
        x = np.asarray(x, dtype=float)
        x0 = x[..., :1]
        xs = x[..., 1:]
        pub = a * x0 + alpha * np.sin(x0) * x0 ** 2
        sub = -x0 + a * xs - beta * x0 * xs ** 2
        return np.concatenate([pub, sub], axis=-1)

    def jac(x, t=T_FINAL):
        x = np.asarray(x, dtype=float)
        x0, xs = x[0], x[1:]
        J = a * np.eye(N)
        J[0, 0] += alpha * (np.cos(x0) * x0 ** 2 + 2 * x0 * np.sin(x0))
        J[1:, 0] = -1.0 - beta * xs ** 2
        J[1:, 1:] -= np.diag(2 * beta * x0 * xs)
        return J

    return AffineInputSystem(N, N - 1, N - 1, drift, _constant(B1), _constant(B2),
                             np.full(N - 1, control_bound), np.full(N - 1, disturb_bound),
                             REACH, drift_jacobian=jac, name="pubsub",
                             params=dict(N=N, a=a, b=b, c=c, alpha=alpha, beta=beta))


def pubsub_target(N=2, r=1.0):
    """Sum over subscribers of 1/2 (x0^2 + xi^2 - r^2)."""
    weights = np.ones(N)
    weights[0] = N - 1
    return QuadraticTarget(weights, 0.5 * (N - 1) * r ** 2, r)


QUAD_STATE = ("px", "vx", "theta", "wy", "py", "vy", "phi", "wx", "pz", "vz")
# positions [-4, 4]^2 x [-2, 2], angles [-1.5, 1.5]^2, velocities [-3, 3]^2 x [-2, 2], rates [-6, 6]^2
QUAD_DOMAIN = np.array([[-4, 4], [-3, 3], [-1.5, 1.5], [-6, 6], [-4, 4],
                        [-3, 3], [-1.5, 1.5], [-6, 6], [-2, 2], [-2, 2]], dtype=float)


def quadrotor(g=9.8, d0=7.0, d1=4.0, n0=12.0):
    """10-D near-hover quadrotor, optimal control (no disturbance), avoid objective.

    State order follows ``QUAD_STATE``; controls are (u1, u2, u3) in
    [-pi/4, pi/4]^2 x [-1, 1].
    """
    PX, VX, TH, WY, PY, VY, PH, WX, PZ, VZ = range(10)

    def drift(x, t=T_FINAL):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        out[..., PX] = x[..., VX]
        out[..., PY] = x[..., VY]
        out[..., PZ] = x[..., VZ]
        out[..., PH] = -d1 * x[..., PH] + x[..., WX]
        out[..., TH] = -d1 * x[..., TH] + x[..., WY]
        out[..., VX] = g * np.tan(x[..., TH])
        out[..., VY] = g * np.tan(x[..., PH])
        out[..., WX] = -d0 * x[..., PH]
        out[..., WY] = -d0 * x[..., TH]
        return out

    def jac(x, t=T_FINAL):
        J = np.zeros((10, 10))
        J[PX, VX] = J[PY, VY] = J[PZ, VZ] = 1.0
        J[PH, PH] = J[TH, TH] = -d1
        J[PH, WX] = J[TH, WY] = 1.0
        J[VX, TH] = g / np.cos(x[TH]) ** 2
        J[VY, PH] = g / np.cos(x[PH]) ** 2
        J[WX, PH] = J[WY, TH] = -d0
        return J

    B1 = np.zeros((10, 3))
    B1[WX, 0] = n0
    B1[WY, 1] = n0
    B1[VZ, 2] = 1.0
    return AffineInputSystem(10, 3, 0, drift, _constant(B1), _constant(np.zeros((10, 0))),
                             [np.pi / 4, np.pi / 4, 1.0], [], AVOID, drift_jacobian=jac,
                             name="quadrotor", params=dict(g=g, d0=d0, d1=d1, n0=n0))


def quadrotor_target(radius=0.5):
    """Cylindrical obstacle px^2 + py^2 <= radius^2."""
    mask = np.zeros(10, dtype=bool)
    mask[[0, 4]] = True
    return QuadraticTarget(np.ones(10), 0.5 * radius ** 2, radius, mask)
