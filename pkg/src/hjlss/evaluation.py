"""Scoring learned values: IOU, MSE, bang-bang policies, rollouts, FP/FN, conformal expansion.

A value function here is anything with ``value(x, t)`` and ``gradient(x, t)``
(nets, grids, composed oracles). Sign conventions follow the objective: for
Reach the sub-zero set is the winnable set, for Avoid it is the unsafe set.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .dynamics import AVOID, REACH, T_FINAL, AffineInputSystem, QuadraticTarget, eval_dynamics, extremal_inputs

DEFAULT_SAMPLES = 100_000


class FunctionValue:
    """Wrap plain callables f(x, t), grad(x, t) as a value function."""

    def __init__(self, f, grad=None):
        self.f, self.grad = f, grad

    def value(self, x, t):
        return self.f(np.asarray(x, dtype=float), t)

    def gradient(self, x, t):
        if self.grad is None:
            raise ValueError("no gradient for this value function")
        return self.grad(np.asarray(x, dtype=float), t)


def target_value(target: QuadraticTarget):
    return FunctionValue(lambda x, t: target(x), lambda x, t: target.grad(x))


# -- sample sets ---------------------------------------------------------------

def uniform_samples(domain, n=DEFAULT_SAMPLES, seed=0):
    domain = np.asarray(domain, dtype=float)
    rng = np.random.default_rng(seed)
    return rng.uniform(domain[:, 0], domain[:, 1], size=(n, domain.shape[0]))


def diagonal_samples(N, box=(-3.0, 3.0), n=DEFAULT_SAMPLES, seed=0):
    """States (x0, s, s, ..., s): the slice where every subscriber agrees."""
    rng = np.random.default_rng(seed)
    pts = rng.uniform(box[0], box[1], size=(n, 2))
    return np.concatenate([pts[:, :1], np.repeat(pts[:, 1:], N - 1, axis=1)], axis=1)


# -- set and field metrics -------------------------------------------------------

def iou(valuefn, oracle, samples, t):
    """|A & B| / |A | B| of the sub-zero sets on the sample set (1 when both are empty)."""
    a = np.asarray(valuefn.value(samples, t)) <= 0
    b = np.asarray(oracle.value(samples, t)) <= 0
    union = np.count_nonzero(a | b)
    return 1.0 if union == 0 else np.count_nonzero(a & b) / union


def mse_metrics(valuefn, oracle, samples, t):
    """(mean squared value error, mean squared gradient-vector error)."""
    dv = np.asarray(valuefn.value(samples, t)) - np.asarray(oracle.value(samples, t))
    dg = np.asarray(valuefn.gradient(samples, t)) - np.asarray(oracle.gradient(samples, t))
    return float(np.mean(dv * dv)), float(np.mean(np.sum(dg * dg, axis=-1)))


# -- policies and rollouts -------------------------------------------------------

def extract_policy(valuefn, sys: AffineInputSystem, x, t):
    """Bang-bang (u*, d*, degenerate) from the value gradient; ties resolve to +bound."""
    p = np.asarray(valuefn.gradient(x, t), dtype=float)
    return extremal_inputs(sys, p, t)


@dataclass
class Rollout:
    states: np.ndarray          # (steps + 1, B, n)
    controls: np.ndarray        # (steps, B, n_u)
    disturbances: np.ndarray    # (steps, B, n_d)
    costs: np.ndarray           # (steps + 1, B) target cost along the path
    min_cost: np.ndarray        # (B,)
    success: np.ndarray         # Reach: reached the target; Avoid: never entered it
    truncated: np.ndarray       # escaped twice the domain box
    dt: float = 0.0

    @property
    def steps(self):
        return self.controls.shape[0]


def rollout(sys: AffineInputSystem, valuefn, target: QuadraticTarget, x0, t0=None, dt=None,
            horizon=1.0, domain=None, adversary=True):
    """RK4 closed-loop rollouts with zero-order-hold inputs, batched over initial states.

    The policy pair is re-extracted from the value gradient at the start of every
    step; the adversary plays its extremal state-feedback reply (or zero when
    ``adversary`` is off or there is no disturbance). With a ``domain``, states
    between the box and its 2x truncation limit read the policy at the nearest
    box point, so grid oracles are never asked to extrapolate.
    """
    x = np.atleast_2d(np.asarray(x0, dtype=float)).copy()
    t0 = T_FINAL - horizon if t0 is None else float(t0)
    span = T_FINAL - t0
    if dt is None:
        dt = 0.01 * horizon
    steps = max(1, int(round(span / dt)))
    dt = span / steps
    B = x.shape[0]
    box = None if domain is None else np.asarray(domain, dtype=float)
    states = [x.copy()]
    us, ds = [], []
    truncated = np.zeros(B, dtype=bool)
    t = t0
    for _ in range(steps):
        xq = x if box is None else np.clip(x, box[:, 0], box[:, 1])
        u, d, _ = extract_policy(valuefn, sys, xq, t)
        if not adversary or sys.disturb_dim == 0:
            d = np.zeros_like(d)
        k1 = eval_dynamics(sys, x, u, d, t)
        k2 = eval_dynamics(sys, x + 0.5 * dt * k1, u, d, t + 0.5 * dt)
        k3 = eval_dynamics(sys, x + 0.5 * dt * k2, u, d, t + 0.5 * dt)
        k4 = eval_dynamics(sys, x + dt * k3, u, d, t + dt)
        x_new = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if box is not None:
            centre = box.mean(axis=1)
            half = box[:, 1] - box[:, 0]           # twice the half-width
            out = np.any(np.abs(x_new - centre) > half, axis=1) | ~np.all(np.isfinite(x_new), axis=1)
            truncated |= out
            x_new = np.where(truncated[:, None], x, x_new)   # freeze escaped states
        x = x_new
        t += dt
        us.append(u)
        ds.append(d)
        states.append(x.copy())
    states = np.stack(states)
    costs = target(states)
    min_cost = costs.min(axis=0)
    if sys.objective == REACH:
        success = min_cost <= 0
    else:
        success = ~np.any(costs < 0, axis=0)
    return Rollout(states, np.stack(us), np.stack(ds), costs, min_cost, success, truncated, dt)


def predicted_success(valuefn, samples, t, objective):
    """Reach: V <= 0 predicts reaching. Avoid: V >= 0 predicts staying safe."""
    v = np.asarray(valuefn.value(samples, t))
    return v <= 0 if objective == REACH else v >= 0


def fp_fn_rates(valuefn, sys, target, samples, t=None, dt=None, horizon=1.0, domain=None, policy=None):
    """(fp, fn): optimistic and conservative misclassifications against rollouts.

    fp = P(predicted success and the rollout fails), fn = P(predicted failure and
    the rollout succeeds). For Avoid, success means staying safe, so fp is the
    "predicted safe but unsafe" rate. Rollouts use ``policy`` (default: the
    evaluated value function itself).
    """
    t = T_FINAL - horizon if t is None else t
    pred = predicted_success(valuefn, samples, t, sys.objective)
    ro = rollout(sys, policy or valuefn, target, samples, t, dt, horizon, domain)
    fp = float(np.mean(pred & ~ro.success))
    fn = float(np.mean(~pred & ro.success))
    return fp, fn, pred, ro


# -- conformal expansion -----------------------------------------------------------

@dataclass
class ConformalResult:
    delta: float
    n_calibration: int
    n_unsafe: int
    flagged: bool

    @property
    def miss_bound(self):
        """Expected chance a fresh unsafe state scores above delta (exchangeability)."""
        return 1.0 / (self.n_unsafe + 1)

    def confidence(self, eps):
        """P(miss probability <= eps) >= 1 - (1 - eps)^n_unsafe."""
        return 1.0 - (1.0 - eps) ** self.n_unsafe

    def statement(self, eps=1e-3):
        if self.flagged:
            return "no empirically unsafe calibration states; delta is the -inf sentinel"
        return (f"delta={self.delta:.6g} from {self.n_unsafe} unsafe of {self.n_calibration} calibration "
                f"states; a fresh unsafe state exceeds delta with probability <= {self.miss_bound:.3g} "
                f"on average, and <= {eps:g} with confidence {self.confidence(eps):.6f}")


def conformal_delta(values, unsafe) -> ConformalResult:
    """delta = max V over empirically unsafe calibration states; R_delta = {V <= delta}."""
    values = np.asarray(values, dtype=float)
    unsafe = np.asarray(unsafe, dtype=bool)
    if not np.any(unsafe):
        return ConformalResult(-math.inf, len(values), 0, True)
    return ConformalResult(float(np.max(values[unsafe])), len(values), int(unsafe.sum()), False)


def calibrate(valuefn, sys, target, samples, t=None, dt=None, horizon=1.0, domain=None):
    """Roll out the calibration states and expand the unsafe set to cover every failure."""
    t = T_FINAL - horizon if t is None else t
    ro = rollout(sys, valuefn, target, samples, t, dt, horizon, domain)
    values = np.asarray(valuefn.value(samples, t))
    return conformal_delta(values, ~ro.success), values, ro


def in_expanded_set(values, delta):
    return np.asarray(values) <= delta


def recovered_volume(valuefn, delta, samples, t):
    """Fraction of the samples outside the expanded unsafe set R_delta."""
    if delta == -math.inf:
        return 1.0
    return float(np.mean(~in_expanded_set(valuefn.value(samples, t), delta)))


# -- reports ---------------------------------------------------------------------

CONVENTIONS = {
    REACH: "sub-zero set = states that can reach the target; fp = predicted reach but rollout misses",
    AVOID: "sub-zero set = unsafe states; fp = predicted safe but rollout collides",
}


@dataclass
class MetricsReport:
    objective: str
    convention: str
    eval_time: float
    iou: float = None
    mse_value: float = None
    mse_grad: float = None
    fp_rate: float = None
    fn_rate: float = None
    delta: float = None
    confidence: str = None
    recovered_volume: float = None
    counts: dict = field(default_factory=dict)
    wall_clock_s: float = 0.0
    config_hash: str = ""
    notes: list = field(default_factory=list)

    def to_json(self, path=None):
        d = asdict(self)
        if d["delta"] is not None and math.isinf(d["delta"]):
            d["delta"] = "-inf"
        text = json.dumps(d, indent=2, sort_keys=True)
        if path:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def write_records(path, samples, columns):
    """Per-sample CSV: x_i columns plus the named 1-D arrays."""
    samples = np.asarray(samples)
    names = [f"x_{i}" for i in range(samples.shape[1])] + list(columns)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        cols = [np.asarray(c) for c in columns.values()]
        for i in range(samples.shape[0]):
            w.writerow([repr(float(v)) for v in samples[i]] + [_fmt(c[i]) for c in cols])


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    return repr(float(v))
