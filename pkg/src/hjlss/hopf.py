"""Linear-game values from the Hopf formula.

For the linear game the value at (x, t) is a minimum over horizons h in
[0, t_f - t] of

    V_h(x) = -min_p { J*(p) - <Phi(h) x, p> + int_0^h Hhat(p, s) ds },

where Hhat(p, s) is the box Hamiltonian of the inputs propagated by the
fundamental matrix, written for forward time s = t_f - tau. Each (x, t) is
solved independently, so no grid is needed.
"""
from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import expm

from .dynamics import T_FINAL, LinearTVSystem, QuadraticTarget, input_signs, merge_box_columns

log = logging.getLogger(__name__)

LOW_QUALITY_FRACTION = 0.10


@dataclass
class SolverConfig:
    restarts: int = 3
    max_iters: int = 400
    step_c: float = 1.0
    tol: float = 1e-6
    seed: int = 0
    perturb_scale: float = 0.5


@dataclass
class HopfProblem:
    linear: LinearTVSystem
    target: QuadraticTarget
    n_tau: int = 16
    quad_nodes: int = 64
    solver: SolverConfig = field(default_factory=SolverConfig)
    tau_grid: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.quad_nodes < 2:
            raise ValueError("quad_nodes must be >= 2")
        if self.tau_grid is not None:
            self.tau_grid = np.sort(np.asarray(self.tau_grid, dtype=float))

    def taus(self, t):
        """Candidate minimization times in [t, t_f]."""
        if self.tau_grid is not None:
            grid = self.tau_grid[(self.tau_grid >= t) & (self.tau_grid <= T_FINAL)]
            return np.unique(np.concatenate([[t, T_FINAL], grid]))
        return np.linspace(t, T_FINAL, self.n_tau)

    def config(self):
        return {"n_tau": self.n_tau, "quad_nodes": self.quad_nodes, "solver": asdict(self.solver),
                "target": self.target.to_dict(), "objective": self.linear.objective,
                "A": np.asarray(self.linear.A(T_FINAL)).tolist(),
                "B1": np.asarray(self.linear.B1(T_FINAL)).tolist(),
                "B2": np.asarray(self.linear.B2(T_FINAL)).tolist(),
                "offset": np.asarray(self.linear.offset(T_FINAL)).tolist(),
                "control_bound": self.linear.control_bound.tolist(),
                "disturb_bound": self.linear.disturb_bound.tolist()}


@dataclass
class HopfSolution:
    value: float
    p_star: np.ndarray
    tau_star: float
    spatial_grad: np.ndarray
    objective_trace: np.ndarray
    flagged: bool = False
    warnings: int = 0


def fundamental_matrix(lin: LinearTVSystem, s):
    """Phi(s) with Phi' = A Phi, Phi(0) = I (stacked over an array of s)."""
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0):
        raise ValueError("fundamental matrix needs s >= 0")
    if lin.time_invariant:
        A = np.asarray(lin.A(T_FINAL), dtype=float)
        phi = expm(A[None] * s_arr.reshape(-1, 1, 1))
    else:
        phi = np.stack([_rk4_transition(lin, float(si)) for si in s_arr.ravel()])
    if not np.all(np.isfinite(phi)):
        raise FloatingPointError("non-finite fundamental matrix")
    n = phi.shape[-1]
    return phi.reshape(s_arr.shape + (n, n))


def _rk4_transition(lin, s, min_steps=64):
    # dPhi/ds = Phi A(t_f - s)
    n = lin.state_dim
    phi = np.eye(n)
    if s == 0:
        return phi
    h = s / min_steps
    A = lambda si: np.asarray(lin.A(T_FINAL - si), dtype=float)
    for k in range(min_steps):
        si = k * h
        k1 = phi @ A(si)
        k2 = (phi + 0.5 * h * k1) @ A(si + 0.5 * h)
        k3 = (phi + 0.5 * h * k2) @ A(si + 0.5 * h)
        k4 = (phi + h * k3) @ A(si + h)
        phi = phi + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return phi


def convex_conjugate(target: QuadraticTarget, p):
    """J*(p) = 1/2 sum p_i^2 / w_i + offset (+inf off the active subspace)."""
    p = np.asarray(p, dtype=float)
    w = target.weights[target.mask]
    if np.any(w <= 0):
        raise ValueError("conjugate is infinite: non-positive weight on an active coordinate")
    off = p[..., ~target.mask]
    val = 0.5 * np.sum(p[..., target.mask] ** 2 / w, axis=-1) + target.offset
    return np.where(np.any(off != 0, axis=-1), np.inf, val)


def hamiltonian_columns(lin: LinearTVSystem, t=T_FINAL):
    """Merged input columns and weights: H_game(p) box part = sum_j coef_j |<col_j, p>|."""
    return merge_box_columns(lin.B1(t), lin.B2(t), lin.control_bound, lin.disturb_bound, lin.objective)


class _Integrand:
    """Quadrature tables of Hhat(p, s) for a family of horizons.

    Hhat(p, s) = -<Phi(s) c, p> - sum_j coef_j |<Phi(s) col_j, p>| - sign * delta(s) ||Phi(s)^T p||
    where the last term is the optional linearization-error player.
    """

    def __init__(self, prob: HopfProblem, horizons, error=None):
        lin = prob.linear
        self.horizons = np.asarray(horizons, dtype=float)
        q = prob.quad_nodes
        self.cols, self.coefs = hamiltonian_columns(lin)
        self.offset = np.asarray(lin.offset(T_FINAL), dtype=float)
        self.error = error
        has_offset = np.any(self.offset != 0) or not lin.time_invariant
        self.active = self.cols.shape[1] > 0 or has_offset or error is not None
        self.phi_h = fundamental_matrix(lin, self.horizons)
        if not self.active:
            return
        # nodes s_k = h * k / (q - 1); trapezoid weights scale with h
        frac = np.linspace(0.0, 1.0, q)
        s = self.horizons[:, None] * frac[None, :]
        wts = np.full(q, 1.0 / (q - 1))
        wts[[0, -1]] *= 0.5
        self.weights = self.horizons[:, None] * wts[None, :]
        phi = fundamental_matrix(lin, s)                     # (H, q, n, n)
        if lin.time_invariant:
            self.G = phi @ self.cols                         # (H, q, n, m)
            self.c = phi @ self.offset                       # (H, q, n)
        else:
            self.G = np.stack([[phi[i, k] @ _merged_columns(lin, T_FINAL - s[i, k])
                                for k in range(q)] for i in range(len(self.horizons))])
            self.c = np.stack([[phi[i, k] @ np.asarray(lin.offset(T_FINAL - s[i, k]))
                                for k in range(q)] for i in range(len(self.horizons))])
        if error is not None:
            delta_fn, sign = error
            self.delta = np.asarray(delta_fn(T_FINAL - s), dtype=float)   # (H, q)
            # an antagonizing error player takes the disturbance's side of the min-max
            self.err_sign = float(sign) * input_signs(lin.objective)[1]
            self.phi = phi
            self.phiT = np.swapaxes(phi, -1, -2)

    def value_and_subgrad(self, p):
        """Integral and a subgradient for p of shape (R, H, n)."""
        if not self.active:
            return np.zeros(p.shape[:-1]), np.zeros_like(p)
        # projections for every restart/horizon/node: (R, H, q, m)
        proj = np.einsum("hqnm,rhn->rhqm", self.G, p)
        lin_term = np.einsum("hqn,rhn->rhq", self.c, p)
        integrand = -lin_term - np.sum(self.coefs * np.abs(proj), axis=-1)
        dint = -self.c[None] - np.einsum("hqnm,rhqm->rhqn", self.G, self.coefs * np.sign(proj))
        if self.error is not None:
            q_vec = np.einsum("hqnk,rhk->rhqn", self.phiT, p)
            norm = np.linalg.norm(q_vec, axis=-1)
            integrand = integrand - self.err_sign * self.delta * norm
            unit = np.where(norm[..., None] > 0, q_vec / np.maximum(norm, 1e-300)[..., None], 0.0)
            dint = dint - self.err_sign * self.delta[..., None] * np.einsum("hqkn,rhqn->rhqk", self.phi, unit)
        val = np.sum(self.weights * integrand, axis=-1)
        grad = np.sum(self.weights[..., None] * dint, axis=-2)
        return val, grad


def _merged_columns(lin, t):
    cols, _ = hamiltonian_columns(lin, t)
    return cols


def hopf_objective(prob: HopfProblem, x, tau, p, error=None):
    """J*(p) - <Phi(t_f - tau) x, p> + int_0^{t_f - tau} Hhat(p, s) ds."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    h = T_FINAL - float(tau)
    if h < 0:
        raise ValueError("tau beyond the terminal time")
    integ = _Integrand(prob, [h], error)
    val, _ = integ.value_and_subgrad(p.reshape(1, 1, -1))
    return float(convex_conjugate(prob.target, p) - (integ.phi_h[0] @ x) @ p + val[0, 0])


def _solve_point(prob: HopfProblem, x, t, rng, error=None, integ=None):
    cfg = prob.solver
    tgt = prob.target
    x = np.asarray(x, dtype=float)
    taus = prob.taus(t)
    horizons = T_FINAL - taus
    if integ is None:
        integ = _Integrand(prob, horizons, error)
    y = integ.phi_h @ x                                     # (H, n) propagated states
    mask = tgt.mask.astype(float)
    w = tgt.active_weights
    winv = np.where(tgt.mask, 1.0 / np.where(tgt.mask, tgt.weights, 1.0), 0.0)

    # restarts: grad J(x), grad J(Phi x), then Gaussian perturbations
    H = len(horizons)
    starts = [np.broadcast_to(w * x, (H, x.size)), w * y]
    scale = cfg.perturb_scale * (1.0 + np.linalg.norm(w * x))
    for _ in range(max(cfg.restarts - 2, 0)):
        starts.append(w * y + scale * rng.standard_normal((H, x.size)) * mask)
    p = np.stack(starts[:max(cfg.restarts, 1)]).astype(float)  # (R, H, n)

    def objective(p):
        ival, igrad = integ.value_and_subgrad(p)
        val = 0.5 * np.sum(winv * p * p, axis=-1) + tgt.offset - np.sum(y * p, axis=-1) + ival
        grad = (winv * p - y + igrad) * mask
        return val, grad

    best_val, _ = objective(p)
    best_p = p.copy()
    converged = np.zeros(best_val.shape, dtype=bool)
    recent = []
    for k in range(cfg.max_iters):
        val, grad = objective(p)
        better = val < best_val
        best_val = np.where(better, val, best_val)
        best_p = np.where(better[..., None], p, best_p)
        # preconditioned by the target weights: a unit step is exact on the quadratic part
        step = cfg.step_c / np.sqrt(k + 1.0) * w * grad
        p = p - step
        recent.append(best_val)
        if len(recent) > 10:
            recent.pop(0)
            stalled = np.abs(recent[0] - recent[-1]) <= cfg.tol * (1.0 + np.abs(best_val))
            small = np.linalg.norm(step, axis=-1) <= cfg.tol * (1.0 + np.linalg.norm(p, axis=-1))
            converged = stalled | small
            if np.all(converged):
                break
    val, _ = objective(p)
    better = val < best_val
    best_val = np.where(better, val, best_val)
    best_p = np.where(better[..., None], p, best_p)

    # per horizon: min over restarts; value at horizon = -that; overall min over horizons
    r_best = np.argmin(best_val, axis=0)                     # (H,)
    per_h = best_val[r_best, np.arange(H)]
    j = int(np.argmax(per_h))
    p_star = best_p[r_best[j], j]
    value = -float(per_h[j])
    flagged = not bool(np.all(converged[:, j]))
    grad = integ.phi_h[j].T @ p_star
    return HopfSolution(value, p_star, float(taus[j]), grad, best_val[:, j].copy(), flagged, int(flagged))


def hopf_solve(prob: HopfProblem, x, t, error=None, index=0):
    """Linear-game value, costate, minimizing time and spatial gradient at (x, t).

    ``error`` optionally adds the linearization-error player as
    ``(delta_fn, sign)``; sign=+1 lets it antagonize the controller and
    sign=-1 assist it.
    """
    if not t < T_FINAL:
        x = np.asarray(x, dtype=float)
        g = prob.target.grad(x)
        return HopfSolution(float(prob.target(x)), g, T_FINAL, g, np.array([-float(prob.target(x))]))
    rng = np.random.default_rng([prob.solver.seed, index])
    sol = _solve_point(prob, x, t, rng, error)
    if sol.flagged:
        log.debug("Hopf solve at x=%s t=%g did not meet tolerance", x, t)
    return sol


def error_hamiltonian(prob: HopfProblem, delta: Callable, sign: int):
    """H_l(p, s) +/- delta(s) ||Phi(s)^T p|| in the game convention.

    The error player enters as an extra input with Euclidean ball set of
    radius delta; ``sign=+1`` antagonizes the controller, ``sign=-1``
    assists it. Returns a function of (p, s).
    """
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    lin = prob.linear
    cols, coefs = hamiltonian_columns(lin)

    def H(p, s=0.0):
        p = np.asarray(p, dtype=float)
        phi = fundamental_matrix(lin, float(s))
        base = np.sum(coefs * np.abs(p @ (phi @ cols)), axis=-1) + p @ (phi @ lin.offset(T_FINAL - s))
        side = sign * input_signs(lin.objective)[1]
        return base + side * float(delta(T_FINAL - s)) * np.linalg.norm(p @ phi, axis=-1)

    return H


@dataclass
class GapBound:
    gap: float
    upper: HopfSolution
    lower: HopfSolution


def value_gap_bound(prob: HopfProblem, x, t, delta, index=0) -> GapBound:
    """Difference of the error-antagonized and error-assisted Hopf values."""
    upper = hopf_solve(prob, x, t, error=(delta, 1), index=index)
    lower = hopf_solve(prob, x, t, error=(delta, -1), index=index)
    return GapBound(upper.value - lower.value, upper, lower)


# --------------------------------------------------------------------------
# datasets

@dataclass
class HopfDataset:
    x: np.ndarray
    t: np.ndarray
    value: np.ndarray
    grad: np.ndarray
    flag: np.ndarray
    config: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    @property
    def low_quality(self):
        return len(self) > 0 and float(np.mean(self.flag)) > LOW_QUALITY_FRACTION

    def save(self, path):
        """CSV rows plus a JSON sidecar ``<path>.json``."""
        n = self.x.shape[1] if self.x.ndim == 2 else int(self.config.get("state_dim", 0))
        header = [f"x_{i}" for i in range(n)] + ["t", "value"] + [f"grad_{i}" for i in range(n)] + ["flag"]
        tmp = f"{path}.tmp"
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for i in range(len(self)):
                w.writerow([repr(float(v)) for v in self.x[i]] + [repr(float(self.t[i])), repr(float(self.value[i]))]
                           + [repr(float(v)) for v in self.grad[i]] + [int(self.flag[i])])
        os.replace(tmp, path)
        meta = dict(self.config, n_rows=len(self), flagged_fraction=float(np.mean(self.flag)) if len(self) else 0.0,
                    low_quality=bool(self.low_quality))
        with open(f"{path}.json", "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        n = sum(1 for h in header if h.startswith("x_"))
        arr = np.array(body, dtype=float).reshape(len(body), len(header))
        meta = {}
        if os.path.exists(f"{path}.json"):
            with open(f"{path}.json") as fh:
                meta = json.load(fh)
        return cls(arr[:, :n], arr[:, n], arr[:, n + 1], arr[:, n + 2:2 * n + 2],
                   arr[:, -1].astype(bool), meta)


def uniform_time_sampler(horizon):
    """Backward time uniform on (0, horizon]: t = -s."""
    def sample(rng, size):
        return -rng.uniform(0.0, horizon, size=size)
    return sample


def generate_hopf_dataset(prob: HopfProblem, domain, n_points, time_sampler, seed=0) -> HopfDataset:
    """Hopf values and gradients at uniform states; deterministic per (seed, index)."""
    domain = np.asarray(domain, dtype=float)
    n = domain.shape[0]
    xs = np.empty((n_points, n))
    ts = np.empty(n_points)
    vals = np.empty(n_points)
    grads = np.empty((n_points, n))
    flags = np.zeros(n_points, dtype=bool)
    for i in range(n_points):
        rng = np.random.default_rng([seed, i])
        xs[i] = rng.uniform(domain[:, 0], domain[:, 1])
        ts[i] = float(np.asarray(time_sampler(rng, None)))
        sol = hopf_solve(prob, xs[i], ts[i], index=i)
        vals[i], grads[i], flags[i] = sol.value, sol.spatial_grad, sol.flagged
    config = dict(prob.config(), seed=seed, domain=domain.tolist(), state_dim=n)
    ds = HopfDataset(xs, ts, vals, grads, flags, config)
    if ds.low_quality:
        log.warning("Hopf dataset low quality: %.1f%% rows flagged", 100 * np.mean(flags))
    return ds
