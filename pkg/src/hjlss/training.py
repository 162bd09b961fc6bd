"""Samplers, supervisors and the training programs.

Programs
--------
baseline            PDE residual only, with a backward-time curriculum.
lss_decay           (1 - lam_k) * LS + lam_k * PDE, lam_k ramping from 0 to lam_K.
lss_spectrum        LS on the lam = 0 slice + PDE over the blended family lam in [0, 1].
lss_adaptive        lam_k * LS + PDE with lam_k balanced from gradient norms.
linear_supervisor   fits the linear-game value (Hopf data and/or PDE on linear dynamics).

Every random draw comes from ``default_rng([seed, k, stream])`` so a run is a pure
function of its config, and resuming from a checkpoint replays exactly.
"""
from __future__ import annotations

import csv
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import net as nn
from .dynamics import T_FINAL, AffineInputSystem, SpectrumSystem, hamiltonian, hamiltonian_dp
from .hopf import HopfDataset, HopfProblem, hopf_solve

log = logging.getLogger(__name__)

PROGRAMS = ("baseline", "lss_decay", "lss_spectrum", "lss_adaptive", "linear_supervisor")
LOG_COLUMNS = ("iter", "wall_clock_s", "loss_total", "loss_pde", "loss_ls", "lambda_k", "s_k")
PDE_STREAM, LS_STREAM = 0, 1


@dataclass
class TrainConfig:
    program: str = "baseline"
    iterations: int = 20000
    batch_size: int = 4000
    lr: float = 1e-5
    seed: int = 0
    curriculum: bool = None         # None: on for baseline/spectrum/linear_supervisor, off for decay programs
    warmup: float = 0.5             # fraction of K over which s_k ramps to T
    lambda_K: float = 1.0
    ramp: float = 0.5               # fraction of K over which lam_k ramps to lam_K
    rho: float = 1.0
    rho_g: float = 1.0
    I_start: float = 10.0
    I_end: float = 1.0
    domain: list = None             # [[lo, hi], ...]
    horizon: float = 1.0
    hidden: tuple = (64, 64, 64)
    omega0: float = nn.OMEGA0
    norm: str = "l1"
    clamp: bool = True
    spectrum_fraction: float = 0.25
    pde_weight: float = 1.0         # linear_supervisor: weight of the PDE term next to Hopf data
    chunk: int = nn.DEFAULT_CHUNK
    log_every: int = 10
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.program not in PROGRAMS:
            raise ValueError(f"unknown program {self.program!r}; choose from {', '.join(PROGRAMS)}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0.0 <= self.lambda_K <= 1.0:
            raise ValueError("lambda_K must lie in [0, 1]")
        if self.program == "lss_adaptive" and not self.I_end < self.I_start:
            raise ValueError("adaptive weighting needs I_end < I_start")
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.domain is not None:
            self.domain = np.asarray(self.domain, dtype=float).tolist()

    @property
    def uses_curriculum(self):
        if self.curriculum is None:
            return self.program in ("baseline", "lss_spectrum", "linear_supervisor")
        return bool(self.curriculum)

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)


def benchmark_preset(program, **overrides):
    """Desk-scale pub-sub settings (decay programs: short and larger-lr free of curriculum)."""
    if program in ("lss_decay", "lss_adaptive"):
        base = dict(iterations=5000, batch_size=2000, lr=1e-5)
    else:
        base = dict(iterations=20000, batch_size=4000, lr=1e-5)
    return TrainConfig(program=program, **dict(base, **overrides))


def quadrotor_preset(program, **overrides):
    """Reduced quadrotor budgets with weights rho=0.1, rho_g=0.2, lam_K=0.6."""
    base = dict(iterations=20000, batch_size=8000, lr=1e-5, rho=0.1, rho_g=0.2,
                lambda_K=0.6, I_start=10.0, I_end=1.0)
    return TrainConfig(program=program, **dict(base, **overrides))


# -- schedules ---------------------------------------------------------------

def curriculum_span(cfg: TrainConfig, k):
    """Backward-time extent s_k of the sampled interval [0, s_k]."""
    if not cfg.uses_curriculum:
        return cfg.horizon
    ramp = cfg.warmup * cfg.iterations
    return cfg.horizon if ramp <= 0 else cfg.horizon * min(1.0, k / ramp)


def decay_weight(cfg: TrainConfig, k):
    """LSS-D PDE weight lam_k: 0 at k = 0, linear up to lam_K over the ramp."""
    ramp = cfg.ramp * cfg.iterations
    if ramp <= 0:
        return cfg.lambda_K
    return cfg.lambda_K * min(1.0, k / ramp)


def importance_schedule(cfg: TrainConfig, k):
    """I_k = I_end * exp(ln(I_start / I_end) * (1 - k / K)), written as a geometric blend so
    both endpoints come out exactly."""
    s = k / cfg.iterations
    return cfg.I_start ** (1.0 - s) * cfg.I_end ** s


# -- sampling ----------------------------------------------------------------

@dataclass
class Batch:
    x: np.ndarray
    t: np.ndarray
    lam: np.ndarray = None

    def __len__(self):
        return len(self.t)


def _rng(cfg, k, stream):
    return np.random.default_rng([cfg.seed, k, stream])


def sample_batch(cfg: TrainConfig, k, mode="pde", size=None):
    """Uniform states in the domain and backward times in [0, s_k].

    mode: "pde" or "ls" (independent streams), "spectrum_pde" (lam uniform on
    [0, 1]) or "spectrum_ls" (lam = 0).
    """
    if k > cfg.iterations:
        raise ValueError("k beyond the iteration budget")
    dom = np.asarray(cfg.domain, dtype=float)
    n_ls = int(round(cfg.spectrum_fraction * cfg.batch_size))
    if size is None:
        size = {"spectrum_ls": n_ls, "spectrum_pde": cfg.batch_size - n_ls}.get(mode, cfg.batch_size)
    stream = LS_STREAM if mode in ("ls", "spectrum_ls") else PDE_STREAM
    rng = _rng(cfg, k, stream)
    x = rng.uniform(dom[:, 0], dom[:, 1], size=(size, dom.shape[0]))
    s = rng.uniform(0.0, 1.0, size=size) * curriculum_span(cfg, k)
    lam = None
    if mode == "spectrum_pde":
        lam = rng.uniform(0.0, 1.0, size=size)
    elif mode == "spectrum_ls":
        lam = np.zeros(size)
    return Batch(x, T_FINAL - s, lam)


# -- supervisors ---------------------------------------------------------------

class NetSupervisor:
    """A frozen value net over the linear dynamics."""

    def __init__(self, net: nn.SirenValueNet, domain, horizon, tol=1e-9):
        self.net = net
        self.domain = np.asarray(domain, dtype=float)
        self.horizon = float(horizon)
        self.tol = tol

    def query(self, x, t):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = np.broadcast_to(np.asarray(t, dtype=float), x.shape[:1])
        if (np.any(x < self.domain[:, 0] - self.tol) or np.any(x > self.domain[:, 1] + self.tol)
                or np.any(t < T_FINAL - self.horizon - self.tol) or np.any(t > T_FINAL + self.tol)):
            raise ValueError("supervisor queried outside its domain")
        fb = nn.forward_with_grad(self.net, x, t)
        return fb.value, fb.dx

    def supervision_batch(self, cfg, k, mode="ls"):
        b = sample_batch(cfg, k, mode)
        v, g = self.query(b.x, b.t)
        return b, v, g


class DatasetSupervisor:
    """Hopf samples: supervision batches are drawn from the stored rows; other
    queries fall back to solving the Hopf program on demand."""

    def __init__(self, dataset: HopfDataset, problem: HopfProblem = None):
        if len(dataset) == 0:
            raise ValueError("empty Hopf dataset")
        if dataset.low_quality:
            log.warning("Hopf dataset is low quality (%.1f%% flagged); training proceeds",
                        100 * float(np.mean(dataset.flag)))
        self.dataset = dataset
        self.problem = problem
        self._index = {(tuple(x), t): i for i, (x, t) in enumerate(zip(dataset.x.tolist(), dataset.t.tolist()))}

    def query(self, x, t):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = np.broadcast_to(np.asarray(t, dtype=float), x.shape[:1])
        vals = np.empty(len(t))
        grads = np.empty(x.shape)
        for i in range(len(t)):
            row = self._index.get((tuple(x[i].tolist()), float(t[i])))
            if row is not None:
                vals[i], grads[i] = self.dataset.value[row], self.dataset.grad[row]
                continue
            if self.problem is None:
                raise ValueError("point not in the dataset and no Hopf problem for fallback")
            sol = hopf_solve(self.problem, x[i], float(t[i]))
            vals[i], grads[i] = sol.value, sol.spatial_grad
        return vals, grads

    def supervision_batch(self, cfg, k, mode="ls"):
        n_ls = int(round(cfg.spectrum_fraction * cfg.batch_size))
        size = n_ls if mode == "spectrum_ls" else cfg.batch_size
        rows = _rng(cfg, k, LS_STREAM).integers(0, len(self.dataset), size=size)
        d = self.dataset
        lam = np.zeros(size) if mode == "spectrum_ls" else None
        return Batch(d.x[rows], d.t[rows], lam), d.value[rows], d.grad[rows]


# -- loss terms ----------------------------------------------------------------

def pde_term(sys, cfg: TrainConfig, weight=1.0):
    if isinstance(sys, SpectrumSystem):
        return nn.PdeResidual(sys.hamiltonian, sys.hamiltonian_dp, weight, cfg.norm, cfg.clamp)
    return nn.PdeResidual(lambda s, p, t: hamiltonian(sys, s, p, t),
                          lambda s, p, t: hamiltonian_dp(sys, s, p, t), weight, cfg.norm, cfg.clamp)


def pde_loss(net, sys, batch: Batch, cfg: TrainConfig = None):
    """Mean residual |dV/dt + min{0, H}| and its parameter gradient."""
    cfg = cfg or TrainConfig()
    return nn.loss_gradients(net, batch.x, batch.t, [pde_term(sys, cfg)], batch.lam, cfg.chunk)


def ls_loss(net, batch: Batch, values, grads, rho, rho_g, chunk=nn.DEFAULT_CHUNK):
    """rho * MSE(V) + rho_g * MSE(grad_x V) against supervisor values."""
    terms = [nn.ValueSupervision(np.asarray(values, dtype=float), rho),
             nn.GradSupervision(np.asarray(grads, dtype=float), rho_g)]
    return nn.loss_gradients(net, batch.x, batch.t, terms, batch.lam, chunk)


def _combine(parts):
    """Weighted sum of (loss, grads) pairs, skipping zero weights."""
    total, acc = 0.0, None
    for w, (loss, grads) in parts:
        if w == 0:
            continue
        total += w * loss
        scaled = [w * g for g in grads]
        acc = scaled if acc is None else [a + g for a, g in zip(acc, scaled)]
    return total, acc


def adaptive_update(lam, I_k, norm_ls, norm_pde, prev_ratio):
    """EMA step lam <- 0.9 lam + 0.1 I_k |g_LS| / |g_PDE|; a vanishing PDE gradient reuses the last ratio."""
    ratio = prev_ratio if norm_pde < 1e-12 else norm_ls / norm_pde
    return 0.9 * lam + 0.1 * I_k * ratio, ratio


def _norm(grads):
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads))


# -- runs ----------------------------------------------------------------------

@dataclass
class TrainResult:
    net: nn.SirenValueNet
    log: list = field(default_factory=list)       # rows of LOG_COLUMNS
    wall_clock_s: float = 0.0


def build_net(cfg: TrainConfig, sys, target):
    n = sys.state_dim
    spectrum = isinstance(sys, SpectrumSystem)
    dims = [n + int(spectrum) + 1] + list(cfg.hidden) + [1]
    return nn.init_siren(dims, cfg.omega0, cfg.seed, target, T_FINAL, has_lambda=spectrum)


class Trainer:
    """One training run; resumable through ``checkpoint`` files in ``out_dir``."""

    def __init__(self, cfg: TrainConfig, sys, target, supervisor=None, out_dir=None,
                 supervisor_seconds=0.0):
        if cfg.domain is None:
            raise ValueError("training config needs a domain box")
        if cfg.program in ("lss_decay", "lss_spectrum", "lss_adaptive") and supervisor is None:
            raise ValueError(f"program {cfg.program} needs a supervisor")
        if cfg.program == "lss_spectrum" and not isinstance(sys, SpectrumSystem):
            raise ValueError("lss_spectrum trains on a SpectrumSystem")
        if cfg.program == "linear_supervisor" and cfg.pde_weight == 0 and supervisor is None:
            raise ValueError("linear_supervisor with zero PDE weight needs Hopf data")
        self.cfg, self.sys, self.target = cfg, sys, target
        self.supervisor = supervisor
        self.out_dir = out_dir
        self.net = build_net(cfg, sys, target)
        self.adam = nn.AdamState.for_net(self.net, cfg.lr)
        self.k = 0
        self.lam = cfg.I_start          # adaptive weight state
        self.prev_ratio = 1.0
        self.elapsed = float(supervisor_seconds)
        self.rows = []
        self._pde = pde_term(sys, cfg)
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
            self._try_resume()

    # paths
    @property
    def checkpoint_path(self):
        return os.path.join(self.out_dir, "checkpoint.bin")

    @property
    def log_path(self):
        return os.path.join(self.out_dir, "metrics.csv")

    def _try_resume(self):
        if not os.path.exists(self.checkpoint_path):
            return
        net, adam, extra = nn.load_checkpoint(self.checkpoint_path, with_state=True)
        self.net, self.adam = net, adam
        self.k = int(extra["k"])
        self.lam = float(extra["lam"])
        self.prev_ratio = float(extra["prev_ratio"])
        self.elapsed = float(extra["elapsed"])
        if os.path.exists(self.log_path):
            with open(self.log_path) as fh:
                rows = list(csv.reader(fh))[1:]
            self.rows = [[int(r[0])] + [float(v) for v in r[1:]] for r in rows if int(r[0]) < self.k]
        log.info("resumed %s at iteration %d", self.cfg.program, self.k)

    def save(self):
        extra = {"k": self.k, "lam": self.lam, "prev_ratio": self.prev_ratio, "elapsed": self.elapsed,
                 "config": self.cfg.to_dict()}
        nn.save_checkpoint(self.net, self.checkpoint_path, self.adam, extra)
        tmp = self.log_path + ".tmp"
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LOG_COLUMNS)
            for r in self.rows:
                w.writerow([r[0]] + [repr(float(v)) for v in r[1:]])
        os.replace(tmp, self.log_path)

    # one iteration of each program: returns (total loss, grads, pde loss, ls loss, weight)
    def _step_terms(self, k):
        cfg, prog = self.cfg, self.cfg.program
        chunk = cfg.chunk
        if prog == "baseline":
            b = sample_batch(cfg, k, "pde")
            lp, gp = nn.loss_gradients(self.net, b.x, b.t, [self._pde], None, chunk)
            return lp, gp, lp, 0.0, 1.0
        if prog == "lss_decay":
            lam = decay_weight(cfg, k)
            parts, lp, ll = [], 0.0, 0.0
            if lam != 0:
                b = sample_batch(cfg, k, "pde")
                lp, gp = nn.loss_gradients(self.net, b.x, b.t, [self._pde], None, chunk)
                parts.append((lam, (lp, gp)))
            if lam != 1:
                b, v, g = self.supervisor.supervision_batch(cfg, k, "ls")
                ll, gl = ls_loss(self.net, b, v, g, cfg.rho, cfg.rho_g, chunk)
                parts.append((1.0 - lam, (ll, gl)))
            total, grads = _combine(parts)
            return total, grads, lp, ll, lam
        if prog == "lss_spectrum":
            b = sample_batch(cfg, k, "spectrum_pde")
            lp, gp = nn.loss_gradients(self.net, b.x, b.t, [self._pde], b.lam, chunk)
            bs, v, g = self.supervisor.supervision_batch(cfg, k, "spectrum_ls")
            ll, gl = ls_loss(self.net, bs, v, g, cfg.rho, cfg.rho_g, chunk)
            total, grads = _combine([(1.0, (ll, gl)), (1.0, (lp, gp))])
            return total, grads, lp, ll, 1.0
        if prog == "lss_adaptive":
            b = sample_batch(cfg, k, "pde")
            lp, gp = nn.loss_gradients(self.net, b.x, b.t, [self._pde], None, chunk)
            bs, v, g = self.supervisor.supervision_batch(cfg, k, "ls")
            ll, gl = ls_loss(self.net, bs, v, g, cfg.rho, cfg.rho_g, chunk)
            self.lam, self.prev_ratio = adaptive_update(self.lam, importance_schedule(cfg, k), _norm(gl),
                                                        _norm(gp), self.prev_ratio)
            total, grads = _combine([(self.lam, (ll, gl)), (1.0, (lp, gp))])
            return total, grads, lp, ll, self.lam
        if prog == "linear_supervisor":
            parts, lp, ll = [], 0.0, 0.0
            if cfg.pde_weight != 0:
                b = sample_batch(cfg, k, "pde")
                lp, gp = nn.loss_gradients(self.net, b.x, b.t, [self._pde], None, chunk)
                parts.append((cfg.pde_weight, (lp, gp)))
            if self.supervisor is not None:
                bs, v, g = self.supervisor.supervision_batch(cfg, k, "ls")
                ll, gl = ls_loss(self.net, bs, v, g, cfg.rho, cfg.rho_g, chunk)
                parts.append((1.0, (ll, gl)))
            total, grads = _combine(parts)
            return total, grads, lp, ll, cfg.pde_weight
        raise ValueError(prog)

    def run(self, until=None):
        cfg = self.cfg
        stop = cfg.iterations if until is None else min(int(until), cfg.iterations)
        while self.k < stop:
            k = self.k
            t0 = time.perf_counter()
            total, grads, lp, ll, weight = self._step_terms(k)
            if grads is not None:
                nn.adam_step(self.adam, self.net, grads)
            self.elapsed += time.perf_counter() - t0
            if k % max(cfg.log_every, 1) == 0 or k == cfg.iterations - 1:
                self.rows.append([k, self.elapsed, total, lp, ll, weight, curriculum_span(cfg, k)])
            self.k += 1
            if self.out_dir and cfg.checkpoint_every and self.k % cfg.checkpoint_every == 0:
                self.save()
        if self.out_dir:
            self.save()
        return TrainResult(self.net, self.rows, self.elapsed)


def write_log(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow([r[0]] + [repr(float(v)) for v in r[1:]])


def train_baseline(cfg: TrainConfig, sys: AffineInputSystem, target, out_dir=None) -> TrainResult:
    return Trainer(replace(cfg, program="baseline"), sys, target, None, out_dir).run()


def train_lss_decay(cfg: TrainConfig, sys, target, supervisor, out_dir=None, supervisor_seconds=0.0):
    return Trainer(replace(cfg, program="lss_decay"), sys, target, supervisor, out_dir,
                   supervisor_seconds).run()


def train_lss_spectrum(cfg: TrainConfig, spec: SpectrumSystem, target, supervisor, out_dir=None,
                       supervisor_seconds=0.0):
    return Trainer(replace(cfg, program="lss_spectrum"), spec, target, supervisor, out_dir,
                   supervisor_seconds).run()


def train_adaptive(cfg: TrainConfig, sys, target, supervisor, out_dir=None, supervisor_seconds=0.0):
    return Trainer(replace(cfg, program="lss_adaptive"), sys, target, supervisor, out_dir,
                   supervisor_seconds).run()


def train_linear_supervisor(cfg: TrainConfig, linear_sys: AffineInputSystem, target, dataset=None,
                            out_dir=None):
    """Path A: Hopf data (+ PDE weight on the linear dynamics). Path B: PDE only, with curriculum.

    Returns a frozen NetSupervisor and the training result.
    """
    sup = DatasetSupervisor(dataset) if dataset is not None else None
    res = Trainer(replace(cfg, program="linear_supervisor"), linear_sys, target, sup, out_dir).run()
    return NetSupervisor(res.net, cfg.domain, cfg.horizon), res
