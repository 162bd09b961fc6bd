"""Sinusoidal value network with exact terminal structure and hand-written derivatives.

    V(x, t) = J(x) + (t - t_f) * (W_Y phi(...phi([x, t])) + b_Y),   phi(v) = sin(omega0 (W v + b))

The forward pass carries tangents of every activation with respect to the
state and time inputs (forward mode), so one pass yields V, dV/dt and grad_x V.
The reverse pass runs back through both the activations and the tangents, which
gives exact parameter gradients of losses that contain input derivatives.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _io
from .dynamics import T_FINAL, QuadraticTarget

NET_MAGIC = b"HJSIREN\x01"
NET_VERSION = 1
OMEGA0 = 30.0
DEFAULT_CHUNK = 1024


@dataclass
class SirenValueNet:
    layer_dims: list            # [inputs, hidden..., 1]
    weights: list               # (out, in) matrices
    biases: list
    target: QuadraticTarget
    omega0: float = OMEGA0
    t_f: float = T_FINAL
    n_state: int = 0            # leading inputs that are state coordinates
    has_lambda: bool = False    # input layout [x, lam, t]

    def __post_init__(self):
        self.layer_dims = [int(d) for d in self.layer_dims]
        if self.n_state == 0:
            self.n_state = self.layer_dims[0] - 1 - int(self.has_lambda)
        if self.n_state + 1 + int(self.has_lambda) != self.layer_dims[0]:
            raise ValueError("input width must be n_state (+1 for lambda) + 1 for time")
        if self.layer_dims[-1] != 1:
            raise ValueError("output width must be 1")

    @property
    def params(self):
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def set_params(self, params):
        self.weights = [np.asarray(p, dtype=float) for p in params[0::2]]
        self.biases = [np.asarray(p, dtype=float) for p in params[1::2]]

    def copy(self):
        return SirenValueNet(list(self.layer_dims), [W.copy() for W in self.weights],
                             [b.copy() for b in self.biases], self.target, self.omega0, self.t_f,
                             self.n_state, self.has_lambda)

    def flat(self):
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, vec):
        out, pos = [], 0
        for p in self.params:
            out.append(np.asarray(vec[pos:pos + p.size], dtype=float).reshape(p.shape))
            pos += p.size
        self.set_params(out)

    def inputs(self, x, t, lam=None):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = np.broadcast_to(np.asarray(t, dtype=float), x.shape[:1])[:, None]
        cols = [x]
        if self.has_lambda:
            if lam is None:
                raise ValueError("this net takes a spectrum parameter")
            cols.append(np.broadcast_to(np.asarray(lam, dtype=float), x.shape[:1])[:, None])
        return np.concatenate(cols + [t], axis=1)

    def value(self, x, t, lam=None):
        return forward_with_grad(self, x, t, lam).value

    def gradient(self, x, t, lam=None):
        return forward_with_grad(self, x, t, lam).dx


def init_siren(layer_dims, omega0=OMEGA0, seed=0, target=None, t_f=T_FINAL, has_lambda=False):
    """First layer U(+-1/fan_in), hidden U(+-sqrt(6/fan_in)/omega0), final U(+-sqrt(6/fan_in))."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 3:
        raise ValueError("need at least one hidden layer")
    n_state = dims[0] - 1 - int(has_lambda)
    if target is None:
        target = QuadraticTarget(np.ones(n_state), 0.5)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    last = len(dims) - 2
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        if i == 0:
            bound = 1.0 / fan_in
        elif i < last:
            bound = np.sqrt(6.0 / fan_in) / omega0
        else:
            bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return SirenValueNet(dims, weights, biases, target, float(omega0), float(t_f), n_state, has_lambda)


@dataclass
class ForwardBundle:
    value: np.ndarray           # (B,)
    dt: np.ndarray              # (B,)
    dx: np.ndarray              # (B, n)
    inputs: np.ndarray          # (B, d)
    y: np.ndarray               # (B,) raw net output
    cache: list = field(default_factory=list, repr=False)

    @property
    def state(self):
        return self.inputs[:, :-1]   # x or [x, lam]


def _tangent_seed(net, B):
    """Input tangents for directions [x_0..x_{n-1}, t]: shape (B, n + 1, d)."""
    n, d = net.n_state, net.layer_dims[0]
    seed = np.zeros((n + 1, d))
    seed[np.arange(n), np.arange(n)] = 1.0
    seed[n, d - 1] = 1.0
    return np.broadcast_to(seed, (B, n + 1, d))


def forward_with_grad(net: SirenValueNet, x, t, lam=None, keep=False) -> ForwardBundle:
    inp = net.inputs(x, t, lam)
    B = inp.shape[0]
    w = net.omega0
    v, Tv = inp, _tangent_seed(net, B)
    cache = []
    for i, (W, b) in enumerate(zip(net.weights[:-1], net.biases[:-1])):
        z = w * (v @ W.T + b)
        Tz = w * (Tv @ W.T)
        if not np.all(np.isfinite(z)):
            raise FloatingPointError(f"non-finite activation in layer {i}")
        s, c = np.sin(z), np.cos(z)
        if keep:
            cache.append((v, Tv, Tz, s, c))
        v, Tv = s, c[:, None, :] * Tz
    W, b = net.weights[-1], net.biases[-1]
    y = (v @ W.T + b)[:, 0]
    Ty = (Tv @ W.T)[..., 0]                     # (B, n + 1)
    if not np.all(np.isfinite(y)):
        raise FloatingPointError(f"non-finite activation in layer {len(net.weights) - 1}")
    if keep:
        cache.append((v, Tv))
    xs = inp[:, :net.n_state]
    tau = inp[:, -1] - net.t_f
    value = net.target(xs) + tau * y
    dx = net.target.grad(xs) + tau[:, None] * Ty[:, :-1]
    dt = y + tau * Ty[:, -1]
    return ForwardBundle(value, dt, dx, inp, y, cache)


def backward(net: SirenValueNet, fb: ForwardBundle, g_value, g_dx, g_dt):
    """Parameter gradients of sum(g_value*V + g_dx.dx + g_dt*dt); needs keep=True."""
    if not fb.cache:
        raise ValueError("forward pass was run without keep=True")
    w = net.omega0
    tau = fb.inputs[:, -1] - net.t_f
    gy = tau * g_value + g_dt
    gTy = np.concatenate([tau[:, None] * g_dx, (tau * g_dt)[:, None]], axis=1)   # (B, K)
    v, Tv = fb.cache[-1]
    W = net.weights[-1]
    grads = [None] * (2 * len(net.weights))
    grads[-2] = (gy @ v + gTy.ravel() @ Tv.reshape(-1, Tv.shape[-1]))[None, :]
    grads[-1] = np.array([gy.sum()])
    gv = gy[:, None] * W[0]                     # (B, H)
    gTv = gTy[:, :, None] * W[0]                # (B, K, H)
    for i in range(len(net.weights) - 2, -1, -1):
        v_in, T_in, Tz, s, c = fb.cache[i]
        gz = gv * c - s * np.sum(gTv * Tz, axis=1)
        gTz = gTv * c[:, None, :]
        W = net.weights[i]
        flat_T = np.reshape(T_in, (-1, T_in.shape[-1]))
        grads[2 * i] = w * (gz.T @ v_in + gTz.reshape(-1, gTz.shape[-1]).T @ flat_T)
        grads[2 * i + 1] = w * gz.sum(axis=0)
        if i:
            gv = w * (gz @ W)
            gTv = w * (gTz @ W)
    return grads


# -- loss terms --------------------------------------------------------------
#
# Each term maps a forward bundle to (per-sample losses, dL/dV, dL/ddx, dL/ddt),
# all already divided by the batch size so the total is a mean.


@dataclass
class PdeResidual:
    """weight * mean |dV/dt + min{0, H(x, grad V, t)}| (or squared; clamp off drops the min)."""

    hamiltonian: object         # H(state, p, t) with state = x or [x, lam]
    hamiltonian_dp: object
    weight: float = 1.0
    norm: str = "l1"
    clamp: bool = True

    def residual(self, fb):
        t = fb.inputs[:, -1]
        H = self.hamiltonian(fb.state, fb.dx, t)
        active = (H < 0) if self.clamp else np.ones_like(H, dtype=bool)
        return fb.dt + np.where(active, H, 0.0), active

    def __call__(self, fb, n_total):
        r, active = self.residual(fb)
        if self.norm == "l1":
            per, dr = np.abs(r), np.sign(r)
        elif self.norm == "l2":
            per, dr = r * r, 2.0 * r
        else:
            raise ValueError(f"unknown norm {self.norm!r}")
        g = self.weight * dr / n_total
        dp = self.hamiltonian_dp(fb.state, fb.dx, fb.inputs[:, -1])
        g_dx = np.where(active[:, None], g[:, None] * dp, 0.0)
        return self.weight * per, np.zeros_like(g), g_dx, g


@dataclass
class ValueSupervision:
    """weight * mean (V - target)^2."""

    target: np.ndarray
    weight: float = 1.0

    def __call__(self, fb, n_total, sl=slice(None)):
        r = fb.value - self.target[sl]
        return self.weight * r * r, 2.0 * self.weight * r / n_total, np.zeros_like(fb.dx), np.zeros_like(r)


@dataclass
class GradSupervision:
    """weight * mean ||grad_x V - target||^2."""

    target: np.ndarray
    weight: float = 1.0

    def __call__(self, fb, n_total, sl=slice(None)):
        r = fb.dx - self.target[sl]
        per = self.weight * np.sum(r * r, axis=1)
        return per, np.zeros(len(per)), 2.0 * self.weight * r / n_total, np.zeros(len(per))


def loss_gradients(net: SirenValueNet, x, t, terms, lam=None, chunk=DEFAULT_CHUNK):
    """Mean loss of the summed terms and its exact parameter gradient.

    The batch is processed in fixed-order chunks so the reduction does not
    depend on anything but the chunk size.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    t = np.broadcast_to(np.asarray(t, dtype=float), (n,))
    lam_arr = None if lam is None else np.broadcast_to(np.asarray(lam, dtype=float), (n,))
    total = 0.0
    grads = [np.zeros_like(p) for p in net.params]
    for lo in range(0, n, chunk):
        sl = slice(lo, min(lo + chunk, n))
        fb = forward_with_grad(net, x[sl], t[sl], None if lam_arr is None else lam_arr[sl], keep=True)
        gV = np.zeros(fb.value.shape)
        gdx = np.zeros(fb.dx.shape)
        gdt = np.zeros(fb.dt.shape)
        for term in terms:
            if isinstance(term, PdeResidual):
                per, a, b, c = term(fb, n)
            else:
                per, a, b, c = term(fb, n, sl)
            total += float(np.sum(per)) / n
            gV += a
            gdx += b
            gdt += c
        for acc, g in zip(grads, backward(net, fb, gV, gdx, gdt)):
            acc += g
    return total, grads


# -- optimizer ---------------------------------------------------------------

@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_net(cls, net, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls([np.zeros_like(p) for p in net.params], [np.zeros_like(p) for p in net.params],
                   0, lr, beta1, beta2, eps)


def adam_step(state: AdamState, net: SirenValueNet, grads):
    """Bias-corrected Adam update, in place; returns (state, net)."""
    params = net.params
    if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
        raise ValueError("gradient shapes do not match the parameters")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    new = []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        new.append(p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
    net.set_params(new)
    return state, net


# -- persistence -------------------------------------------------------------

def save_checkpoint(net: SirenValueNet, path, adam: AdamState = None, extra=None):
    """Bit-exact checkpoint; optionally carries the optimizer state and a JSON extra."""
    header = {"layer_dims": net.layer_dims, "omega0": net.omega0, "t_f": net.t_f,
              "n_state": net.n_state, "has_lambda": net.has_lambda, "target": net.target.to_dict(),
              "extra": extra or {}}
    arrays = [(f"p{i}", p) for i, p in enumerate(net.params)]
    if adam is not None:
        header["adam"] = {"step": adam.step, "lr": adam.lr, "beta1": adam.beta1,
                          "beta2": adam.beta2, "eps": adam.eps}
        arrays += [(f"m{i}", a) for i, a in enumerate(adam.m)]
        arrays += [(f"v{i}", a) for i, a in enumerate(adam.v)]
    _io.write_container(path, NET_MAGIC, NET_VERSION, header, arrays)


def load_checkpoint(path, with_state=False):
    head, arrays = _io.read_container(path, NET_MAGIC, NET_VERSION)
    n_par = 2 * (len(head["layer_dims"]) - 1)
    params = [arrays[f"p{i}"] for i in range(n_par)]
    net = SirenValueNet(head["layer_dims"], params[0::2], params[1::2],
                        QuadraticTarget.from_dict(head["target"]), head["omega0"], head["t_f"],
                        head["n_state"], head["has_lambda"])
    if not with_state:
        return net
    adam = None
    if "adam" in head:
        a = head["adam"]
        adam = AdamState([arrays[f"m{i}"].copy() for i in range(n_par)],
                         [arrays[f"v{i}"].copy() for i in range(n_par)],
                         a["step"], a["lr"], a["beta1"], a["beta2"], a["eps"])
    return net, adam, head.get("extra", {})


class SpectrumSlice:
    """Value-function view of a lambda-input net at a frozen lambda."""

    def __init__(self, net: SirenValueNet, lam=1.0):
        if not net.has_lambda:
            raise ValueError("net has no spectrum input")
        self.net, self.lam = net, float(lam)

    def value(self, x, t):
        return self.net.value(x, t, self.lam)

    def gradient(self, x, t):
        return self.net.gradient(x, t, self.lam)
