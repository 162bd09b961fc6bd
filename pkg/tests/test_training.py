import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from hjlss import dynamics as D
from hjlss import hopf as H
from hjlss import levelset as L
from hjlss import net as N
from hjlss import training as T

DOM = [[-3.0, 3.0], [-3.0, 3.0]]
TGT = D.pubsub_target(2)
SYS = D.pubsub_2d(alpha=1.0, beta=1.0)
LIN = D.taylor_linearize(SYS, D.OperatingPoint(np.zeros(2), [0.0], [0.0]))
SPEC = D.SpectrumSystem(SYS, LIN)


def zero_system():
    return D.AffineInputSystem(2, 0, 0, lambda x, t=0.0: np.zeros(np.shape(x)),
                               lambda t=0.0: np.zeros((2, 0)), lambda t=0.0: np.zeros((2, 0)),
                               [], [], D.REACH, name="zero")


def cfg(program="baseline", **kw):
    base = dict(program=program, iterations=12, batch_size=64, lr=1e-3, domain=DOM, hidden=(16, 16),
                log_every=1, seed=3)
    return T.TrainConfig(**dict(base, **kw))


def net_supervisor(seed=5, scale=1.0):
    net = N.init_siren([3, 16, 16, 1], seed=seed, target=TGT)
    net.weights[-1] *= scale
    net.biases[-1] *= scale
    return T.NetSupervisor(net, DOM, 1.0)


def params_equal(a, b):
    return all(np.array_equal(p, q) for p, q in zip(a.params, b.params))


# -- config ----------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ValueError, match="unknown program"):
        T.TrainConfig(program="nope")
    with pytest.raises(ValueError):
        T.TrainConfig(lambda_K=1.5)
    with pytest.raises(ValueError):
        T.TrainConfig(iterations=0)
    with pytest.raises(ValueError):
        T.TrainConfig(program="lss_adaptive", I_start=1.0, I_end=2.0)
    with pytest.raises(ValueError, match="unknown training keys"):
        T.TrainConfig.from_dict({"bogus": 1})
    c = cfg("lss_decay")
    assert T.TrainConfig.from_dict(c.to_dict()) == c


def test_curriculum_defaults_per_program():
    assert cfg("baseline").uses_curriculum and cfg("lss_spectrum").uses_curriculum
    assert not cfg("lss_decay").uses_curriculum and not cfg("lss_adaptive").uses_curriculum


def test_preset_defaults():
    q = T.quadrotor_preset("lss_decay")
    assert (q.rho, q.rho_g, q.lambda_K) == (0.1, 0.2, 0.6)
    assert (q.I_start, q.I_end) == (10.0, 1.0)
    d = T.TrainConfig()
    assert (d.I_start, d.I_end) == (10.0, 1.0)
    b = T.benchmark_preset("lss_decay")
    assert (b.iterations, b.batch_size, b.lr) == (5000, 2000, 1e-5)
    b = T.benchmark_preset("baseline")
    assert (b.iterations, b.batch_size, b.lr) == (20000, 4000, 1e-5)


def test_missing_supervisor_is_an_error():
    for prog in ("lss_decay", "lss_adaptive"):
        with pytest.raises(ValueError, match="supervisor"):
            T.Trainer(cfg(prog), SYS, TGT)
    with pytest.raises(ValueError, match="SpectrumSystem"):
        T.Trainer(cfg("lss_spectrum"), SYS, TGT, net_supervisor())


# -- sampling and schedules -----------------------------------------------------------

def test_sampler_curriculum_endpoints():
    c = cfg(iterations=100, batch_size=500)
    b0 = T.sample_batch(c, 0)
    assert np.all(b0.t == 0.0)
    b = T.sample_batch(c, 50)
    assert b.t.min() < -0.99 and b.t.max() <= 0.0
    assert np.all((b.x >= -3) & (b.x <= 3))
    nc = cfg("lss_decay", iterations=100, batch_size=500)
    assert T.sample_batch(nc, 0).t.min() < -0.99


def test_sampler_deterministic_and_streams_independent():
    c = cfg(iterations=10)
    a, b = T.sample_batch(c, 4), T.sample_batch(c, 4)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.t, b.t)
    assert not np.array_equal(T.sample_batch(c, 4, "ls").x, a.x)
    with pytest.raises(ValueError):
        T.sample_batch(c, 11)


def test_spectrum_sub_batches():
    c = cfg("lss_spectrum", batch_size=4000)
    s = T.sample_batch(c, 3, "spectrum_ls")
    p = T.sample_batch(c, 3, "spectrum_pde")
    assert len(s) == 1000 and len(p) == 3000
    assert np.all(s.lam == 0.0)
    counts, _ = np.histogram(p.lam, bins=10, range=(0, 1))
    chi2 = stats.chisquare(counts)
    assert chi2.pvalue > 1e-3


def test_schedules_monotone_and_endpoints():
    c = cfg("lss_decay", iterations=200, lambda_K=0.6, ramp=0.5)
    lams = [T.decay_weight(c, k) for k in range(201)]
    assert lams[0] == 0.0 and lams[-1] == 0.6 and np.all(np.diff(lams) >= 0)
    cc = cfg(iterations=200)
    spans = [T.curriculum_span(cc, k) for k in range(201)]
    assert spans[0] == 0.0 and spans[-1] == 1.0 and np.all(np.diff(spans) >= 0)
    ca = cfg("lss_adaptive", iterations=200)
    I = [T.importance_schedule(ca, k) for k in range(201)]
    assert I[0] == 10.0 and I[-1] == 1.0
    assert np.all(np.diff(I) < 0)


@settings(max_examples=100, deadline=None)
@given(lo=st.floats(1e-3, 10.0), gap=st.floats(1e-3, 100.0), K=st.integers(1, 10 ** 6))
def test_importance_endpoints_exact(lo, gap, K):
    c = T.TrainConfig(program="lss_adaptive", iterations=K, I_start=lo + gap, I_end=lo)
    assert T.importance_schedule(c, 0) == lo + gap and T.importance_schedule(c, K) == lo


def test_adaptive_ema_fixed_point_and_guard():
    lam, ratio = 10.0, 1.0
    for _ in range(400):
        lam, ratio = T.adaptive_update(lam, 3.0, 2.5, 2.5, ratio)
    assert lam == pytest.approx(3.0, rel=1e-12)
    lam2, ratio2 = T.adaptive_update(4.0, 3.0, 7.0, 0.0, 0.5)
    assert ratio2 == 0.5 and lam2 == pytest.approx(0.9 * 4.0 + 0.1 * 3.0 * 0.5)


# -- loss terms ------------------------------------------------------------------------

def test_pde_residual_at_terminal_slice():
    net = N.init_siren([3, 16, 16, 1], seed=1, target=TGT)
    x = np.random.default_rng(0).uniform(-3, 3, (100, 2))
    b = T.Batch(x, np.zeros(100))
    loss, _ = T.pde_loss(net, SYS, b)
    y = N.forward_with_grad(net, x, 0.0).y
    h = D.hamiltonian(SYS, x, TGT.grad(x), 0.0)
    assert loss == pytest.approx(np.mean(np.abs(y + np.minimum(0.0, h))), rel=1e-12)


def test_constant_net_with_nonnegative_h_has_zero_loss():
    net = N.init_siren([3, 16, 16, 1], seed=1, target=TGT)
    net.weights[-1][:] = 0.0
    net.biases[-1][:] = 0.0
    x = np.random.default_rng(0).uniform(-3, 3, (400, 2))
    keep = D.hamiltonian(SYS, x, TGT.grad(x), -0.5) >= 0
    assert keep.sum() > 50
    loss, _ = T.pde_loss(net, SYS, T.Batch(x[keep], np.full(keep.sum(), -0.5)))
    assert loss == 0.0


def test_grid_solution_has_small_residual():
    """Derivatives read off a fine DP solve nearly satisfy the residual on the linear game."""
    s = D.pubsub_2d()
    g = L.dp_solve_2d(s, TGT, shape=(201, 201), n_snapshots=101)
    rng = np.random.default_rng(0)
    x = rng.uniform(-2, 2, (200, 2))
    t = -rng.uniform(0.1, 0.9, 200)
    dt = 0.01
    vt = (L.interpolate(g, x, t + dt) - L.interpolate(g, x, t - dt)) / (2 * dt)
    fb = N.ForwardBundle(L.interpolate(g, x, t), vt, L.grid_gradient(g, x, t), np.column_stack([x, t]), vt)
    term = T.pde_term(s, T.TrainConfig())
    r, _ = term.residual(fb)
    assert np.median(np.abs(r)) < 0.05
    assert np.mean(np.abs(r)) < 0.1


def test_ls_loss_zero_cases():
    sup = net_supervisor()
    c = cfg("lss_decay")
    b, v, g = sup.supervision_batch(c, 2)
    loss, grads = T.ls_loss(sup.net.copy(), b, v, g, 1.0, 1.0)
    assert loss == 0.0 and all(not np.any(a) for a in grads)
    other = N.init_siren([3, 16, 16, 1], seed=9, target=TGT)
    loss, grads = T.ls_loss(other, b, v, g, 0.0, 0.0)
    assert loss == 0.0 and all(not np.any(a) for a in grads)


def test_loss_composition_is_linear():
    sup = net_supervisor()
    c = cfg("lss_decay", iterations=10, ramp=1.0)
    tr = T.Trainer(c, SYS, TGT, sup)
    k = 4
    lam = T.decay_weight(c, k)
    total, grads, lp, ll, w = tr._step_terms(k)
    b = T.sample_batch(c, k, "pde")
    lp2, gp = T.pde_loss(tr.net, SYS, b, c)
    bs, v, g = sup.supervision_batch(c, k)
    ll2, gl = T.ls_loss(tr.net, bs, v, g, c.rho, c.rho_g)
    assert w == lam and 0 < lam < 1
    assert abs(total - (lam * lp2 + (1 - lam) * ll2)) <= 1e-12
    for a, p, q in zip(grads, gp, gl):
        assert np.max(np.abs(a - (lam * p + (1 - lam) * q))) <= 1e-12


# -- supervisors -----------------------------------------------------------------------

def test_net_supervisor_bit_stable_and_bounded():
    sup = net_supervisor()
    x = np.random.default_rng(0).uniform(-3, 3, (50, 2))
    a, b = sup.query(x, -0.3), sup.query(x, -0.3)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    with pytest.raises(ValueError, match="outside"):
        sup.query(np.array([[3.5, 0.0]]), -0.3)
    with pytest.raises(ValueError, match="outside"):
        sup.query(np.array([[0.0, 0.0]]), -1.5)


def hopf_dataset(n=40, seed=0):
    prob = H.HopfProblem(LIN, TGT)
    return prob, H.generate_hopf_dataset(prob, DOM, n, H.uniform_time_sampler(1.0), seed=seed)


def test_dataset_supervisor_rows_and_fallback():
    prob, ds = hopf_dataset()
    sup = T.DatasetSupervisor(ds, prob)
    v, g = sup.query(ds.x[:3], ds.t[:3])
    assert np.array_equal(v, ds.value[:3]) and np.array_equal(g, ds.grad[:3])
    x = np.array([[0.3, -0.4]])
    v, _ = sup.query(x, -0.5)
    assert v[0] == pytest.approx(H.hopf_solve(prob, x[0], -0.5).value, abs=1e-12)
    with pytest.raises(ValueError):
        T.DatasetSupervisor(ds).query(x, -0.5)


def test_low_quality_dataset_warns(caplog):
    _, ds = hopf_dataset(10)
    ds.flag[:5] = True
    with caplog.at_level(logging.WARNING):
        T.DatasetSupervisor(ds)
    assert "low quality" in caplog.text


# -- programs --------------------------------------------------------------------------

def run_program(program, seed=3, **kw):
    c = cfg(program, seed=seed, **kw)
    sysm = SPEC if program == "lss_spectrum" else SYS
    sup = None if program in ("baseline", "linear_supervisor") else net_supervisor()
    if program == "linear_supervisor":
        sysm = LIN.as_affine()
    return T.Trainer(c, sysm, TGT, sup).run()


@pytest.mark.parametrize("program", T.PROGRAMS)
def test_programs_are_deterministic(program):
    a, b = run_program(program), run_program(program)
    assert params_equal(a.net, b.net)
    strip = lambda rows: [[r[0]] + r[2:] for r in rows]   # wall clock excluded
    assert strip(a.log) == strip(b.log)
    assert not params_equal(a.net, run_program(program, seed=4).net)


def test_boundary_identity_preserved_through_training():
    res = run_program("baseline")
    x = np.random.default_rng(0).uniform(-3, 3, (200, 2))
    assert np.max(np.abs(res.net.value(x, 0.0) - TGT(x))) <= 1e-12


def test_decay_with_unit_weight_is_baseline_without_curriculum():
    c_dec = cfg("lss_decay", lambda_K=1.0, ramp=0.0)
    c_base = cfg("baseline", curriculum=False)
    a = T.Trainer(c_dec, SYS, TGT, net_supervisor()).run()
    b = T.Trainer(c_base, SYS, TGT).run()
    assert params_equal(a.net, b.net)
    assert [r[2] for r in a.log] == [r[2] for r in b.log]


def test_first_decay_step_is_pure_supervision():
    res = run_program("lss_decay", iterations=20)
    assert res.log[0][5] == 0.0 and res.log[0][3] == 0.0 and res.log[0][4] > 0


def test_resume_replays_exactly(tmp_path):
    c = cfg("lss_adaptive", iterations=10, checkpoint_every=5)
    full = T.Trainer(c, SYS, TGT, net_supervisor()).run()
    first = T.Trainer(c, SYS, TGT, net_supervisor(), out_dir=tmp_path)
    first.run(until=5)
    resumed = T.Trainer(c, SYS, TGT, net_supervisor(), out_dir=tmp_path)
    assert resumed.k == 5
    res = resumed.run()
    assert params_equal(full.net, res.net)
    assert [r[2:] for r in full.log] == [r[2:] for r in res.log]
    header = (tmp_path / "metrics.csv").read_text().splitlines()[0]
    assert header == ",".join(T.LOG_COLUMNS)
    assert len((tmp_path / "metrics.csv").read_text().splitlines()) == 11


def test_adaptive_log_starts_near_start_importance():
    res = run_program("lss_adaptive")
    lam0 = res.log[0][5]
    assert lam0 >= 0.9 * 10.0


def test_path_b_on_zero_dynamics_converges_to_target():
    c = T.TrainConfig(program="linear_supervisor", iterations=1500, batch_size=512, lr=1e-3, domain=DOM,
                      hidden=(16, 16), norm="l2", log_every=100, seed=0)
    zero = zero_system()
    sup, res = T.train_linear_supervisor(c, zero, TGT)
    probe = T.sample_batch(T.TrainConfig(iterations=1, batch_size=2000, domain=DOM, curriculum=False,
                                         seed=99, norm="l2"), 0)
    loss, _ = T.pde_loss(res.net, zero, probe, c)
    assert loss <= 1e-3
    v, _ = sup.query(probe.x, probe.t)
    assert np.max(np.abs(v - TGT(probe.x))) < 0.05


def test_path_a_regression_decreases():
    prob, ds = hopf_dataset(200)
    c = T.TrainConfig(program="linear_supervisor", iterations=300, batch_size=128, lr=1e-3, domain=DOM,
                      hidden=(16, 16), pde_weight=0.0, log_every=1, seed=0)
    _, res = T.train_linear_supervisor(c, LIN.as_affine(), TGT, ds)
    ls = np.array([r[4] for r in res.log])
    windows = ls[: len(ls) // 50 * 50].reshape(-1, 50).mean(axis=1)
    assert np.all(np.diff(windows) < 0)


def test_zero_lambda_decay_matches_supervisor():
    sup = net_supervisor(7, scale=0.1)
    c = cfg("lss_decay", iterations=400, batch_size=256, lambda_K=0.0, log_every=50)
    res = T.Trainer(c, SYS, TGT, sup).run()
    first, last = res.log[0][4], res.log[-1][4]
    assert last < 0.1 * first


def test_spectrum_zero_slice_tracks_supervisor():
    sup = net_supervisor(7)
    c = cfg("lss_spectrum", iterations=400, batch_size=512, log_every=50, rho=1.0, rho_g=1.0)
    res = T.Trainer(c, SPEC, TGT, sup).run()
    x = np.random.default_rng(123).uniform(-3, 3, (500, 2))
    t = -np.random.default_rng(124).uniform(0, 1, 500)
    mse = np.mean((res.net.value(x, t, 0.0) - sup.query(x, t)[0]) ** 2)
    final_ls = np.mean([r[4] for r in res.log[-3:]])
    assert mse < 10 * final_ls
    view = N.SpectrumSlice(res.net, 1.0)
    assert np.array_equal(view.value(x, t), res.net.value(x, t, 1.0))


def test_baseline_residual_decreases_on_benchmark():
    c = cfg("baseline", iterations=400, batch_size=256, log_every=1, curriculum=False)
    res = T.Trainer(c, D.pubsub_2d(), TGT).run()
    lp = np.array([r[3] for r in res.log])
    assert lp[-50:].mean() < 0.8 * lp[:50].mean()


def test_write_log(tmp_path):
    T.write_log([[0, 0.1, 1.0, 0.5, 0.5, 1.0, 0.0]], tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "iter,wall_clock_s,loss_total,loss_pde,loss_ls,lambda_k,s_k"
    assert lines[1].startswith("0,0.1,1.0")
