import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hjlss import _io
from hjlss import dynamics as D
from hjlss import hopf as H
from hjlss import levelset as L

TGT = D.pubsub_target(2)


@pytest.fixture(scope="module")
def base_grid():
    return L.dp_solve_2d(D.pubsub_2d(), TGT, shape=(101, 101))


def zero_system():
    return D.AffineInputSystem(2, 0, 0, lambda x, t=0.0: np.zeros(np.shape(x)),
                               lambda t=0.0: np.zeros((2, 0)), lambda t=0.0: np.zeros((2, 0)),
                               [], [], D.REACH, name="zero")


def test_boundary_exact_monotone_finite(base_grid):
    g = base_grid
    assert np.max(np.abs(g.values[-1] - TGT(g.states()))) <= 1e-12
    assert np.all(np.diff(g.values, axis=0) >= 0)      # ascending time: V(t) <= V(t + dt)
    assert np.all(np.isfinite(g.values))
    assert g.times[0] == pytest.approx(-1.0) and g.times[-1] == 0.0


def test_zero_dynamics_keeps_target():
    g = L.dp_solve_2d(zero_system(), TGT, shape=(41, 41))
    for v in g.values:
        assert np.array_equal(v, g.values[-1])


def test_bad_inputs_rejected():
    with pytest.raises(ValueError):
        L.dp_solve_2d(D.pubsub_2d(), TGT, cfl=1.5)
    with pytest.raises(ValueError):
        L.dp_solve_2d(D.pubsub_nd(3), D.pubsub_target(3))


def test_unstable_march_reports_cfl():
    s = D.pubsub_2d(a=-0.5)
    bad = D.AffineInputSystem(2, 1, 1, lambda x, t=0.0: 1.0 / (np.asarray(x) + 3.0), s.B1, s.B2,
                              [1.0], [1.0], D.REACH, name="pole")
    with np.errstate(divide="ignore"):
        with pytest.raises(L.CFLError):
            L.dp_solve_2d(bad, TGT, shape=(21, 21))


def hopf_probes(n=100, seed=0, box=2.0):
    s = D.pubsub_2d()
    lin = D.taylor_linearize(s, D.OperatingPoint(np.zeros(2), [0.0], [0.0]))
    prob = H.HopfProblem(lin, TGT, n_tau=101)
    pts = np.random.default_rng(seed).uniform(-box, box, (n, 2))
    return pts, np.array([H.hopf_solve(prob, x, -1.0, index=i).value for i, x in enumerate(pts)])


def test_matches_hopf_within_slope_bound(base_grid):
    pts, ref = hopf_probes()
    g = base_grid
    slope = np.sqrt(2) * 3.0      # sup |grad J| on the box bounds the value's slope
    bound = 3 * (g.spacing[0] + g.dt) * slope
    assert np.max(np.abs(L.interpolate(g, pts, -1.0) - ref)) < bound


def test_first_order_convergence(base_grid):
    pts, ref = hopf_probes()
    fine = L.dp_solve_2d(D.pubsub_2d(), TGT, shape=(201, 201))
    e1 = np.max(np.abs(L.interpolate(base_grid, pts, -1.0) - ref))
    e2 = np.max(np.abs(L.interpolate(fine, pts, -1.0) - ref))
    assert 1.6 <= e1 / e2 <= 2.6


def test_refinement_bound_on_random_probes():
    s = D.pubsub_2d(b=1.0, c=0.5)
    coarse = L.dp_solve_2d(s, TGT, shape=(51, 51))
    fine = L.dp_solve_2d(s, TGT, shape=(201, 201))
    pts = np.random.default_rng(5).uniform(-2, 2, (200, 2))
    ts = -np.random.default_rng(6).uniform(0, 1, 200)
    diff = np.abs(L.interpolate(coarse, pts, ts) - L.interpolate(fine, pts, ts))
    assert np.max(diff) < 3 * coarse.spacing[0] * np.sqrt(2) * 3.0


def test_larger_disturbance_never_lowers_reach_value():
    s1 = D.pubsub_2d(b=1.0, c=0.5, disturb_bound=0.5)
    s2 = D.pubsub_2d(b=1.0, c=0.5, disturb_bound=1.0)
    g1 = L.dp_solve_2d(s1, TGT, shape=(61, 61))
    g2 = L.dp_solve_2d(s2, TGT, shape=(61, 61), snapshot_times=g1.times)
    assert np.all(g2.values[0] >= g1.values[0] - 1e-12)


def test_spectrum_slices_are_bit_identical():
    base = D.pubsub_2d(alpha=1.0, beta=1.0)
    lin = D.taylor_linearize(base, D.OperatingPoint(np.zeros(2), [0.0], [0.0]))
    spec = D.SpectrumSystem(base, lin)
    kw = dict(shape=(41, 41), snapshot_times=np.linspace(-0.5, 0, 3))
    a0 = L.dp_solve_2d(spec.slice(0.0), TGT, **kw).values
    b0 = L.dp_solve_2d(lin.as_affine(), TGT, **kw).values
    a1 = L.dp_solve_2d(spec.slice(1.0), TGT, **kw).values
    b1 = L.dp_solve_2d(base, TGT, **kw).values
    assert np.array_equal(a0, b0)
    assert np.array_equal(a1, b1)


# -- interpolation -------------------------------------------------------------

def affine_grid(shape=(11, 21)):
    g = L.ValueGrid2D([[-1, 1], [-2, 3]], shape, 0.1, [-1.0, 0.0], np.zeros((2,) + shape))
    s = g.states()
    g.values = np.stack([2 * s[..., 0] - 3 * s[..., 1] + 1, 0.5 * s[..., 0] + s[..., 1]])
    return g


def test_interpolate_nodes_and_affine_field():
    g = affine_grid()
    s = g.states()
    assert np.array_equal(L.interpolate(g, s, 0.0), g.values[-1])
    h = g.spacing
    centres = s[:-1, :-1] + 0.5 * h
    assert np.allclose(L.interpolate(g, centres, -1.0), 2 * centres[..., 0] - 3 * centres[..., 1] + 1, atol=1e-12)
    mid = L.interpolate(g, centres, -0.5)
    expect = 0.5 * (2 * centres[..., 0] - 3 * centres[..., 1] + 1) + 0.5 * (0.5 * centres[..., 0] + centres[..., 1])
    assert np.allclose(mid, expect, atol=1e-12)


def test_grid_gradient_affine_exact():
    g = affine_grid()
    pts = np.random.default_rng(0).uniform([-1, -2], [1, 3], (50, 2))
    assert np.allclose(L.grid_gradient(g, pts, -1.0), [2.0, -3.0], atol=1e-10)


def test_grid_gradient_of_target_exact_and_smooth_field_second_order():
    pts = np.random.default_rng(1).uniform(-2, 2, (50, 2))
    g = L.ValueGrid2D([[-3, 3], [-3, 3]], (61, 61), 0.0, [0.0], np.zeros((1, 61, 61)))
    g.values = TGT(g.states())[None]
    # central differences are exact on the separable quadratic target
    assert np.max(np.abs(L.grid_gradient(g, pts, 0.0) - TGT.grad(pts))) < 1e-10
    errs = []
    for n in (61, 121):
        g = L.ValueGrid2D([[-3, 3], [-3, 3]], (n, n), 0.0, [0.0], np.zeros((1, n, n)))
        s = g.states()
        g.values = (np.sin(s[..., 0]) * np.cos(s[..., 1]))[None]
        exact = np.stack([np.cos(pts[:, 0]) * np.cos(pts[:, 1]), -np.sin(pts[:, 0]) * np.sin(pts[:, 1])], axis=-1)
        errs.append(np.max(np.abs(L.grid_gradient(g, pts, 0.0) - exact)))
    assert errs[0] < 0.05 and errs[1] < errs[0] / 3.0


def test_symmetric_point_has_no_cross_component():
    g = L.ValueGrid2D([[-3, 3], [-3, 3]], (61, 61), 0.0, [0.0], np.zeros((1, 61, 61)))
    g.values = TGT(g.states())[None]
    assert L.grid_gradient(g, np.array([[1.3, 0.0]]), 0.0)[0, 1] == pytest.approx(0.0, abs=1e-12)


def test_out_of_bounds_is_an_error(base_grid):
    with pytest.raises(ValueError):
        L.interpolate(base_grid, np.array([3.5, 0.0]), -0.5)
    with pytest.raises(ValueError):
        L.interpolate(base_grid, np.array([0.0, 0.0]), -1.5)
    with pytest.raises(ValueError):
        L.interpolate(base_grid, np.array([0.0, 0.0]), 0.5)


# -- storage -----------------------------------------------------------------

def test_save_load_roundtrip(tmp_path, base_grid):
    path = tmp_path / "g.bin"
    base_grid.save(path)
    back = L.ValueGrid2D.load(path)
    assert np.array_equal(back.values, base_grid.values)
    assert np.array_equal(back.times, base_grid.times)
    assert back.shape == base_grid.shape and back.dt == base_grid.dt
    assert back.meta["target"] == TGT.to_dict()


def test_bad_magic_and_version(tmp_path, base_grid):
    path = tmp_path / "g.bin"
    base_grid.save(path)
    raw = bytearray(path.read_bytes())
    raw[:8] = b"NOTAGRID"
    (tmp_path / "bad.bin").write_bytes(bytes(raw))
    with pytest.raises(_io.FormatError, match="magic"):
        L.ValueGrid2D.load(tmp_path / "bad.bin")
    _io.write_container(tmp_path / "v.bin", L.GRID_MAGIC, L.GRID_VERSION + 1, {}, [])
    with pytest.raises(_io.FormatError, match="version"):
        L.ValueGrid2D.load(tmp_path / "v.bin")
    (tmp_path / "short.bin").write_bytes(path.read_bytes()[:-16])
    with pytest.raises(_io.FormatError, match="truncated"):
        L.ValueGrid2D.load(tmp_path / "short.bin")


# -- composition --------------------------------------------------------------

def test_compose_single_part_equals_part(base_grid):
    oracle = L.ComposedOracle([base_grid])
    pts = np.random.default_rng(2).uniform(-2, 2, (30, 2))
    assert np.array_equal(oracle.value(pts, -0.4), L.interpolate(base_grid, pts, -0.4))
    assert np.array_equal(oracle.gradient(pts, -0.4), L.grid_gradient(base_grid, pts, -0.4))


def test_compose_identical_parts_on_diagonal(base_grid):
    N = 5
    oracle = L.ComposedOracle([base_grid] * (N - 1))
    rng = np.random.default_rng(3)
    x0, s = rng.uniform(-2, 2, 40), rng.uniform(-2, 2, 40)
    xt = np.column_stack([x0] + [s] * (N - 1))
    single = L.interpolate(base_grid, np.column_stack([x0, s]), -1.0)
    assert np.allclose(oracle.value(xt, -1.0), (N - 1) * single, atol=1e-12)
    assert np.array_equal(oracle.value(xt, -1.0) <= 0, single <= 0)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), t=st.floats(-1.0, 0.0))
def test_compose_six_parts_is_sum(base_grid, seed, t):
    rng = np.random.default_rng(seed)
    parts = []
    for k in range(5):
        g = L.ValueGrid2D(base_grid.bounds, base_grid.shape, base_grid.dt, base_grid.times,
                          base_grid.values * (1 + 0.1 * k), base_grid.meta)
        parts.append(g)
    oracle = L.ComposedOracle(parts)
    x = rng.uniform(-2.9, 2.9, (10, 6))
    direct = sum(L.interpolate(p, x[:, [0, i + 1]], t) for i, p in enumerate(parts))
    assert np.max(np.abs(L.compose_value(oracle, x, t) - direct)) <= 1e-12
    g = L.compose_gradient(oracle, x, t)
    g0 = sum(L.grid_gradient(p, x[:, [0, i + 1]], t)[:, 0] for i, p in enumerate(parts))
    assert np.allclose(g[:, 0], g0, atol=1e-12)


def test_compose_rejects_mismatched_parts(base_grid):
    other = L.dp_solve_2d(D.pubsub_2d(), D.pubsub_target(2, r=0.5), shape=(21, 21), snapshot_times=base_grid.times)
    with pytest.raises(ValueError, match="radius"):
        L.ComposedOracle([base_grid, other])
    shifted = L.ValueGrid2D(base_grid.bounds, base_grid.shape, base_grid.dt, base_grid.times * 0.5,
                            base_grid.values, base_grid.meta)
    with pytest.raises(ValueError, match="times"):
        L.ComposedOracle([base_grid, shifted])
