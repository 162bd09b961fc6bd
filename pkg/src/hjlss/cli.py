"""Command line: ``hjlss {hopf,dp,train,eval,slice} --config run.ini [--set section.key=value ...]``.

One experiment is one output directory. Every command writes a frozen copy of
the resolved config (``config.ini``) and its SHA-256 (``config.sha256``) there,
marks the directory with ``.partial`` while running and removes the marker only
on success. Set ``HJLSS_THREADS`` to cap BLAS threads.
"""
from __future__ import annotations

import argparse
import configparser
import contextlib
import csv
import hashlib
import io
import json
import logging
import os
import sys
import time

import numpy as np

from . import dynamics as dyn
from . import evaluation as ev
from . import hopf as hf
from . import levelset as ls
from . import net as nn
from . import training as tr

log = logging.getLogger("hjlss")

DEFAULTS = {
    "problem": {"system": "pubsub", "N": "10", "a": "-0.5", "b": "1.0", "c": "1.0", "r": "1.0",
                "alpha": "0.0", "beta": "0.0", "horizon": "1.0", "box": "-3.0,3.0",
                "g": "9.8", "d0": "7.0", "d1": "4.0", "n0": "12.0", "radius": "0.5"},
    "program": {"program": "baseline"},
    "hopf": {"n_points": "1000", "seed": "0", "n_tau": "16", "quad_nodes": "64", "restarts": "3",
             "max_iters": "400"},
    "oracle": {"grid": "201", "cfl": "0.5", "n_snapshots": "11"},
    "eval": {"samples": "100000", "rollouts": "2000", "calibration": "2000", "seed": "1",
             "rollout_dt": "0.01", "sample_set": "auto", "t": ""},
    "output": {"dir": "run"},
}


class UsageError(Exception):
    pass


# -- configuration -----------------------------------------------------------------

def load_config(path=None, overrides=()):
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp.read_dict(DEFAULTS)
    if path:
        if not os.path.exists(path):
            raise UsageError(f"config file {path} not found")
        cp.read(path)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise UsageError(f"--set expects section.key=value, got {item!r}")
        key, value = item.split("=", 1)
        section, name = key.split(".", 1)
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, name, value)
    return cp


def config_text(cp):
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def config_hash(cp):
    return hashlib.sha256(config_text(cp).encode("utf-8")).hexdigest()


def _floats(text):
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


def make_problem(cp):
    """(system, target, domain box, horizon) from the [problem] section."""
    p = cp["problem"]
    name = p.get("system")
    horizon = p.getfloat("horizon")
    if name == "pubsub":
        N = p.getint("N")
        sys_ = dyn.pubsub_nd(N, p.getfloat("a"), p.getfloat("b"), p.getfloat("c"),
                             p.getfloat("alpha"), p.getfloat("beta"))
        tgt = dyn.pubsub_target(N, p.getfloat("r"))
        lo, hi = _floats(p.get("box"))
        domain = np.array([[lo, hi]] * N)
    elif name == "quadrotor":
        sys_ = dyn.quadrotor(p.getfloat("g"), p.getfloat("d0"), p.getfloat("d1"), p.getfloat("n0"))
        tgt = dyn.quadrotor_target(p.getfloat("radius"))
        domain = np.array(dyn.QUAD_DOMAIN, dtype=float)
    else:
        raise UsageError(f"unknown system {name!r} (pubsub or quadrotor)")
    return sys_, tgt, domain, horizon


def make_linear(sys_):
    m0 = dyn.OperatingPoint(np.zeros(sys_.state_dim), np.zeros(sys_.control_dim), np.zeros(sys_.disturb_dim))
    return dyn.taylor_linearize(sys_, m0)


def make_train_config(cp, domain, horizon):
    known = {f for f in tr.TrainConfig.__dataclass_fields__}
    kw = {}
    for key, raw in cp["program"].items():
        if key in ("supervisor", "supervisor_seconds"):
            continue
        if key not in known:
            raise UsageError(f"unknown [program] key {key!r}")
        kw[key] = _parse_value(key, raw)
    kw.setdefault("domain", domain.tolist())
    kw.setdefault("horizon", horizon)
    try:
        return tr.TrainConfig(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _parse_value(key, raw):
    raw = raw.strip()
    if key == "hidden":
        return tuple(int(v) for v in raw.split(","))
    if key == "domain":
        vals = _floats(raw)
        return np.reshape(vals, (-1, 2)).tolist()
    if key in ("curriculum", "clamp"):
        return raw.lower() in ("1", "true", "yes", "on")
    if key in ("iterations", "batch_size", "seed", "chunk", "log_every", "checkpoint_every"):
        return int(raw)
    if key in ("program", "norm"):
        return raw
    return float(raw)


# -- run directories -----------------------------------------------------------------

@contextlib.contextmanager
def run_directory(cp, name):
    out = cp["output"].get("dir")
    os.makedirs(out, exist_ok=True)
    marker = os.path.join(out, ".partial")
    with open(marker, "w") as fh:
        fh.write(f"{name} started {time.strftime('%Y-%m-%dT%H:%M:%S')}\n")
    with open(os.path.join(out, "config.ini"), "w") as fh:
        fh.write(config_text(cp))
    with open(os.path.join(out, "config.sha256"), "w") as fh:
        fh.write(config_hash(cp) + "\n")
    yield out
    os.remove(marker)


# -- commands ----------------------------------------------------------------------------

def hopf_problem(cp, sys_, tgt):
    h = cp["hopf"]
    solver = hf.SolverConfig(restarts=h.getint("restarts"), max_iters=h.getint("max_iters"),
                             seed=h.getint("seed"))
    return hf.HopfProblem(make_linear(sys_), tgt, n_tau=h.getint("n_tau"),
                          quad_nodes=h.getint("quad_nodes"), solver=solver)


def cmd_hopf(cp, x_list=None, t=None):
    sys_, tgt, domain, horizon = make_problem(cp)
    prob = hopf_problem(cp, sys_, tgt)
    with run_directory(cp, "hopf") as out:
        path = os.path.join(out, "hopf.csv")
        if x_list is not None:
            xs = _read_states(x_list, sys_.state_dim)
            tt = np.full(len(xs), dyn.T_FINAL - horizon if t is None else float(t))
            rows = [hf.hopf_solve(prob, x, ti, index=i) for i, (x, ti) in enumerate(zip(xs, tt))]
            ds = hf.HopfDataset(xs, tt, np.array([r.value for r in rows]),
                                np.array([r.spatial_grad for r in rows]).reshape(len(xs), sys_.state_dim),
                                np.array([r.flagged for r in rows], dtype=bool),
                                dict(prob.config(), state_dim=sys_.state_dim))
        else:
            h = cp["hopf"]
            sampler = hf.uniform_time_sampler(horizon) if t is None else (lambda rng, size: float(t))
            ds = hf.generate_hopf_dataset(prob, domain, h.getint("n_points"), sampler, h.getint("seed"))
        ds.save(path)
        frac = float(np.mean(ds.flag)) if len(ds) else 0.0
        print(f"wrote {len(ds)} rows to {path} ({100 * frac:.1f}% flagged)")
    return path


def _read_states(path, n):
    with open(path) as fh:
        rows = [r for r in csv.reader(fh) if r]
    if rows and not _is_number(rows[0][0]):
        rows = rows[1:]
    xs = np.array(rows, dtype=float).reshape(len(rows), -1) if rows else np.zeros((0, n))
    if xs.shape[1] != n:
        raise UsageError(f"states in {path} have {xs.shape[1]} columns, system has {n}")
    return xs


def _is_number(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def cmd_dp(cp):
    p = cp["problem"]
    if p.get("system") != "pubsub":
        raise UsageError("dp needs the pub-sub system (its value decomposes into 2-D parts)")
    N = p.getint("N")
    sys2 = dyn.pubsub_2d(p.getfloat("a"), p.getfloat("b"), p.getfloat("c"), p.getfloat("alpha"), p.getfloat("beta"))
    tgt2 = dyn.pubsub_target(2, p.getfloat("r"))
    lo, hi = _floats(p.get("box"))
    o = cp["oracle"]
    n = o.getint("grid")
    with run_directory(cp, "dp") as out:
        grid = ls.dp_solve_2d(sys2, tgt2, ((lo, hi), (lo, hi)), (n, n), p.getfloat("horizon"),
                              o.getfloat("cfl"), o.getint("n_snapshots"))
        # identical subscribers: one solve, referenced N - 1 times
        grid.save(os.path.join(out, "grid_0.bin"))
        manifest = {"parts": ["grid_0.bin"] * (N - 1), "projections": [[0, i + 1] for i in range(N - 1)],
                    "config_hash": config_hash(cp)}
        with open(os.path.join(out, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2)
        print(f"solved {n}x{n} grid; manifest lists {N - 1} parts")
    return os.path.join(out, "manifest.json")


def load_oracle(manifest_path):
    with open(manifest_path) as fh:
        m = json.load(fh)
    base = os.path.dirname(os.path.abspath(manifest_path))
    cache = {}
    parts = []
    for name in m["parts"]:
        if name not in cache:
            cache[name] = ls.ValueGrid2D.load(os.path.join(base, name))
        parts.append(cache[name])
    return ls.ComposedOracle(parts, [tuple(pr) for pr in m["projections"]])


def load_supervisor(path, cfg, sys_, tgt, cp):
    if not path:
        raise UsageError(f"program {cfg.program} needs [program] supervisor = <hopf.csv or checkpoint>")
    if not os.path.exists(path):
        raise UsageError(f"supervisor {path} not found")
    if path.endswith(".csv"):
        return tr.DatasetSupervisor(hf.HopfDataset.load(path), hopf_problem(cp, sys_, tgt))
    return tr.NetSupervisor(nn.load_checkpoint(path), cfg.domain, cfg.horizon)


def cmd_train(cp):
    sys_, tgt, domain, horizon = make_problem(cp)
    cfg = make_train_config(cp, domain, horizon)
    sup_path = cp["program"].get("supervisor", "")
    sup_secs = cp["program"].getfloat("supervisor_seconds", 0.0)
    with run_directory(cp, "train") as out:
        if cfg.program == "linear_supervisor":
            lin = make_linear(sys_).as_affine()
            sup = tr.DatasetSupervisor(hf.HopfDataset.load(sup_path)) if sup_path else None
            trainer = tr.Trainer(cfg, lin, tgt, sup, out)
        else:
            system = sys_
            sup = None
            if cfg.program != "baseline":
                sup = load_supervisor(sup_path, cfg, sys_, tgt, cp)
            if cfg.program == "lss_spectrum":
                system = dyn.SpectrumSystem(sys_, make_linear(sys_))
            trainer = tr.Trainer(cfg, system, tgt, sup, out, sup_secs)
        res = trainer.run()
        print(f"{cfg.program}: {trainer.k} iterations, {res.wall_clock_s:.1f}s; "
              f"checkpoint {trainer.checkpoint_path}")
    return trainer.checkpoint_path


def _valuefn(path):
    if path.endswith(".json"):
        return load_oracle(path)
    if path.endswith(".bin") and _magic(path) == ls.GRID_MAGIC:
        return ls.GridValue(ls.ValueGrid2D.load(path))
    net = nn.load_checkpoint(path)
    return nn.SpectrumSlice(net, 1.0) if net.has_lambda else net


def _magic(path):
    with open(path, "rb") as fh:
        return fh.read(8)


def cmd_eval(cp, checkpoint, oracle=None):
    t0 = time.perf_counter()
    sys_, tgt, domain, horizon = make_problem(cp)
    e = cp["eval"]
    t_eval = dyn.T_FINAL - horizon if not e.get("t") else e.getfloat("t")
    seed = e.getint("seed")
    valuefn = _valuefn(checkpoint)
    report = ev.MetricsReport(sys_.objective, ev.CONVENTIONS[sys_.objective], t_eval,
                              config_hash=config_hash(cp))
    with run_directory(cp, "eval") as out:
        sample_set = e.get("sample_set")
        if sample_set == "auto":
            sample_set = "diagonal" if cp["problem"].get("system") == "pubsub" else "uniform"
        if sample_set == "diagonal":
            lo, hi = _floats(cp["problem"].get("box"))
            samples = ev.diagonal_samples(sys_.state_dim, (lo, hi), e.getint("samples"), seed)
        else:
            samples = ev.uniform_samples(domain, e.getint("samples"), seed)
        report.counts["samples"] = len(samples)
        if oracle:
            orc = _valuefn(oracle)
            report.iou = ev.iou(valuefn, orc, samples, t_eval)
            report.mse_value, report.mse_grad = ev.mse_metrics(valuefn, orc, samples, t_eval)
        else:
            report.notes.append("no oracle given: IOU and MSE skipped")
        dt = e.getfloat("rollout_dt")
        roll = ev.uniform_samples(domain, e.getint("rollouts"), seed + 1)
        fp, fn, pred, ro = ev.fp_fn_rates(valuefn, sys_, tgt, roll, t_eval, dt, horizon, domain)
        report.fp_rate, report.fn_rate = fp, fn
        report.counts["rollouts"] = len(roll)
        report.counts["truncated"] = int(ro.truncated.sum())
        ev.write_records(os.path.join(out, "rollouts.csv"), roll,
                         {"predicted_success": pred, "rollout_success": ro.success, "min_cost": ro.min_cost,
                          "truncated": ro.truncated})
        cal = ev.uniform_samples(domain, e.getint("calibration"), seed + 2)
        conf, values, cro = ev.calibrate(valuefn, sys_, tgt, cal, t_eval, dt, horizon, domain)
        report.delta = conf.delta
        report.confidence = conf.statement()
        report.counts["calibration"] = conf.n_calibration
        report.counts["calibration_unsafe"] = conf.n_unsafe
        report.counts["calibration_false_safe"] = int(np.sum(~cro.success & ~ev.in_expanded_set(values, conf.delta)))
        report.recovered_volume = ev.recovered_volume(valuefn, conf.delta, samples, t_eval)
        report.wall_clock_s = time.perf_counter() - t0
        path = os.path.join(out, "metrics.json")
        report.to_json(path)
        print(report.to_json())
    return path


def cmd_slice(cp, source, axes=(0, 1), fixed=None, t=None, lam=None, res=101, delta=None):
    sys_, tgt, domain, horizon = make_problem(cp)
    t = dyn.T_FINAL - horizon if t is None else float(t)
    valuefn = _valuefn(source)
    if lam is not None and isinstance(valuefn, nn.SpectrumSlice):
        valuefn = nn.SpectrumSlice(valuefn.net, lam)
    grid_like = isinstance(valuefn, ls.GridValue)
    n = 2 if grid_like else sys_.state_dim
    base = np.zeros(n) if fixed is None else np.asarray(fixed, dtype=float)
    if base.size != n:
        raise UsageError(f"--fixed needs {n} values")
    i, j = axes
    box = np.asarray(valuefn.grid.bounds) if grid_like else domain[[i, j]]
    u = np.linspace(box[0][0], box[0][1], res)
    v = np.linspace(box[1][0], box[1][1], res)
    gu, gv = np.meshgrid(u, v, indexing="ij")
    pts = np.tile(base, (res * res, 1))
    pts[:, i], pts[:, j] = gu.ravel(), gv.ravel()
    field = np.asarray(valuefn.value(pts, t)).reshape(res, res)
    with run_directory(cp, "slice") as out:
        csv_path = os.path.join(out, "slice.csv")
        svg_path = os.path.join(out, "slice.svg")
        write_slice_csv(csv_path, u, v, field, (i, j))
        levels = [0.0] + ([] if delta is None else [float(delta)])
        write_slice_svg(svg_path, u, v, field, levels)
        print(f"wrote {csv_path} and {svg_path}")
    return csv_path, svg_path


def write_slice_csv(path, u, v, field, axes):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x_{axes[0]}", f"x_{axes[1]}", "value"])
        for a in range(len(u)):
            for b in range(len(v)):
                w.writerow([repr(float(u[a])), repr(float(v[b])), repr(float(field[a, b]))])


def read_slice_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))[1:]
    arr = np.array(rows, dtype=float)
    u, v = np.unique(arr[:, 0]), np.unique(arr[:, 1])
    return u, v, arr[:, 2].reshape(len(u), len(v))


def write_slice_svg(path, u, v, field, levels, size=400):
    """Marching-squares contours of the CSV field (zero level solid, others dashed)."""
    from skimage.measure import find_contours

    def to_px(rc):
        x = np.interp(rc[:, 0], np.arange(len(u)), u)
        y = np.interp(rc[:, 1], np.arange(len(v)), v)
        px = (x - u[0]) / (u[-1] - u[0]) * size
        py = size - (y - v[0]) / (v[-1] - v[0]) * size
        return px, py

    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
             f'viewBox="0 0 {size} {size}">',
             f'<rect width="{size}" height="{size}" fill="white" stroke="black"/>']
    for k, level in enumerate(levels):
        style = 'stroke="black"' if k == 0 else 'stroke="red" stroke-dasharray="4 3"'
        for c in find_contours(field, level):
            px, py = to_px(c)
            pts = " ".join(f"{a:.3f},{b:.3f}" for a, b in zip(px, py))
            lines.append(f'<polyline fill="none" {style} data-level="{level:g}" points="{pts}"/>')
    lines.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


# -- entry point ------------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="hjlss", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI config file")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("hopf", help="Hopf-formula dataset for the linearized game")
    common(p)
    p.add_argument("--x-list", help="CSV of states (one per row); default: random states per [hopf]")
    p.add_argument("--t", type=float, help="query time (default: sampled, or t_f - T with --x-list)")
    p = sub.add_parser("dp", help="2-D grid oracle and composition manifest")
    common(p)
    p = sub.add_parser("train", help="run a training program (resumes from checkpoint)")
    common(p)
    p = sub.add_parser("eval", help="metrics report for a checkpoint or grid")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--oracle", help="composition manifest from `hjlss dp`")
    p = sub.add_parser("slice", help="CSV + SVG of a 2-D slice")
    common(p)
    p.add_argument("--source", required=True, help="checkpoint, grid file or manifest")
    p.add_argument("--axes", default="0,1")
    p.add_argument("--fixed", help="comma-separated values of all coordinates")
    p.add_argument("--t", type=float)
    p.add_argument("--lam", type=float)
    p.add_argument("--res", type=int, default=101)
    p.add_argument("--delta", type=float)
    return ap


def _threads():
    n = os.environ.get("HJLSS_THREADS")
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=int(n))


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cp = load_config(args.config, args.set)
        with _threads():
            if args.command == "hopf":
                cmd_hopf(cp, args.x_list, args.t)
            elif args.command == "dp":
                cmd_dp(cp)
            elif args.command == "train":
                cmd_train(cp)
            elif args.command == "eval":
                cmd_eval(cp, args.checkpoint, args.oracle)
            elif args.command == "slice":
                axes = tuple(int(a) for a in args.axes.split(","))
                fixed = _floats(args.fixed) if args.fixed else None
                cmd_slice(cp, args.source, axes, fixed, args.t, args.lam, args.res, args.delta)
    except UsageError as exc:
        print(f"hjlss: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, FloatingPointError) as exc:
        print(f"hjlss: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
