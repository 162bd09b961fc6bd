
# coding: utf-8

# # Training programs on a small game
#
# A sine-activated network V(x, t) is built so that V(x, 0) = J(x) for every
# parameter value. Training then only has to shape the value at earlier times.
# The programs differ in how the Hamilton-Jacobi residual is mixed with
# supervision from the linear (Hopf) value.

# In[1]:

import time

import numpy as np

from hjlss import dynamics as D
from hjlss import evaluation as E
from hjlss import hopf as H
from hjlss import levelset as L
from hjlss import net as nn
from hjlss import training as T

tgt = D.pubsub_target(2)
game = D.pubsub_2d(alpha=1.0, beta=1.0)
dom = [[-3.0, 3.0], [-3.0, 3.0]]
m0 = D.OperatingPoint(np.zeros(2), [0.0], [0.0])
lin = D.taylor_linearize(game, m0)


# The boundary condition holds by construction, with no training at all.

# In[2]:

net = nn.init_siren([3, 32, 32, 1], seed=0, target=tgt)
x = np.random.default_rng(0).uniform(-3, 3, (5, 2))
print(np.max(np.abs(net.value(x, 0.0) - tgt(x))))


# ## Supervision data
#
# A few hundred Hopf solves of the linearized game give values and gradients.

# In[3]:

t0 = time.perf_counter()
ds = H.generate_hopf_dataset(H.HopfProblem(lin, tgt), dom, 400, H.uniform_time_sampler(1.0))
hopf_s = time.perf_counter() - t0
print(f"{len(ds)} rows in {hopf_s:.1f}s, flagged fraction {np.mean(ds.flag):.3f}")
sup = T.DatasetSupervisor(ds)


# ## The programs
#
# Same budget for each: 600 iterations, batch 512, lr 1e-3.

# In[4]:

def config(program, **kw):
    return T.TrainConfig(program=program, iterations=600, batch_size=512, lr=1e-3, domain=dom,
                         hidden=(32, 32), log_every=100, seed=0, **kw)


runs = {
    "baseline": T.train_baseline(config("baseline"), game, tgt),
    "lss_decay": T.train_lss_decay(config("lss_decay"), game, tgt, sup, supervisor_seconds=hopf_s),
    "lss_adaptive": T.train_adaptive(config("lss_adaptive"), game, tgt, sup, supervisor_seconds=hopf_s),
    "lss_spectrum": T.train_lss_spectrum(config("lss_spectrum"), D.SpectrumSystem(game, lin), tgt, sup,
                                         supervisor_seconds=hopf_s),
}
for name, res in runs.items():
    print(f"{name:13s} wall {res.wall_clock_s:6.1f}s  final log row {np.round(res.log[-1][2:], 4)}")


# ## Scoring against the grid
#
# IOU of the sub-zero sets at t = -1 and MSE of values and gradients.
# The spectrum net is scored on its lambda = 1 slice.

# In[5]:

oracle = L.GridValue(L.dp_solve_2d(game, tgt, shape=(201, 201)))
pts = E.uniform_samples(dom, 20000, seed=3)
print(f"{'J only':13s} IOU {E.iou(E.target_value(tgt), oracle, pts, -1.0):.3f}")
for name, res in runs.items():
    v = nn.SpectrumSlice(res.net, 1.0) if name == "lss_spectrum" else res.net
    iou = E.iou(v, oracle, pts, -1.0)
    mse, mse_g = E.mse_metrics(v, oracle, pts, -1.0)
    print(f"{name:13s} IOU {iou:.3f}  MSE {mse:.4f}  grad MSE {mse_g:.4f}")


# At a 600-iteration budget the ranking moves with the seed and the
# learning rate; the supervised programs spend part of it fitting the linear
# value, which differs from the alpha = 1 value. The 10-D comparison in
# tests/test_acceptance.py uses larger, fixed budgets.

# ## Runs are pure functions of the config
#
# Every random draw is keyed by (seed, iteration, stream), so a rerun
# reproduces the parameters bit for bit.

# In[6]:

again = T.train_baseline(config("baseline"), game, tgt)
print(all(np.array_equal(a, b) for a, b in zip(again.net.params, runs["baseline"].net.params)))
