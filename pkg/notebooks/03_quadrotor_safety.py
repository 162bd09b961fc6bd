
# coding: utf-8

# # Quadrotor obstacle avoidance and conformal expansion
#
# A 10-D near-hover quadrotor must keep (p_x, p_y) out of a cylinder.
# There is no grid oracle at this dimension, so trained values are judged by
# closed-loop rollouts, and a calibration set bounds how far the safe set
# has to shrink.

# In[1]:

import numpy as np

from hjlss import dynamics as D
from hjlss import evaluation as E
from hjlss import hopf as H
from hjlss import training as T

quad, obstacle = D.quadrotor(), D.quadrotor_target()
dom = np.array(D.QUAD_DOMAIN)
print(D.QUAD_STATE)


# The hover linearization replaces tan(theta) by theta. The sampled error
# bound grows quickly with the angle range.

# In[2]:

lin = D.taylor_linearize(quad, D.OperatingPoint(np.zeros(10), np.zeros(3), np.zeros(0)))
for ang in (0.2, 0.6, 1.5):
    box = dom.copy()
    box[[2, 6]] = [-ang, ang]
    print(f"angles within +-{ang}: delta* ~ {D.linearization_error(quad, lin, box, n_samples=2000).values[0]:.3f}")


# ## Linear supervision and a short LSS-D run

# In[3]:

ds = H.generate_hopf_dataset(H.HopfProblem(lin, obstacle), dom, 300, H.uniform_time_sampler(1.0))
cfg = T.quadrotor_preset("lss_decay", iterations=300, batch_size=500, lr=1e-4, domain=dom.tolist(),
                         hidden=(64, 64), log_every=50)
res = T.train_lss_decay(cfg, quad, obstacle, T.DatasetSupervisor(ds))
for row in res.log:
    print(np.round(row, 4))


# ## Rollout error rates
#
# A state is predicted safe when V > 0. The network's own policy flies each
# state for one time unit; a false positive is a predicted-safe state that
# hits the obstacle.

# In[4]:

roll = E.uniform_samples(dom, 500, seed=1)
fp, fn, pred, ro = E.fp_fn_rates(res.net, quad, obstacle, roll, -1.0, None, 1.0, dom)
print(f"FP {fp:.3%}  FN {fn:.3%}  truncated {np.mean(ro.truncated):.1%}")


# ## Conformal expansion
#
# delta is the largest value among calibration states that failed. Keeping
# only V > delta as "safe" removes every calibration failure by construction.

# In[5]:

cal = E.uniform_samples(dom, 500, seed=2)
conf, values, cro = E.calibrate(res.net, quad, obstacle, cal, -1.0, None, 1.0, dom)
false_safe = np.sum(~cro.success & ~E.in_expanded_set(values, conf.delta))
print(conf.statement())
print("false-safe calibration states after expansion:", false_safe)
vol = E.recovered_volume(res.net, conf.delta, E.uniform_samples(dom, 20000, seed=3), -1.0)
print(f"recovered safe volume fraction: {vol:.3f}")
