
# coding: utf-8

# # Oracles for the publisher-subscriber game
#
# The benchmark game couples one publisher coordinate x_1 to N-1 subscribers.
# Each (x_1, x_i) pair is a 2-D game, so the N-D value is a sum of 2-D values.
# Two independent oracles exist for the 2-D parts: a level-set grid solve,
# and, for the linear game, the Hopf formula evaluated point by point.

# In[1]:

import numpy as np

from hjlss import dynamics as D
from hjlss import hopf as H
from hjlss import levelset as L

tgt = D.pubsub_target(2)
lin_game = D.pubsub_2d()                 # alpha = beta = 0: the linear game
print(lin_game.params)


# The Hamiltonian is a min over controls and a max over disturbances of
# <p, f>. For box inputs it has a closed form; here it is at one costate.

# In[2]:

x, p = np.array([0.5, -1.0]), np.array([1.0, 2.0])
print(D.hamiltonian(lin_game, x, p), D.extremal_inputs(lin_game, p))


# ## Grid oracle
#
# A 201 x 201 grid on [-3, 3]^2 marched back one time unit.

# In[3]:

grid = L.dp_solve_2d(lin_game, tgt, shape=(201, 201))
print(grid.values.shape, "snapshots x grid; dt =", grid.dt)
inside = np.mean(grid.values[0] <= 0)
print(f"backward reachable fraction of the box at t = -1: {inside:.3f} (target alone: {np.mean(grid.values[-1] <= 0):.3f})")


# ## Hopf oracle
#
# The linear game needs no grid. Each state is an independent small convex
# program over the costate, minimized over candidate horizons.

# In[4]:

m0 = D.OperatingPoint(np.zeros(2), [0.0], [0.0])
prob = H.HopfProblem(D.taylor_linearize(lin_game, m0), tgt, n_tau=101)
probes = np.random.default_rng(0).uniform(-2, 2, (20, 2))
hopf = np.array([H.hopf_solve(prob, q, -1.0, index=i).value for i, q in enumerate(probes)])
dp = L.interpolate(grid, probes, -1.0)
print("max |V_grid - V_hopf| over 20 probes:", np.max(np.abs(dp - hopf)))


# The grid error is first order: halving the spacing roughly halves it.

# In[5]:

coarse = L.dp_solve_2d(lin_game, tgt, shape=(101, 101))
e1 = np.max(np.abs(L.interpolate(coarse, probes, -1.0) - hopf))
e2 = np.max(np.abs(dp - hopf))
print(f"101^2 error {e1:.4f}, 201^2 error {e2:.4f}, ratio {e1 / e2:.2f}")


# ## Composition to N dimensions
#
# With identical parts, a diagonal state x_2 = ... = x_N gives (N-1) times the
# 2-D value, so the zero level set of the N-D value is the 2-D one.

# In[6]:

N = 10
orc = L.ComposedOracle([grid] * (N - 1))
s = np.random.default_rng(1).uniform(-3, 3, (5, 2))
diag = np.concatenate([s[:, :1], np.repeat(s[:, 1:], N - 1, axis=1)], axis=1)
print(orc.value(diag, -1.0))
print((N - 1) * L.interpolate(grid, s, -1.0))


# ## Nonlinear coupling
#
# alpha adds a publisher term alpha sin(x_1) x_1^2 that the Hopf formula cannot see. The gap
# between the linear and nonlinear grid values is what linear supervision
# has to be corrected for.

# In[7]:

nonlin = L.dp_solve_2d(D.pubsub_2d(alpha=20.0), tgt, shape=(201, 201))
gap = np.abs(nonlin.values[0] - grid.values[0])
print(f"max |V_alpha=20 - V_linear| at t = -1: {gap.max():.3f}")
print(f"BRT fraction: linear {np.mean(grid.values[0] <= 0):.3f}, alpha = 20 {np.mean(nonlin.values[0] <= 0):.3f}")
