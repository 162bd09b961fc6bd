"""Hamilton-Jacobi values for nonlinear games, learned with linear supervision."""
from .dynamics import (AVOID, REACH, T_FINAL, AffineInputSystem, LinearTVSystem, OperatingPoint,
                       QuadraticTarget, SpectrumSystem, hamiltonian, pubsub_2d, pubsub_nd, pubsub_target,
                       quadrotor, quadrotor_target, taylor_linearize)
from .hopf import HopfProblem, hopf_solve
from .levelset import ComposedOracle, ValueGrid2D, dp_solve_2d
from .net import SirenValueNet, init_siren, load_checkpoint, save_checkpoint
from .training import TrainConfig, Trainer

__version__ = "0.1.0"
