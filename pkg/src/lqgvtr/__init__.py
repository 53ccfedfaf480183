"""Numerical toolkit for linear-quadratic-Gaussian control and online learning.

Layers, from the bottom up:

* ``riccati``     -- discrete Riccati/Lyapunov solvers and stability diagnostics
* ``lqg``         -- LQG systems, simulation, Kalman filtering, optimal costs
* ``model_class`` -- finite candidate-system classes with assumption validators
* ``vtr``         -- the online value-target-regression learner (warm-up,
                     clipped histories, confidence sets, low-switching control)
* ``harness``     -- transfer-gap evaluation over a candidate class
* ``cli``         -- config-driven experiment runner
"""

__version__ = "0.1.0"
