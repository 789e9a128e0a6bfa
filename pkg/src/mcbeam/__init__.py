"""Multi-group multicast beamforming with per-antenna power caps.

Convex-concave outer iterations with ADMM inner solvers for power
minimisation under SINR targets, and bisection for max-min fairness.
"""

__version__ = "0.1.0"
