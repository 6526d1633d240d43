"""Simulation and numerical stability checking for hybrid systems with memory.

Flows with delayed arguments, timer-driven jumps, Krasovskii functionals and
trajectory-level stability bounds, with a saturated quadcopter position loop
as the built-in reference system.
"""

__version__ = "0.1.0"
