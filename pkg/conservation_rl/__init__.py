"""
conservation_rl: ecological decision problems solved with optimal control and TD3.

The package ships two episodic environments (a stochastic fishery and an
ecosystem drifting towards a tipping point), classical baselines (constant
escapement, stochastic dynamic programming, the steady-state rule of thumb),
a from-scratch TD3 agent and the experiment layer that compares them.
"""

__version__ = "1.0.0"

__all__ = ["__version__"]
