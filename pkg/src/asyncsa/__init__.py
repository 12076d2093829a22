"""Asynchronous stochastic approximation with set-valued mean fields.

Simulation engines for single and two-timescale asynchronous recursions,
differential-inclusion flow sampling, assumption diagnostics, and an
actor-critic learner for discounted Markov decision processes.
"""

__version__ = "0.1.0"
