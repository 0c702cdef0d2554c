"""Simulation and adversarial training of tunable-observable expectation-value samplers."""

__version__ = "0.1.0"
