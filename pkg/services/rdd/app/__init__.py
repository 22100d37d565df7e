"""Bayesian nonparametric regression discontinuity analysis"""

__version__ = "1.0.0"
