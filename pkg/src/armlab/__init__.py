"""Numerical laboratory for arm exponents of SLE_kappa (kappa in (4, 8))
and the critical random-cluster model on Z^2."""

__version__ = "0.1.0"
