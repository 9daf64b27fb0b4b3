"""Numerics for anisotropic varifolds: integrands on the Grassmannian, the
atomic condition, stationary counterexamples and blow-up diagnostics."""

__version__ = "0.1.0"
