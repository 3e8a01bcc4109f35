"""Numerical stochastic homogenization with Orlicz-growth energies."""
__version__ = "0.1.0"
