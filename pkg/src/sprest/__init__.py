"""Patch displacement recovery with equilibrium constraints and recovered-solution
error estimation for 2D linear elasticity."""

__version__ = "0.1.0"
