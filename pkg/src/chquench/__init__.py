"""Boundary control of viscous Cahn-Hilliard with dynamic boundary conditions
and double-obstacle potentials, approached through logarithmic barriers."""

__version__ = "0.1.0"
