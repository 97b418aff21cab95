"""Numerical laboratory for (p,q)-growth variational problems in the plane.

Submodules: ``integrand`` (energy densities, mollification, growth
certification), ``grid`` (lattice discretization and field operations),
``solver`` (Newton minimization and linear elliptic solves), ``estimates``
(measurable forms of the regularity inequalities) and ``cli``.
"""
__version__ = "0.1.0"

from .kernels import BACKEND  # noqa: E402

__all__ = ["BACKEND", "__version__"]
