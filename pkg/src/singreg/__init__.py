"""Variational problems with singular convex potentials, discretized on boxes.

Submodules: :mod:`qtensor`, :mod:`sphere_quadrature`, :mod:`potentials`,
:mod:`energy`, :mod:`minimize`, :mod:`regularity`, :mod:`config` and
:mod:`cli`.
"""

__version__ = "0.1.0"
