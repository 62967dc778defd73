"""heatkato: desk-scale numerical checks for heat kernels, Kato-class
potentials, Feynman-Kac functionals and Schrodinger semigroup bounds on model
Riemannian manifolds."""

__version__ = "0.1.0"

from . import geometry, heat_kernel, kato, mvi, potentials, semigroup, stochastics  # noqa: F401
