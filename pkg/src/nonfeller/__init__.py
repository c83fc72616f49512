"""Diffusions on [0, 1] with dynamic boundary conditions ``u_t = -+sigma u_x``.

Submodules: ``kernel`` (absorbed heat kernels and exit densities),
``riccati`` (boundary densities ``J`` and the matrix ``B``), ``semigroup``
(Volterra and finite-difference solvers), ``mc`` (path simulation),
``analysis`` (defect, growth modes, nonnegativity) and ``cli``.
"""

from __future__ import annotations

from .errors import DomainError, NumericalError
from .riccati import ModelParams, Regime, RiccatiSolution, solve_riccati
from .semigroup import BoundaryFunction, SpaceTimeField, VolterraConfig, fd_solve, solve

__all__ = [
    "BoundaryFunction",
    "DomainError",
    "ModelParams",
    "NumericalError",
    "Regime",
    "RiccatiSolution",
    "SpaceTimeField",
    "VolterraConfig",
    "fd_solve",
    "solve",
    "solve_riccati",
]
