"""Monotone traveling fronts of the delayed KPP-Fisher equation.

``u_t = Laplacian(u) + u (1 - u(t - h))`` has monotone fronts
``u = phi(nu.x + c t)`` for some ``(h, c)`` and not for others. This package
classifies ``(h, c)``, computes the fronts by monotone iteration of integral
operators started from explicit lower solutions, and checks the results
against exact and asymptotic information.

Modules
-------
charroots
    Characteristic roots, critical curves and the region classifier.
profiles
    Grid profiles and the explicit lower/upper solutions.
operators
    The integral operators, the monotone iteration and residual checks.
analysis
    Tail-expansion fits and the exactly solvable benchmark front.
pipeline
    End-to-end solve for one parameter pair.
cli
    The ``kppfront`` command line tool.
"""
from .charroots import ModelParams, classify, critical_constants, root_data
from .operators import OperatorConfig, OpKind, apply, iterate
from .pipeline import SolveResult, solve
from .profiles import LeftTail, Profile, RightTail

__version__ = "0.1.0"

__all__ = [
    "ModelParams",
    "classify",
    "critical_constants",
    "root_data",
    "OperatorConfig",
    "OpKind",
    "apply",
    "iterate",
    "SolveResult",
    "solve",
    "LeftTail",
    "Profile",
    "RightTail",
]
