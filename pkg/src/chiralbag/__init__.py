"""Chiral bag boundary problems for the Dirac operator on half-spaces and hemispheres.

Modules: ``clifford`` (gamma matrices and boundary projectors), ``fields``
(closed-form spinors), ``geometry`` (Fermi-chart expansions), ``dirac_disc``
(sparse discretization), ``spectral`` (eigensolvers and checks),
``functionals`` (variational quotients and bubble scans) and ``cli``.
"""

from .clifford import CliffordRep, admissible_basis, build_rep, chiral_projector, verify_relations
from .spectral import dirac_eigs, sphere_constant

__all__ = [
    "CliffordRep",
    "admissible_basis",
    "build_rep",
    "chiral_projector",
    "dirac_eigs",
    "sphere_constant",
    "verify_relations",
]

__version__ = "0.1.0"
