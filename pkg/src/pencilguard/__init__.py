"""Eigenvalue-pencil analysis of time-frequency images for adversarial
input detection, plus the desk-scale models, attacks and audio front end
needed to exercise it end to end."""

__version__ = "0.1.0"

from .backend import BACKEND
from .pencil import (
    INDETERMINATE,
    INFINITE,
    GeneralizedEigenvalues,
    Pencil,
    QzFactorization,
    det_pencil_probe,
    generalized_eigenvalues,
    hessenberg_triangular_reduce,
    inverse_identity_check,
    qz_decompose,
    schur_eigenvalues,
)

__all__ = [
    "BACKEND",
    "GeneralizedEigenvalues",
    "INDETERMINATE",
    "INFINITE",
    "Pencil",
    "QzFactorization",
    "det_pencil_probe",
    "generalized_eigenvalues",
    "hessenberg_triangular_reduce",
    "inverse_identity_check",
    "qz_decompose",
    "schur_eigenvalues",
    "__version__",
]
