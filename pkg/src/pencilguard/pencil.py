"""Generalized Schur (QZ) decomposition of matrix pencils and eigenvalue
extraction with a canonical ordering.

A pencil is the pair (m1, m2) standing for the family ``m1 - lam * m2``.
``qz_decompose`` produces unitary q, z and upper-triangular t, s with

    q^H m1 z = t,    q^H m2 z = s,

so the generalized eigenvalues are the diagonal ratios ``t_ii / s_ii``.
Ratios with a negligible denominator are flagged INFINITE (or INDETERMINATE
when the numerator is negligible too, in which case a seeded replacement
value keeps downstream feature vectors finite).
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import backend
from .exceptions import (
    ConvergenceFailure,
    DimensionMismatch,
    NonFiniteInput,
    OrderTooLarge,
    SingularM2,
)


class _Marker:
    """Singleton tag for eigenvalues without a finite ratio."""

    __slots__ = ("_name",)

    def __init__(self, name):
        self._name = name

    def __repr__(self):
        return self._name


INFINITE = _Marker("INFINITE")
INDETERMINATE = _Marker("INDETERMINATE")


def as_complex_matrix(m, name="matrix"):
    """Validate a square 2-d array and promote it to complex128."""
    a = np.asarray(m)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"{name} must be square 2-d, got shape {a.shape}")
    a = np.array(a, dtype=np.complex128, copy=True, order="C")
    if not np.all(np.isfinite(a.real)) or not np.all(np.isfinite(a.imag)):
        raise NonFiniteInput(f"{name} contains NaN or Inf")
    return a


@dataclass(frozen=True)
class Pencil:
    """Validated pair (m1, m2) of equally sized square complex matrices."""

    m1: np.ndarray
    m2: np.ndarray

    def __post_init__(self):
        m1 = as_complex_matrix(self.m1, "m1")
        m2 = as_complex_matrix(self.m2, "m2")
        if m1.shape != m2.shape:
            raise DimensionMismatch(
                f"pencil members disagree: {m1.shape} vs {m2.shape}"
            )
        object.__setattr__(self, "m1", m1)
        object.__setattr__(self, "m2", m2)

    @property
    def n(self):
        return self.m1.shape[0]


@dataclass(frozen=True)
class QzFactorization:
    """Result of :func:`qz_decompose`; satisfies q^H m1 z = t, q^H m2 z = s."""

    q: np.ndarray
    z: np.ndarray
    t: np.ndarray
    s: np.ndarray
    residual_t: float
    residual_s: float
    iterations_used: int

    @property
    def n(self):
        return self.t.shape[0]


@dataclass(frozen=True)
class GeneralizedEigenvalues:
    """Diagonal pairs and eigenvalue ratios in canonical order.

    Canonical order: INFINITE entries first (by descending |alpha|, then
    descending phase), then finite entries by descending modulus with ties
    broken by descending phase.  ``values`` holds the ratio for finite
    entries, the seeded replacement for INDETERMINATE ones, and complex
    infinity as a sentinel where ``infinite`` is set.
    """

    alphas: np.ndarray
    betas: np.ndarray
    values: np.ndarray
    infinite: np.ndarray
    indeterminate: np.ndarray
    tol_beta: float

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def pairs(self):
        return list(zip(self.alphas.tolist(), self.betas.tolist()))

    @property
    def lambdas(self):
        """Eigenvalues with markers in place of non-finite ratios."""
        out = []
        for i in range(self.n):
            if self.infinite[i]:
                out.append(INFINITE)
            elif self.indeterminate[i]:
                out.append(INDETERMINATE)
            else:
                out.append(complex(self.values[i]))
        return out


def hessenberg_triangular_reduce(pencil):
    """Rotate (m1, m2) to (upper Hessenberg, upper triangular) form.

    Returns (q0, z0, h, r) with ``q0^H m1 z0 = h`` and ``q0^H m2 z0 = r``.
    """
    h = pencil.m1.copy()
    r = pencil.m2.copy()
    n = pencil.n
    q = np.eye(n, dtype=np.complex128)
    z = np.eye(n, dtype=np.complex128)
    backend.hessenberg_triangular(h, r, q, z)
    return q, z, h, r


def qz_decompose(pencil, max_sweeps=None, tol=1e-12):
    """Full generalized Schur decomposition of a pencil.

    Raises ConvergenceFailure when the trailing block has not deflated
    within ``max_sweeps`` (default ``30 * n``) shifted sweeps.
    """
    n = pencil.n
    if max_sweeps is None:
        max_sweeps = 30 * n
    t = pencil.m1.copy()
    s = pencil.m2.copy()
    q = np.eye(n, dtype=np.complex128)
    z = np.eye(n, dtype=np.complex128)
    backend.hessenberg_triangular(t, s, q, z)
    sweeps, info = backend.qz_iterate(t, s, q, z, max_sweeps, tol)
    if info:
        raise ConvergenceFailure(
            f"QZ iteration did not converge within {max_sweeps} sweeps "
            f"(trailing block of order {info})",
            block_size=info,
        )
    t = np.triu(t)
    s = np.triu(s)
    scale1 = max(1.0, float(np.linalg.norm(pencil.m1)))
    scale2 = max(1.0, float(np.linalg.norm(pencil.m2)))
    residual_t = float(np.linalg.norm(q.conj().T @ pencil.m1 @ z - t)) / scale1
    residual_s = float(np.linalg.norm(q.conj().T @ pencil.m2 @ z - s)) / scale2
    return QzFactorization(
        q=q, z=z, t=t, s=s,
        residual_t=residual_t, residual_s=residual_s,
        iterations_used=sweeps,
    )


def _canonical_order(values, infinite, alphas):
    """Permutation: INFINITE first, then descending modulus / phase."""
    cls = np.where(infinite, 0, 1)
    ref = np.where(infinite, alphas, values)
    mag = np.abs(ref)
    phase = np.angle(ref)
    # lexsort: last key is primary
    return np.lexsort((-phase, -mag, cls))


def generalized_eigenvalues(fact, tol_beta=None, seed=0):
    """Extract eigenvalue pairs from a factorization, canonically ordered.

    ``tol_beta`` defaults to ``1e-12 * ||s||_F / n``.  An entry with
    ``|beta| <= tol_beta`` is INFINITE when ``|alpha| > tol_beta`` and
    INDETERMINATE otherwise; indeterminate entries are replaced by the
    median of their nearest defined diagonal ratios times ``(1 + u)`` with
    ``u`` drawn uniformly from [-1e-3, 1e-3] under ``seed``.
    """
    alphas = fact.t.diagonal().copy()
    betas = fact.s.diagonal().copy()
    n = alphas.shape[0]
    if tol_beta is None:
        tol_beta = 1e-12 * float(np.linalg.norm(fact.s)) / max(n, 1)
    small_b = np.abs(betas) <= tol_beta
    infinite = small_b & (np.abs(alphas) > tol_beta)
    indeterminate = small_b & ~infinite
    values = np.full(n, np.inf + 0j, dtype=np.complex128)
    defined = ~small_b
    values[defined] = alphas[defined] / betas[defined]

    if np.any(indeterminate):
        rng = np.random.default_rng(seed)
        defined_idx = np.flatnonzero(defined)
        for i in np.flatnonzero(indeterminate):
            u = rng.uniform(-1e-3, 1e-3)
            if defined_idx.size:
                order = np.argsort(np.abs(defined_idx - i), kind="stable")
                near = values[defined_idx[order[:4]]]
                base = complex(np.median(near.real), np.median(near.imag))
            else:
                base = 1.0 + 0j
            values[i] = base * (1.0 + u)

    perm = _canonical_order(values, infinite, alphas)
    return GeneralizedEigenvalues(
        alphas=alphas[perm],
        betas=betas[perm],
        values=np.where(infinite[perm], np.inf + 0j, values[perm]),
        infinite=infinite[perm],
        indeterminate=indeterminate[perm],
        tol_beta=float(tol_beta),
    )


def schur_eigenvalues(m, max_sweeps=None, tol=1e-12, seed=0):
    """Eigenvalues of a single matrix via the pencil (m, I).

    Runs the exact same QZ code path and then normalizes every pair to
    ``(lambda, 1)``; with m2 = I no infinite ratios can occur.
    """
    m = as_complex_matrix(m, "m")
    pencil = Pencil(m, np.eye(m.shape[0]))
    fact = qz_decompose(pencil, max_sweeps=max_sweeps, tol=tol)
    ev = generalized_eigenvalues(fact, seed=seed)
    if np.any(ev.infinite) or np.any(ev.indeterminate):
        raise ConvergenceFailure(
            "pencil (m, I) produced non-finite ratio; s diagonal degenerate"
        )
    lam = ev.values.copy()
    return GeneralizedEigenvalues(
        alphas=lam.copy(),
        betas=np.ones_like(lam),
        values=lam,
        infinite=np.zeros(lam.shape[0], dtype=bool),
        indeterminate=np.zeros(lam.shape[0], dtype=bool),
        tol_beta=ev.tol_beta,
    )


def det_pencil_probe(pencil, fact, lambda_probe):
    """Evaluate both sides of the determinant identity at one probe point.

    lhs: ``det(m1 - lam * m2)`` by LU with partial pivoting.
    rhs: ``det(q z^H) * prod(t_ii - lam * s_ii)``.
    Guarded to n <= 12 where direct determinants are cheap and stable.
    """
    if pencil.n > 12:
        raise OrderTooLarge(f"det probe limited to n <= 12, got {pencil.n}")
    lam = complex(lambda_probe)
    lhs = complex(np.linalg.det(pencil.m1 - lam * pencil.m2))
    det_qz = complex(np.linalg.det(fact.q @ fact.z.conj().T))
    rhs = det_qz * complex(np.prod(fact.t.diagonal() - lam * fact.s.diagonal()))
    return lhs, rhs


def inverse_identity_check(pencil, fact):
    """Relative residual of ``z^H (m2^{-1} q) == s^{-1}``.

    Requires m2 nonsingular; a coarse SVD condition estimate >= 1e12
    raises SingularM2.
    """
    if pencil.n > 64:
        raise OrderTooLarge(
            f"inverse identity check limited to n <= 64, got {pencil.n}"
        )
    cond = float(np.linalg.cond(pencil.m2))
    if not np.isfinite(cond) or cond >= 1e12:
        raise SingularM2(f"m2 condition estimate {cond:.3e} >= 1e12")
    x = np.linalg.solve(pencil.m2, fact.q)
    lhs = fact.z.conj().T @ x
    s_inv = scipy.linalg.solve_triangular(fact.s, np.eye(pencil.n))
    return float(np.linalg.norm(lhs - s_inv) / np.linalg.norm(s_inv))
