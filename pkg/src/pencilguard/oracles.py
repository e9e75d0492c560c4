"""Brute-force reference computations for small problems.

These deliberately avoid the QZ code path (and each other) so they can act
as independent ground truth in tests:

* ``pencil_charpoly`` expands ``det(m1 - lam * m2)`` exactly over polynomial
  entries via memoized Laplace expansion (n <= 8),
* ``charpoly_eigenvalues`` finds its roots with the companion-matrix solver
  behind ``numpy.roots``,
* ``hermitian_eigenvalues_jacobi`` is a classic cyclic Jacobi sweep for
  Hermitian matrices,
* ``spectral_norm_oracle`` takes the largest singular value from the Jacobi
  spectrum of ``delta^H delta``.
"""

import numpy as np
from scipy.optimize import linear_sum_assignment

from .exceptions import NoConvergence, OrderTooLarge
from .pencil import as_complex_matrix


def pencil_charpoly(m1, m2):
    """Coefficients of det(m1 - lam*m2), ascending order, length n + 1."""
    m1 = as_complex_matrix(m1, "m1")
    m2 = as_complex_matrix(m2, "m2")
    n = m1.shape[0]
    if n > 8:
        raise OrderTooLarge(f"charpoly expansion limited to n <= 8, got {n}")
    # entry polynomials: p[i][j] = m1[i, j] - lam * m2[i, j]
    const = m1
    slope = -m2
    # D[mask] = det of the submatrix on rows 0..k-1 and the columns in mask,
    # where k = popcount(mask); expansion along the last row.
    full = (1 << n) - 1
    det = {0: np.array([1.0 + 0j])}
    for mask in range(1, full + 1):
        k = bin(mask).count("1")
        row = k - 1
        acc = np.zeros(k + 1, dtype=np.complex128)
        idx = 0
        for j in range(n):
            if not (mask >> j) & 1:
                continue
            sub = det[mask & ~(1 << j)]
            parity = 1.0 if ((row + idx) % 2 == 0) else -1.0
            # multiply sub by the linear entry polynomial and accumulate
            acc[: sub.size] += parity * const[row, j] * sub
            acc[1 : sub.size + 1] += parity * slope[row, j] * sub
            idx += 1
        det[mask] = acc
    return det[full][: n + 1]


def charpoly_eigenvalues(m1, m2):
    """(finite roots, number of infinite eigenvalues) of the pencil."""
    coeffs = pencil_charpoly(m1, m2)
    n = m1.shape[0]
    # descending order for numpy.roots; degree drop = infinite eigenvalues
    desc = coeffs[::-1].copy()
    scale = np.max(np.abs(desc))
    if scale == 0.0:
        return np.zeros(0, dtype=np.complex128), 0
    keep = np.abs(desc) > 1e-13 * scale
    lead = int(np.argmax(keep))  # first significant coefficient
    trimmed = desc[lead:]
    n_inf = lead
    if trimmed.size <= 1:
        return np.zeros(0, dtype=np.complex128), n_inf
    roots = np.roots(trimmed)
    return roots.astype(np.complex128), n_inf


def match_eigenvalues(reference, candidate):
    """Permutation p minimizing sum of relative gaps |ref_i - cand_p(i)|."""
    a = np.asarray(reference, dtype=np.complex128)
    b = np.asarray(candidate, dtype=np.complex128)
    if a.size != b.size:
        raise OrderTooLarge(
            f"cannot match {a.size} eigenvalues against {b.size}"
        )
    denom = 1.0 + np.maximum(np.abs(a)[:, None], np.abs(b)[None, :])
    cost = np.abs(a[:, None] - b[None, :]) / denom
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(a.size, dtype=np.intp)
    perm[rows] = cols
    return perm


def hermitian_eigenvalues_jacobi(h, tol=1e-14, max_sweeps=60):
    """Eigenvalues of a Hermitian matrix by cyclic complex Jacobi sweeps."""
    a = as_complex_matrix(h, "h")
    n = a.shape[0]
    if n > 32:
        raise OrderTooLarge(f"Jacobi oracle limited to n <= 32, got {n}")
    if n == 0:
        return np.zeros(0)
    norm = np.linalg.norm(a)
    if norm == 0.0:
        return np.zeros(n)
    for _ in range(max_sweeps):
        off = np.sqrt(max(np.linalg.norm(a) ** 2 - np.linalg.norm(a.diagonal()) ** 2, 0.0))
        if off <= tol * norm:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                mod = abs(apq)
                if mod <= 1e-300:
                    continue
                phase = apq / mod
                app = a[p, p].real
                aqq = a[q, q].real
                tau = (aqq - app) / (2.0 * mod)
                if tau >= 0:
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                j2 = np.array(
                    [[c, s], [-s * np.conj(phase), c * np.conj(phase)]],
                    dtype=np.complex128,
                )
                a[:, [p, q]] = a[:, [p, q]] @ j2
                a[[p, q], :] = j2.conj().T @ a[[p, q], :]
    else:
        raise NoConvergence("Jacobi sweeps did not reach tolerance")
    return np.sort(a.diagonal().real)


def spectral_norm_oracle(delta):
    """Largest singular value of delta via the Jacobi spectrum of d^H d."""
    d = np.asarray(delta, dtype=np.complex128)
    gram = d.conj().T @ d
    evals = hermitian_eigenvalues_jacobi(gram)
    return float(np.sqrt(max(float(evals[-1]), 0.0)))
