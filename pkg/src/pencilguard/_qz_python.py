"""Pure-numpy QZ kernel.

Reduces a complex pencil (A, B) to generalized Schur form with unitary Q, Z:
``Q^H A Z`` upper triangular and ``Q^H B Z`` upper triangular.  The compiled
module ``_qz_cython`` implements the same two entry points with identical
arithmetic; whichever is importable gets picked by :mod:`pencilguard.backend`.

All transformations are complex Givens rotations

    G = [[c, s], [-conj(s), c]],  c real >= 0,  c^2 + |s|^2 = 1,

applied to rows from the left and to columns from the right.  The iteration
is the single-shift implicit QZ with:

* relative deflation test on subdiagonals of H,
* relative test (against diagonal neighbours) for negligible diagonals of T,
  which are chased to the edge of the active block and split off as infinite
  eigenvalues,
* Wilkinson shift from the trailing 2x2 of the quotient pencil, and an
  ad-hoc exceptional shift every 10 stalled sweeps.
"""

import math

import numpy as np

BACKEND_NAME = "python"

_SAFMIN = 2.2250738585072014e-308  # smallest normal double


def _csqrt(z):
    """Principal complex square root, same formula as the compiled kernel."""
    re = z.real
    im = z.imag
    mod = math.hypot(re, im)
    if mod == 0.0:
        return 0j
    t = math.sqrt(0.5 * (mod + abs(re)))
    if re >= 0.0:
        return complex(t, im / (2.0 * t))
    return complex(abs(im) / (2.0 * t), math.copysign(t, im))


def _rotg(f, g):
    """Return (c, s, r): [[c, s], [-conj(s), c]] @ [f, g] == [r, 0]."""
    f = complex(f)
    g = complex(g)
    af = math.hypot(f.real, f.imag)
    ag = math.hypot(g.real, g.imag)
    if ag == 0.0:
        return 1.0, 0j, f
    if af == 0.0:
        s = g.conjugate() / ag
        return 0.0, s, complex(ag)
    m = af if af >= ag else ag
    fn = f / m
    gn = g / m
    d = math.sqrt(
        (fn.real * fn.real + fn.imag * fn.imag)
        + (gn.real * gn.real + gn.imag * gn.imag)
    )
    c = (af / m) / d
    fs = f / af
    s = (fs * gn.conjugate()) / d
    r = fs * (m * d)
    return c, s, r


def _rot(vx, vy, c, s):
    """In place: [vx, vy] <- [[c, s], [-conj(s), c]] @ [vx, vy]."""
    x = vx.copy()
    vx[...] = c * x + s * vy
    vy[...] = c * vy - np.conjugate(s) * x


def hessenberg_triangular(a, b, q, z):
    """In-place reduction: a -> upper Hessenberg, b -> upper triangular.

    Accumulates the left rotations into q and the right rotations into z so
    that the originals equal ``q @ a @ z.conj().T`` and ``q @ b @ z.conj().T``.
    """
    n = a.shape[0]
    # Stage 1: QR of b by rotations, applied to a as well.
    for j in range(n - 1):
        for i in range(n - 1, j, -1):
            if b[i, j] == 0:
                continue
            c, s, r = _rotg(b[i - 1, j], b[i, j])
            b[i - 1, j] = r
            b[i, j] = 0
            _rot(b[i - 1, j + 1:], b[i, j + 1:], c, s)
            _rot(a[i - 1, :], a[i, :], c, s)
            _rot(q[:, i - 1], q[:, i], c, s.conjugate())
    # Stage 2: chase a to Hessenberg while keeping b triangular.
    for j in range(n - 2):
        for i in range(n - 1, j + 1, -1):
            if a[i, j] == 0:
                continue
            c, s, r = _rotg(a[i - 1, j], a[i, j])
            a[i - 1, j] = r
            a[i, j] = 0
            _rot(a[i - 1, j + 1:], a[i, j + 1:], c, s)
            _rot(b[i - 1, i - 1:], b[i, i - 1:], c, s)
            _rot(q[:, i - 1], q[:, i], c, s.conjugate())
            # the row rotation filled b[i, i-1]
            c, s, r = _rotg(b[i, i], b[i, i - 1])
            b[i, i] = r
            b[i, i - 1] = 0
            _rot(b[0:i, i], b[0:i, i - 1], c, s)
            _rot(a[:, i], a[:, i - 1], c, s)
            _rot(z[:, i], z[:, i - 1], c, s)


def _deflate_inf_bottom(h, t, z, ilast):
    """With t[ilast, ilast] == 0, zero h[ilast, ilast-1] from the right."""
    c, s, r = _rotg(h[ilast, ilast], h[ilast, ilast - 1])
    h[ilast, ilast] = r
    h[ilast, ilast - 1] = 0
    _rot(h[0:ilast, ilast], h[0:ilast, ilast - 1], c, s)
    _rot(t[0:ilast, ilast], t[0:ilast, ilast - 1], c, s)
    _rot(z[:, ilast], z[:, ilast - 1], c, s)


def _wilkinson_shift(h, t, ilast):
    """Eigenvalue of the trailing 2x2 of h t^{-1} nearest its (2,2) entry."""
    t11 = complex(t[ilast - 1, ilast - 1])
    t22 = complex(t[ilast, ilast])
    if abs(t11) < _SAFMIN:
        t11 = complex(_SAFMIN)
    if abs(t22) < _SAFMIN:
        t22 = complex(_SAFMIN)
    ad11 = complex(h[ilast - 1, ilast - 1]) / t11
    ad21 = complex(h[ilast, ilast - 1]) / t11
    ad12 = complex(h[ilast - 1, ilast]) / t22
    ad22 = complex(h[ilast, ilast]) / t22
    u12 = complex(t[ilast - 1, ilast]) / t22
    abi22 = ad22 - u12 * ad21
    abi12 = ad12 - u12 * ad11
    mean = 0.5 * (ad11 + abi22)
    det = ad11 * abi22 - abi12 * ad21
    disc = _csqrt(mean * mean - det)
    r1 = mean + disc
    r2 = mean - disc
    if abs(r1 - abi22) <= abs(r2 - abi22):
        return r1
    return r2


def qz_iterate(h, t, q, z, max_sweeps, tol):
    """Drive (h, t) to triangular form in place.  Returns (sweeps, info).

    ``info`` is 0 on success, otherwise the order of the trailing block that
    had not deflated when the sweep budget ran out.
    """
    n = h.shape[0]
    if n == 0:
        return 0, 0

    def htol(i):
        # relative test for subdiagonal h[i, i-1]
        return max(_SAFMIN, tol * (abs(h[i - 1, i - 1]) + abs(h[i, i])))

    def btol(i):
        # relative test for diagonal t[i, i] against its diagonal neighbours
        lo = abs(t[i - 1, i - 1]) if i > 0 else 0.0
        hi = abs(t[i + 1, i + 1]) if i + 1 < n else 0.0
        return max(_SAFMIN, tol * (lo + hi))

    ilast = n - 1
    eshift = 0j
    iiter = 0
    sweeps = 0
    while ilast >= 0:
        if ilast == 0:
            ilast -= 1
            iiter = 0
            eshift = 0j
            continue
        if abs(h[ilast, ilast - 1]) <= htol(ilast):
            h[ilast, ilast - 1] = 0
            ilast -= 1
            iiter = 0
            eshift = 0j
            continue
        if abs(t[ilast, ilast]) <= btol(ilast):
            t[ilast, ilast] = 0
            _deflate_inf_bottom(h, t, z, ilast)
            ilast -= 1
            iiter = 0
            eshift = 0j
            continue

        # scan upwards for a place to split the active block
        ifirst = -1
        action = None
        for j in range(ilast - 1, -1, -1):
            if j == 0:
                ilazro = True
            elif abs(h[j, j - 1]) <= htol(j):
                h[j, j - 1] = 0
                ilazro = True
            else:
                ilazro = False
            if abs(t[j, j]) <= btol(j):
                t[j, j] = 0
                action = ("inf_top", j) if ilazro else ("inf_chase", j)
                break
            if ilazro:
                ifirst = j
                action = ("sweep", j)
                break
        # the scan always terminates: j == 0 forces ilazro

        if action[0] == "inf_top":
            # t[j, j] == 0 at the top of the block: split off infinite
            # eigenvalues by zeroing subdiagonals of h downwards.
            j = action[1]
            resume_sweep = False
            deflated = False
            for jch in range(j, ilast):
                c, s, r = _rotg(h[jch, jch], h[jch + 1, jch])
                h[jch, jch] = r
                h[jch + 1, jch] = 0
                _rot(h[jch, jch + 1:], h[jch + 1, jch + 1:], c, s)
                _rot(t[jch, jch + 1:], t[jch + 1, jch + 1:], c, s)
                _rot(q[:, jch], q[:, jch + 1], c, s.conjugate())
                if abs(t[jch + 1, jch + 1]) >= btol(jch + 1):
                    if jch + 1 >= ilast:
                        ilast -= 1
                        iiter = 0
                        eshift = 0j
                        deflated = True
                    else:
                        ifirst = jch + 1
                        resume_sweep = True
                    break
                t[jch + 1, jch + 1] = 0
            else:
                # chased the zero into t[ilast, ilast]
                _deflate_inf_bottom(h, t, z, ilast)
                ilast -= 1
                iiter = 0
                eshift = 0j
                deflated = True
            if deflated:
                continue
            if not resume_sweep:
                continue
        elif action[0] == "inf_chase":
            # t[j, j] == 0 strictly inside the block: chase the zero down
            # the diagonal of t, then deflate at the bottom.
            j = action[1]
            for jch in range(j, ilast):
                c, s, r = _rotg(t[jch, jch + 1], t[jch + 1, jch + 1])
                t[jch, jch + 1] = r
                t[jch + 1, jch + 1] = 0
                if jch < n - 2:
                    _rot(t[jch, jch + 2:], t[jch + 1, jch + 2:], c, s)
                _rot(h[jch, jch - 1:], h[jch + 1, jch - 1:], c, s)
                _rot(q[:, jch], q[:, jch + 1], c, s.conjugate())
                c, s, r = _rotg(h[jch + 1, jch], h[jch + 1, jch - 1])
                h[jch + 1, jch] = r
                h[jch + 1, jch - 1] = 0
                _rot(h[0:jch + 1, jch], h[0:jch + 1, jch - 1], c, s)
                _rot(t[0:jch, jch], t[0:jch, jch - 1], c, s)
                _rot(z[:, jch], z[:, jch - 1], c, s)
            t[ilast, ilast] = 0
            _deflate_inf_bottom(h, t, z, ilast)
            ilast -= 1
            iiter = 0
            eshift = 0j
            continue

        # QZ sweep on rows/columns ifirst..ilast
        sweeps += 1
        iiter += 1
        if sweeps > max_sweeps:
            return sweeps, ilast + 1
        if iiter % 10 == 0:
            den = complex(t[ilast - 1, ilast - 1])
            if abs(den) < _SAFMIN:
                den = complex(_SAFMIN)
            eshift = eshift + complex(h[ilast, ilast - 1]) / den
            shift = eshift
        else:
            shift = _wilkinson_shift(h, t, ilast)

        f = h[ifirst, ifirst] - shift * t[ifirst, ifirst]
        g = h[ifirst + 1, ifirst]
        for jj in range(ifirst, ilast):
            if jj > ifirst:
                f = h[jj, jj - 1]
                g = h[jj + 1, jj - 1]
            c, s, r = _rotg(f, g)
            if jj > ifirst:
                h[jj, jj - 1] = r
                h[jj + 1, jj - 1] = 0
            _rot(h[jj, jj:], h[jj + 1, jj:], c, s)
            _rot(t[jj, jj:], t[jj + 1, jj:], c, s)
            _rot(q[:, jj], q[:, jj + 1], c, s.conjugate())
            c, s, r = _rotg(t[jj + 1, jj + 1], t[jj + 1, jj])
            t[jj + 1, jj + 1] = r
            t[jj + 1, jj] = 0
            mrow = min(jj + 2, ilast) + 1
            _rot(h[0:mrow, jj + 1], h[0:mrow, jj], c, s)
            _rot(t[0:jj + 1, jj + 1], t[0:jj + 1, jj], c, s)
            _rot(z[:, jj + 1], z[:, jj], c, s)
    return sweeps, 0
