# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled QZ kernel: same reduction and iteration as ``_qz_python``,
with the rotation loops written out as C loops over typed memoryviews.

Keep the two modules in lockstep; any algorithmic change must land in both.
"""

from libc.math cimport copysign, hypot, sqrt

BACKEND_NAME = "cython"

ctypedef double complex dcomplex

cdef double _SAFMIN = 2.2250738585072014e-308


cdef inline double _cabs(dcomplex x) noexcept:
    return hypot(x.real, x.imag)


cdef inline dcomplex _csqrt(dcomplex z) noexcept:
    cdef double re = z.real
    cdef double im = z.imag
    cdef double mod = hypot(re, im)
    cdef double t
    if mod == 0.0:
        return 0.0
    t = sqrt(0.5 * (mod + (re if re >= 0.0 else -re)))
    if re >= 0.0:
        return t + 1j * (im / (2.0 * t))
    return ((im if im >= 0.0 else -im) / (2.0 * t)) + 1j * copysign(t, im)


cdef inline double _rotg(dcomplex f, dcomplex g, dcomplex* s_out, dcomplex* r_out) noexcept:
    """Return c and fill s, r with [[c, s], [-conj(s), c]] @ [f, g] == [r, 0]."""
    cdef double af = hypot(f.real, f.imag)
    cdef double ag = hypot(g.real, g.imag)
    cdef double m, d, c
    cdef dcomplex fn, gn, fs
    if ag == 0.0:
        s_out[0] = 0.0
        r_out[0] = f
        return 1.0
    if af == 0.0:
        s_out[0] = g.conjugate() / ag
        r_out[0] = ag
        return 0.0
    m = af if af >= ag else ag
    fn = f / m
    gn = g / m
    d = sqrt(
        (fn.real * fn.real + fn.imag * fn.imag)
        + (gn.real * gn.real + gn.imag * gn.imag)
    )
    c = (af / m) / d
    fs = f / af
    s_out[0] = (fs * gn.conjugate()) / d
    r_out[0] = fs * (m * d)
    return c


cdef inline void _rot_rows(dcomplex[:, ::1] m, Py_ssize_t i, Py_ssize_t j,
                           Py_ssize_t c0, Py_ssize_t c1,
                           double c, dcomplex s) noexcept:
    cdef Py_ssize_t k
    cdef dcomplex x, y
    cdef dcomplex cs = s.conjugate()
    for k in range(c0, c1):
        x = m[i, k]
        y = m[j, k]
        m[i, k] = c * x + s * y
        m[j, k] = c * y - cs * x


cdef inline void _rot_cols(dcomplex[:, ::1] m, Py_ssize_t a, Py_ssize_t b,
                           Py_ssize_t r0, Py_ssize_t r1,
                           double c, dcomplex s) noexcept:
    cdef Py_ssize_t k
    cdef dcomplex x, y
    cdef dcomplex cs = s.conjugate()
    for k in range(r0, r1):
        x = m[k, a]
        y = m[k, b]
        m[k, a] = c * x + s * y
        m[k, b] = c * y - cs * x


def hessenberg_triangular(object a_arr, object b_arr, object q_arr, object z_arr):
    """In-place reduction of (a, b) to (Hessenberg, triangular) form."""
    cdef dcomplex[:, ::1] a = a_arr
    cdef dcomplex[:, ::1] b = b_arr
    cdef dcomplex[:, ::1] q = q_arr
    cdef dcomplex[:, ::1] z = z_arr
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t i, j
    cdef double c
    cdef dcomplex s, r
    # Stage 1: QR of b by rotations, applied to a as well.
    for j in range(n - 1):
        for i in range(n - 1, j, -1):
            if b[i, j] == 0:
                continue
            c = _rotg(b[i - 1, j], b[i, j], &s, &r)
            b[i - 1, j] = r
            b[i, j] = 0
            _rot_rows(b, i - 1, i, j + 1, n, c, s)
            _rot_rows(a, i - 1, i, 0, n, c, s)
            _rot_cols(q, i - 1, i, 0, n, c, s.conjugate())
    # Stage 2: chase a to Hessenberg while keeping b triangular.
    for j in range(n - 2):
        for i in range(n - 1, j + 1, -1):
            if a[i, j] == 0:
                continue
            c = _rotg(a[i - 1, j], a[i, j], &s, &r)
            a[i - 1, j] = r
            a[i, j] = 0
            _rot_rows(a, i - 1, i, j + 1, n, c, s)
            _rot_rows(b, i - 1, i, i - 1, n, c, s)
            _rot_cols(q, i - 1, i, 0, n, c, s.conjugate())
            c = _rotg(b[i, i], b[i, i - 1], &s, &r)
            b[i, i] = r
            b[i, i - 1] = 0
            _rot_cols(b, i, i - 1, 0, i, c, s)
            _rot_cols(a, i, i - 1, 0, n, c, s)
            _rot_cols(z, i, i - 1, 0, n, c, s)


cdef inline double _htol(dcomplex[:, ::1] h, Py_ssize_t i, double tol) noexcept:
    cdef double v = tol * (_cabs(h[i - 1, i - 1]) + _cabs(h[i, i]))
    return v if v > _SAFMIN else _SAFMIN


cdef inline double _btol(dcomplex[:, ::1] t, Py_ssize_t i, Py_ssize_t n, double tol) noexcept:
    cdef double lo = _cabs(t[i - 1, i - 1]) if i > 0 else 0.0
    cdef double hi = _cabs(t[i + 1, i + 1]) if i + 1 < n else 0.0
    cdef double v = tol * (lo + hi)
    return v if v > _SAFMIN else _SAFMIN


cdef inline void _deflate_inf_bottom(dcomplex[:, ::1] h, dcomplex[:, ::1] t,
                                     dcomplex[:, ::1] z, Py_ssize_t ilast,
                                     Py_ssize_t n) noexcept:
    cdef double c
    cdef dcomplex s, r
    c = _rotg(h[ilast, ilast], h[ilast, ilast - 1], &s, &r)
    h[ilast, ilast] = r
    h[ilast, ilast - 1] = 0
    _rot_cols(h, ilast, ilast - 1, 0, ilast, c, s)
    _rot_cols(t, ilast, ilast - 1, 0, ilast, c, s)
    _rot_cols(z, ilast, ilast - 1, 0, n, c, s)


cdef dcomplex _wilkinson_shift(dcomplex[:, ::1] h, dcomplex[:, ::1] t,
                               Py_ssize_t ilast) noexcept:
    cdef dcomplex t11 = t[ilast - 1, ilast - 1]
    cdef dcomplex t22 = t[ilast, ilast]
    cdef dcomplex ad11, ad21, ad12, ad22, u12, abi22, abi12
    cdef dcomplex mean, det, disc, r1, r2
    if _cabs(t11) < _SAFMIN:
        t11 = _SAFMIN
    if _cabs(t22) < _SAFMIN:
        t22 = _SAFMIN
    ad11 = h[ilast - 1, ilast - 1] / t11
    ad21 = h[ilast, ilast - 1] / t11
    ad12 = h[ilast - 1, ilast] / t22
    ad22 = h[ilast, ilast] / t22
    u12 = t[ilast - 1, ilast] / t22
    abi22 = ad22 - u12 * ad21
    abi12 = ad12 - u12 * ad11
    mean = 0.5 * (ad11 + abi22)
    det = ad11 * abi22 - abi12 * ad21
    disc = _csqrt(mean * mean - det)
    r1 = mean + disc
    r2 = mean - disc
    if _cabs(r1 - abi22) <= _cabs(r2 - abi22):
        return r1
    return r2


def qz_iterate(object h_arr, object t_arr, object q_arr, object z_arr,
               long max_sweeps, double tol):
    """Drive (h, t) to triangular form in place.  Returns (sweeps, info)."""
    cdef dcomplex[:, ::1] h = h_arr
    cdef dcomplex[:, ::1] t = t_arr
    cdef dcomplex[:, ::1] q = q_arr
    cdef dcomplex[:, ::1] z = z_arr
    cdef Py_ssize_t n = h.shape[0]
    cdef Py_ssize_t ilast, ifirst, j, jch, jj, mrow
    cdef long sweeps = 0, iiter = 0
    cdef int action  # 0 sweep, 1 inf_top, 2 inf_chase
    cdef bint ilazro, resume_sweep, deflated
    cdef double c
    cdef dcomplex s, r, f, g, shift, den
    cdef dcomplex eshift = 0.0

    if n == 0:
        return 0, 0
    ilast = n - 1
    while ilast >= 0:
        if ilast == 0:
            ilast -= 1
            iiter = 0
            eshift = 0.0
            continue
        if _cabs(h[ilast, ilast - 1]) <= _htol(h, ilast, tol):
            h[ilast, ilast - 1] = 0
            ilast -= 1
            iiter = 0
            eshift = 0.0
            continue
        if _cabs(t[ilast, ilast]) <= _btol(t, ilast, n, tol):
            t[ilast, ilast] = 0
            _deflate_inf_bottom(h, t, z, ilast, n)
            ilast -= 1
            iiter = 0
            eshift = 0.0
            continue

        # scan upwards for a place to split the active block
        ifirst = -1
        action = -1
        j = ilast - 1
        while j >= 0:
            if j == 0:
                ilazro = True
            elif _cabs(h[j, j - 1]) <= _htol(h, j, tol):
                h[j, j - 1] = 0
                ilazro = True
            else:
                ilazro = False
            if _cabs(t[j, j]) <= _btol(t, j, n, tol):
                t[j, j] = 0
                action = 1 if ilazro else 2
                break
            if ilazro:
                ifirst = j
                action = 0
                break
            j -= 1

        if action == 1:
            # t[j, j] == 0 at the top of the block: split off infinite
            # eigenvalues by zeroing subdiagonals of h downwards.
            resume_sweep = False
            deflated = False
            jch = j
            while jch < ilast:
                c = _rotg(h[jch, jch], h[jch + 1, jch], &s, &r)
                h[jch, jch] = r
                h[jch + 1, jch] = 0
                _rot_rows(h, jch, jch + 1, jch + 1, n, c, s)
                _rot_rows(t, jch, jch + 1, jch + 1, n, c, s)
                _rot_cols(q, jch, jch + 1, 0, n, c, s.conjugate())
                if _cabs(t[jch + 1, jch + 1]) >= _btol(t, jch + 1, n, tol):
                    if jch + 1 >= ilast:
                        ilast -= 1
                        iiter = 0
                        eshift = 0.0
                        deflated = True
                    else:
                        ifirst = jch + 1
                        resume_sweep = True
                    break
                t[jch + 1, jch + 1] = 0
                jch += 1
            else:
                pass
            if jch == ilast and not deflated and not resume_sweep:
                # chased the zero into t[ilast, ilast]
                _deflate_inf_bottom(h, t, z, ilast, n)
                ilast -= 1
                iiter = 0
                eshift = 0.0
                continue
            if deflated:
                continue
            if not resume_sweep:
                continue
        elif action == 2:
            # t[j, j] == 0 strictly inside the block: chase the zero down
            # the diagonal of t, then deflate at the bottom.
            for jch in range(j, ilast):
                c = _rotg(t[jch, jch + 1], t[jch + 1, jch + 1], &s, &r)
                t[jch, jch + 1] = r
                t[jch + 1, jch + 1] = 0
                if jch < n - 2:
                    _rot_rows(t, jch, jch + 1, jch + 2, n, c, s)
                _rot_rows(h, jch, jch + 1, jch - 1, n, c, s)
                _rot_cols(q, jch, jch + 1, 0, n, c, s.conjugate())
                c = _rotg(h[jch + 1, jch], h[jch + 1, jch - 1], &s, &r)
                h[jch + 1, jch] = r
                h[jch + 1, jch - 1] = 0
                _rot_cols(h, jch, jch - 1, 0, jch + 1, c, s)
                _rot_cols(t, jch, jch - 1, 0, jch, c, s)
                _rot_cols(z, jch, jch - 1, 0, n, c, s)
            t[ilast, ilast] = 0
            _deflate_inf_bottom(h, t, z, ilast, n)
            ilast -= 1
            iiter = 0
            eshift = 0.0
            continue

        # QZ sweep on rows/columns ifirst..ilast
        sweeps += 1
        iiter += 1
        if sweeps > max_sweeps:
            return sweeps, ilast + 1
        if iiter % 10 == 0:
            den = t[ilast - 1, ilast - 1]
            if _cabs(den) < _SAFMIN:
                den = _SAFMIN
            eshift = eshift + h[ilast, ilast - 1] / den
            shift = eshift
        else:
            shift = _wilkinson_shift(h, t, ilast)

        f = h[ifirst, ifirst] - shift * t[ifirst, ifirst]
        g = h[ifirst + 1, ifirst]
        for jj in range(ifirst, ilast):
            if jj > ifirst:
                f = h[jj, jj - 1]
                g = h[jj + 1, jj - 1]
            c = _rotg(f, g, &s, &r)
            if jj > ifirst:
                h[jj, jj - 1] = r
                h[jj + 1, jj - 1] = 0
            _rot_rows(h, jj, jj + 1, jj, n, c, s)
            _rot_rows(t, jj, jj + 1, jj, n, c, s)
            _rot_cols(q, jj, jj + 1, 0, n, c, s.conjugate())
            c = _rotg(t[jj + 1, jj + 1], t[jj + 1, jj], &s, &r)
            t[jj + 1, jj + 1] = r
            t[jj + 1, jj] = 0
            mrow = (jj + 2 if jj + 2 < ilast else ilast) + 1
            _rot_cols(h, jj + 1, jj, 0, mrow, c, s)
            _rot_cols(t, jj + 1, jj, 0, jj + 1, c, s)
            _rot_cols(z, jj + 1, jj, 0, n, c, s)
    return sweeps, 0
