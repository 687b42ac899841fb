"""Compiled inner loops for the Sturm-Liouville solver.

All kernels work in the normalised coordinate ``s = (t - t_minus) / T`` on
``[0, 1]`` with ``K + 1`` uniform knots.  Coefficients are linear between
knots; ``ip`` is the knot array of ``1 / p``.  In ``s`` the problem
``-(p u')' + q u = lam w u`` becomes

    du/ds = T * ip(s) * r,   dr/ds = T * (q(s) - lam * w(s)) * u,   r = p du/dt.

Status codes: 0 ok, 1 step cap exceeded, 2 step underflow, 3 bracket failure.
"""

import math

import numpy as np
from numba import njit

from .odeint import A as _A, B as _B, C as _C, E as _E

A = np.ascontiguousarray(_A)
B = np.ascontiguousarray(_B)
C = np.ascontiguousarray(_C)
E = np.ascontiguousarray(_E)


@njit(cache=True, nogil=True)
def _interp(arr, s):
    K = arr.size - 1
    x = s * K
    j = int(x)
    if j > K - 1:
        j = K - 1
    if j < 0:
        j = 0
    f = x - j
    return (1.0 - f) * arr[j] + f * arr[j + 1]


@njit(cache=True, nogil=True)
def _theta_rhs(ip, q, w, T, lam, s, th):
    c = math.cos(th)
    sn = math.sin(th)
    return T * (_interp(ip, s) * c * c + (lam * _interp(w, s) - _interp(q, s)) * sn * sn)


@njit(cache=True, nogil=True)
def pruefer_end(ip, q, w, T, lam, rtol, atol, max_steps):
    """theta(s=1) for theta(0) = 0 with adaptive Dormand-Prince; returns (theta, status)."""
    s = 0.0
    th = 0.0
    h = 1e-3
    k = np.empty(7)
    k[0] = _theta_rhs(ip, q, w, T, lam, s, th)
    steps = 0
    rejected = False
    while s < 1.0:
        steps += 1
        if steps > max_steps:
            return th, 1
        if h < 1e-14:
            return th, 2
        last = False
        if s + h >= 1.0:
            h = 1.0 - s
            last = True
        for st in range(1, 6):
            acc = 0.0
            for r in range(st):
                acc += A[st, r] * k[r]
            k[st] = _theta_rhs(ip, q, w, T, lam, s + C[st] * h, th + h * acc)
        acc = 0.0
        for r in range(6):
            acc += B[r] * k[r]
        th_new = th + h * acc
        k[6] = _theta_rhs(ip, q, w, T, lam, s + h, th_new)
        err = 0.0
        for r in range(7):
            err += E[r] * k[r]
        err = abs(h * err) / (atol + rtol * max(abs(th), abs(th_new)))
        if err <= 1.0:
            s = 1.0 if last else s + h
            th = th_new
            k[0] = k[6]
            fac = 10.0 if err == 0.0 else min(10.0, max(0.2, 0.9 * err ** -0.2))
            if rejected:
                fac = min(fac, 1.0)
            rejected = False
            h = h * fac
        else:
            rejected = True
            h = h * max(0.2, 0.9 * err ** -0.2)
    return th, 0


@njit(cache=True, nogil=True)
def bisect_eigen(ip, q, w, T, n, lo, hi, tol_rel, rtol, atol, max_steps, max_expand):
    """Binary search for g(lam) = theta(1) - n pi = 0 inside [lo, hi].

    The bracket is widened geometrically (width doubling, at most
    ``max_expand`` times) when g does not change sign across it.
    Returns (lam, g(lam), status, lo, hi, g(lo), g(hi)).
    """
    target = n * math.pi
    glo, st = pruefer_end(ip, q, w, T, lo, rtol, atol, max_steps)
    if st != 0:
        return lo, 0.0, st, lo, hi, 0.0, 0.0
    ghi, st = pruefer_end(ip, q, w, T, hi, rtol, atol, max_steps)
    if st != 0:
        return hi, 0.0, st, lo, hi, 0.0, 0.0
    glo -= target
    ghi -= target
    width = max(hi - lo, 1.0)
    expansions = 0
    while glo > 0.0 or ghi < 0.0:
        if expansions >= max_expand:
            return 0.5 * (lo + hi), 0.0, 3, lo, hi, glo, ghi
        expansions += 1
        if glo > 0.0:
            hi = lo
            ghi = glo
            lo = lo - width
            glo, st = pruefer_end(ip, q, w, T, lo, rtol, atol, max_steps)
            glo -= target
        else:
            lo = hi
            glo = ghi
            hi = hi + width
            ghi, st = pruefer_end(ip, q, w, T, hi, rtol, atol, max_steps)
            ghi -= target
        if st != 0:
            return 0.5 * (lo + hi), 0.0, st, lo, hi, glo, ghi
        width *= 2.0
    stop = tol_rel * max(1.0, abs(hi))
    while hi - lo > stop:
        mid = 0.5 * (lo + hi)
        gm, st = pruefer_end(ip, q, w, T, mid, rtol, atol, max_steps)
        if st != 0:
            return mid, 0.0, st, lo, hi, glo, ghi
        gm -= target
        if gm > 0.0:
            hi = mid
            ghi = gm
        elif gm < 0.0:
            lo = mid
            glo = gm
        else:
            lo = mid
            hi = mid
            glo = gm
            ghi = gm
    lam = 0.5 * (lo + hi)
    g, st = pruefer_end(ip, q, w, T, lam, rtol, atol, max_steps)
    return lam, g - target, st, lo, hi, glo, ghi


@njit(cache=True, nogil=True)
def _coef(arr, iv, f):
    return (1.0 - f) * arr[iv] + f * arr[iv + 1]


@njit(cache=True, nogil=True)
def rk4_states(ip, q, w, T, lam, r0, m):
    """Fixed-step RK4 march of (u, r) from (0, r0); m substeps per knot interval."""
    K = ip.size - 1
    N = K * m
    h = 1.0 / N
    y = np.empty((N + 1, 2))
    y[0, 0] = 0.0
    y[0, 1] = r0
    for j in range(N):
        iv = j // m
        f0 = (j % m) / m
        fm = (j % m + 0.5) / m
        f1 = (j % m + 1.0) / m
        a0 = T * _coef(ip, iv, f0)
        b0 = T * (_coef(q, iv, f0) - lam * _coef(w, iv, f0))
        am = T * _coef(ip, iv, fm)
        bm = T * (_coef(q, iv, fm) - lam * _coef(w, iv, fm))
        a1 = T * _coef(ip, iv, f1)
        b1 = T * (_coef(q, iv, f1) - lam * _coef(w, iv, f1))
        u = y[j, 0]
        r = y[j, 1]
        k1u = a0 * r
        k1r = b0 * u
        k2u = am * (r + 0.5 * h * k1r)
        k2r = bm * (u + 0.5 * h * k1u)
        k3u = am * (r + 0.5 * h * k2r)
        k3r = bm * (u + 0.5 * h * k2u)
        k4u = a1 * (r + h * k3r)
        k4r = b1 * (u + h * k3u)
        y[j + 1, 0] = u + h / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u)
        y[j + 1, 1] = r + h / 6.0 * (k1r + 2.0 * k2r + 2.0 * k3r + k4r)
    return y


@njit(cache=True, nogil=True)
def rk4_end(ip, q, w, T, lam, r0, m):
    """u(s=1) of the same march as :func:`rk4_states` without storing states."""
    K = ip.size - 1
    N = K * m
    h = 1.0 / N
    u = 0.0
    r = r0
    for j in range(N):
        iv = j // m
        f0 = (j % m) / m
        fm = (j % m + 0.5) / m
        f1 = (j % m + 1.0) / m
        a0 = T * _coef(ip, iv, f0)
        b0 = T * (_coef(q, iv, f0) - lam * _coef(w, iv, f0))
        am = T * _coef(ip, iv, fm)
        bm = T * (_coef(q, iv, fm) - lam * _coef(w, iv, fm))
        a1 = T * _coef(ip, iv, f1)
        b1 = T * (_coef(q, iv, f1) - lam * _coef(w, iv, f1))
        k1u = a0 * r
        k1r = b0 * u
        k2u = am * (r + 0.5 * h * k1r)
        k2r = bm * (u + 0.5 * h * k1u)
        k3u = am * (r + 0.5 * h * k2r)
        k3r = bm * (u + 0.5 * h * k2u)
        k4u = a1 * (r + h * k3r)
        k4r = b1 * (u + h * k3u)
        u, r = u + h / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u), r + h / 6.0 * (k1r + 2.0 * k2r + 2.0 * k3r + k4r)
    return u


@njit(cache=True, nogil=True)
def refine_discrete(ip, q, w, T, lam, r0, m, rel_width, max_expand):
    """Root of u(1; lam) for the fixed-step march nearest the shooting value ``lam``.

    Bisects to machine precision so that the marched eigenfunction vanishes
    at the far end of its own discretisation.  Returns (lam, status).
    """
    d = rel_width * max(1.0, abs(lam))
    lo = lam - d
    hi = lam + d
    flo = rk4_end(ip, q, w, T, lo, r0, m)
    fhi = rk4_end(ip, q, w, T, hi, r0, m)
    k = 0
    while flo * fhi > 0.0:
        k += 1
        if k > max_expand:
            return lam, 3
        d *= 4.0
        lo = lam - d
        hi = lam + d
        flo = rk4_end(ip, q, w, T, lo, r0, m)
        fhi = rk4_end(ip, q, w, T, hi, r0, m)
    if flo == 0.0:
        return lo, 0
    if fhi == 0.0:
        return hi, 0
    # Illinois false position down to adjacent floating-point numbers.
    side = 0
    for _ in range(200):
        x = (lo * fhi - hi * flo) / (fhi - flo)
        if not (lo < x < hi):
            x = 0.5 * (lo + hi)
        if x <= lo or x >= hi:
            break
        fx = rk4_end(ip, q, w, T, x, r0, m)
        if fx == 0.0:
            return x, 0
        if (fx > 0.0) == (flo > 0.0):
            lo = x
            flo = fx
            if side == -1:
                fhi *= 0.5
            side = -1
        else:
            hi = x
            fhi = fx
            if side == 1:
                flo *= 0.5
            side = 1
        if hi - lo <= 4e-16 * max(abs(lo), abs(hi)):
            break
    if abs(flo) <= abs(fhi):
        return lo, 0
    return hi, 0


@njit(cache=True, nogil=True)
def _hermite_basis(x):
    x2 = x * x
    x3 = x2 * x
    return (2 * x3 - 3 * x2 + 1, x3 - 2 * x2 + x, -2 * x3 + 3 * x2, x3 - x2,
            6 * x2 - 6 * x, 3 * x2 - 4 * x + 1, -6 * x2 + 6 * x, 3 * x2 - 2 * x)


@njit(cache=True, nogil=True)
def hermite_read(y, ip, T, m, s_arr):
    """Cubic Hermite readout of u and du/ds from an RK4 state table."""
    N = y.shape[0] - 1
    h = 1.0 / N
    out = np.empty((s_arr.size, 2))
    for i in range(s_arr.size):
        xs = s_arr[i] * N
        a = int(xs)
        if a > N - 1:
            a = N - 1
        if a < 0:
            a = 0
        x = xs - a
        iv = a // m
        ipa = _coef(ip, iv, (a % m) / m)
        ipb = _coef(ip, iv, (a % m + 1.0) / m)
        fa = T * ipa * y[a, 1]
        fb = T * ipb * y[a + 1, 1]
        h00, h10, h01, h11, d00, d10, d01, d11 = _hermite_basis(x)
        out[i, 0] = h00 * y[a, 0] + h10 * h * fa + h01 * y[a + 1, 0] + h11 * h * fb
        out[i, 1] = (d00 * y[a, 0] + d10 * h * fa + d01 * y[a + 1, 0] + d11 * h * fb) / h
    return out


@njit(cache=True, nogil=True)
def _add_knot(g, iv, f, val):
    g[iv] += (1.0 - f) * val
    g[iv + 1] += f * val


@njit(cache=True, nogil=True)
def rk4_adjoint(ip, q, w, T, lam, r0, m, s_star):
    """Exact reverse-mode derivatives of the RK4 march.

    Two outputs are differentiated: column 0 is H = u(s=1), column 1 is
    U = u(s_star) read through the Hermite interpolant.  Returns
    (H, U, g_ip, g_q, g_w, g_lam, g_T, g_s, g_r0) where the knot gradients
    have shape (2, K + 1) and the scalars shape (2,).
    """
    K = ip.size - 1
    N = K * m
    h = 1.0 / N
    y = rk4_states(ip, q, w, T, lam, r0, m)
    g_ip = np.zeros((2, K + 1))
    g_q = np.zeros((2, K + 1))
    g_w = np.zeros((2, K + 1))
    g_lam = np.zeros(2)
    g_T = np.zeros(2)
    g_s = np.zeros(2)
    g_r0 = np.zeros(2)

    xs = s_star * N
    na = int(xs)
    if na > N - 1:
        na = N - 1
    if na < 0:
        na = 0
    x = xs - na
    h00, h10, h01, h11, d00, d10, d01, d11 = _hermite_basis(x)
    iva = na // m
    fa_ = (na % m) / m
    fb_ = (na % m + 1.0) / m
    ipa = _coef(ip, iva, fa_)
    ipb = _coef(ip, iva, fb_)
    ua, ra = y[na, 0], y[na, 1]
    ub, rb = y[na + 1, 0], y[na + 1, 1]
    U = h00 * ua + h10 * h * T * ipa * ra + h01 * ub + h11 * h * T * ipb * rb
    g_s[1] = (d00 * ua + d10 * h * T * ipa * ra + d01 * ub + d11 * h * T * ipb * rb) * N
    g_T[1] += h10 * h * ipa * ra + h11 * h * ipb * rb
    _add_knot(g_ip[1], iva, fa_, h10 * h * T * ra)
    _add_knot(g_ip[1], iva, fb_, h11 * h * T * rb)

    yb = np.zeros((2, 2))
    yb[0, 0] = 1.0
    for j in range(N - 1, -1, -1):
        if j == na:
            yb[1, 0] += h01
            yb[1, 1] += h11 * h * T * ipb
        iv = j // m
        f0 = (j % m) / m
        fm = (j % m + 0.5) / m
        f1 = (j % m + 1.0) / m
        ip0 = _coef(ip, iv, f0)
        ipm = _coef(ip, iv, fm)
        ip1 = _coef(ip, iv, f1)
        c0 = _coef(q, iv, f0) - lam * _coef(w, iv, f0)
        cm = _coef(q, iv, fm) - lam * _coef(w, iv, fm)
        c1 = _coef(q, iv, f1) - lam * _coef(w, iv, f1)
        w0 = _coef(w, iv, f0)
        wm = _coef(w, iv, fm)
        w1 = _coef(w, iv, f1)
        a0, b0 = T * ip0, T * c0
        am, bm = T * ipm, T * cm
        a1, b1 = T * ip1, T * c1
        u = y[j, 0]
        r = y[j, 1]
        k1u = a0 * r
        k1r = b0 * u
        Y2u = u + 0.5 * h * k1u
        Y2r = r + 0.5 * h * k1r
        k2u = am * Y2r
        k2r = bm * Y2u
        Y3u = u + 0.5 * h * k2u
        Y3r = r + 0.5 * h * k2r
        k3u = am * Y3r
        k3r = bm * Y3u
        Y4u = u + h * k3u
        Y4r = r + h * k3r
        for col in range(2):
            bu = yb[col, 0]
            br = yb[col, 1]
            k1bu = h / 6.0 * bu
            k1br = h / 6.0 * br
            k2bu = h / 3.0 * bu
            k2br = h / 3.0 * br
            k3bu = h / 3.0 * bu
            k3br = h / 3.0 * br
            k4bu = h / 6.0 * bu
            k4br = h / 6.0 * br
            y0u = bu
            y0r = br
            # stage 4: k4 = (a1 * Y4r, b1 * Y4u)
            ga1 = k4bu * Y4r
            gb1 = k4br * Y4u
            Ybu = k4br * b1
            Ybr = k4bu * a1
            y0u += Ybu
            y0r += Ybr
            k3bu += h * Ybu
            k3br += h * Ybr
            # stage 3
            gam = k3bu * Y3r
            gbm = k3br * Y3u
            Ybu = k3br * bm
            Ybr = k3bu * am
            y0u += Ybu
            y0r += Ybr
            k2bu += 0.5 * h * Ybu
            k2br += 0.5 * h * Ybr
            # stage 2
            gam += k2bu * Y2r
            gbm += k2br * Y2u
            Ybu = k2br * bm
            Ybr = k2bu * am
            y0u += Ybu
            y0r += Ybr
            k1bu += 0.5 * h * Ybu
            k1br += 0.5 * h * Ybr
            # stage 1
            ga0 = k1bu * r
            gb0 = k1br * u
            y0u += k1br * b0
            y0r += k1bu * a0
            # a = T ip, b = T (q - lam w)
            _add_knot(g_ip[col], iv, f0, T * ga0)
            _add_knot(g_ip[col], iv, fm, T * gam)
            _add_knot(g_ip[col], iv, f1, T * ga1)
            _add_knot(g_q[col], iv, f0, T * gb0)
            _add_knot(g_q[col], iv, fm, T * gbm)
            _add_knot(g_q[col], iv, f1, T * gb1)
            _add_knot(g_w[col], iv, f0, -T * lam * gb0)
            _add_knot(g_w[col], iv, fm, -T * lam * gbm)
            _add_knot(g_w[col], iv, f1, -T * lam * gb1)
            g_lam[col] += -T * (w0 * gb0 + wm * gbm + w1 * gb1)
            g_T[col] += ip0 * ga0 + ipm * gam + ip1 * ga1 + c0 * gb0 + cm * gbm + c1 * gb1
            yb[col, 0] = y0u
            yb[col, 1] = y0r
        if j == na:
            yb[1, 0] += h00
            yb[1, 1] += h10 * h * T * ipa
    for col in range(2):
        g_r0[col] = yb[col, 1]
    return y[N, 0], U, g_ip, g_q, g_w, g_lam, g_T, g_s, g_r0
