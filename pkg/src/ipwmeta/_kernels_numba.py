"""Numba @njit implementations of the hot solver kernels.

Mirrors ``_kernels_numpy`` (same family codes, brackets, tolerances and
iteration budgets); loops are written out so the whole solve compiles to
machine code.  See that module for the algorithm notes.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

PROB_FLOOR = 1e-12
_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)

BISECT_ITERS = 80
BRACKET_HI = 50.0
BRACKET_EXPANSIONS = 8
NEWTON_STEPS = 5

NM_MAX_ITER = 600
NM_STEP = 0.5
NM_FSPREAD_REL = 1e-12
NM_DIAM_TOL = 1e-10
POLISH_ITERS = 20


@njit(cache=True)
def _expit(z):
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


@njit(cache=True)
def _pi_one(fam, beta, t, sig):
    q = 0.5 * math.erfc(t / _SQRT2)
    if fam == 1:
        q = sig * q
    p = 2.0 * _expit(-beta * q)
    if p < PROB_FLOOR:
        return PROB_FLOOR
    if p > 1.0:
        return 1.0
    return p


@njit(cache=True)
def _u_one_row(fam, beta, t_row, sig, sqrtn_pub, sqrtn_total):
    acc = 0.0
    for i in range(t_row.shape[0]):
        acc += sqrtn_pub[i] / _pi_one(fam, beta, t_row[i], sig[i])
    return sqrtn_total - acc


@njit(cache=True)
def solve_one_param_batch(fam, t_mat, sig, sqrtn_pub, sqrtn_total):
    B = t_mat.shape[0]
    beta = np.zeros(B)
    ok = np.ones(B, np.bool_)
    resid = np.zeros(B)
    tol = 1e-8 * sqrtn_total
    iters_max = 0

    u0 = sqrtn_total
    for i in range(sqrtn_pub.shape[0]):
        u0 -= sqrtn_pub[i]
    if u0 <= tol:
        for b in range(B):
            resid[b] = abs(u0)
        return beta, ok, resid, 0

    for b in range(B):
        row = t_mat[b]
        lo = 0.0
        hi = BRACKET_HI
        fhi = _u_one_row(fam, hi, row, sig, sqrtn_pub, sqrtn_total)
        for _ in range(BRACKET_EXPANSIONS):
            if fhi <= 0.0:
                break
            hi *= 2.0
            fhi = _u_one_row(fam, hi, row, sig, sqrtn_pub, sqrtn_total)
        if fhi > 0.0:
            ok[b] = False
            beta[b] = np.nan
            resid[b] = abs(fhi)
            continue
        it = 0
        for _ in range(BISECT_ITERS):
            mid = 0.5 * (lo + hi)
            fm = _u_one_row(fam, mid, row, sig, sqrtn_pub, sqrtn_total)
            if fm <= 0.0:
                hi = mid
            else:
                lo = mid
            it += 1
            if hi - lo < 1e-10:
                break
        if it > iters_max:
            iters_max = it
        x = 0.5 * (lo + hi)
        for _ in range(NEWTON_STEPS):
            res = sqrtn_total
            slope = 0.0
            for i in range(row.shape[0]):
                q = 0.5 * math.erfc(row[i] / _SQRT2)
                if fam == 1:
                    q = sig[i] * q
                p = _expit(-x * q)
                pi = 2.0 * p
                if pi < PROB_FLOOR:
                    pi = PROB_FLOOR
                elif pi > 1.0:
                    pi = 1.0
                res -= sqrtn_pub[i] / pi
                slope += sqrtn_pub[i] * (-2.0 * q * p * (1.0 - p)) / (pi * pi)
            if slope != 0.0:
                x -= res / slope
        r = abs(_u_one_row(fam, x, row, sig, sqrtn_pub, sqrtn_total))
        resid[b] = r
        if r > tol:
            ok[b] = False
            beta[b] = np.nan
        else:
            beta[b] = x
    return beta, ok, resid, iters_max


@njit(cache=True)
def _pi_two(fam, b0, b1, t):
    eta = b0 + b1 * t
    if fam == 2:
        p = 0.5 * math.erfc(-eta / _SQRT2)
    else:
        p = _expit(eta)
    if p < PROB_FLOOR:
        return PROB_FLOOR
    if p > 1.0:
        return 1.0
    return p


@njit(cache=True)
def _u_two(fam, b0, b1, t, sqrtn_pub, s_total, sqrtn_total):
    a0 = 0.0
    a1 = 0.0
    for i in range(t.shape[0]):
        inv = 1.0 / _pi_two(fam, b0, b1, t[i])
        a0 += inv
        a1 += sqrtn_pub[i] * inv
    return s_total - a0, sqrtn_total - a1


@njit(cache=True)
def _obj_two(fam, b0, b1, t, sqrtn_pub, s_total, sqrtn_total, bound):
    if b0 < -bound:
        b0 = -bound
    elif b0 > bound:
        b0 = bound
    if b1 < -bound:
        b1 = -bound
    elif b1 > bound:
        b1 = bound
    u0, u1 = _u_two(fam, b0, b1, t, sqrtn_pub, s_total, sqrtn_total)
    return abs(u0) + abs(u1)


@njit(cache=True)
def _nm_two(fam, x0, y0, t, sqrtn_pub, s_total, sqrtn_total, bound, fstop):
    px = np.empty(3)
    py = np.empty(3)
    fv = np.empty(3)
    px[0], py[0] = x0, y0
    px[1], py[1] = x0 + NM_STEP, y0
    px[2], py[2] = x0, y0 + NM_STEP
    for k in range(3):
        fv[k] = _obj_two(fam, px[k], py[k], t, sqrtn_pub, s_total, sqrtn_total, bound)
    iters = 0
    for _ in range(NM_MAX_ITER):
        iters += 1
        # order the 3 vertices best..worst
        for a in range(2):
            for bq in range(a + 1, 3):
                if fv[bq] < fv[a]:
                    fv[a], fv[bq] = fv[bq], fv[a]
                    px[a], px[bq] = px[bq], px[a]
                    py[a], py[bq] = py[bq], py[a]
        if fv[0] <= fstop:
            break
        diam = max(abs(px[1] - px[0]), abs(py[1] - py[0]),
                   abs(px[2] - px[0]), abs(py[2] - py[0]))
        if fv[2] - fv[0] <= NM_FSPREAD_REL * (s_total + sqrtn_total) and diam <= NM_DIAM_TOL:
            break
        cx = 0.5 * (px[0] + px[1])
        cy = 0.5 * (py[0] + py[1])
        rx = cx + (cx - px[2])
        ry = cy + (cy - py[2])
        fr = _obj_two(fam, rx, ry, t, sqrtn_pub, s_total, sqrtn_total, bound)
        if fr < fv[0]:
            ex = cx + 2.0 * (cx - px[2])
            ey = cy + 2.0 * (cy - py[2])
            fe = _obj_two(fam, ex, ey, t, sqrtn_pub, s_total, sqrtn_total, bound)
            if fe < fr:
                px[2], py[2], fv[2] = ex, ey, fe
            else:
                px[2], py[2], fv[2] = rx, ry, fr
        elif fr < fv[1]:
            px[2], py[2], fv[2] = rx, ry, fr
        else:
            qx = cx + 0.5 * (px[2] - cx)
            qy = cy + 0.5 * (py[2] - cy)
            fq = _obj_two(fam, qx, qy, t, sqrtn_pub, s_total, sqrtn_total, bound)
            if fq < fv[2]:
                px[2], py[2], fv[2] = qx, qy, fq
            else:
                for k in range(1, 3):
                    px[k] = px[0] + 0.5 * (px[k] - px[0])
                    py[k] = py[0] + 0.5 * (py[k] - py[0])
                    fv[k] = _obj_two(fam, px[k], py[k], t, sqrtn_pub,
                                     s_total, sqrtn_total, bound)
    ib = 0
    if fv[1] < fv[ib]:
        ib = 1
    if fv[2] < fv[ib]:
        ib = 2
    b0 = min(max(px[ib], -bound), bound)
    b1 = min(max(py[ib], -bound), bound)
    return b0, b1, fv[ib], iters


@njit(cache=True)
def _polish_two(fam, b0, b1, t, sqrtn_pub, s_total, sqrtn_total, bound, fstop):
    u0, u1 = _u_two(fam, b0, b1, t, sqrtn_pub, s_total, sqrtn_total)
    f = abs(u0) + abs(u1)
    for _ in range(POLISH_ITERS):
        if f <= fstop:
            break
        j00 = 0.0
        j01 = 0.0
        j10 = 0.0
        j11 = 0.0
        for i in range(t.shape[0]):
            eta = b0 + b1 * t[i]
            if fam == 2:
                p = 0.5 * math.erfc(-eta / _SQRT2)
                dp = math.exp(-0.5 * eta * eta) / _SQRT2PI
            else:
                p = _expit(eta)
                dp = p * (1.0 - p)
            if p <= PROB_FLOOR or p >= 1.0:
                continue
            w = dp / (p * p)
            j00 += w
            j01 += t[i] * w
            j10 += sqrtn_pub[i] * w
            j11 += sqrtn_pub[i] * t[i] * w
        det = j00 * j11 - j01 * j10
        if not math.isfinite(det) or abs(det) < 1e-300:
            break
        s0 = (j11 * u0 - j01 * u1) / det
        s1 = (-j10 * u0 + j00 * u1) / det
        lam = 1.0
        improved = False
        for _ in range(20):
            c0 = min(max(b0 - lam * s0, -bound), bound)
            c1 = min(max(b1 - lam * s1, -bound), bound)
            v0, v1 = _u_two(fam, c0, c1, t, sqrtn_pub, s_total, sqrtn_total)
            fc = abs(v0) + abs(v1)
            if fc < f:
                b0, b1, u0, u1, f = c0, c1, v0, v1, fc
                improved = True
                break
            lam *= 0.5
        if not improved:
            break
    return b0, b1, f


@njit(cache=True)
def solve_two_param_multistart(fam, t_pub, sig, sqrtn_pub, s_total,
                               sqrtn_total, bound):
    scale = s_total + sqrtn_total
    fstop = 1e-13 * scale
    best0 = np.nan
    best1 = np.nan
    bestf = np.inf
    total_iters = 0
    for x0 in (-1.0, 0.0, 1.0):
        for y0 in (-1.0, 0.0, 1.0):
            b0, b1, f, iters = _nm_two(fam, x0, y0, t_pub, sqrtn_pub, s_total,
                                       sqrtn_total, bound, fstop)
            total_iters += iters
            b0, b1, f = _polish_two(fam, b0, b1, t_pub, sqrtn_pub, s_total,
                                    sqrtn_total, bound, fstop)
            if f < bestf:
                best0, best1, bestf = b0, b1, f
    return best0, best1, bestf, total_iters
