"""Pure-numpy implementations of the hot solver kernels.

Family codes shared with the numba kernels and ``selection``:
0 = logistic1, 1 = mlogistic1, 2 = probit2, 3 = logistic2.

The t arrays arriving here are already oriented by the caller (see
``selection.selection_statistics``); the formulas below are the written
forms.  Probabilities are clamped to [PROB_FLOOR, 1] so inverse weights
stay finite wherever the solvers roam.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erfc

PROB_FLOOR = 1e-12
_SQRT2 = np.sqrt(2.0)
_SQRT2PI = np.sqrt(2.0 * np.pi)

BISECT_ITERS = 80
BRACKET_HI = 50.0
BRACKET_EXPANSIONS = 8
NEWTON_STEPS = 5

NM_MAX_ITER = 600
NM_STEP = 0.5
NM_FSPREAD_REL = 1e-12
NM_DIAM_TOL = 1e-10
POLISH_ITERS = 20


def _expit(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _upper_tail(t):
    """1 - Phi(t), stable in both tails."""
    return 0.5 * erfc(np.asarray(t, dtype=np.float64) / _SQRT2)


def _pi_one(fam, beta, t, sig):
    """One-parameter selection probability; beta broadcasts against t."""
    q = _upper_tail(t)
    if fam == 1:
        q = sig * q
    return np.clip(2.0 * _expit(-beta * q), PROB_FLOOR, 1.0)


def _dpi_one(fam, beta, t, sig):
    q = _upper_tail(t)
    if fam == 1:
        q = sig * q
    p = _expit(-beta * q)
    return -2.0 * q * p * (1.0 - p)


def _pi_two(fam, b0, b1, t):
    eta = b0 + b1 * t
    if fam == 2:
        p = 0.5 * erfc(-eta / _SQRT2)
    else:
        p = _expit(eta)
    return np.clip(p, PROB_FLOOR, 1.0)


def _dpi_deta_two(fam, b0, b1, t):
    eta = b0 + b1 * t
    if fam == 2:
        return np.exp(-0.5 * eta * eta) / _SQRT2PI
    p = _expit(eta)
    return p * (1.0 - p)


def solve_one_param_batch(fam, t_mat, sig, sqrtn_pub, sqrtn_total):
    """Solve the one-parameter estimating equation for each row of ``t_mat``.

    U(b) = sqrtn_total - sum_pub sqrtn_pub / pi(b, t) is strictly decreasing
    with U(0) = sum of unpublished sqrt(n) >= 0, so the root lies in
    [0, inf).  Bracketed bisection to width 1e-10 plus a short Newton
    polish, per row.

    Returns (beta, ok, resid) arrays of shape (B,).
    """
    t_mat = np.atleast_2d(np.asarray(t_mat, dtype=np.float64))
    B = t_mat.shape[0]
    tol = 1e-8 * sqrtn_total

    u0 = sqrtn_total - np.sum(sqrtn_pub)
    if u0 <= tol:
        return np.zeros(B), np.ones(B, bool), np.full(B, abs(u0)), 0

    def u(beta_col):
        pi = _pi_one(fam, beta_col[:, None], t_mat, sig)
        return sqrtn_total - np.sum(sqrtn_pub / pi, axis=1)

    lo = np.zeros(B)
    hi = np.full(B, BRACKET_HI)
    fhi = u(hi)
    for _ in range(BRACKET_EXPANSIONS):
        open_ = fhi > 0.0
        if not open_.any():
            break
        hi[open_] *= 2.0
        fhi[open_] = u(hi)[open_]
    ok = fhi <= 0.0

    iters = 0
    for _ in range(BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        fm = u(mid)
        go_left = fm <= 0.0
        hi = np.where(go_left, mid, hi)
        lo = np.where(go_left, lo, mid)
        iters += 1
        if np.max(hi - lo) < 1e-10:
            break
    beta = 0.5 * (lo + hi)

    for _ in range(NEWTON_STEPS):
        pi = _pi_one(fam, beta[:, None], t_mat, sig)
        dpi = _dpi_one(fam, beta[:, None], t_mat, sig)
        res = sqrtn_total - np.sum(sqrtn_pub / pi, axis=1)
        slope = np.sum(sqrtn_pub * dpi / pi**2, axis=1)
        safe = np.where(slope != 0.0, slope, 1.0)
        beta = beta - np.where(slope != 0.0, res / safe, 0.0)

    resid = np.abs(u(beta))
    ok &= resid <= tol
    beta = np.where(ok, beta, np.nan)
    return beta, ok, resid, iters


def _u_two(fam, b0, b1, t, sqrtn_pub, s_total, sqrtn_total):
    pi = _pi_two(fam, b0, b1, t)
    return (s_total - np.sum(1.0 / pi),
            sqrtn_total - np.sum(sqrtn_pub / pi))


def _obj_two(fam, b0, b1, t, sqrtn_pub, s_total, sqrtn_total, bound):
    b0 = min(max(b0, -bound), bound)
    b1 = min(max(b1, -bound), bound)
    u0, u1 = _u_two(fam, b0, b1, t, sqrtn_pub, s_total, sqrtn_total)
    return abs(u0) + abs(u1)


def _nm_two(fam, x0, y0, t, sqrtn_pub, s_total, sqrtn_total, bound, fstop):
    """Nelder-Mead on |U0|+|U1| from one start; returns (b0, b1, f, iters)."""
    pts = np.array([[x0, y0], [x0 + NM_STEP, y0], [x0, y0 + NM_STEP]])
    fv = np.array([_obj_two(fam, p[0], p[1], t, sqrtn_pub, s_total,
                            sqrtn_total, bound) for p in pts])
    iters = 0
    for _ in range(NM_MAX_ITER):
        iters += 1
        order = np.argsort(fv, kind="stable")
        pts, fv = pts[order], fv[order]
        if fv[0] <= fstop:
            break
        diam = max(np.abs(pts[1] - pts[0]).max(), np.abs(pts[2] - pts[0]).max())
        if fv[2] - fv[0] <= NM_FSPREAD_REL * (s_total + sqrtn_total) and diam <= NM_DIAM_TOL:
            break
        cen = 0.5 * (pts[0] + pts[1])
        xr = cen + (cen - pts[2])
        fr = _obj_two(fam, xr[0], xr[1], t, sqrtn_pub, s_total, sqrtn_total, bound)
        if fr < fv[0]:
            xe = cen + 2.0 * (cen - pts[2])
            fe = _obj_two(fam, xe[0], xe[1], t, sqrtn_pub, s_total, sqrtn_total, bound)
            if fe < fr:
                pts[2], fv[2] = xe, fe
            else:
                pts[2], fv[2] = xr, fr
        elif fr < fv[1]:
            pts[2], fv[2] = xr, fr
        else:
            xc = cen + 0.5 * (pts[2] - cen)
            fc = _obj_two(fam, xc[0], xc[1], t, sqrtn_pub, s_total, sqrtn_total, bound)
            if fc < fv[2]:
                pts[2], fv[2] = xc, fc
            else:
                for k in (1, 2):
                    pts[k] = pts[0] + 0.5 * (pts[k] - pts[0])
                    fv[k] = _obj_two(fam, pts[k][0], pts[k][1], t, sqrtn_pub,
                                     s_total, sqrtn_total, bound)
    i = int(np.argmin(fv))
    b0 = min(max(pts[i][0], -bound), bound)
    b1 = min(max(pts[i][1], -bound), bound)
    return b0, b1, fv[i], iters


def _polish_two(fam, b0, b1, t, sqrtn_pub, s_total, sqrtn_total, bound, fstop):
    """Damped Newton on the smooth system (U0, U1); only accepts improvements."""
    u0, u1 = _u_two(fam, b0, b1, t, sqrtn_pub, s_total, sqrtn_total)
    f = abs(u0) + abs(u1)
    for _ in range(POLISH_ITERS):
        if f <= fstop:
            break
        pi_raw = _pi_two(fam, b0, b1, t)
        active = (pi_raw > PROB_FLOOR) & (pi_raw < 1.0)
        dpi = _dpi_deta_two(fam, b0, b1, t) * active
        w = dpi / pi_raw**2
        j00 = np.sum(w); j01 = np.sum(t * w)
        j10 = np.sum(sqrtn_pub * w); j11 = np.sum(sqrtn_pub * t * w)
        det = j00 * j11 - j01 * j10
        if not np.isfinite(det) or abs(det) < 1e-300:
            break
        s0 = (j11 * u0 - j01 * u1) / det
        s1 = (-j10 * u0 + j00 * u1) / det
        lam, improved = 1.0, False
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


def solve_two_param_multistart(fam, t_pub, sig, sqrtn_pub, s_total,
                               sqrtn_total, bound):
    """Multi-start simplex search for the two-parameter estimating equations.

    Starts on the 3x3 grid {-1,0,1}^2, box-clipped at ``bound``; each
    Nelder-Mead result gets a damped-Newton polish on the smooth system.
    Returns (b0, b1, objective) for the best start.
    """
    t_pub = np.asarray(t_pub, dtype=np.float64)
    scale = s_total + sqrtn_total
    fstop = 1e-13 * scale
    best = (np.nan, np.nan, np.inf)
    total_iters = 0
    for x0 in (-1.0, 0.0, 1.0):
        for y0 in (-1.0, 0.0, 1.0):
            b0, b1, f, iters = _nm_two(fam, x0, y0, t_pub, sqrtn_pub, s_total,
                                       sqrtn_total, bound, fstop)
            total_iters += iters
            b0, b1, f = _polish_two(fam, b0, b1, t_pub, sqrtn_pub, s_total,
                                    sqrtn_total, bound, fstop)
            if f < best[2]:
                best = (b0, b1, f)
    return best[0], best[1], best[2], total_iters
