"""Numba kernels shared by the interpolation, matching and rendering code.

Coefficient arrays passed around here are cubic B-spline coefficients padded
by two cells on every side (see ``image.bspline_coefficients``), so a query at
``(x, y)`` reads ``cp[iy + 1:iy + 5, ix + 1:ix + 5]`` with ``ix = floor(x)``.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# refine status codes
CONVERGED = 0
MAX_ITER = 1
OUT_OF_BOUNDS = 2
DEGENERATE = 3
SINGULAR = 4
NO_DESCENT = 5

STATUS_NAMES = {
    CONVERGED: "converged",
    MAX_ITER: "max-iter",
    OUT_OF_BOUNDS: "out-of-bounds",
    DEGENERATE: "degenerate",
    SINGULAR: "singular",
    NO_DESCENT: "no-descent",
}

DEGENERATE_NORM = 1e-12
_BACKTRACK_STEPS = 8
_DESCENT_SLACK = 1e-12


@njit(cache=True, inline="always")
def _weights(t):
    s = 1.0 - t
    t2 = t * t
    t3 = t2 * t
    w0 = s * s * s / 6.0
    w1 = (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0
    w2 = (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0
    w3 = t3 / 6.0
    return w0, w1, w2, w3


@njit(cache=True, inline="always")
def _dweights(t):
    s = 1.0 - t
    t2 = t * t
    return -0.5 * s * s, 1.5 * t2 - 2.0 * t, -1.5 * t2 + t + 0.5, 0.5 * t2


@njit(cache=True)
def bspline_value(cp, x, y):
    ix = int(np.floor(x))
    iy = int(np.floor(y))
    wx0, wx1, wx2, wx3 = _weights(x - ix)
    wy0, wy1, wy2, wy3 = _weights(y - iy)
    r = iy + 1
    c = ix + 1
    acc = 0.0
    for k in range(4):
        if k == 0:
            wy = wy0
        elif k == 1:
            wy = wy1
        elif k == 2:
            wy = wy2
        else:
            wy = wy3
        row = r + k
        acc += wy * (wx0 * cp[row, c] + wx1 * cp[row, c + 1]
                     + wx2 * cp[row, c + 2] + wx3 * cp[row, c + 3])
    return acc


@njit(cache=True, inline="always")
def _row_terms(cp, row, c, wx0, wx1, wx2, wx3, dx0, dx1, dx2, dx3):
    a0 = cp[row, c]
    a1 = cp[row, c + 1]
    a2 = cp[row, c + 2]
    a3 = cp[row, c + 3]
    return (wx0 * a0 + wx1 * a1 + wx2 * a2 + wx3 * a3,
            dx0 * a0 + dx1 * a1 + dx2 * a2 + dx3 * a3)


@njit(cache=True)
def bspline_eval(cp, x, y):
    """Value and first derivatives at one point."""
    ix = int(np.floor(x))
    iy = int(np.floor(y))
    tx = x - ix
    ty = y - iy
    wx0, wx1, wx2, wx3 = _weights(tx)
    wy0, wy1, wy2, wy3 = _weights(ty)
    dx0, dx1, dx2, dx3 = _dweights(tx)
    dy0, dy1, dy2, dy3 = _dweights(ty)
    r = iy + 1
    c = ix + 1
    s0, d0 = _row_terms(cp, r, c, wx0, wx1, wx2, wx3, dx0, dx1, dx2, dx3)
    s1, d1 = _row_terms(cp, r + 1, c, wx0, wx1, wx2, wx3, dx0, dx1, dx2, dx3)
    s2, d2 = _row_terms(cp, r + 2, c, wx0, wx1, wx2, wx3, dx0, dx1, dx2, dx3)
    s3, d3 = _row_terms(cp, r + 3, c, wx0, wx1, wx2, wx3, dx0, dx1, dx2, dx3)
    val = wy0 * s0 + wy1 * s1 + wy2 * s2 + wy3 * s3
    gx = wy0 * d0 + wy1 * d1 + wy2 * d2 + wy3 * d3
    gy = dy0 * s0 + dy1 * s1 + dy2 * s2 + dy3 * s3
    return val, gx, gy


@njit(cache=True)
def bspline_eval_many(cp, xs, ys, out_v, out_gx, out_gy):
    for k in range(xs.shape[0]):
        v, gx, gy = bspline_eval(cp, xs[k], ys[k])
        out_v[k] = v
        out_gx[k] = gx
        out_gy[k] = gy


@njit(cache=True)
def bspline_value_many(cp, xs, ys, out_v):
    for k in range(xs.shape[0]):
        out_v[k] = bspline_value(cp, xs[k], ys[k])


@njit(cache=True)
def warp_coords(p, order, x0, y0, dx, dy, xs, ys):
    u = p[0]
    v = p[1]
    ux = p[2]
    uy = p[3]
    vx = p[4]
    vy = p[5]
    for k in range(dx.shape[0]):
        a = dx[k]
        b = dy[k]
        xs[k] = x0 + a + u + ux * a + uy * b
        ys[k] = y0 + b + v + vx * a + vy * b
        if order == 2:
            xs[k] += 0.5 * p[6] * a * a + 0.5 * p[7] * b * b + p[8] * a * b
            ys[k] += 0.5 * p[9] * a * a + 0.5 * p[10] * b * b + p[11] * a * b


@njit(cache=True)
def normalize_subset(vals, out):
    """Zero-mean, unit-norm copy of ``vals``; returns the pre-normalization norm."""
    n = vals.shape[0]
    m = 0.0
    for k in range(n):
        m += vals[k]
    m /= n
    ss = 0.0
    for k in range(n):
        d = vals[k] - m
        out[k] = d
        ss += d * d
    norm = np.sqrt(ss)
    if norm < DEGENERATE_NORM:
        return norm
    for k in range(n):
        out[k] /= norm
    return norm


@njit(cache=True)
def _in_bounds(xs, ys, lo_x, hi_x, lo_y, hi_y):
    for k in range(xs.shape[0]):
        x = xs[k]
        y = ys[k]
        if not (x >= lo_x and x <= hi_x and y >= lo_y and y <= hi_y):
            return False
    return True


@njit(cache=True)
def _residual(fhat, cp, xs, ys, lo_x, hi_x, lo_y, hi_y, g, gx, gy, ghat):
    """Sample the deformed subset and return (status, znssd, norm)."""
    if not _in_bounds(xs, ys, lo_x, hi_x, lo_y, hi_y):
        return OUT_OF_BOUNDS, np.inf, 0.0
    bspline_eval_many(cp, xs, ys, g, gx, gy)
    norm = normalize_subset(g, ghat)
    if norm < DEGENERATE_NORM:
        return DEGENERATE, np.inf, norm
    c = 0.0
    for k in range(fhat.shape[0]):
        r = fhat[k] - ghat[k]
        c += r * r
    return CONVERGED, c, norm


@njit(cache=True)
def _normal_equations(fhat, ghat, gx, gy, dx, dy, order, norm, J, A, b):
    """Gauss-Newton normal equations of the ZNSSD cost.

    ``J`` is scratch of shape ``(n, P)`` for the raw warp Jacobian of g. The
    Jacobian of the normalized deformed subset is projected exactly (mean and
    norm of g both depend on the warp).
    """
    n = fhat.shape[0]
    P = A.shape[0]
    r = np.empty(n)
    gr = 0.0
    for k in range(n):
        a = dx[k]
        bb = dy[k]
        ex = gx[k]
        ey = gy[k]
        J[k, 0] = ex
        J[k, 1] = ey
        J[k, 2] = ex * a
        J[k, 3] = ex * bb
        J[k, 4] = ey * a
        J[k, 5] = ey * bb
        if order == 2:
            J[k, 6] = 0.5 * ex * a * a
            J[k, 7] = 0.5 * ex * bb * bb
            J[k, 8] = ex * a * bb
            J[k, 9] = 0.5 * ey * a * a
            J[k, 10] = 0.5 * ey * bb * bb
            J[k, 11] = ey * a * bb
        r[k] = fhat[k] - ghat[k]
        gr += ghat[k] * r[k]
    JtJ = np.dot(J.T, J)
    sum_g = np.sum(J, axis=0)
    s = np.dot(ghat, J)
    rg = np.dot(r, J)
    inv2 = 1.0 / (norm * norm)
    for i in range(P):
        b[i] = (rg[i] - s[i] * gr) / norm
        for j in range(P):
            A[i, j] = (JtJ[i, j] - sum_g[i] * sum_g[j] / n - s[i] * s[j]) * inv2


@njit(cache=True)
def _normal_equations_affine(fhat, ghat, gx, gy, dx, dy, norm, A, b):
    """First-order special case of :func:`_normal_equations`, fully unrolled."""
    n = fhat.shape[0]
    H = np.zeros(21)
    sg = np.zeros(6)
    s = np.zeros(6)
    rg = np.zeros(6)
    gr = 0.0
    for k in range(n):
        a = dx[k]
        bb = dy[k]
        g0 = gx[k]
        g1 = gy[k]
        g2 = g0 * a
        g3 = g0 * bb
        g4 = g1 * a
        g5 = g1 * bb
        gh = ghat[k]
        r = fhat[k] - gh
        gr += gh * r
        sg[0] += g0
        sg[1] += g1
        sg[2] += g2
        sg[3] += g3
        sg[4] += g4
        sg[5] += g5
        s[0] += gh * g0
        s[1] += gh * g1
        s[2] += gh * g2
        s[3] += gh * g3
        s[4] += gh * g4
        s[5] += gh * g5
        rg[0] += r * g0
        rg[1] += r * g1
        rg[2] += r * g2
        rg[3] += r * g3
        rg[4] += r * g4
        rg[5] += r * g5
        H[0] += g0 * g0
        H[1] += g0 * g1
        H[2] += g0 * g2
        H[3] += g0 * g3
        H[4] += g0 * g4
        H[5] += g0 * g5
        H[6] += g1 * g1
        H[7] += g1 * g2
        H[8] += g1 * g3
        H[9] += g1 * g4
        H[10] += g1 * g5
        H[11] += g2 * g2
        H[12] += g2 * g3
        H[13] += g2 * g4
        H[14] += g2 * g5
        H[15] += g3 * g3
        H[16] += g3 * g4
        H[17] += g3 * g5
        H[18] += g4 * g4
        H[19] += g4 * g5
        H[20] += g5 * g5
    inv2 = 1.0 / (norm * norm)
    m = 0
    for i in range(6):
        b[i] = (rg[i] - s[i] * gr) / norm
        for j in range(i, 6):
            val = (H[m] - sg[i] * sg[j] / n - s[i] * s[j]) * inv2
            A[i, j] = val
            A[j, i] = val
            m += 1


@njit(cache=True)
def param_scales(order, M):
    P = 6 if order == 1 else 12
    d = np.ones(P)
    for i in range(2, 6):
        d[i] = M
    for i in range(6, P):
        d[i] = M * M
    return d


@njit(cache=True)
def weighted_norm(dp, scales):
    acc = 0.0
    for i in range(dp.shape[0]):
        t = dp[i] * scales[i]
        acc += t * t
    return np.sqrt(acc)


@njit(cache=True)
def nr_refine(fhat, dx, dy, cp, x0, y0, p0, order, M, lo_x, hi_x, lo_y, hi_y,
              tol, max_iter, cond_limit):
    """Forward-additive Newton-Raphson on the ZNSSD cost.

    Returns ``(p, znssd, iterations, status, initial_znssd)``.
    """
    n = fhat.shape[0]
    P = 6 if order == 1 else 12
    p = p0.copy()
    xs = np.empty(n)
    ys = np.empty(n)
    g = np.empty(n)
    gx = np.empty(n)
    gy = np.empty(n)
    ghat = np.empty(n)
    A = np.empty((P, P))
    b = np.empty(P)
    J = np.empty((n if order == 2 else 0, P))
    As = np.empty((P, P))
    bs = np.empty(P)
    scales = param_scales(order, M)

    warp_coords(p, order, x0, y0, dx, dy, xs, ys)
    status, cost, norm = _residual(fhat, cp, xs, ys, lo_x, hi_x, lo_y, hi_y,
                                   g, gx, gy, ghat)
    c_init = cost
    if status != CONVERGED:
        return p, cost, 0, status, c_init

    p_try = np.empty(P)
    for it in range(1, max_iter + 1):
        if order == 1:
            _normal_equations_affine(fhat, ghat, gx, gy, dx, dy, norm, A, b)
        else:
            _normal_equations(fhat, ghat, gx, gy, dx, dy, order, norm, J, A, b)
        # scaled system: (D^-1 A D^-1)(D dp) = D^-1 b
        for i in range(P):
            bs[i] = b[i] / scales[i]
            for j in range(P):
                As[i, j] = A[i, j] / (scales[i] * scales[j])
        ev = np.linalg.eigvalsh(As)
        if ev[0] <= 0.0 or ev[P - 1] / ev[0] > cond_limit:
            return p, cost, it - 1, SINGULAR, c_init
        dps = np.linalg.solve(As, bs)
        step_norm = 0.0
        for i in range(P):
            step_norm += dps[i] * dps[i]
        step_norm = np.sqrt(step_norm)
        frac = 1.0
        accepted = False
        for _ in range(_BACKTRACK_STEPS):
            for i in range(P):
                p_try[i] = p[i] + frac * dps[i] / scales[i]
            warp_coords(p_try, order, x0, y0, dx, dy, xs, ys)
            st, c_try, nrm = _residual(fhat, cp, xs, ys, lo_x, hi_x, lo_y,
                                       hi_y, g, gx, gy, ghat)
            if st == CONVERGED and c_try <= cost + _DESCENT_SLACK:
                accepted = True
                cost = c_try
                norm = nrm
                break
            frac *= 0.5
        if not accepted:
            # leave g/ghat consistent with p for any caller that inspects them
            warp_coords(p, order, x0, y0, dx, dy, xs, ys)
            _residual(fhat, cp, xs, ys, lo_x, hi_x, lo_y, hi_y, g, gx, gy, ghat)
            if step_norm < tol:
                return p, cost, it - 1, CONVERGED, c_init
            return p, cost, it - 1, NO_DESCENT, c_init
        for i in range(P):
            p[i] = p_try[i]
        if frac * step_norm < tol:
            return p, cost, it, CONVERGED, c_init
    return p, cost, max_iter, MAX_ITER, c_init


@njit(cache=True)
def integer_search(ref, cx, cy, M, dfm, radius):
    """Exhaustive integer-translation ZNCC search.

    ``ref``/``dfm`` are raw intensity arrays; the reference subset is centred
    on integer pixel ``(cx, cy)``. Returns ``(tx, ty, zncc, n_evaluated)``;
    ``n_evaluated == 0`` means every candidate window was degenerate or
    outside the deformed image.
    """
    side = 2 * M + 1
    n = side * side
    fvals = np.empty(n)
    k = 0
    for j in range(-M, M + 1):
        for i in range(-M, M + 1):
            fvals[k] = ref[cy + j, cx + i]
            k += 1
    fhat = np.empty(n)
    if normalize_subset(fvals, fhat) < DEGENERATE_NORM:
        return 0, 0, -2.0, 0
    H = dfm.shape[0]
    W = dfm.shape[1]
    best = -2.0
    btx = 0
    bty = 0
    count = 0
    for ty in range(-radius, radius + 1):
        yc = cy + ty
        if yc - M < 0 or yc + M > H - 1:
            continue
        for tx in range(-radius, radius + 1):
            xc = cx + tx
            if xc - M < 0 or xc + M > W - 1:
                continue
            m = 0.0
            for j in range(-M, M + 1):
                for i in range(-M, M + 1):
                    m += dfm[yc + j, xc + i]
            m /= n
            ss = 0.0
            dot = 0.0
            k = 0
            for j in range(-M, M + 1):
                for i in range(-M, M + 1):
                    d = dfm[yc + j, xc + i] - m
                    ss += d * d
                    dot += d * fhat[k]
                    k += 1
            if ss < DEGENERATE_NORM * DEGENERATE_NORM:
                continue
            z = dot / np.sqrt(ss)
            count += 1
            if z > best:
                best = z
                btx = tx
                bty = ty
    return btx, bty, best, count


@njit(cache=True)
def sample_subsets(data, cp, cxs, cys, dx, dy, lo_x, hi_x, lo_y, hi_y,
                   out_fhat, out_ok):
    """Normalized reference subsets for many centres.

    Integer centres read ``data`` directly; others go through the spline.
    """
    n = dx.shape[0]
    vals = np.empty(n)
    for q in range(cxs.shape[0]):
        x0 = cxs[q]
        y0 = cys[q]
        out_ok[q] = False
        if not (np.isfinite(x0) and np.isfinite(y0)):
            continue
        # offsets run from -M to +M (dx fastest)
        if (x0 + dx[0] < lo_x or x0 + dx[n - 1] > hi_x
                or y0 + dy[0] < lo_y or y0 + dy[n - 1] > hi_y):
            continue
        ix = int(np.floor(x0))
        iy = int(np.floor(y0))
        if ix == x0 and iy == y0:
            for k in range(n):
                vals[k] = data[iy + int(dy[k]), ix + int(dx[k])]
        else:
            for k in range(n):
                vals[k] = bspline_value(cp, x0 + dx[k], y0 + dy[k])
        if normalize_subset(vals, out_fhat[q]) < DEGENERATE_NORM:
            continue
        out_ok[q] = True


@njit(cache=True)
def render_hinged_rotation(data, cp, x0, alpha, hinged, background, out):
    """Inverse-mapped rendering of a rotation about ``(x0, 0)``.

    With ``hinged`` only material at ``x >= x0`` rotates; the rest stays put.
    """
    H = data.shape[0]
    W = data.shape[1]
    ca = np.cos(alpha)
    sa = np.sin(alpha)
    for r in range(H):
        for c in range(W):
            qx = c - x0
            qy = float(r)
            if hinged and c < x0:
                out[r, c] = data[r, c]
                continue
            # inverse of the visual counter-clockwise rotation (y down)
            sx = x0 + ca * qx - sa * qy
            sy = sa * qx + ca * qy
            if hinged and sx < x0:
                out[r, c] = background
                continue
            if sx < 0.0 or sy < 0.0 or sx > W - 1 or sy > H - 1:
                out[r, c] = background
                continue
            ix = int(np.floor(sx))
            iy = int(np.floor(sy))
            if ix == sx and iy == sy:
                out[r, c] = data[iy, ix]
            else:
                out[r, c] = bspline_value(cp, sx, sy)
