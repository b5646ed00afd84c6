"""Compiled evaluation of field programs and the Dormand-Prince integrator.

A field program is a pair ``(ip, fp)`` of flat int64 / float64 arrays.
``ip[0]`` is the family code and ``ip[1]`` the dimension; ``fp[0]`` is a
global scale factor (``-1`` gives the reversed field). The remaining layout
is family specific and documented next to each evaluator; the Python-side
packers live in :mod:`torusflow.fields` and :mod:`torusflow.poly3d`.

A trigonometric block for a scalar with ``n`` terms in dimension ``d`` is
stored as ``K[n*d], A[n], B[n], c0`` and represents
``c0 + sum_t A_t cos(2 pi K_t.x) + B_t sin(2 pi K_t.x)``.
"""

import numpy as np
from numba import njit

TWO_PI = 2.0 * np.pi

TRIG, STEPANOFF, STREAM, STRATIFIED, POLY3D = 0, 1, 2, 3, 4

STATUS_OK, STATUS_UNDERFLOW, STATUS_MAXSTEPS, STATUS_NONFINITE = 0, 1, 2, 3


@njit(cache=True, nogil=True)
def smoothstep(s):
    """C^1 cutoff: 1 for s <= 0, 0 for s >= 1, 1 - (3s^2 - 2s^3) between."""
    if s <= 0.0:
        return 1.0
    if s >= 1.0:
        return 0.0
    return 1.0 - s * s * (3.0 - 2.0 * s)


@njit(cache=True, nogil=True)
def smoothstep_deriv(s):
    if s <= 0.0 or s >= 1.0:
        return 0.0
    return -6.0 * s * (1.0 - s)


@njit(cache=True, nogil=True)
def trig_block_len(n, d):
    return n * d + 2 * n + 1


@njit(cache=True, nogil=True)
def trig_eval(fp, o, n, d, x, grad):
    """Value of a trigonometric block at ``x``; gradient written to ``grad``."""
    ka = o
    aa = o + n * d
    ba = aa + n
    val = fp[ba + n]
    for j in range(d):
        grad[j] = 0.0
    for t in range(n):
        ph = 0.0
        for j in range(d):
            ph += fp[ka + t * d + j] * x[j]
        ph *= TWO_PI
        c = np.cos(ph)
        s = np.sin(ph)
        a = fp[aa + t]
        b = fp[ba + t]
        val += a * c + b * s
        dv = TWO_PI * (b * c - a * s)
        for j in range(d):
            grad[j] += dv * fp[ka + t * d + j]
    return val


@njit(cache=True, nogil=True)
def _trig_field(ip, fp, x, out, J, want_jac):
    d = ip[1]
    g = np.empty(d)
    o = 1
    for i in range(d):
        n = ip[2 + i]
        out[i] = trig_eval(fp, o, n, d, x, g)
        if want_jac:
            for j in range(d):
                J[i, j] = g[j]
        o += trig_block_len(n, d)


@njit(cache=True, nogil=True)
def _stepanoff_field(ip, fp, x, out, J, want_jac):
    # ip = [code, d, n, power_flag]; fp = [scale, block_a, alpha, zeta[d]]
    d = ip[1]
    n = ip[2]
    power = ip[3]
    g = np.empty(d)
    a = trig_eval(fp, 1, n, d, x, g)
    o = 1 + trig_block_len(n, d)
    alpha = fp[o]
    zo = o + 1
    if power:
        if a > 0.0:
            val = a**alpha
            dfac = alpha * a ** (alpha - 1.0)
        else:
            val = 0.0
            dfac = 0.0
    else:
        val = a
        dfac = 1.0
    for i in range(d):
        out[i] = val * fp[zo + i]
    if want_jac:
        for i in range(d):
            for j in range(d):
                J[i, j] = dfac * g[j] * fp[zo + i]


@njit(cache=True, nogil=True)
def _stream_field(ip, fp, x, out, J, want_jac):
    # b = rho R_perp grad u, grad u = xi + grad u_per, R_perp(v1, v2) = (v2, -v1)
    # ip = [code, 2, n_rho, rho_reciprocal, n_u]; fp = [scale, block_rho, block_u, xi1, xi2]
    n_rho = ip[2]
    recip = ip[3]
    n_u = ip[4]
    grho = np.empty(2)
    r = trig_eval(fp, 1, n_rho, 2, x, grho)
    if recip:
        rho = 1.0 / r
        for j in range(2):
            grho[j] = -grho[j] / (r * r)
    else:
        rho = r
    ou = 1 + trig_block_len(n_rho, 2)
    n = n_u
    d = 2
    ka = ou
    aa = ou + n * d
    ba = aa + n
    xo = ba + n + 1
    gu0 = fp[xo]
    gu1 = fp[xo + 1]
    h00 = 0.0
    h01 = 0.0
    h11 = 0.0
    for t in range(n):
        k0 = fp[ka + 2 * t]
        k1 = fp[ka + 2 * t + 1]
        ph = TWO_PI * (k0 * x[0] + k1 * x[1])
        c = np.cos(ph)
        s = np.sin(ph)
        a = fp[aa + t]
        b = fp[ba + t]
        dv = TWO_PI * (b * c - a * s)
        gu0 += dv * k0
        gu1 += dv * k1
        d2 = -TWO_PI * TWO_PI * (a * c + b * s)
        h00 += d2 * k0 * k0
        h01 += d2 * k0 * k1
        h11 += d2 * k1 * k1
    out[0] = rho * gu1
    out[1] = -rho * gu0
    if want_jac:
        J[0, 0] = grho[0] * gu1 + rho * h01
        J[0, 1] = grho[1] * gu1 + rho * h11
        J[1, 0] = -(grho[0] * gu0 + rho * h00)
        J[1, 1] = -(grho[1] * gu0 + rho * h01)


@njit(cache=True, nogil=True)
def _stratified_field(ip, fp, x, out, J, want_jac):
    # b = sum_i phi_i(s) alpha_i k with s = p.x mod 1 and p the primitive R_perp k
    # ip = [code, 2, nstrips]; fp = [scale, k1, k2, p1, p2, (s0, width, collar, speed)*]
    ns = ip[2]
    k0 = fp[1]
    k1 = fp[2]
    p0 = fp[3]
    p1 = fp[4]
    s = p0 * x[0] + p1 * x[1]
    s = s - np.floor(s)
    total = 0.0
    dtotal = 0.0
    for i in range(ns):
        o = 5 + 4 * i
        s0 = fp[o]
        width = fp[o + 1]
        collar = fp[o + 2]
        speed = fp[o + 3]
        if width >= 1.0:
            total += speed
            continue
        u = s - s0
        u = u - np.floor(u)
        if u <= width:
            phi = 1.0
            dphi = 0.0
        else:
            left = 1.0 - u
            right = u - width
            if right <= left:
                dist = right
                sgn = 1.0
            else:
                dist = left
                sgn = -1.0
            q = dist / collar
            phi = smoothstep(q)
            dphi = smoothstep_deriv(q) / collar * sgn
        total += phi * speed
        dtotal += dphi * speed
    out[0] = total * k0
    out[1] = total * k1
    if want_jac:
        J[0, 0] = dtotal * k0 * p0
        J[0, 1] = dtotal * k0 * p1
        J[1, 0] = dtotal * k1 * p0
        J[1, 1] = dtotal * k1 * p1


@njit(cache=True, nogil=True)
def axis_distance(fp, o, nshift, x, grad):
    """Distance from ``x`` (in [0,1)^3) to the union of translated axis lines.

    Block layout at ``o``: point[3], unit direction[3], vertex[3], R, delta,
    shifts[nshift*3]. Gradient of the distance written to ``grad``.
    """
    px = fp[o]
    py = fp[o + 1]
    pz = fp[o + 2]
    ux = fp[o + 3]
    uy = fp[o + 4]
    uz = fp[o + 5]
    so = o + 11
    best = 1e300
    bx = 0.0
    by = 0.0
    bz = 0.0
    for m in range(nshift):
        wx = x[0] - px - fp[so + 3 * m]
        wy = x[1] - py - fp[so + 3 * m + 1]
        wz = x[2] - pz - fp[so + 3 * m + 2]
        t = wx * ux + wy * uy + wz * uz
        rx = wx - t * ux
        ry = wy - t * uy
        rz = wz - t * uz
        d2 = rx * rx + ry * ry + rz * rz
        if d2 < best:
            best = d2
            bx = rx
            by = ry
            bz = rz
    dist = np.sqrt(best)
    if dist > 0.0:
        grad[0] = bx / dist
        grad[1] = by / dist
        grad[2] = bz / dist
    else:
        grad[0] = 0.0
        grad[1] = 0.0
        grad[2] = 0.0
    return dist


@njit(cache=True, nogil=True)
def poly3d_block_len(nshift):
    return 11 + 3 * nshift


@njit(cache=True, nogil=True)
def _poly3d_field(ip, fp, x, out, J, want_jac):
    # b = base + sum_i g_i (vertex_i - base), g_i = h(max(0, dist_i - R)/delta)
    # ip = [code, 3, ncyl, nshift_0, ...]; fp = [scale, base[3], cylinder blocks]
    ncyl = ip[2]
    for i in range(3):
        out[i] = fp[1 + i]
        if want_jac:
            for j in range(3):
                J[i, j] = 0.0
    gd = np.empty(3)
    o = 4
    for c in range(ncyl):
        nshift = ip[3 + c]
        R = fp[o + 9]
        delta = fp[o + 10]
        dist = axis_distance(fp, o, nshift, x, gd)
        q = (dist - R) / delta
        if q < 1.0:
            g = smoothstep(q)
            dg = smoothstep_deriv(q) / delta
            for i in range(3):
                dv = fp[o + 6 + i] - fp[1 + i]
                out[i] += g * dv
                if want_jac:
                    for j in range(3):
                        J[i, j] += dg * gd[j] * dv
        o += poly3d_block_len(nshift)


@njit(cache=True, nogil=True)
def field_eval(ip, fp, x, out, J, want_jac):
    """Evaluate the field (and optionally its Jacobian) at lift point ``x``."""
    d = ip[1]
    y = np.empty(d)
    for j in range(d):
        y[j] = x[j] - np.floor(x[j])
    code = ip[0]
    if code == TRIG:
        _trig_field(ip, fp, y, out, J, want_jac)
    elif code == STEPANOFF:
        _stepanoff_field(ip, fp, y, out, J, want_jac)
    elif code == STREAM:
        _stream_field(ip, fp, y, out, J, want_jac)
    elif code == STRATIFIED:
        _stratified_field(ip, fp, y, out, J, want_jac)
    else:
        _poly3d_field(ip, fp, y, out, J, want_jac)
    scale = fp[0]
    if scale != 1.0:
        for i in range(d):
            out[i] *= scale
        if want_jac:
            for i in range(d):
                for j in range(d):
                    J[i, j] *= scale


@njit(cache=True, nogil=True)
def eval_many(ip, fp, X, want_jac):
    m = X.shape[0]
    d = ip[1]
    out = np.empty((m, d))
    Js = np.zeros((m, d, d)) if want_jac else np.zeros((1, d, d))
    J = np.zeros((d, d))
    v = np.empty(d)
    for p in range(m):
        field_eval(ip, fp, X[p], v, J, want_jac)
        for i in range(d):
            out[p, i] = v[i]
        if want_jac:
            for i in range(d):
                for j in range(d):
                    Js[p, i, j] = J[i, j]
    return out, Js


# --------------------------------------------------------------------------
# Dormand-Prince 5(4)

_C = np.array([0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0])
_A = np.array(
    [
        [0.0, 0.0, 0.0, 0.0, 0.0],
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0],
    ]
)
_B = np.array([35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0])
_E = np.array(
    [-71.0 / 57600.0, 0.0, 71.0 / 16695.0, -71.0 / 1920.0, 17253.0 / 339200.0, -22.0 / 525.0, 1.0 / 40.0]
)
# continuous extension of order 4 (Shampine)
_P = np.array(
    [
        [1.0, -8048581381.0 / 2820520608.0, 8663915743.0 / 2820520608.0, -12715105075.0 / 11282082432.0],
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 131558114200.0 / 32700410799.0, -68118460800.0 / 10900136933.0, 87487479700.0 / 32700410799.0],
        [0.0, -1754552775.0 / 470086768.0, 14199869525.0 / 1410260304.0, -10690763975.0 / 1880347072.0],
        [0.0, 127303824393.0 / 49829197408.0, -318862633887.0 / 49829197408.0, 701980252875.0 / 199316789632.0],
        [0.0, -282668133.0 / 205662961.0, 2019193451.0 / 616988883.0, -1453857185.0 / 822651844.0],
        [0.0, 40617522.0 / 29380423.0, -110615467.0 / 29380423.0, 69997945.0 / 29380423.0],
    ]
)


@njit(cache=True, nogil=True)
def _rhs(ip, fp, variational, y, out, v, J):
    d = ip[1]
    field_eval(ip, fp, y, v, J, variational)
    for i in range(d):
        out[i] = v[i]
    if variational:
        # Phi' = Db(x) Phi, Phi stored row-major after the position
        for i in range(d):
            for j in range(d):
                acc = 0.0
                for k in range(d):
                    acc += J[i, k] * y[d + k * d + j]
                out[d + i * d + j] = acc


@njit(cache=True, nogil=True)
def _err_norm(err, y, ynew, rtol, atol):
    n = y.shape[0]
    acc = 0.0
    for i in range(n):
        sc = atol + rtol * max(abs(y[i]), abs(ynew[i]))
        e = err[i] / sc
        acc += e * e
    return np.sqrt(acc / n)


@njit(cache=True, nogil=True)
def dp45(ip, fp, y0, ts, rtol, atol, hmax, hmin, max_steps, variational):
    """Integrate from t=0, reporting the state at the sorted times ``ts``.

    Returns ``(Y, status, t_reached, n_accepted, n_rejected, max_err)``.
    ``max_err`` is the largest scaled local error estimate of accepted steps.
    """
    d = ip[1]
    n = y0.shape[0]
    ns = ts.shape[0]
    Y = np.full((ns, n), np.nan)
    K = np.zeros((7, n))
    v = np.empty(d)
    J = np.zeros((d, d))
    y = y0.copy()
    ynew = np.empty(n)
    ytmp = np.empty(n)
    err = np.empty(n)
    T = ts[ns - 1]
    t = 0.0
    si = 0
    while si < ns and ts[si] <= 0.0:
        for i in range(n):
            Y[si, i] = y[i]
        si += 1
    if si == ns:
        return Y, STATUS_OK, 0.0, 0, 0, 0.0

    _rhs(ip, fp, variational, y, K[0], v, J)
    # initial step (Hairer, Norsett & Wanner, II.4)
    d0 = 0.0
    d1 = 0.0
    for i in range(n):
        sc = atol + rtol * abs(y[i])
        d0 += (y[i] / sc) ** 2
        d1 += (K[0, i] / sc) ** 2
    d0 = np.sqrt(d0 / n)
    d1 = np.sqrt(d1 / n)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    h0 = min(h0, T)
    for i in range(n):
        ytmp[i] = y[i] + h0 * K[0, i]
    _rhs(ip, fp, variational, ytmp, K[1], v, J)
    d2 = 0.0
    for i in range(n):
        sc = atol + rtol * abs(y[i])
        d2 += ((K[1, i] - K[0, i]) / sc) ** 2
    d2 = np.sqrt(d2 / n) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    h = min(100.0 * h0, h1, hmax)

    n_acc = 0
    n_rej = 0
    max_err = 0.0
    status = STATUS_OK
    rejected = False
    while t < T:
        if n_acc + n_rej >= max_steps:
            status = STATUS_MAXSTEPS
            break
        # a final step shorter than hmin is a truncation, not an underflow
        if h < hmin and T - t > hmin:
            status = STATUS_UNDERFLOW
            break
        last = False
        if t + h >= T:
            h = T - t
            last = True
        for s in range(1, 6):
            for i in range(n):
                acc = 0.0
                for r in range(s):
                    acc += _A[s, r] * K[r, i]
                ytmp[i] = y[i] + h * acc
            _rhs(ip, fp, variational, ytmp, K[s], v, J)
        for i in range(n):
            acc = 0.0
            for r in range(6):
                acc += _B[r] * K[r, i]
            ynew[i] = y[i] + h * acc
        _rhs(ip, fp, variational, ynew, K[6], v, J)
        finite = True
        for i in range(n):
            acc = 0.0
            for r in range(7):
                acc += _E[r] * K[r, i]
            err[i] = h * acc
            if not np.isfinite(ynew[i]):
                finite = False
        if not finite:
            status = STATUS_NONFINITE
            break
        en = _err_norm(err, y, ynew, rtol, atol)
        if en <= 1.0:
            # dense output for samples inside (t, t + h]
            tn = t + h
            while si < ns and ts[si] <= tn:
                th = (ts[si] - t) / h
                for i in range(n):
                    acc = 0.0
                    for r in range(7):
                        q = _P[r, 0] * th + _P[r, 1] * th * th + _P[r, 2] * th**3 + _P[r, 3] * th**4
                        acc += K[r, i] * q
                    Y[si, i] = y[i] + h * acc
                si += 1
            t = T if last else tn
            for i in range(n):
                y[i] = ynew[i]
                K[0, i] = K[6, i]
            n_acc += 1
            if en > max_err:
                max_err = en
            if en == 0.0:
                fac = 10.0
            else:
                fac = min(10.0, max(0.2, 0.9 * en**-0.2))
            if rejected:
                fac = min(fac, 1.0)
            rejected = False
            h = min(h * fac, hmax)
        else:
            n_rej += 1
            rejected = True
            h = h * max(0.2, 0.9 * en**-0.2)
    if status == STATUS_OK:
        # the final sample sits exactly at T
        for i in range(n):
            Y[ns - 1, i] = y[i]
    return Y, status, t, n_acc, n_rej, max_err


@njit(cache=True, nogil=True)
def endpoints(ip, fp, X0, T, rtol, atol, hmax, hmin, max_steps):
    """Flow every row of ``X0`` for time ``T``; returns lifts and status codes."""
    m = X0.shape[0]
    d = ip[1]
    out = np.full((m, d), np.nan)
    status = np.zeros(m, dtype=np.int64)
    ts = np.array([0.0, T])
    for p in range(m):
        Y, st, _, _, _, _ = dp45(ip, fp, X0[p].copy(), ts, rtol, atol, hmax, hmin, max_steps, False)
        status[p] = st
        if st == STATUS_OK:
            for i in range(d):
                out[p, i] = Y[1, i]
    return out, status
