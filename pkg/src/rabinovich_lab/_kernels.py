"""Hot numeric kernels.

Everything here is written against the numba nopython subset so that the
same source runs compiled (numba backend) or interpreted (numpy backend);
see :mod:`rabinovich_lab._backend`.  Kernels take flat float64 parameter
arrays instead of objects.
"""

import numpy as np

from ._backend import NUMBA_AVAILABLE, njit

# Perturbation mode codes shared with field_core.Mode.
MODE_NONE = 0
MODE_CASIMIR_STAB = 1
MODE_CASIMIR_DESTAB = 2
MODE_ENERGY_STAB = 3
MODE_ENERGY_DESTAB = 4
MODE_FULL = 5

# Integration status codes.
STATUS_DONE = 0
STATUS_EVENT = 1
STATUS_DIVERGED = 2
STATUS_BUDGET = 3
STATUS_UNDERFLOW = 4
STATUS_NONFINITE = 5

# Dormand-Prince 5(4) tableau, FSAL form.
_C2, _C3, _C4, _C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
_A21 = 1 / 5
_A31, _A32 = 3 / 40, 9 / 40
_A41, _A42, _A43 = 44 / 45, -56 / 15, 32 / 9
_A51, _A52, _A53, _A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
_A61, _A62, _A63, _A64, _A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
_B1, _B3, _B4, _B5, _B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
# error weights: 5th-order minus embedded 4th-order solution
_E1, _E3, _E4, _E5, _E6, _E7 = (
    -71 / 57600, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40,
)

# Continuous extension (Shampine's choice of c6); rows are stages, columns
# multiply theta, theta^2, theta^3, theta^4.
DENSE_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0
_PI_BETA = 0.04
_PI_ALPHA = 0.2 - 0.75 * _PI_BETA


@njit
def rabinovich_field(u, params):
    """Hamilton-Poisson field of the Rabinovich system with optional leaf corrections.

    ``params = [beta, mode, h, c, gain_a, gain_b]``.  Built from the gradient
    cross products, not from the expanded polynomials.
    """
    beta = params[0]
    mode = int(params[1])
    x, y, z = u[0], u[1], u[2]
    hx, hy, hz = 0.5 * x, 0.5 * y, -beta
    cx, cy, cz = -x, y, 2.0 * z
    fx = hy * cz - hz * cy
    fy = hz * cx - hx * cz
    fz = hx * cy - hy * cx
    out = np.empty(3)
    out[0] = fx
    out[1] = fy
    out[2] = fz
    if mode == MODE_CASIMIR_STAB or mode == MODE_CASIMIR_DESTAB or mode == MODE_FULL:
        s = 1.0 if mode == MODE_CASIMIR_DESTAB else -1.0
        k = s * params[4] * (0.25 * (x * x + y * y) - beta * z - params[2])
        out[0] += k * (cy * fz - cz * fy)
        out[1] += k * (cz * fx - cx * fz)
        out[2] += k * (cx * fy - cy * fx)
    if mode == MODE_ENERGY_STAB or mode == MODE_ENERGY_DESTAB or mode == MODE_FULL:
        s = -1.0 if mode == MODE_ENERGY_DESTAB else 1.0
        k = s * params[5] * (0.5 * (y * y - x * x) + z * z - params[3])
        out[0] += k * (hy * fz - hz * fy)
        out[1] += k * (hz * fx - hx * fz)
        out[2] += k * (hx * fy - hy * fx)
    return out


@njit
def rabinovich_variational(y, params):
    """Flow plus variational equation, state ``[u, vec(Phi)]`` (row-major Phi).

    ``params`` is two field parameter blocks of six entries: the first drives
    the base point ``u``, the second supplies the Jacobian in
    ``Phi' = J(u) Phi``.  The Jacobian is taken by central differences with
    step ``1e-6 * (1 + |u|)``.
    """
    base = params[:6]
    lin = params[6:12]
    u = y[:3].copy()
    f = rabinovich_field(u, base)
    step = 1e-6 * (1.0 + np.sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2]))
    jac = np.empty((3, 3))
    for j in range(3):
        up = u.copy()
        um = u.copy()
        up[j] += step
        um[j] -= step
        fp = rabinovich_field(up, lin)
        fm = rabinovich_field(um, lin)
        for i in range(3):
            jac[i, j] = (fp[i] - fm[i]) / (2.0 * step)
    out = np.empty(12)
    out[:3] = f
    for i in range(3):
        for j in range(3):
            acc = 0.0
            for k in range(3):
                acc += jac[i, k] * y[3 + 3 * k + j]
            out[3 + 3 * i + j] = acc
    return out


@njit
def _event_value(y, anchor, normal):
    return (normal[0] * (y[0] - anchor[0]) + normal[1] * (y[1] - anchor[1])
            + normal[2] * (y[2] - anchor[2]))


@njit
def dopri5_loop(rhs, params, y0, t0, t_end, rtol, atol, h_init, h_max, max_steps,
                blowup, use_event, anchor, normal, direction, t_min):
    """Adaptive Dormand-Prince 5(4) integration from ``t0`` to ``t_end``.

    Returns ``(status, ts, ys, qs)`` where ``qs[i]`` holds the dense-output
    coefficients of step ``i``: ``y(ts[i] + th) = ys[i] + h * qs[i] @ [th, th^2, th^3, th^4]``.
    The local error of each accepted step satisfies
    ``|err_j| <= atol + rtol * max(|y_j|, |y_new_j|)`` componentwise.
    """
    n = y0.shape[0]
    cap = 256
    ts = np.empty(cap)
    ys = np.empty((cap, n))
    qs = np.empty((cap, n, 4))
    ts[0] = t0
    ys[0] = y0
    count = 0
    status = STATUS_DONE
    if t_end <= t0:
        return status, ts[:1].copy(), ys[:1].copy(), qs[:0].copy()

    t = t0
    y = y0.copy()
    k1 = rhs(y, params)
    h = min(h_init, h_max, t_end - t0)
    err_old = 1e-4
    rejected = False
    nonfinite = False
    g_old = 0.0
    if use_event:
        g_old = _event_value(y, anchor, normal)
    kmat = np.empty((7, n))

    while True:
        if count >= max_steps:
            status = STATUS_BUDGET
            break
        if h < 1e-14 * max(1.0, abs(t)):
            status = STATUS_NONFINITE if nonfinite else STATUS_UNDERFLOW
            break
        last = False
        if t + h >= t_end:
            h = t_end - t
            last = True

        k2 = rhs(y + h * (_A21 * k1), params)
        k3 = rhs(y + h * (_A31 * k1 + _A32 * k2), params)
        k4 = rhs(y + h * (_A41 * k1 + _A42 * k2 + _A43 * k3), params)
        k5 = rhs(y + h * (_A51 * k1 + _A52 * k2 + _A53 * k3 + _A54 * k4), params)
        k6 = rhs(y + h * (_A61 * k1 + _A62 * k2 + _A63 * k3 + _A64 * k4 + _A65 * k5), params)
        y_new = y + h * (_B1 * k1 + _B3 * k3 + _B4 * k4 + _B5 * k5 + _B6 * k6)
        k7 = rhs(y_new, params)
        e = h * (_E1 * k1 + _E3 * k3 + _E4 * k4 + _E5 * k5 + _E6 * k6 + _E7 * k7)

        err = 0.0
        finite = True
        for j in range(n):
            if not np.isfinite(y_new[j]) or not np.isfinite(e[j]):
                finite = False
                break
            scale = atol + rtol * max(abs(y[j]), abs(y_new[j]))
            r = abs(e[j]) / scale
            if r > err:
                err = r
        if not finite:
            nonfinite = True
            h *= 0.25
            rejected = True
            continue
        nonfinite = False

        if err > 1.0:
            h *= max(_MIN_FACTOR, _SAFETY * err ** -0.2)
            rejected = True
            continue

        # accepted
        if count + 1 >= cap:
            cap *= 2
            ts2 = np.empty(cap)
            ys2 = np.empty((cap, n))
            qs2 = np.empty((cap, n, 4))
            ts2[:count + 1] = ts[:count + 1]
            ys2[:count + 1] = ys[:count + 1]
            qs2[:count] = qs[:count]
            ts, ys, qs = ts2, ys2, qs2
        kmat[0] = k1
        kmat[1] = k2
        kmat[2] = k3
        kmat[3] = k4
        kmat[4] = k5
        kmat[5] = k6
        kmat[6] = k7
        qs[count] = kmat.T @ DENSE_P
        t_new = t_end if last else t + h
        ts[count + 1] = t_new
        ys[count + 1] = y_new
        count += 1

        if err == 0.0:
            factor = _MAX_FACTOR
        else:
            factor = _SAFETY * err ** -_PI_ALPHA * err_old ** _PI_BETA
            factor = min(_MAX_FACTOR, max(_MIN_FACTOR, factor))
        if rejected:
            factor = min(factor, 1.0)
        rejected = False
        err_old = max(err, 1e-4)

        t = t_new
        y = y_new
        k1 = k7
        h = min(h * factor, h_max)

        if blowup > 0.0:
            norm = np.sqrt(y[0] * y[0] + y[1] * y[1] + y[2] * y[2])
            if norm > blowup:
                status = STATUS_DIVERGED
                break
        if use_event:
            g_new = _event_value(y, anchor, normal)
            if t > t_min:
                up = g_old < 0.0 and g_new >= 0.0
                down = g_old > 0.0 and g_new <= 0.0
                if (direction >= 0 and up) or (direction <= 0 and down):
                    status = STATUS_EVENT
                    break
            g_old = g_new
        if last:
            break

    return status, ts[:count + 1].copy(), ys[:count + 1].copy(), qs[:count].copy()


@njit
def _fiber_newton_loop(hs, cs, beta, seeds, tol, max_iter):
    m = hs.shape[0]
    pts = seeds.copy()
    res = np.empty(m)
    iters = np.zeros(m, dtype=np.int64)
    flags = np.zeros(m, dtype=np.int64)  # 0 ok, 1 not converged, 2 rank deficient
    for i in range(m):
        x, y, z = pts[i, 0], pts[i, 1], pts[i, 2]
        r = 0.0
        for it in range(max_iter + 1):
            f1 = 0.25 * (x * x + y * y) - beta * z - hs[i]
            f2 = 0.5 * (y * y - x * x) + z * z - cs[i]
            r = max(abs(f1), abs(f2))
            if r <= tol:
                break
            if it == max_iter:
                flags[i] = 1
                break
            ax, ay, az = 0.5 * x, 0.5 * y, -beta
            bx, by, bz = -x, y, 2.0 * z
            g11 = ax * ax + ay * ay + az * az
            g12 = ax * bx + ay * by + az * bz
            g22 = bx * bx + by * by + bz * bz
            det = g11 * g22 - g12 * g12
            if det <= 1e-14 * g11 * g22 or g11 == 0.0 or g22 == 0.0:
                flags[i] = 2
                break
            l1 = (g22 * f1 - g12 * f2) / det
            l2 = (g11 * f2 - g12 * f1) / det
            x -= l1 * ax + l2 * bx
            y -= l1 * ay + l2 * by
            z -= l1 * az + l2 * bz
            iters[i] = it + 1
        pts[i, 0], pts[i, 1], pts[i, 2] = x, y, z
        res[i] = r
    return pts, res, iters, flags


def _fiber_newton_vectorized(hs, cs, beta, seeds, tol, max_iter):
    pts = np.array(seeds, dtype=float, copy=True)
    m = len(hs)
    iters = np.zeros(m, dtype=np.int64)
    flags = np.zeros(m, dtype=np.int64)
    active = np.ones(m, dtype=bool)
    res = np.empty(m)
    for it in range(max_iter + 1):
        x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
        f1 = 0.25 * (x * x + y * y) - beta * z - hs
        f2 = 0.5 * (y * y - x * x) + z * z - cs
        r = np.maximum(np.abs(f1), np.abs(f2))
        res[active] = r[active]
        active &= r > tol
        if not active.any():
            break
        if it == max_iter:
            flags[active] = 1
            break
        ga = np.stack([0.5 * x, 0.5 * y, np.full(m, -beta)], axis=1)
        gb = np.stack([-x, y, 2.0 * z], axis=1)
        g11 = np.einsum("ij,ij->i", ga, ga)
        g12 = np.einsum("ij,ij->i", ga, gb)
        g22 = np.einsum("ij,ij->i", gb, gb)
        det = g11 * g22 - g12 * g12
        bad = active & ((det <= 1e-14 * g11 * g22) | (g11 == 0.0) | (g22 == 0.0))
        flags[bad] = 2
        active &= ~bad
        safe = np.where(active, det, 1.0)
        l1 = np.where(active, (g22 * f1 - g12 * f2) / safe, 0.0)
        l2 = np.where(active, (g11 * f2 - g12 * f1) / safe, 0.0)
        pts -= l1[:, None] * ga + l2[:, None] * gb
        iters[active] = it + 1
    return pts, res, iters, flags


def fiber_newton_batch(hs, cs, beta, seeds, tol=1e-10, max_iter=50, vectorized=None):
    """Least-norm Newton on ``(H - h, C - c) = 0`` for many level pairs at once.

    Returns ``(points, residuals, iterations, flags)``; flag 0 means converged,
    1 means the iteration budget ran out, 2 means the 2x3 Jacobian lost rank.
    """
    hs = np.ascontiguousarray(hs, dtype=float)
    cs = np.ascontiguousarray(cs, dtype=float)
    seeds = np.ascontiguousarray(seeds, dtype=float).reshape(-1, 3)
    if vectorized is None:
        vectorized = not NUMBA_AVAILABLE
    if vectorized:
        return _fiber_newton_vectorized(hs, cs, float(beta), seeds, tol, max_iter)
    return _fiber_newton_loop(hs, cs, float(beta), seeds, float(tol), int(max_iter))
