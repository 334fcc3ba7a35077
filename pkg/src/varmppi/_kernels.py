"""Compiled numerical core: scalar step kernels and the batched rollout engine.

Every stepper is written once, on unpacked scalars, and reused by the scalar
integrator API, the fine-step plant loop and the K-parallel rollout kernel.
Plant constants travel as the 7-vector from ``ModelParams.coeffs()``.

Noise is decoded inside the rollout kernel from raw Philox output via
Box-Muller, which consumes a fixed two words per control point; sample k
therefore owns the counter range ``[k*wps, (k+1)*wps)`` and the batch is
bit-identical no matter how the samples are scheduled across threads.
"""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit, prange
except ImportError:  # pragma: no cover - numba is a hard dep, guard kept for docs builds
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def deco(fn):
            return fn

        return deco

    prange = range

# stepper codes, mirrored by integrators.StepperKind
EULER = 0
SEMI_IMPLICIT = 1
MIDPOINT = 2
RK4 = 3
VARIATIONAL = 4

TWO_PI = 2.0 * math.pi
INV53 = 1.0 / 9007199254740992.0  # 2**-53

MIDPOINT_MAX_ITERS = 100
MIDPOINT_TOL = 1e-12


@njit(cache=True, inline="always")
def _wrap(a):
    r = a - TWO_PI * math.floor((a + math.pi) / TWO_PI)
    if r <= -math.pi:
        r = math.pi
    return r


@njit(cache=True, inline="always")
def _accel(q1, q2, v1, v2, t1, t2, a1, a2, a3, gc1, gc2, b1, b2):
    c2 = math.cos(q2)
    s2 = math.sin(q2)
    m11 = a1 + a2 + 2.0 * a3 * c2
    m12 = a2 + a3 * c2
    s1 = math.sin(q1)
    s12 = math.sin(q1 + q2)
    r1 = t1 + a3 * s2 * v2 * (2.0 * v1 + v2) - (gc1 * s1 + gc2 * s12) - b1 * v1
    r2 = t2 - a3 * s2 * v1 * v1 - gc2 * s12 - b2 * v2
    det = m11 * a2 - m12 * m12
    return (a2 * r1 - m12 * r2) / det, (m11 * r2 - m12 * r1) / det


@njit(cache=True, inline="always")
def _step_euler(q1, q2, v1, v2, t1, t2, dt, a1, a2, a3, gc1, gc2, b1, b2):
    aa, ab = _accel(q1, q2, v1, v2, t1, t2, a1, a2, a3, gc1, gc2, b1, b2)
    return q1 + v1 * dt, q2 + v2 * dt, v1 + aa * dt, v2 + ab * dt, True


@njit(cache=True, inline="always")
def _step_semi_implicit(q1, q2, v1, v2, t1, t2, dt, a1, a2, a3, gc1, gc2, b1, b2):
    aa, ab = _accel(q1, q2, v1, v2, t1, t2, a1, a2, a3, gc1, gc2, b1, b2)
    vn1 = v1 + aa * dt
    vn2 = v2 + ab * dt
    return q1 + vn1 * dt, q2 + vn2 * dt, vn1, vn2, True


@njit(cache=True, inline="always")
def _step_midpoint(q1, q2, v1, v2, t1, t2, dt, a1, a2, a3, gc1, gc2, b1, b2):
    # y = x + dt f((x+y)/2), solved by a relaxed fixed-point iteration
    y1 = q1 + v1 * dt
    y2 = q2 + v2 * dt
    y3 = v1
    y4 = v2
    ok = False
    d_min = np.inf
    for it in range(MIDPOINT_MAX_ITERS):
        mv1 = 0.5 * (v1 + y3)
        mv2 = 0.5 * (v2 + y4)
        aa, ab = _accel(0.5 * (q1 + y1), 0.5 * (q2 + y2), mv1, mv2,
                        t1, t2, a1, a2, a3, gc1, gc2, b1, b2)
        n1 = q1 + mv1 * dt
        n2 = q2 + mv2 * dt
        n3 = v1 + aa * dt
        n4 = v2 + ab * dt
        u1 = 0.5 * (y1 + n1)
        u2 = 0.5 * (y2 + n2)
        u3 = 0.5 * (y3 + n3)
        u4 = 0.5 * (y4 + n4)
        d = abs(u1 - y1) + abs(u2 - y2) + abs(u3 - y3) + abs(u4 - y4)
        y1, y2, y3, y4 = u1, u2, u3, u4
        scale = 1.0 + abs(y1) + abs(y2) + abs(y3) + abs(y4)
        if not d < 1e30:
            break
        if d <= MIDPOINT_TOL * scale:
            ok = True
            break
        if d < d_min:
            d_min = d
        elif it >= 4 and d > 4.0 * d_min:
            break  # clear growth past the transient: not contracting
    if not (math.isfinite(y1) and math.isfinite(y2) and math.isfinite(y3) and math.isfinite(y4)):
        ok = False
    return y1, y2, y3, y4, ok


@njit(cache=True, inline="always")
def _step_rk4(q1, q2, v1, v2, t1, t2, dt, a1, a2, a3, gc1, gc2, b1, b2):
    k1a, k1b = _accel(q1, q2, v1, v2, t1, t2, a1, a2, a3, gc1, gc2, b1, b2)
    h = 0.5 * dt
    q1b = q1 + h * v1
    q2b = q2 + h * v2
    v1b = v1 + h * k1a
    v2b = v2 + h * k1b
    k2a, k2b = _accel(q1b, q2b, v1b, v2b, t1, t2, a1, a2, a3, gc1, gc2, b1, b2)
    q1c = q1 + h * v1b
    q2c = q2 + h * v2b
    v1c = v1 + h * k2a
    v2c = v2 + h * k2b
    k3a, k3b = _accel(q1c, q2c, v1c, v2c, t1, t2, a1, a2, a3, gc1, gc2, b1, b2)
    q1d = q1 + dt * v1c
    q2d = q2 + dt * v2c
    v1d = v1 + dt * k3a
    v2d = v2 + dt * k3b
    k4a, k4b = _accel(q1d, q2d, v1d, v2d, t1, t2, a1, a2, a3, gc1, gc2, b1, b2)
    sixth = dt / 6.0
    qn1 = q1 + sixth * (v1 + 2.0 * v1b + 2.0 * v1c + v1d)
    qn2 = q2 + sixth * (v2 + 2.0 * v2b + 2.0 * v2c + v2d)
    vn1 = v1 + sixth * (k1a + 2.0 * k2a + 2.0 * k3a + k4a)
    vn2 = v2 + sixth * (k1b + 2.0 * k2b + 2.0 * k3b + k4b)
    return qn1, qn2, vn1, vn2, True


@njit(cache=True, inline="always")
def _dld(qa1, qa2, qb1, qb2, dt, a1, a2, a3, gc1, gc2):
    """Slot gradients (D1, D2) of the midpoint discrete Lagrangian."""
    m1_ = 0.5 * (qa1 + qb1)
    m2_ = 0.5 * (qa2 + qb2)
    w1 = (qb1 - qa1) / dt
    w2 = (qb2 - qa2) / dt
    c2m = math.cos(m2_)
    s2m = math.sin(m2_)
    mm11 = a1 + a2 + 2.0 * a3 * c2m
    mm12 = a2 + a3 * c2m
    mw1 = mm11 * w1 + mm12 * w2
    mw2 = mm12 * w1 + a2 * w2
    k2 = -a3 * s2m * w1 * (w1 + w2)
    s12m = math.sin(m1_ + m2_)
    gv1 = gc1 * math.sin(m1_) + gc2 * s12m
    gv2 = gc2 * s12m
    h = 0.5 * dt
    return (-mw1 - h * gv1, h * k2 - mw2 - h * gv2,
            mw1 - h * gv1, h * k2 + mw2 - h * gv2)


@njit(cache=True, inline="always")
def _vi_newton_matrix(qa1, qa2, qb1, qb2, dt, a1, a2, a3, gc1, gc2, b1, b2):
    """Jacobian wrt the second slot of the forced momentum residual."""
    m1_ = 0.5 * (qa1 + qb1)
    m2_ = 0.5 * (qa2 + qb2)
    w1 = (qb1 - qa1) / dt
    w2 = (qb2 - qa2) / dt
    c2m = math.cos(m2_)
    s2m = math.sin(m2_)
    mm11 = a1 + a2 + 2.0 * a3 * c2m
    mm12 = a2 + a3 * c2m
    c12m = math.cos(m1_ + m2_)
    hv11 = gc1 * math.cos(m1_) + gc2 * c12m
    hv12 = gc2 * c12m
    g = 0.5 * a3 * s2m * (2.0 * w1 + w2)
    qdt = 0.25 * dt
    a11 = -mm11 / dt - qdt * hv11 - 0.5 * b1
    a12 = g - mm12 / dt - qdt * hv12
    a21 = -g - mm12 / dt - qdt * hv12
    a22 = -qdt * a3 * c2m * w1 * (w1 + w2) - a2 / dt - qdt * hv12 - 0.5 * b2
    return a11, a12, a21, a22


@njit(cache=True, inline="always")
def _step_vi(q1, q2, v1, v2, t1, t2, dt, a1, a2, a3, gc1, gc2, b1, b2, iters, tol):
    c2 = math.cos(q2)
    m11 = a1 + a2 + 2.0 * a3 * c2
    m12 = a2 + a3 * c2
    p1 = m11 * v1 + m12 * v2
    p2 = m12 * v1 + a2 * v2
    # explicit Euler guess for the next configuration, then momentum matching;
    # residual and Newton matrix share one midpoint trig evaluation (hot path,
    # must stay consistent with _dld/_vi_newton_matrix)
    qb1 = q1 + v1 * dt
    qb2 = q2 + v2 * dt
    h = 0.5 * dt
    for _ in range(iters):
        m1_ = 0.5 * (q1 + qb1)
        m2_ = 0.5 * (q2 + qb2)
        w1 = (qb1 - q1) / dt
        w2 = (qb2 - q2) / dt
        c2m = math.cos(m2_)
        s2m = math.sin(m2_)
        mm11 = a1 + a2 + 2.0 * a3 * c2m
        mm12 = a2 + a3 * c2m
        s12m = math.sin(m1_ + m2_)
        c12m = math.cos(m1_ + m2_)
        k2 = -a3 * s2m * w1 * (w1 + w2)
        gv1 = gc1 * math.sin(m1_) + gc2 * s12m
        gv2 = gc2 * s12m
        d1a = -(mm11 * w1 + mm12 * w2) - h * gv1
        d1b = h * k2 - (mm12 * w1 + a2 * w2) - h * gv2
        r1 = p1 + d1a + h * (t1 - b1 * w1)
        r2 = p2 + d1b + h * (t2 - b2 * w2)
        if math.hypot(r1, r2) <= tol:
            break
        hv11 = gc1 * math.cos(m1_) + gc2 * c12m
        hv12 = gc2 * c12m
        g = 0.5 * a3 * s2m * (2.0 * w1 + w2)
        qdt = 0.25 * dt
        a11 = -mm11 / dt - qdt * hv11 - 0.5 * b1
        a12 = g - mm12 / dt - qdt * hv12
        a21 = -g - mm12 / dt - qdt * hv12
        a22 = -qdt * a3 * c2m * w1 * (w1 + w2) - a2 / dt - qdt * hv12 - 0.5 * b2
        det = a11 * a22 - a12 * a21
        if not abs(det) > 1e-30:
            return q1, q2, v1, v2, False
        qb1 -= (a22 * r1 - a12 * r2) / det
        qb2 -= (a11 * r2 - a21 * r1) / det
    _, _, d2a, d2b = _dld(q1, q2, qb1, qb2, dt, a1, a2, a3, gc1, gc2)
    w1 = (qb1 - q1) / dt
    w2 = (qb2 - q2) / dt
    pn1 = d2a + h * (t1 - b1 * w1)
    pn2 = d2b + h * (t2 - b2 * w2)
    c2n = math.cos(qb2)
    n11 = a1 + a2 + 2.0 * a3 * c2n
    n12 = a2 + a3 * c2n
    det = n11 * a2 - n12 * n12
    vn1 = (a2 * pn1 - n12 * pn2) / det
    vn2 = (n11 * pn2 - n12 * pn1) / det
    if not (math.isfinite(qb1) and math.isfinite(qb2)
            and math.isfinite(vn1) and math.isfinite(vn2)):
        return q1, q2, v1, v2, False
    return qb1, qb2, vn1, vn2, True


@njit(cache=True, inline="always")
def _step(code, q1, q2, v1, v2, t1, t2, dt, a1, a2, a3, gc1, gc2, b1, b2, iters, tol):
    if code == 0:
        return _step_euler(q1, q2, v1, v2, t1, t2, dt, a1, a2, a3, gc1, gc2, b1, b2)
    elif code == 1:
        return _step_semi_implicit(q1, q2, v1, v2, t1, t2, dt, a1, a2, a3, gc1, gc2, b1, b2)
    elif code == 2:
        return _step_midpoint(q1, q2, v1, v2, t1, t2, dt, a1, a2, a3, gc1, gc2, b1, b2)
    elif code == 3:
        return _step_rk4(q1, q2, v1, v2, t1, t2, dt, a1, a2, a3, gc1, gc2, b1, b2)
    return _step_vi(q1, q2, v1, v2, t1, t2, dt, a1, a2, a3, gc1, gc2, b1, b2, iters, tol)


@njit(cache=True)
def _trajectory(code, x0, t1, t2, dt, n, phys, iters, tol, out):
    """Constant-torque trajectory; returns the number of successful steps."""
    a1 = phys[0]
    a2 = phys[1]
    a3 = phys[2]
    gc1 = phys[3]
    gc2 = phys[4]
    b1 = phys[5]
    b2 = phys[6]
    q1 = x0[0]
    q2 = x0[1]
    v1 = x0[2]
    v2 = x0[3]
    out[0, 0] = q1
    out[0, 1] = q2
    out[0, 2] = v1
    out[0, 3] = v2
    for i in range(n):
        q1, q2, v1, v2, ok = _step(code, q1, q2, v1, v2, t1, t2, dt,
                                   a1, a2, a3, gc1, gc2, b1, b2, iters, tol)
        if not ok:
            return i
        out[i + 1, 0] = q1
        out[i + 1, 1] = q2
        out[i + 1, 2] = v1
        out[i + 1, 3] = v2
    return n


@njit(cache=True)
def _advance(code, q1, q2, v1, v2, t1, t2, dt, nsub, phys, iters, tol):
    """Advance nsub fixed steps under a zero-order-hold torque."""
    a1 = phys[0]
    a2 = phys[1]
    a3 = phys[2]
    gc1 = phys[3]
    gc2 = phys[4]
    b1 = phys[5]
    b2 = phys[6]
    ok = True
    for _ in range(nsub):
        q1, q2, v1, v2, ok = _step(code, q1, q2, v1, v2, t1, t2, dt,
                                   a1, a2, a3, gc1, gc2, b1, b2, iters, tol)
        if not ok:
            break
    return q1, q2, v1, v2, ok


@njit(cache=True, parallel=True)
def _rollout_kernel(code, x0, raw, words_per_sample, nominal, l11, l21, l22,
                    dt, phys, iters, tol, tau_max, act1, act2,
                    goal, qdiag, rdiag, pdiag, gamma, si11, si12, si22,
                    pert, costs):
    K = costs.shape[0]
    T = nominal.shape[0]
    a1 = phys[0]
    a2 = phys[1]
    a3 = phys[2]
    gc1 = phys[3]
    gc2 = phys[4]
    b1 = phys[5]
    b2 = phys[6]
    gq1 = goal[0]
    gq2 = goal[1]
    gv1 = goal[2]
    gv2 = goal[3]
    for k in prange(K):
        base = k * words_per_sample
        for t in range(T):
            w0 = raw[base + 2 * t]
            w1_ = raw[base + 2 * t + 1]
            u1 = 1.0 - (w0 >> 11) * INV53  # (0, 1], keeps the log finite
            u2 = (w1_ >> 11) * INV53
            rad = math.sqrt(-2.0 * math.log(u1))
            ang = TWO_PI * u2
            z0 = rad * math.cos(ang)
            z1 = rad * math.sin(ang)
            pert[k, t, 0] = l11 * z0
            pert[k, t, 1] = l21 * z0 + l22 * z1
        q1 = x0[0]
        q2 = x0[1]
        v1 = x0[2]
        v2 = x0[3]
        c = 0.0
        failed = False
        for t in range(T):
            un0 = nominal[t, 0]
            un1 = nominal[t, 1]
            du0 = pert[k, t, 0]
            du1 = pert[k, t, 1]
            e0 = _wrap(q1 - gq1)
            e1 = _wrap(q2 - gq2)
            e2 = v1 - gv1
            e3 = v2 - gv2
            c += qdiag[0] * e0 * e0 + qdiag[1] * e1 * e1 + qdiag[2] * e2 * e2 + qdiag[3] * e3 * e3
            c += rdiag[0] * un0 * un0 + rdiag[1] * un1 * un1
            if gamma != 0.0:
                c += gamma * ((un0 + du0) * (si11 * un0 + si12 * un1)
                              + (un1 + du1) * (si12 * un0 + si22 * un1))
            ua0 = (un0 + du0) * act1
            ua1 = (un1 + du1) * act2
            if ua0 > tau_max:
                ua0 = tau_max
            elif ua0 < -tau_max:
                ua0 = -tau_max
            if ua1 > tau_max:
                ua1 = tau_max
            elif ua1 < -tau_max:
                ua1 = -tau_max
            q1, q2, v1, v2, ok = _step(code, q1, q2, v1, v2, ua0, ua1, dt,
                                       a1, a2, a3, gc1, gc2, b1, b2, iters, tol)
            if not ok:
                failed = True
                break
        if failed:
            costs[k] = np.inf
        else:
            e0 = _wrap(q1 - gq1)
            e1 = _wrap(q2 - gq2)
            e2 = v1 - gv1
            e3 = v2 - gv2
            c += pdiag[0] * e0 * e0 + pdiag[1] * e1 * e1 + pdiag[2] * e2 * e2 + pdiag[3] * e3 * e3
            costs[k] = c if math.isfinite(c) else np.inf
