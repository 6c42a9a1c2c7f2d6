"""Adaptive Runge-Kutta core shared by every simulation in the package.

One embedded Dormand-Prince 5(4) integrator drives both model forms:

* kind 0: the physical device in (z, v, lam) coordinates with perfectly
  inelastic end stops. Contact latches position and velocity; while
  latched only the flux integrates, and the armature releases when the
  net spring-plus-magnet force points back into the stroke. Contact and
  release instants are localized by bisection on the step interpolant.
* kind 1: the identifiable realization in (x1, x2, x3) coordinates,
  free flight only (no stops exist in that coordinate frame).

The drive voltage is evaluated inside the right-hand side as a pure
function of time, either a constant or the flatness-based feedforward
(pre-charge ramp, tracking segment, hold). Everything here is written
with plain floats and preallocated arrays so numba can compile it; the
same source runs uncompiled (slowly) when numba is unavailable, with
identical IEEE arithmetic either way.
"""

from __future__ import annotations

import math

try:  # optional accelerator; semantics identical without it
    from numba import njit as _njit

    def _jit(fn):
        return _njit(cache=True, fastmath=False)(fn)

    NUMBA_ENABLED = True
except ImportError:  # pragma: no cover - exercised only without numba
    def _jit(fn):
        return fn

    NUMBA_ENABLED = False

# Status codes returned by the integrator.
OK = 0
SATURATED = 1          # device flux reached its saturation limit
INFEASIBLE = 2         # feedforward radicand went negative
SINGULAR = 3           # commanded flux fell below the inversion guard
STEP_UNDERFLOW = 4
CTRL_SATURATED = 5     # commanded flux at or beyond model saturation
BUDGET_EXCEEDED = 6    # step or event capacity exhausted

# Event kinds.
EV_CONTACT_MIN = 1
EV_CONTACT_MAX = 2
EV_RELEASE_MIN = 3
EV_RELEASE_MAX = 4

# Contact states (match model.FREE / HELD_AT_MIN / HELD_AT_MAX).
_FREE = 0
_HELD_MIN = 1
_HELD_MAX = 2

# Dormand-Prince 5(4) tableau.
_C2, _C3, _C4, _C5 = 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0
_A21 = 1.0 / 5.0
_A31, _A32 = 3.0 / 40.0, 9.0 / 40.0
_A41, _A42, _A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
_A51, _A52, _A53, _A54 = (19372.0 / 6561.0, -25360.0 / 2187.0,
                          64448.0 / 6561.0, -212.0 / 729.0)
_A61, _A62, _A63, _A64, _A65 = (9017.0 / 3168.0, -355.0 / 33.0,
                                46732.0 / 5247.0, 49.0 / 176.0,
                                -5103.0 / 18656.0)
_B1, _B3, _B4, _B5, _B6 = (35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0,
                           -2187.0 / 6784.0, 11.0 / 84.0)
_E1, _E3, _E4, _E5, _E6, _E7 = (71.0 / 57600.0, -71.0 / 16695.0,
                                71.0 / 1920.0, -17253.0 / 339200.0,
                                22.0 / 525.0, -1.0 / 40.0)

_SAT_MARGIN = 1.0e-12


def _control_u(t, th, ctrl, dcoef):
    """Drive voltage at time t. Returns (u, status).

    ctrl[0] selects the law: 0 holds the constant ctrl[1]; 1 is the flat
    feedforward with ctrl = [1, -, t_pre, T, x3_target, x3_eps,
    hold_boost, hold_ramp]. The feedforward reference rows in dcoef are
    polynomials in s = tau/T, clamped outside [0, 1] with zero
    derivatives, which makes the post-touchdown hold a plain
    continuation of the same formula. After the tracking window the
    commanded flux is additionally raised by the smoothstepped
    hold_boost fraction over hold_ramp seconds, so the seating force
    ends decisively above the spring preload instead of at the neutral
    balance the inversion alone would command.
    """
    if ctrl[0] == 0.0:
        return ctrl[1], OK
    t_pre = ctrl[2]
    T = ctrl[3]
    tau = t - t_pre
    if tau < 0.0:
        # Pre-charge: smoothstep flux ramp toward the tracking start flux,
        # with resistive compensation at the parked position.
        s = (tau + t_pre) / t_pre
        if s < 0.0:
            s = 0.0
        x3t = ctrl[4]
        w = s * s * (3.0 - 2.0 * s)
        dw = 6.0 * s * (1.0 - s) / t_pre
        lam_r = x3t * w
        dlam_r = x3t * dw
        margin = 1.0 - lam_r / th[5]
        if margin <= _SAT_MARGIN:
            return 0.0, CTRL_SATURATED
        y10 = dcoef[0, 0]  # flat reference at tracking start (s = 0)
        return dlam_r + th[6] * lam_r * (y10 + th[4] / margin), OK
    s = tau / T
    if s > 1.0:
        s = 1.0
    y0 = dcoef[0, 7]
    d1 = dcoef[1, 7]
    d2 = dcoef[2, 7]
    d3 = dcoef[3, 7]
    for j in range(6, -1, -1):
        y0 = y0 * s + dcoef[0, j]
        d1 = d1 * s + dcoef[1, j]
        d2 = d2 * s + dcoef[2, j]
        d3 = d3 * s + dcoef[3, j]
    if tau > T:
        d1 = 0.0
        d2 = 0.0
        d3 = 0.0
    g = -(2.0 / th[3]) * (d2 + th[0] * y0 + th[1] * d1 + th[2])
    if g < 0.0:
        return 0.0, INFEASIBLE
    x3 = math.sqrt(g)
    if x3 < ctrl[5]:
        return 0.0, SINGULAR
    dx3 = -(d3 + th[0] * d1 + th[1] * d2) / (th[3] * x3)
    if tau > T and ctrl[6] != 0.0:
        # Hold-boost ramp; the clamped rows give dx3 = 0 here, so the
        # ramp rate is the whole flux derivative.
        sh = (tau - T) / ctrl[7]
        if sh > 1.0:
            sh = 1.0
        dx3 = x3 * ctrl[6] * 6.0 * sh * (1.0 - sh) / ctrl[7]
        x3 = x3 * (1.0 + ctrl[6] * sh * sh * (3.0 - 2.0 * sh))
    margin = 1.0 - x3 / th[5]
    if margin <= _SAT_MARGIN:
        return 0.0, CTRL_SATURATED
    return dx3 + th[6] * x3 * (y0 + th[4] / margin), OK


def _rhs(kind, t, a, b, c, latch, pp, th, ctrl, dcoef):
    """Time derivatives of (a, b, c). Returns (da, db, dc, status)."""
    u, status = _control_u(t, th, ctrl, dcoef)
    if status != OK:
        return 0.0, 0.0, 0.0, status
    if kind == 0:
        margin = 1.0 - abs(c) / pp[7]
        if margin <= _SAT_MARGIN:
            return 0.0, 0.0, 0.0, SATURATED
        cur = c * (pp[5] + pp[4] * a + pp[6] / margin)
        dc = -pp[8] * cur + u
        if latch != _FREE:
            return 0.0, 0.0, dc, OK
        da = b
        db = (-pp[1] * (a - pp[2]) - pp[3] * b - 0.5 * pp[4] * c * c) / pp[0]
        return da, db, dc, OK
    margin = 1.0 - abs(c) / th[5]
    if margin <= _SAT_MARGIN:
        return 0.0, 0.0, 0.0, SATURATED
    da = b
    db = -th[0] * a - th[1] * b - 0.5 * th[3] * c * c - th[2]
    dc = -th[6] * c * (a + th[4] / margin) + u
    return da, db, dc, OK


def _net_force(pp, z, lam):
    """Static spring-plus-magnet force at zero velocity, + toward z_max."""
    return -pp[1] * (z - pp[2]) - 0.5 * pp[4] * lam * lam


def _hermite(theta, h, y0, f0, y1, f1):
    """Cubic Hermite interpolation on one accepted step."""
    om = 1.0 - theta
    h00 = (1.0 + 2.0 * theta) * om * om
    h10 = theta * om * om
    h01 = theta * theta * (3.0 - 2.0 * theta)
    h11 = theta * theta * (theta - 1.0)
    return h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1


def integrate(kind, pp, th, ctrl, dcoef,
              a0, b0, c0, latch0,
              t0, tf, rel_tol, abs_tol, dt_max, event_tol, max_steps,
              brk, ts, out_a, out_b, out_c, out_u, ev_t, ev_k):
    """Integrate from t0 to tf, filling the sample arrays along the way.

    Samples at ts (sorted, within [t0, tf]) are produced from the cubic
    Hermite interpolant of each accepted step, so the step sequence is
    independent of the sampling grid. Events (contact/release, physical
    model only) are appended to ev_t/ev_k. Returns
    (status, t_stop, n_events, n_steps).
    """
    t = t0
    a = a0
    b = b0
    c = c0
    latch = latch0
    n_ev = 0
    n_steps = 0
    isamp = 0
    ibrk = 0
    n_s = ts.shape[0]
    n_b = brk.shape[0]
    tiny = 1.0e-15

    # Leading samples at (or numerically before) t0.
    while isamp < n_s and ts[isamp] <= t + tiny:
        u0, st = _control_u(ts[isamp], th, ctrl, dcoef)
        if st != OK:
            return st, t, n_ev, n_steps
        out_a[isamp] = a
        out_b[isamp] = b
        out_c[isamp] = c
        out_u[isamp] = u0
        isamp += 1

    fa, fb, fc, st = _rhs(kind, t, a, b, c, latch, pp, th, ctrl, dcoef)
    if st != OK:
        return st, t, n_ev, n_steps

    h = dt_max * 1.0e-2
    if h > tf - t0:
        h = tf - t0

    while t < tf - tiny:
        if n_steps >= max_steps:
            return BUDGET_EXCEEDED, t, n_ev, n_steps
        while ibrk < n_b and brk[ibrk] <= t + tiny:
            ibrk += 1
        if h > dt_max:
            h = dt_max
        if t + h > tf:
            h = tf - t
        if ibrk < n_b and t + h > brk[ibrk]:
            h = brk[ibrk] - t

        # One Dormand-Prince attempt; stage failures shrink the step so a
        # genuine saturation boundary is approached, not overshot.
        k2a, k2b, k2c, st = _rhs(kind, t + _C2 * h,
                                 a + h * (_A21 * fa),
                                 b + h * (_A21 * fb),
                                 c + h * (_A21 * fc),
                                 latch, pp, th, ctrl, dcoef)
        if st == OK:
            k3a, k3b, k3c, st = _rhs(kind, t + _C3 * h,
                                     a + h * (_A31 * fa + _A32 * k2a),
                                     b + h * (_A31 * fb + _A32 * k2b),
                                     c + h * (_A31 * fc + _A32 * k2c),
                                     latch, pp, th, ctrl, dcoef)
        if st == OK:
            k4a, k4b, k4c, st = _rhs(kind, t + _C4 * h,
                                     a + h * (_A41 * fa + _A42 * k2a + _A43 * k3a),
                                     b + h * (_A41 * fb + _A42 * k2b + _A43 * k3b),
                                     c + h * (_A41 * fc + _A42 * k2c + _A43 * k3c),
                                     latch, pp, th, ctrl, dcoef)
        if st == OK:
            k5a, k5b, k5c, st = _rhs(kind, t + _C5 * h,
                                     a + h * (_A51 * fa + _A52 * k2a + _A53 * k3a + _A54 * k4a),
                                     b + h * (_A51 * fb + _A52 * k2b + _A53 * k3b + _A54 * k4b),
                                     c + h * (_A51 * fc + _A52 * k2c + _A53 * k3c + _A54 * k4c),
                                     latch, pp, th, ctrl, dcoef)
        if st == OK:
            k6a, k6b, k6c, st = _rhs(kind, t + h,
                                     a + h * (_A61 * fa + _A62 * k2a + _A63 * k3a + _A64 * k4a + _A65 * k5a),
                                     b + h * (_A61 * fb + _A62 * k2b + _A63 * k3b + _A64 * k4b + _A65 * k5b),
                                     c + h * (_A61 * fc + _A62 * k2c + _A63 * k3c + _A64 * k4c + _A65 * k5c),
                                     latch, pp, th, ctrl, dcoef)
        if st == OK:
            a1 = a + h * (_B1 * fa + _B3 * k3a + _B4 * k4a + _B5 * k5a + _B6 * k6a)
            b1 = b + h * (_B1 * fb + _B3 * k3b + _B4 * k4b + _B5 * k5b + _B6 * k6b)
            c1 = c + h * (_B1 * fc + _B3 * k3c + _B4 * k4c + _B5 * k5c + _B6 * k6c)
            k7a, k7b, k7c, st = _rhs(kind, t + h, a1, b1, c1,
                                     latch, pp, th, ctrl, dcoef)
        if st != OK:
            if st == INFEASIBLE or st == SINGULAR:
                return st, t, n_ev, n_steps
            h *= 0.5
            if h < 1.0e-13:
                return st, t, n_ev, n_steps
            n_steps += 1
            continue

        erra = h * (_E1 * fa + _E3 * k3a + _E4 * k4a + _E5 * k5a + _E6 * k6a + _E7 * k7a)
        errb = h * (_E1 * fb + _E3 * k3b + _E4 * k4b + _E5 * k5b + _E6 * k6b + _E7 * k7b)
        errc = h * (_E1 * fc + _E3 * k3c + _E4 * k4c + _E5 * k5c + _E6 * k6c + _E7 * k7c)
        sa = abs_tol + rel_tol * max(abs(a), abs(a1))
        sb = abs_tol + rel_tol * max(abs(b), abs(b1))
        sc = abs_tol + rel_tol * max(abs(c), abs(c1))
        norm = math.sqrt(((erra / sa) ** 2 + (errb / sb) ** 2 + (errc / sc) ** 2) / 3.0)
        n_steps += 1

        if norm > 1.0:
            fac = 0.9 * norm ** -0.2
            if fac < 0.2:
                fac = 0.2
            h *= fac
            if h < 1.0e-13:
                return STEP_UNDERFLOW, t, n_ev, n_steps
            continue

        # Accepted. Look for a latch transition inside the step.
        t_new = t + h
        ev_kind = 0
        theta_ev = 1.0
        if kind == 0:
            if latch == _FREE:
                if a1 < pp[9] or (a1 <= pp[9] and b1 < 0.0):
                    ev_kind = EV_CONTACT_MIN
                    bound = pp[9]
                elif a1 > pp[10]:
                    ev_kind = EV_CONTACT_MAX
                    bound = pp[10]
                if ev_kind != 0:
                    lo = 0.0
                    hi = 1.0
                    while (hi - lo) * h > event_tol:
                        mid = 0.5 * (lo + hi)
                        zm = _hermite(mid, h, a, fa, a1, k7a)
                        if (ev_kind == EV_CONTACT_MIN and zm <= bound) or \
                           (ev_kind == EV_CONTACT_MAX and zm >= bound):
                            hi = mid
                        else:
                            lo = mid
                    theta_ev = hi
            else:
                f_end = _net_force(pp, a1, c1)
                trig = (latch == _HELD_MIN and f_end > 0.0) or \
                       (latch == _HELD_MAX and f_end < 0.0)
                if trig:
                    ev_kind = EV_RELEASE_MIN if latch == _HELD_MIN else EV_RELEASE_MAX
                    lo = 0.0
                    hi = 1.0
                    while (hi - lo) * h > event_tol:
                        mid = 0.5 * (lo + hi)
                        lm = _hermite(mid, h, c, fc, c1, k7c)
                        fm = _net_force(pp, a1, lm)
                        if (latch == _HELD_MIN and fm > 0.0) or \
                           (latch == _HELD_MAX and fm < 0.0):
                            hi = mid
                        else:
                            lo = mid
                    theta_ev = hi

        if ev_kind != 0:
            t_ev = t + theta_ev * h
            a_ev = _hermite(theta_ev, h, a, fa, a1, k7a)
            b_ev = _hermite(theta_ev, h, b, fb, b1, k7b)
            c_ev = _hermite(theta_ev, h, c, fc, c1, k7c)
            while isamp < n_s and ts[isamp] <= t_ev + tiny:
                thq = (ts[isamp] - t) / h
                u_s, st = _control_u(ts[isamp], th, ctrl, dcoef)
                if st != OK:
                    return st, t_ev, n_ev, n_steps
                out_a[isamp] = _hermite(thq, h, a, fa, a1, k7a)
                out_b[isamp] = _hermite(thq, h, b, fb, b1, k7b)
                out_c[isamp] = _hermite(thq, h, c, fc, c1, k7c)
                out_u[isamp] = u_s
                isamp += 1
            if ev_kind == EV_CONTACT_MIN:
                a_ev = pp[9]
                b_ev = 0.0
                latch = _HELD_MIN
            elif ev_kind == EV_CONTACT_MAX:
                a_ev = pp[10]
                b_ev = 0.0
                latch = _HELD_MAX
            else:
                b_ev = 0.0
                latch = _FREE
            if n_ev >= ev_t.shape[0]:
                return BUDGET_EXCEEDED, t_ev, n_ev, n_steps
            ev_t[n_ev] = t_ev
            ev_k[n_ev] = ev_kind
            n_ev += 1
            t = t_ev
            a = a_ev
            b = b_ev
            c = c_ev
            fa, fb, fc, st = _rhs(kind, t, a, b, c, latch, pp, th, ctrl, dcoef)
            if st != OK:
                return st, t, n_ev, n_steps
            continue

        # No event: fill samples covered by this step and advance.
        while isamp < n_s and ts[isamp] <= t_new + tiny:
            thq = (ts[isamp] - t) / h
            u_s, st = _control_u(ts[isamp], th, ctrl, dcoef)
            if st != OK:
                return st, t_new, n_ev, n_steps
            out_a[isamp] = _hermite(thq, h, a, fa, a1, k7a)
            out_b[isamp] = _hermite(thq, h, b, fb, b1, k7b)
            out_c[isamp] = _hermite(thq, h, c, fc, c1, k7c)
            out_u[isamp] = u_s
            isamp += 1
        t = t_new
        a = a1
        b = b1
        c = c1
        fa = k7a
        fb = k7b
        fc = k7c
        fac = 5.0
        if norm > 0.0:
            fac = 0.9 * norm ** -0.2
            if fac > 5.0:
                fac = 5.0
            if fac < 0.2:
                fac = 0.2
        h *= fac

    # Trailing samples (grid points at tf within rounding).
    while isamp < n_s:
        u_s, st = _control_u(ts[isamp], th, ctrl, dcoef)
        if st != OK:
            return st, t, n_ev, n_steps
        out_a[isamp] = a
        out_b[isamp] = b
        out_c[isamp] = c
        out_u[isamp] = u_s
        isamp += 1
    return OK, t, n_ev, n_steps


_control_u = _jit(_control_u)
_rhs = _jit(_rhs)
_net_force = _jit(_net_force)
_hermite = _jit(_hermite)
integrate = _jit(integrate)
