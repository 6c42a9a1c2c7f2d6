"""Flatness-based feedforward and coil-current prediction.

The identifiable realization is differentially flat with the gap state
``x1`` as flat output: along a reference that is smooth enough, every
state and the input follow algebraically. Solving the force balance for
the flux gives

    x3 = sqrt( -(2/theta4) * (y1'' + theta1*y1 + theta2*y1' + theta3) )

with the positive root (only nonnegative commanded flux is physical);
its time derivative and the flux equation then yield the feedforward
voltage. The same algebra predicts the coil current, which is the only
feedback quantity the run-to-run adaptation is allowed to consume.

An operation is assembled from three segments on the simulation clock:

* pre-charge on [0, t_pre): smoothstep flux ramp from zero to the
  tracking start flux, armature parked at the upper stop;
* tracking on [t_pre, t_pre + T]: flat inversion along the reference;
* hold for t > t_pre + T: the clamped reference keeps the inversion
  constant, and a smoothstepped hold boost raises the commanded flux a
  configurable fraction above that level, seating the armature at the
  lower stop with force to spare.

The boost matters because the inversion's own hold level balances the
spring exactly at the seated position: a neutral equilibrium that lets
the armature drift off the stop on the slightest model mismatch. A few
percent of extra flux turns it into a firm latch without touching the
approach, so the impact speed is unaffected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _engine
from .model import IdentParams, IdentState, SaturationError
from .reference import ReferenceTrajectory, flat_coeff_rows, to_flat_reference

DEFAULT_X3_EPS = 1.0e-6

# Settle-phase flux boost: fraction above the inversion's hold level and
# the smoothstep ramp time over which it is applied after the tracking
# window ends. 10 % flux is ~21 % extra seating force, comfortably above
# the force scatter a +/-5 % device population produces, while staying
# clear of saturation (nominal hold flux 0.0161 Wb vs 0.0229 Wb limit).
DEFAULT_HOLD_BOOST = 0.1
DEFAULT_HOLD_RAMP = 5.0e-4


class InfeasibleReferenceError(ValueError):
    """The reference demands negative squared flux somewhere."""

    def __init__(self, message: str, t: float | None = None):
        super().__init__(message)
        self.t = t


class SingularFluxError(ValueError):
    """Flux-rate inversion hit the zero-flux singularity."""

    def __init__(self, message: str, t: float | None = None):
        super().__init__(message)
        self.t = t


def flat_states(y1: float, dy1: float, ddy1: float, th: IdentParams) -> IdentState:
    """States consistent with flat output value y1 and derivatives.

    Raises InfeasibleReferenceError when the demanded acceleration would
    need negative squared flux. The boundary case x3 = 0 (pure spring
    equilibrium) is feasible.
    """
    g = -(2.0 / th.theta4) * (ddy1 + th.theta1 * y1 + th.theta2 * dy1 + th.theta3)
    if g < 0.0:
        raise InfeasibleReferenceError(
            f"flat inversion infeasible: squared-flux demand {g:.6g} < 0")
    return IdentState(x1=y1, x2=dy1, x3=math.sqrt(g))


def flux_rate(dy1: float, ddy1: float, dddy1: float, th: IdentParams,
              x3: float, x3_eps: float = DEFAULT_X3_EPS) -> float:
    """Time derivative of the commanded flux along the reference.

    Differentiating the squared-flux relation and dividing by x3; the
    division is guarded by x3_eps. A reference resting exactly at the
    spring equilibrium (zero flux, zero excitation) returns 0.
    """
    num = dddy1 + th.theta1 * dy1 + th.theta2 * ddy1
    if x3 < x3_eps:
        if num == 0.0:
            return 0.0
        raise SingularFluxError(
            f"flux-rate inversion singular: x3 = {x3:.3g} < {x3_eps:.3g}")
    return -num / (th.theta4 * x3)


def predict_current(x1: float, x3: float, th: IdentParams) -> float:
    """Coil current implied by gap state x1 and flux x3 [A]."""
    margin = 1.0 - abs(x3) / th.theta6
    if margin <= 0.0:
        raise SaturationError(
            f"commanded flux {x3:.6g} Wb at or beyond saturation "
            f"{th.theta6:.6g} Wb")
    return x3 * (x1 + th.theta5 / margin)


def feedforward_input(y1: float, dy1: float, ddy1: float, dddy1: float,
                      th: IdentParams, x3_eps: float = DEFAULT_X3_EPS) -> float:
    """Feedforward voltage for one point of the flat reference [V]."""
    xs = flat_states(y1, dy1, ddy1, th)
    dx3 = flux_rate(dy1, ddy1, dddy1, th, xs.x3, x3_eps)
    return dx3 + th.theta7 * predict_current(xs.x1, xs.x3, th)


@dataclass(frozen=True)
class PrechargeSegment:
    """Smoothstep flux ramp bringing the coil to the tracking start flux.

    Defined on [0, t_pre] of the simulation clock, armature parked at the
    upper stop at flat position y1_park. The commanded flux stays below
    the force-balance breakaway until the very end of the ramp, so the
    armature does not move early.
    """

    t_pre: float
    x3_target: float
    y1_park: float
    th: IdentParams

    def flux(self, t: float) -> tuple[float, float]:
        """Commanded flux and its rate at ramp time t."""
        s = min(max(t / self.t_pre, 0.0), 1.0)
        lam = self.x3_target * s * s * (3.0 - 2.0 * s)
        dlam = self.x3_target * 6.0 * s * (1.0 - s) / self.t_pre
        return lam, dlam

    def u(self, t: float) -> float:
        lam, dlam = self.flux(t)
        return dlam + self.th.theta7 * predict_current(self.y1_park, lam, self.th)

    def predicted_current(self, t: float) -> float:
        lam, _ = self.flux(t)
        return predict_current(self.y1_park, lam, self.th)


def build_precharge(th: IdentParams, t_pre: float, x3_target: float,
                    y1_park: float) -> PrechargeSegment:
    if not t_pre > 0.0:
        raise ValueError("pre-charge duration must be > 0")
    if not 0.0 <= x3_target < th.theta6:
        raise ValueError("pre-charge target flux must lie in [0, theta6)")
    return PrechargeSegment(t_pre=t_pre, x3_target=x3_target,
                            y1_park=y1_park, th=th)


@dataclass
class ControlSignal:
    """One operation's feedforward, packed for the simulator.

    Carries the parameters the signal was built from, the engine packing
    (ctrl vector plus flat-reference coefficient rows), the sample grid
    and the algebraic current prediction on it. The prediction is what
    the indirect cost compares against the measured current; it never
    depends on the simulated device.
    """

    th: IdentParams
    reference: ReferenceTrajectory
    t_pre: float
    x3_target: float
    x3_eps: float
    hold_boost: float
    hold_ramp: float
    dcoef: np.ndarray = field(repr=False)
    ctrl: np.ndarray = field(repr=False)
    grid: np.ndarray = field(repr=False)
    y2_hat: np.ndarray = field(repr=False)

    @property
    def breakpoints(self) -> np.ndarray:
        """Segment boundaries the integrator must not step across."""
        t_end = self.t_pre + self.reference.duration
        if self.hold_boost != 0.0:
            return np.array([self.t_pre, t_end, t_end + self.hold_ramp])
        return np.array([self.t_pre, t_end])

    def u(self, t: float) -> float:
        """Scalar feedforward voltage (exactly what the engine applies)."""
        u, status = _engine._control_u(float(t), self.th.as_array(),
                                       self.ctrl, self.dcoef)
        _raise_for_status(status, float(t))
        return u


def _raise_for_status(status: int, t: float):
    if status == _engine.OK:
        return
    if status == _engine.INFEASIBLE:
        raise InfeasibleReferenceError(
            f"flat inversion infeasible at t = {t:.6g} s", t)
    if status == _engine.SINGULAR:
        raise SingularFluxError(
            f"flux-rate inversion singular at t = {t:.6g} s", t)
    if status in (_engine.CTRL_SATURATED, _engine.SATURATED):
        raise SaturationError(
            f"commanded flux at or beyond saturation at t = {t:.6g} s", t)
    raise RuntimeError(f"control evaluation failed with status {status}")


def predicted_current_profile(th: IdentParams, dcoef: np.ndarray, t_pre: float,
                              duration: float, x3_target: float,
                              x3_eps: float, grid: np.ndarray,
                              hold_boost: float = 0.0,
                              hold_ramp: float = DEFAULT_HOLD_RAMP) -> np.ndarray:
    """Vectorized algebraic current prediction on the sample grid.

    Mirrors the engine's control law segment by segment, hold boost
    included. Raises on infeasible or saturated commands, which is the
    eager feasibility screen for adaptation candidates.
    """
    tau = grid - t_pre
    y2_hat = np.empty_like(grid)

    pre = tau < 0.0
    if np.any(pre):
        s = (tau[pre] + t_pre) / t_pre
        lam = x3_target * s * s * (3.0 - 2.0 * s)
        margin = 1.0 - lam / th.theta6
        if np.any(margin <= 0.0):
            raise SaturationError("pre-charge flux reaches saturation")
        y2_hat[pre] = lam * (dcoef[0, 0] + th.theta5 / margin)

    trk = ~pre
    if np.any(trk):
        s = np.clip(tau[trk] / duration, 0.0, 1.0)
        y0 = np.full_like(s, dcoef[0, 7])
        d1 = np.full_like(s, dcoef[1, 7])
        d2 = np.full_like(s, dcoef[2, 7])
        for j in range(6, -1, -1):
            y0 = y0 * s + dcoef[0, j]
            d1 = d1 * s + dcoef[1, j]
            d2 = d2 * s + dcoef[2, j]
        hold = tau[trk] > duration
        d1[hold] = 0.0
        d2[hold] = 0.0
        g = -(2.0 / th.theta4) * (d2 + th.theta1 * y0 + th.theta2 * d1 + th.theta3)
        if np.any(g < 0.0):
            bad = int(np.argmax(g < 0.0))
            t_bad = float(grid[trk][bad])
            raise InfeasibleReferenceError(
                f"flat inversion infeasible at t = {t_bad:.6g} s", t_bad)
        x3 = np.sqrt(g)
        if hold_boost != 0.0:
            sh = np.clip((tau[trk] - duration) / hold_ramp, 0.0, 1.0)
            x3 = x3 * (1.0 + hold_boost * sh * sh * (3.0 - 2.0 * sh))
        margin = 1.0 - x3 / th.theta6
        if np.any(margin <= 0.0):
            bad = int(np.argmax(margin <= 0.0))
            t_bad = float(grid[trk][bad])
            raise SaturationError(
                f"commanded flux at or beyond saturation at t = {t_bad:.6g} s",
                t_bad)
        y2_hat[trk] = x3 * (y0 + th.theta5 / margin)
    return y2_hat


def build_control(reference: ReferenceTrajectory, th: IdentParams,
                  R_g0_nom: float, k_g_nom: float, t_pre: float,
                  grid: np.ndarray,
                  x3_eps: float = DEFAULT_X3_EPS,
                  hold_boost: float = DEFAULT_HOLD_BOOST,
                  hold_ramp: float = DEFAULT_HOLD_RAMP) -> ControlSignal:
    """Assemble the full feedforward for one operation.

    The flat reference rows use the planner's nominal transform constants
    (R_g0_nom, k_g_nom); th is the parameter estimate being tried. Raises
    InfeasibleReferenceError / SaturationError when the candidate cannot
    realize the reference, so callers can score it without simulating.
    """
    if not t_pre > 0.0:
        raise ValueError("pre-charge duration must be > 0")
    if hold_boost < 0.0:
        raise ValueError("hold boost must be >= 0")
    if hold_boost != 0.0 and not hold_ramp > 0.0:
        raise ValueError("hold ramp must be > 0 when a hold boost is set")
    dcoef = flat_coeff_rows(reference, R_g0_nom, k_g_nom)
    y1_0 = to_flat_reference(reference, 0.0, R_g0_nom, k_g_nom)
    xs0 = flat_states(y1_0, 0.0, 0.0, th)  # endpoint derivatives vanish
    if not xs0.x3 < th.theta6:
        raise SaturationError("tracking start flux at or beyond saturation")
    y1_end = to_flat_reference(reference, reference.duration, R_g0_nom,
                               k_g_nom)
    xs_end = flat_states(y1_end, 0.0, 0.0, th)
    if not xs_end.x3 * (1.0 + hold_boost) < th.theta6:
        raise SaturationError("boosted hold flux at or beyond saturation")
    ctrl = np.array([1.0, 0.0, t_pre, reference.duration, xs0.x3, x3_eps,
                     hold_boost, hold_ramp])
    y2_hat = predicted_current_profile(th, dcoef, t_pre, reference.duration,
                                       xs0.x3, x3_eps, np.asarray(grid, float),
                                       hold_boost, hold_ramp)
    # Reject candidates whose commanded flux dips into the singularity
    # guard anywhere in the tracking window (the engine would stop there).
    tau = np.asarray(grid, float) - t_pre
    trk = tau >= 0.0
    if np.any(trk):
        gmin = _min_radicand(th, dcoef, tau[trk] / reference.duration)
        if math.sqrt(max(gmin, 0.0)) < x3_eps:
            raise SingularFluxError(
                "commanded flux enters the singularity guard")
    return ControlSignal(th=th, reference=reference, t_pre=t_pre,
                         x3_target=xs0.x3, x3_eps=x3_eps,
                         hold_boost=hold_boost, hold_ramp=hold_ramp,
                         dcoef=dcoef, ctrl=ctrl,
                         grid=np.asarray(grid, float), y2_hat=y2_hat)


def _min_radicand(th: IdentParams, dcoef: np.ndarray, s: np.ndarray) -> float:
    s = np.clip(s, 0.0, 1.0)
    y0 = np.full_like(s, dcoef[0, 7])
    d1 = np.full_like(s, dcoef[1, 7])
    d2 = np.full_like(s, dcoef[2, 7])
    for j in range(6, -1, -1):
        y0 = y0 * s + dcoef[0, j]
        d1 = d1 * s + dcoef[1, j]
        d2 = d2 * s + dcoef[2, j]
    g = -(2.0 / th.theta4) * (d2 + th.theta1 * y0 + th.theta2 * d1 + th.theta3)
    return float(np.min(g))
