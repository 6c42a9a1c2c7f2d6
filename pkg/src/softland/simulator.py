"""Hybrid simulation of switching operations and the landing metrics.

The physical device is integrated with an adaptive embedded Runge-Kutta
pair; the end stops are perfectly inelastic, so contact latches the
armature until the net mechanical force points back into the stroke.
Contact and release instants are localized to a configurable tolerance
and recorded as events. Traces are sampled on a fixed grid, from the
step interpolant, so the sample grid never influences the step sequence.

From a sampled trace the module derives the quantities every experiment
reports: the impact velocity (speed immediately before first contact
with the lower stop), the final closing instant (start of the last
contiguous seated interval reaching the end of the window), and the
normalized RMS position-tracking error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _engine
from .flatctrl import ControlSignal, InfeasibleReferenceError, SingularFluxError
from .model import (FREE, HELD_AT_MAX, HELD_AT_MIN, Geometry, IdentParams,
                    IdentState, PhysicalParams, PhysState, SaturationError)

EVENT_NAMES = {
    _engine.EV_CONTACT_MIN: "contact_min",
    _engine.EV_CONTACT_MAX: "contact_max",
    _engine.EV_RELEASE_MIN: "release_min",
    _engine.EV_RELEASE_MAX: "release_max",
}


class IntegrationError(RuntimeError):
    """The integrator could not finish the window."""

    def __init__(self, message: str, t: float | None = None):
        super().__init__(message)
        self.t = t


@dataclass
class SimConfig:
    """Integration window and tolerances for one operation."""

    t0: float = 0.0
    tf: float = 6.5e-3
    rel_tol: float = 1.0e-8
    abs_tol: float = 1.0e-10
    dt_max: float = 1.0e-5
    sample_period: float = 1.0e-6
    event_tol: float = 1.0e-9
    max_steps: int = 2_000_000
    noise_std: float = 0.0

    def __post_init__(self):
        if not self.tf > self.t0:
            raise ValueError("SimConfig requires tf > t0")
        for name in ("rel_tol", "abs_tol", "dt_max", "sample_period",
                     "event_tol"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"SimConfig.{name} must be > 0")


def sample_grid(cfg: SimConfig) -> np.ndarray:
    """Uniform sample instants t0 + k*sample_period covering [t0, tf]."""
    span = cfg.tf - cfg.t0
    n = int(math.floor(span / cfg.sample_period + 1.0e-9))
    return cfg.t0 + np.arange(n + 1) * cfg.sample_period


class OperationRecord:
    """Sampled traces and derived metrics of one switching operation.

    The state traces (z, v, lam) sit behind counting properties: the
    adaptation loop audits that its indirect cost never touched them,
    since that cost must work from coil current alone. Reads by the
    metrics code afterwards are expected and harmless.
    """

    def __init__(self, t, u, z, v, lam, y2, y2_hat=None, events=(),
                 n_steps: int = 0):
        self.t = np.asarray(t)
        self.u = np.asarray(u)
        self._z = np.asarray(z)
        self._v = np.asarray(v)
        self._lam = np.asarray(lam)
        self.y2 = np.asarray(y2)
        self.y2_hat = None if y2_hat is None else np.asarray(y2_hat)
        self.events = list(events)
        self.n_steps = n_steps
        self.reads = {"z": 0, "v": 0, "lam": 0}
        # Metrics are attached by the experiment loop.
        self.v_c = math.nan
        self.t_c = math.nan
        self.nrmse_z = math.nan
        self.cost = math.nan

    @property
    def z(self) -> np.ndarray:
        self.reads["z"] += 1
        return self._z

    @property
    def v(self) -> np.ndarray:
        self.reads["v"] += 1
        return self._v

    @property
    def lam(self) -> np.ndarray:
        self.reads["lam"] += 1
        return self._lam

    def state_reads(self) -> int:
        return self.reads["z"] + self.reads["v"] + self.reads["lam"]

    def to_csv(self, path):
        y2h = self.y2_hat
        if y2h is None:
            y2h = np.full_like(self.y2, math.nan)
        with open(path, "w") as fh:
            fh.write("t,u,z,v,lambda,y2,y2_hat\n")
            for row in zip(self.t, self.u, self._z, self._v, self._lam,
                           self.y2, y2h):
                fh.write(",".join(repr(float(x)) for x in row) + "\n")


def _status_to_exception(status: int, t: float):
    if status == _engine.OK:
        return None
    if status == _engine.SATURATED or status == _engine.CTRL_SATURATED:
        return SaturationError(
            f"flux saturation at t = {t:.6g} s", t)
    if status == _engine.INFEASIBLE:
        return InfeasibleReferenceError(
            f"flat inversion infeasible at t = {t:.6g} s", t)
    if status == _engine.SINGULAR:
        return SingularFluxError(
            f"flux-rate inversion singular at t = {t:.6g} s", t)
    if status == _engine.STEP_UNDERFLOW:
        return IntegrationError(f"step size underflow at t = {t:.6g} s", t)
    return IntegrationError(f"integration budget exhausted at t = {t:.6g} s", t)


def _engine_inputs(control, th_dim=7):
    """Pack the control argument (signal object or constant volts)."""
    if isinstance(control, ControlSignal):
        th = control.th.as_array()
        ctrl = control.ctrl
        dcoef = control.dcoef
        brk = control.breakpoints
        y2_hat = control.y2_hat
    else:
        u_const = float(control)
        th = np.ones(th_dim)
        ctrl = np.array([0.0, u_const, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        dcoef = np.zeros((4, 8))
        brk = np.empty(0)
        y2_hat = None
    return th, ctrl, dcoef, brk, y2_hat


def simulate_operation(p: PhysicalParams, geom: Geometry, control,
                       cfg: SimConfig, initial: PhysState | None = None,
                       rng: np.random.Generator | None = None) -> OperationRecord:
    """Simulate one operation of the physical device.

    `control` is either a ControlSignal or a constant voltage [V]. The
    default initial condition is the de-energized parked state: armature
    held against the upper stop, zero flux. Optional additive Gaussian
    current-measurement noise (cfg.noise_std, needs rng) only touches the
    recorded y2, never the dynamics.
    """
    if initial is None:
        initial = PhysState(z=geom.z_max, v=0.0, lam=0.0, contact=HELD_AT_MAX)
    pp = np.concatenate([p.as_array(), [geom.z_min, geom.z_max]])
    th, ctrl, dcoef, brk, y2_hat = _engine_inputs(control)
    ts = sample_grid(cfg)
    n = ts.size
    out_z = np.empty(n)
    out_v = np.empty(n)
    out_lam = np.empty(n)
    out_u = np.empty(n)
    ev_t = np.empty(4096)
    ev_k = np.zeros(4096, dtype=np.int64)
    status, t_stop, n_ev, n_steps = _engine.integrate(
        0, pp, th, ctrl, dcoef,
        float(initial.z), float(initial.v), float(initial.lam),
        int(initial.contact),
        cfg.t0, cfg.tf, cfg.rel_tol, cfg.abs_tol, cfg.dt_max, cfg.event_tol,
        cfg.max_steps, brk, ts, out_z, out_v, out_lam, out_u, ev_t, ev_k)
    exc = _status_to_exception(int(status), float(t_stop))
    if exc is not None:
        raise exc
    margin = 1.0 - np.abs(out_lam) / p.lambda_sat
    if np.any(margin <= 0.0):
        raise SaturationError("sampled flux at or beyond saturation")
    y2 = out_lam * (p.R_g0 + p.k_g * out_z + p.R_c0 / margin)
    if cfg.noise_std > 0.0:
        if rng is None:
            raise ValueError("noise_std > 0 requires an rng")
        y2 = y2 + rng.normal(0.0, cfg.noise_std, size=y2.shape)
    events = [(float(ev_t[i]), EVENT_NAMES[int(ev_k[i])]) for i in range(n_ev)]
    return OperationRecord(ts, out_u, out_z, out_v, out_lam, y2,
                           y2_hat=y2_hat, events=events, n_steps=int(n_steps))


@dataclass
class IdentRecord:
    """Sampled trace of the identifiable realization (free flight)."""

    t: np.ndarray
    u: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    x3: np.ndarray
    y2: np.ndarray
    n_steps: int = 0


def simulate_ident_free(th: IdentParams, control, x0: IdentState,
                        cfg: SimConfig) -> IdentRecord:
    """Integrate the identifiable model without end stops.

    Used by the inversion round-trip checks and anywhere the controller's
    own model must be rolled forward exactly as the controller sees it.
    A ControlSignal is re-evaluated under `th` (one parameter vector
    drives both the dynamics and the control law here).
    """
    pp = np.zeros(11)
    _, ctrl, dcoef, brk, _ = _engine_inputs(control)
    th_arr = th.as_array()
    ts = sample_grid(cfg)
    n = ts.size
    out_1 = np.empty(n)
    out_2 = np.empty(n)
    out_3 = np.empty(n)
    out_u = np.empty(n)
    ev_t = np.empty(8)
    ev_k = np.zeros(8, dtype=np.int64)
    status, t_stop, _, n_steps = _engine.integrate(
        1, pp, th_arr, ctrl, dcoef,
        float(x0.x1), float(x0.x2), float(x0.x3), FREE,
        cfg.t0, cfg.tf, cfg.rel_tol, cfg.abs_tol, cfg.dt_max, cfg.event_tol,
        cfg.max_steps, brk, ts, out_1, out_2, out_3, out_u, ev_t, ev_k)
    exc = _status_to_exception(int(status), float(t_stop))
    if exc is not None:
        raise exc
    margin = 1.0 - np.abs(out_3) / th.theta6
    if np.any(margin <= 0.0):
        raise SaturationError("sampled flux at or beyond saturation")
    y2 = out_3 * (out_1 + th.theta5 / margin)
    return IdentRecord(ts, out_u, out_1, out_2, out_3, y2, int(n_steps))


def detect_impact(record: OperationRecord, geom: Geometry,
                  z_tol: float = 1.0e-9) -> tuple[float, float]:
    """Impact velocity and final closing instant from a sampled trace.

    Returns (v_c, t_c). v_c is the speed at the last sample strictly
    before the first contact with the lower stop; t_c is the start of
    the last contiguous seated interval that extends to the end of the
    window. Either is nan when undefined (no contact at all; no
    persistent final seating).
    """
    z = record.z
    v = record.v
    t = record.t
    contact = z <= geom.z_min + z_tol
    if not bool(np.any(contact)):
        return math.nan, math.nan
    first = int(np.argmax(contact))
    v_c = abs(float(v[first - 1])) if first > 0 else abs(float(v[first]))
    if not contact[-1]:
        return v_c, math.nan
    gaps = ~contact
    if bool(np.any(gaps)):
        last_gap = len(contact) - 1 - int(np.argmax(gaps[::-1]))
        start = last_gap + 1
    else:
        start = 0
    return v_c, float(t[start])


def trapz_uniform(y: np.ndarray, dt: float) -> float:
    """Trapezoid rule on a uniform grid."""
    y = np.asarray(y, dtype=float)
    if y.size < 2:
        return 0.0
    return float(dt * (y.sum() - 0.5 * (y[0] + y[-1])))


def compute_nrmse(z: np.ndarray, z_ref: np.ndarray, dt: float) -> float:
    """Tracking error normalized by the reference RMS over the window.

    sqrt( integral (z - z_ref)^2 dt / integral z_ref^2 dt ), both by the
    trapezoid rule on the common sample grid.
    """
    z = np.asarray(z, dtype=float)
    z_ref = np.asarray(z_ref, dtype=float)
    if z.shape != z_ref.shape:
        raise ValueError("z and z_ref must share one sample grid")
    denom = trapz_uniform(z_ref * z_ref, dt)
    if denom <= 0.0:
        raise ValueError("reference is identically zero over the window")
    num = trapz_uniform((z - z_ref) ** 2, dt)
    return math.sqrt(num / denom)
