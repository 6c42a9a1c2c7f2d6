"""Practical identifiability via integrated-squared output sensitivities.

For each adapted parameter the dimensionless sensitivity is

    S_i = theta_i^2 * integral (d out / d theta_i)^2 dt

with the derivative taken by central finite differences at a relative
step, so the stencil evaluates the output at theta_i*(1 +/- h). Two
outputs are analyzed: the algebraic coil-current prediction (what the
indirect cost can see) and the flat output of the simulated device under
the perturbed feedforward (what tracking quality actually depends on).
A parameter that moves the current strongly is identifiable from the
indirect cost; one that moves the position but not the current marks the
blind spot of current-only adaptation, and vice versa.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .flatctrl import (DEFAULT_HOLD_RAMP, InfeasibleReferenceError,
                       SingularFluxError, build_control)
from .model import (Geometry, IdentParams, PhysicalParams, SaturationError)
from .reference import ReferenceTrajectory
from .simulator import IntegrationError, SimConfig, sample_grid, \
    simulate_operation

N_ADAPTED = 6           # theta1..theta6; theta7 is fixed by the DC estimate
DEFAULT_REL_STEP = 1.0e-4
COMPONENT_LABELS = tuple(f"theta{i}" for i in range(1, N_ADAPTED + 1))

_FEASIBILITY_ERRORS = (InfeasibleReferenceError, SingularFluxError,
                       SaturationError, IntegrationError)


@dataclass(frozen=True)
class SensitivityReport:
    """Raw and normalized sensitivities of one analyzed output."""

    output: str              # which output was differentiated
    S_raw: np.ndarray        # (6,) dimensionless integrated-squared values
    S_bar: np.ndarray        # (6,) S_raw / max(S_raw)
    steps: np.ndarray        # (6,) relative step each component ended up using

    def __post_init__(self):
        if self.S_raw.shape != (N_ADAPTED,):
            raise ValueError("S_raw must have one entry per adapted parameter")
        if np.any(self.S_raw < 0.0):
            raise ValueError("sensitivities are squares; none may be negative")

    def ranking(self) -> list[str]:
        """Component labels from most to least informative."""
        order = np.argsort(-self.S_bar, kind="stable")
        return [COMPONENT_LABELS[i] for i in order]


def normalize(S: np.ndarray) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    m = float(np.max(S))
    if not m > 0.0:
        raise ValueError("all sensitivities vanish; nothing to normalize")
    return S / m


def write_table(reports: list[SensitivityReport], path) -> None:
    """CSV: one row of normalized sensitivities per analyzed output."""
    with open(path, "w") as fh:
        fh.write("output," + ",".join(COMPONENT_LABELS) + "\n")
        for rep in reports:
            fh.write(rep.output + ","
                     + ",".join(repr(float(s)) for s in rep.S_bar) + "\n")


def _central_pair(th: IdentParams, i: int, h: float):
    base = th.as_array()
    plus = th.replace_component(i, base[i] * (1.0 + h))
    minus = th.replace_component(i, base[i] * (1.0 - h))
    return plus, minus


def _with_retry(evaluate, th, i, h0, max_retries):
    """Central difference at shrinking steps until both sides evaluate."""
    h = h0
    for _ in range(max_retries + 1):
        plus, minus = _central_pair(th, i, h)
        try:
            return evaluate(plus), evaluate(minus), h
        except _FEASIBILITY_ERRORS:
            h = 0.5 * h
    raise InfeasibleReferenceError(
        f"perturbed evaluation of component {i + 1} infeasible "
        f"down to relative step {h * 2.0:g}")


def _aggregate(output, per_component):
    """Assemble a report from per-component (d, grid, h) triples."""
    S = np.zeros(N_ADAPTED)
    steps = np.zeros(N_ADAPTED)
    for i, (d, tgrid, h) in enumerate(per_component):
        if d.size >= 2:
            S[i] = float(np.trapezoid(d * d, tgrid))
        steps[i] = h
    return SensitivityReport(output=output, S_raw=S, S_bar=normalize(S),
                             steps=steps)


def predictor_sensitivity(th: IdentParams, reference: ReferenceTrajectory,
                          grid: np.ndarray, R_g0_nom: float, k_g_nom: float,
                          t_pre: float = 1.0e-3,
                          h_rel: float = DEFAULT_REL_STEP,
                          x3_eps: float = 1.0e-6,
                          hold_boost: float = 0.0,
                          hold_ramp: float = DEFAULT_HOLD_RAMP,
                          max_retries: int = 3) -> SensitivityReport:
    """Sensitivity of the algebraic current prediction to theta1..theta6.

    Purely algebraic: no differential equation is solved, the stencil
    just re-runs the flat inversion on the sample grid. The analysis
    defaults to the pure inversion (no hold boost): the boost is a
    parameter-independent multiplier applied after touchdown, and its
    near-saturation operating point would swamp the integrals and mask
    what the approach itself can identify.
    """
    grid = np.asarray(grid, dtype=float)

    def profile(th_i: IdentParams) -> np.ndarray:
        sig = build_control(reference, th_i, R_g0_nom, k_g_nom,
                            t_pre=t_pre, grid=grid, x3_eps=x3_eps,
                            hold_boost=hold_boost, hold_ramp=hold_ramp)
        return sig.y2_hat

    rows = []
    for i in range(N_ADAPTED):
        yp, ym, h = _with_retry(profile, th, i, h_rel, max_retries)
        d = (yp - ym) / (2.0 * h)
        rows.append((d, grid, h))
    return _aggregate("y2_hat", rows)


def _first_contact_index(z: np.ndarray, z_min: float,
                         z_tol: float = 1.0e-9) -> int:
    contact = z <= z_min + z_tol
    if not bool(np.any(contact)):
        return z.size
    return int(np.argmax(contact))


def tracking_sensitivity(th: IdentParams, p_true: PhysicalParams,
                         geom: Geometry, reference: ReferenceTrajectory,
                         sim: SimConfig, R_g0_nom: float, k_g_nom: float,
                         t_pre: float = 1.0e-3,
                         h_rel: float = DEFAULT_REL_STEP,
                         x3_eps: float = 1.0e-6,
                         hold_boost: float = 0.0,
                         hold_ramp: float = DEFAULT_HOLD_RAMP,
                         max_retries: int = 3) -> SensitivityReport:
    """Sensitivity of the tracked flat output to the controller parameters.

    Each stencil point rebuilds the feedforward with one perturbed
    component and simulates the true device. Traces are truncated at the
    first contact within each +/- pair: once seated, the position is
    constrained by the stop and carries no parameter information. Like
    the predictor analysis, defaults to the pure inversion (no boost).
    """
    grid = sample_grid(sim)

    def flat_trace(th_i: IdentParams) -> np.ndarray:
        sig = build_control(reference, th_i, R_g0_nom, k_g_nom,
                            t_pre=t_pre, grid=grid, x3_eps=x3_eps,
                            hold_boost=hold_boost, hold_ramp=hold_ramp)
        rec = simulate_operation(p_true, geom, sig, sim)
        return p_true.R_g0 + p_true.k_g * rec.z

    rows = []
    for i in range(N_ADAPTED):
        yp, ym, h = _with_retry(flat_trace, th, i, h_rel, max_retries)
        zp = (yp - p_true.R_g0) / p_true.k_g
        zm = (ym - p_true.R_g0) / p_true.k_g
        n = min(_first_contact_index(zp, geom.z_min),
                _first_contact_index(zm, geom.z_min))
        d = (yp[:n] - ym[:n]) / (2.0 * h)
        rows.append((d, grid[:n], h))
    return _aggregate("y1", rows)
