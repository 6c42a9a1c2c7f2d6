"""Soft-landing position reference and its flat-output image.

The reference is the unique degree-7 polynomial that moves the armature
from ``z_start`` to ``z_end`` in time ``T`` with zero velocity,
acceleration and jerk at both ends.  In normalized time ``s = t/T``:

    z(s) = z_start + (z_end - z_start)*(35 s^4 - 84 s^5 + 70 s^6 - 20 s^7)

Outside [0, T] the trajectory is clamped: it holds the nearest endpoint
value with all derivatives zero, which is exactly the hold behaviour the
feedforward needs after touchdown.

The flat-output image is the affine map ``y1 = R_g0 + k_g*z`` built with
the *nominal* transform constants; the controller plans in flat space
and never learns the true constants of an individual device.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Shape coefficients of the normalized excursion polynomial, increasing
# powers of s. They solve the 8 endpoint conditions p(0)=0, p(1)=1,
# p'(0)=p'(1)=p''(0)=p''(1)=p'''(0)=p'''(1)=0.
_SHAPE = np.array([0.0, 0.0, 0.0, 0.0, 35.0, -84.0, 70.0, -20.0])

MAX_DERIVATIVE = 3


@dataclass(frozen=True)
class ReferenceTrajectory:
    """Degree-7 soft-landing profile between two positions.

    coeffs holds the position polynomial in normalized time (increasing
    powers); derivative coefficient rows are precomputed up to order 3
    with the 1/T^k time scaling already folded in.
    """

    duration: float
    z_start: float
    z_end: float
    coeffs: np.ndarray = field(repr=False)
    deriv_coeffs: np.ndarray = field(repr=False)  # (4, 8), row k = k-th derivative

    def __post_init__(self):
        if not self.duration > 0.0:
            raise ValueError("reference duration must be > 0")


def _derivative_rows(coeffs: np.ndarray, duration: float) -> np.ndarray:
    rows = np.zeros((MAX_DERIVATIVE + 1, coeffs.size))
    rows[0] = coeffs
    for k in range(1, MAX_DERIVATIVE + 1):
        prev = rows[k - 1]
        for j in range(coeffs.size - 1):
            rows[k, j] = prev[j + 1] * (j + 1) / duration
    return rows


def build_reference(z_start: float, z_end: float, duration: float) -> ReferenceTrajectory:
    """Construct the degree-7 profile from z_start to z_end over `duration`."""
    if not duration > 0.0:
        raise ValueError("reference duration must be > 0")
    coeffs = _SHAPE * (z_end - z_start)
    coeffs = coeffs.copy()
    coeffs[0] = z_start
    return ReferenceTrajectory(
        duration=float(duration),
        z_start=float(z_start),
        z_end=float(z_end),
        coeffs=coeffs,
        deriv_coeffs=_derivative_rows(coeffs, float(duration)),
    )


def eval_reference(ref: ReferenceTrajectory, t, order: int = 0):
    """Evaluate the reference or one of its time derivatives at time(s) t.

    order 0 returns position [m]; orders 1..3 return the derivatives with
    proper 1/T^k scaling. Outside [0, T] the position clamps to the
    endpoint and all derivatives are zero.
    """
    if not 0 <= order <= MAX_DERIVATIVE:
        raise ValueError(f"derivative order must be in 0..{MAX_DERIVATIVE}")
    t_arr = np.asarray(t, dtype=float)
    s = np.clip(t_arr / ref.duration, 0.0, 1.0)
    row = ref.deriv_coeffs[order]
    out = np.full(s.shape, row[-1])
    for j in range(row.size - 2, -1, -1):
        out = out * s + row[j]
    if order > 0:
        outside = (t_arr < 0.0) | (t_arr > ref.duration)
        out = np.where(outside, 0.0, out)
    if np.ndim(t) == 0:
        return float(out)
    return out


def to_flat_reference(ref: ReferenceTrajectory, t, R_g0: float, k_g: float,
                      order: int = 0):
    """Reference mapped to flat-output space, y1 = R_g0 + k_g*z [1/H].

    R_g0 and k_g are the planner's nominal transform constants. Order 0
    gives y1ref; higher orders scale the position derivatives by k_g.
    """
    z = eval_reference(ref, t, order)
    if order == 0:
        return R_g0 + k_g * z
    return k_g * z


def flat_coeff_rows(ref: ReferenceTrajectory, R_g0: float, k_g: float) -> np.ndarray:
    """Polynomial coefficient rows of y1ref and derivatives 1..3.

    Row k evaluated (Horner, increasing powers) at s = clamp(t/T, 0, 1)
    gives the k-th time derivative of the flat reference; 1/T^k scaling
    is folded into the coefficients. This is the packed form consumed by
    the numerical integration engine.
    """
    rows = ref.deriv_coeffs * k_g
    rows = rows.copy()
    rows[0, 0] += R_g0
    return rows
