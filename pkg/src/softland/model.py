"""Lumped-parameter models of a spring-loaded reluctance actuator.

Two realizations of the same device are provided:

* the physical model, written in mechanical coordinates (armature
  position ``z``, velocity ``v``, flux linkage ``lam``) with the full
  set of catalogue parameters, and
* the identifiable realization, obtained by the state transform
  ``x1 = R_g0 + k_g*z``, ``x2 = k_g*v``, ``x3 = lam``, whose seven
  lumped coefficients are exactly the combinations that can be
  recovered from voltage/current data alone.

Both share the measured outputs: ``y1`` is the flat output (position in
gap-reluctance units for the identifiable form) and ``y2`` is the coil
current, reconstructed from flux times total reluctance.  The magnetic
circuit saturates: the core term grows like ``1/(1 - |lam|/lambda_sat)``
and the model domain ends at ``|lam| = lambda_sat``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Armature contact states. The end stops are perfectly inelastic: on
# contact with outward velocity the armature sticks until the net
# mechanical force points back into the stroke.
FREE = 0
HELD_AT_MIN = 1
HELD_AT_MAX = 2


class SaturationError(RuntimeError):
    """Flux linkage reached the saturation limit; the model is invalid there."""

    def __init__(self, message: str, t: float | None = None):
        super().__init__(message)
        self.t = t


@dataclass(frozen=True)
class PhysicalParams:
    """Catalogue parameters of the physical model (SI units).

    m           moving mass [kg]
    k_s         return-spring stiffness [N/m]
    z_s         spring rest position [m]; lies far outside the stroke,
                so the spring preloads the armature against the upper stop
    c_f         viscous friction coefficient [N s/m]
    k_g         gap reluctance slope [1/(H m)]
    R_g0        gap reluctance at z = 0 [1/H]
    R_c0        unsaturated core reluctance [1/H]
    lambda_sat  saturation flux linkage [Wb]
    R           coil resistance [Ohm]
    """

    m: float = 1.6e-3
    k_s: float = 55.0
    z_s: float = 1.81e-2
    c_f: float = 1.0e-5
    k_g: float = 7.67e3
    R_g0: float = 3.88
    R_c0: float = 1.35
    lambda_sat: float = 2.29e-2
    R: float = 50.0

    def __post_init__(self):
        for name in ("m", "k_s", "z_s", "c_f", "k_g", "R_g0", "R_c0",
                     "lambda_sat", "R"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"PhysicalParams.{name} must be > 0")

    FIELDS = ("m", "k_s", "z_s", "c_f", "k_g", "R_g0", "R_c0",
              "lambda_sat", "R")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f) for f in self.FIELDS], dtype=float)

    @classmethod
    def from_array(cls, a) -> "PhysicalParams":
        return cls(**dict(zip(cls.FIELDS, (float(x) for x in a))))


@dataclass(frozen=True)
class Geometry:
    """Stroke limits of the armature [m]. Not perturbed between devices."""

    z_min: float = 0.0
    z_max: float = 1.0e-3

    def __post_init__(self):
        if not self.z_min < self.z_max:
            raise ValueError("Geometry requires z_min < z_max")


@dataclass
class PhysState:
    """Physical state: position [m], velocity [m/s], flux linkage [Wb]."""

    z: float
    v: float
    lam: float
    contact: int = FREE


@dataclass(frozen=True)
class IdentParams:
    """Coefficients of the identifiable realization.

    theta1 = k_s/m                      [1/s^2]   restoring rate
    theta2 = c_f/m                      [1/s]     damping rate
    theta3 = -k_s*(k_g*z_s + R_g0)/m    [1/(H s^2)] spring preload term
    theta4 = k_g^2/m                    [1/(H^2 m kg)] force gain on x3^2
    theta5 = R_c0                       [1/H]     core reluctance
    theta6 = lambda_sat                 [Wb]      saturation flux
    theta7 = R                          [Ohm]     coil resistance
    """

    theta1: float
    theta2: float
    theta3: float
    theta4: float
    theta5: float
    theta6: float
    theta7: float

    def as_array(self) -> np.ndarray:
        return np.array([self.theta1, self.theta2, self.theta3, self.theta4,
                         self.theta5, self.theta6, self.theta7], dtype=float)

    @classmethod
    def from_array(cls, a) -> "IdentParams":
        if len(a) != 7:
            raise ValueError("IdentParams.from_array expects 7 components")
        return cls(*(float(x) for x in a))

    def replace_component(self, index: int, value: float) -> "IdentParams":
        """Return a copy with 0-based component `index` set to `value`."""
        a = self.as_array()
        a[index] = value
        return IdentParams.from_array(a)


@dataclass
class IdentState:
    """State of the identifiable realization: x1 [1/H], x2 [1/(H s)], x3 [Wb]."""

    x1: float
    x2: float
    x3: float


def total_reluctance(p: PhysicalParams, z: float, lam: float) -> float:
    """Gap plus saturating core reluctance at position z, flux lam [1/H]."""
    margin = 1.0 - abs(lam) / p.lambda_sat
    if margin <= 0.0:
        raise SaturationError(
            f"flux linkage {lam:.6g} Wb at or beyond saturation "
            f"{p.lambda_sat:.6g} Wb")
    return p.R_g0 + p.k_g * z + p.R_c0 / margin


def phys_derivatives(s: PhysState, u: float, p: PhysicalParams):
    """Free-flight time derivatives (dz, dv, dlam) of the physical model.

    The magnetic force -0.5*k_g*lam^2 always pulls toward smaller z; the
    spring, with rest position beyond the stroke, always pushes back out.
    Contact constraints are the simulator's job, not handled here.
    """
    i = s.lam * total_reluctance(p, s.z, s.lam)
    dz = s.v
    dv = (-p.k_s * (s.z - p.z_s) - p.c_f * s.v - 0.5 * p.k_g * s.lam ** 2) / p.m
    dlam = -p.R * i + u
    return dz, dv, dlam


def phys_output(s: PhysState, p: PhysicalParams):
    """Measured outputs (y1, y2): position and coil current [m, A]."""
    return s.z, s.lam * total_reluctance(p, s.z, s.lam)


def rho_to_theta(p: PhysicalParams) -> IdentParams:
    """Map physical parameters to the identifiable coefficients."""
    return IdentParams(
        theta1=p.k_s / p.m,
        theta2=p.c_f / p.m,
        theta3=-p.k_s * (p.k_g * p.z_s + p.R_g0) / p.m,
        theta4=p.k_g ** 2 / p.m,
        theta5=p.R_c0,
        theta6=p.lambda_sat,
        theta7=p.R,
    )


def to_ident_state(s: PhysState, p: PhysicalParams) -> IdentState:
    """Transform a physical state into identifiable coordinates."""
    return IdentState(x1=p.R_g0 + p.k_g * s.z, x2=p.k_g * s.v, x3=s.lam)


def ident_saturation_margin(th: IdentParams, x3: float) -> float:
    margin = 1.0 - abs(x3) / th.theta6
    if margin <= 0.0:
        raise SaturationError(
            f"flux linkage {x3:.6g} Wb at or beyond saturation "
            f"{th.theta6:.6g} Wb")
    return margin


def ident_derivatives(x: IdentState, u: float, th: IdentParams):
    """Time derivatives (dx1, dx2, dx3) of the identifiable realization."""
    margin = ident_saturation_margin(th, x.x3)
    dx1 = x.x2
    dx2 = (-th.theta1 * x.x1 - th.theta2 * x.x2
           - 0.5 * th.theta4 * x.x3 ** 2 - th.theta3)
    dx3 = -th.theta7 * x.x3 * (x.x1 + th.theta5 / margin) + u
    return dx1, dx2, dx3


def ident_output(x: IdentState, th: IdentParams):
    """Outputs (y1, y2) of the identifiable realization [1/H, A]."""
    margin = ident_saturation_margin(th, x.x3)
    return x.x1, x.x3 * (x.x1 + th.theta5 / margin)


def spring_magnet_force(p: PhysicalParams, z: float, lam: float) -> float:
    """Net static mechanical force at zero velocity [N], positive toward z_max.

    Used for the contact release test: an armature held at a stop lets go
    as soon as this force points back into the stroke.
    """
    return -p.k_s * (z - p.z_s) - 0.5 * p.k_g * lam ** 2
