"""Configuration: defaults, YAML files, and CLI overrides.

One nested dictionary describes a whole experiment. `build_setup` turns
it into the typed objects the library works with. File values override
defaults, CLI flags override file values, and the effective merged
dictionary can be echoed next to results so a run directory is
self-describing.

A few defaults deserve a note. The viscous friction coefficient is tiny
(1e-5 N s/m): the current prediction carries so little information about
friction that any plausible value leaves results unchanged, and a small
value keeps that blindness visible in the sensitivity table instead of
masking it. The reference endpoint undershoots the lower stop by a
couple of nanometers so the commanded trajectory ends just past the
seat; with an exact-touch endpoint the matched device would approach the
stop asymptotically and whether it ever touches would hinge on rounding.
The reluctance slope k_g is quoted in the literature without an
unambiguous unit scale, so a scale had to be chosen; the requirement is
that 30 V closes the device. The default reading (7.67e3 1/(H m)) runs
the flux deep into saturation (hold level near 70% of the limit), which
is what makes the saturation parameter identifiable from current alone:
at gentler operating points the unsaturated-core and saturation
parameters become nearly interchangeable in the predicted current and
the adaptation cannot pin either one. The cost of the deep regime is
that misestimating the saturation parameter also disturbs the motion,
so the two sensitivity rows are more alike than a gentler device would
show. The sensitivity diagnosis integrates over a full energized
interval (default 80 ms): position information stops at touchdown, but
the coil keeps carrying current through the hold, and much of what the
current reveals about saturation accumulates there.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import yaml

from .harness import MonteCarloSpec
from .model import Geometry, PhysicalParams
from .r2r import R2RConfig
from .reference import ReferenceTrajectory, build_reference
from .simulator import SimConfig

DEFAULTS = {
    "device": {
        "m": 1.6e-3,
        "k_s": 55.0,
        "z_s": 1.81e-2,
        "c_f": 1.0e-5,
        "k_g": 7.67e3,   # scale choice; see module docstring
        "R_g0": 3.88,
        "R_c0": 1.35,
        "lambda_sat": 2.29e-2,
        "R": 50.0,
    },
    "geometry": {
        "z_min": 0.0,
        "z_max": 1.0e-3,
    },
    "reference": {
        "duration": 4.5e-3,
        "seat_bias": 2.0e-9,   # commanded endpoint sits this far past the stop
    },
    "control": {
        "t_pre": 1.0e-3,
        "x3_eps": 1.0e-6,
        "hold_boost": 0.1,
        "hold_ramp": 5.0e-4,
    },
    "sim": {
        "t0": 0.0,
        "tf": 6.5e-3,
        "rel_tol": 1.0e-8,
        "abs_tol": 1.0e-10,
        "dt_max": 1.0e-5,
        "sample_period": 1.0e-6,
        "event_tol": 1.0e-9,
        "max_steps": 2_000_000,
        "noise_std": 0.0,
    },
    "r2r": {
        "mode": "im",
        "n_operations": 600,
        "spread": 0.05,
        "restart_on_collapse": False,
        "collapse_tol": 1.0e-6,
        "fatol_rel": 0.0,    # 0 = keep polishing; early freeze hurts slow movers
        "r_est_voltage": 5.0,
        "r_est_duration": 2.0e-2,
        "penalty": None,
    },
    "sensitivity": {
        "tf": 8.0e-2,        # full energized interval, not just the stroke
        "rel_step": 1.0e-4,
    },
    "montecarlo": {
        "n_trials": 100,
        "n_operations": 600,
        "eps_max": 0.05,
        "seed": 12345,
        "modes": ["im", "dm"],
        "levels": [10, 25, 50, 75, 90],
        "n_workers": 1,
        "baseline_voltage": 30.0,
    },
}


def merge(base: dict, override: dict) -> dict:
    """Recursive dict merge; override wins, nested dicts merge keywise."""
    out = copy.deepcopy(base)
    for key, val in override.items():
        if (key in out and isinstance(out[key], dict)
                and isinstance(val, dict)):
            out[key] = merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Effective config = defaults <- YAML file <- explicit overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        with open(path) as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise ValueError(f"config file {path} must hold a mapping")
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        cfg = merge(cfg, loaded)
    if overrides:
        cfg = merge(cfg, overrides)
    return cfg


def dump_config(cfg: dict, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(cfg, fh, sort_keys=True, default_flow_style=False)


@dataclass
class Setup:
    """Typed bundle of one experiment's ingredients."""

    config: dict
    device: PhysicalParams
    geometry: Geometry
    reference: ReferenceTrajectory
    sim: SimConfig
    r2r: R2RConfig
    montecarlo: MonteCarloSpec
    t_pre: float
    x3_eps: float
    hold_boost: float
    hold_ramp: float
    sens_tf: float
    sens_rel_step: float


def build_setup(cfg: dict | None = None) -> Setup:
    """Instantiate the typed objects from an effective config dict."""
    if cfg is None:
        cfg = copy.deepcopy(DEFAULTS)
    device = PhysicalParams(**cfg["device"])
    geometry = Geometry(**cfg["geometry"])
    rc = cfg["reference"]
    reference = build_reference(
        z_start=geometry.z_max,
        z_end=geometry.z_min - float(rc["seat_bias"]),
        duration=float(rc["duration"]))
    sim = SimConfig(**cfg["sim"])
    r2r = R2RConfig(**cfg["r2r"])
    mc = MonteCarloSpec(**cfg["montecarlo"])
    return Setup(config=cfg, device=device, geometry=geometry,
                 reference=reference, sim=sim, r2r=r2r, montecarlo=mc,
                 t_pre=float(cfg["control"]["t_pre"]),
                 x3_eps=float(cfg["control"]["x3_eps"]),
                 hold_boost=float(cfg["control"]["hold_boost"]),
                 hold_ramp=float(cfg["control"]["hold_ramp"]),
                 sens_tf=float(cfg["sensitivity"]["tf"]),
                 sens_rel_step=float(cfg["sensitivity"]["rel_step"]))
