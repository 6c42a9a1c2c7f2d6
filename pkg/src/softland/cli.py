"""Command-line entry points.

Every subcommand reads the same layered configuration (defaults, then
an optional YAML file, then flags), runs one batch experiment, and
reports a JSON summary on stdout. Failures exit nonzero with a JSON
error record on stderr so scripted callers never have to parse
tracebacks.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import config as cfgmod
from .flatctrl import build_control
from .harness import (TrialLog, run_montecarlo, sample_devices,
                      write_percentile_plot, write_run_directory,
                      write_trial_csv)
from .model import rho_to_theta
from .r2r import run_r2r
from .reference import eval_reference
from .sensitivity import (predictor_sensitivity, tracking_sensitivity,
                          write_table)
from .simulator import detect_impact, sample_grid, simulate_operation


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="YAML config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--mode", choices=["im", "dm"], default=None)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--operations", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)


def _overrides(args) -> dict:
    ov: dict = {}
    if args.seed is not None:
        ov.setdefault("montecarlo", {})["seed"] = args.seed
    if args.mode is not None:
        ov.setdefault("r2r", {})["mode"] = args.mode
        ov.setdefault("montecarlo", {})["modes"] = [args.mode]
    if args.trials is not None:
        ov.setdefault("montecarlo", {})["n_trials"] = args.trials
    if args.operations is not None:
        ov.setdefault("montecarlo", {})["n_operations"] = args.operations
        ov.setdefault("r2r", {})["n_operations"] = args.operations
    if args.workers is not None:
        ov.setdefault("montecarlo", {})["n_workers"] = args.workers
    return ov


def _setup_from(args):
    cfg = cfgmod.load_config(args.config, _overrides(args))
    return cfgmod.build_setup(cfg)


def _emit(payload: dict) -> None:
    json.dump(payload, sys.stdout, sort_keys=True, indent=2)
    sys.stdout.write("\n")


def _ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def cmd_simulate(args) -> int:
    st = _setup_from(args)
    th = rho_to_theta(st.device)
    grid = sample_grid(st.sim)
    if args.voltage is not None:
        control = float(args.voltage)
    else:
        control = build_control(st.reference, th, st.device.R_g0,
                                st.device.k_g, t_pre=st.t_pre, grid=grid,
                                x3_eps=st.x3_eps,
                                hold_boost=st.hold_boost,
                                hold_ramp=st.hold_ramp)
    rec = simulate_operation(st.device, st.geometry, control, st.sim)
    v_c, t_c = detect_impact(rec, st.geometry)
    if args.out_dir:
        _ensure_dir(args.out_dir)
        rec.to_csv(os.path.join(args.out_dir, "trace.csv"))
        cfgmod.dump_config(st.config,
                           os.path.join(args.out_dir, "config.yaml"))
    _emit({
        "command": "simulate",
        "v_c": v_c,
        "t_c": t_c,
        "events": rec.events,
        "n_steps": rec.n_steps,
        "trace_written": bool(args.out_dir),
    })
    return 0


def cmd_r2r(args) -> int:
    st = _setup_from(args)
    if args.perturb and args.perturb > 0.0:
        seed = st.montecarlo.seed
        device = sample_devices(1, args.perturb, seed, st.device)[0]
    else:
        device = st.device
    res = run_r2r(device, st.device, st.geometry, st.reference, st.sim,
                  st.r2r, t_pre=st.t_pre, x3_eps=st.x3_eps,
                  hold_boost=st.hold_boost, hold_ramp=st.hold_ramp)
    if args.out_dir:
        _ensure_dir(args.out_dir)
        anchor6 = res.theta_anchor.as_array()[:6]
        true6 = res.theta_true.as_array()[:6]
        log = TrialLog(
            trial=0, mode=res.mode, r_hat=res.r_hat, cost=res.cost,
            v_c=res.v_c,
            t_c_err=res.t_c - (st.t_pre + st.reference.duration),
            nrmse_z=res.nrmse_z, ratio=res.theta_norm * (anchor6 / true6),
            feasible=res.feasible,
            cost_state_reads=int(res.cost_state_reads.sum()))
        write_trial_csv(os.path.join(args.out_dir, "trial_0000.csv"), log)
        cfgmod.dump_config(st.config,
                           os.path.join(args.out_dir, "config.yaml"))
    best = res.best_operation()
    _emit({
        "command": "r2r",
        "mode": res.mode.value,
        "r_hat": res.r_hat,
        "best_operation": best,
        "best_cost": float(res.cost[best]),
        "final_v_c": float(res.v_c[-1]),
        "final_nrmse_z": float(res.nrmse_z[-1]),
        "n_infeasible": int((~res.feasible).sum()),
        "cost_state_reads": int(res.cost_state_reads.sum()),
    })
    return 0


def cmd_montecarlo(args) -> int:
    st = _setup_from(args)
    result = run_montecarlo(st.device, st.geometry, st.reference, st.sim,
                            st.r2r, st.montecarlo, t_pre=st.t_pre,
                            x3_eps=st.x3_eps, hold_boost=st.hold_boost,
                            hold_ramp=st.hold_ramp)
    if args.out_dir:
        _ensure_dir(args.out_dir)
        write_run_directory(args.out_dir, result)
        cfgmod.dump_config(st.config,
                           os.path.join(args.out_dir, "config.yaml"))
        if args.plots:
            for mode, agg in result.aggregates.items():
                for metric in ("v_c", "nrmse_z", "t_c_err", "cost"):
                    write_percentile_plot(
                        os.path.join(args.out_dir,
                                     f"{metric}_{mode.value}.svg"),
                        agg, metric)
    summary = {
        "command": "montecarlo",
        "n_trials": st.montecarlo.n_trials,
        "n_operations": st.montecarlo.n_operations,
        "baseline_mean_v_c": result.baseline_mean_v_c,
    }
    for mode, agg in result.aggregates.items():
        final = {}
        for metric in ("v_c", "nrmse_z", "t_c_err", "cost"):
            final[metric] = {
                "n": int(agg.n[metric][-1]),
                "p50": float(agg.series(metric, 50)[-1]),
            }
        summary[f"final_{mode.value}"] = final
    _emit(summary)
    return 0


def cmd_sensitivity(args) -> int:
    st = _setup_from(args)
    th = rho_to_theta(st.device)
    # current prediction integrates over the full energized interval;
    # position tracking is cut off at touchdown regardless of window
    grid = sample_grid(dataclasses.replace(st.sim, tf=st.sens_tf))
    rep_pred = predictor_sensitivity(th, st.reference, grid, st.device.R_g0,
                                     st.device.k_g, t_pre=st.t_pre,
                                     x3_eps=st.x3_eps,
                                     h_rel=st.sens_rel_step)
    rep_track = tracking_sensitivity(th, st.device, st.geometry,
                                     st.reference, st.sim, st.device.R_g0,
                                     st.device.k_g, t_pre=st.t_pre,
                                     x3_eps=st.x3_eps,
                                     h_rel=st.sens_rel_step)
    if args.out_dir:
        _ensure_dir(args.out_dir)
        write_table([rep_pred, rep_track],
                    os.path.join(args.out_dir, "sensitivity.csv"))
    _emit({
        "command": "sensitivity",
        "predictor": {"S_bar": [float(s) for s in rep_pred.S_bar],
                      "ranking": rep_pred.ranking()},
        "tracking": {"S_bar": [float(s) for s in rep_track.S_bar],
                     "ranking": rep_track.ranking()},
    })
    return 0


def cmd_reference(args) -> int:
    st = _setup_from(args)
    ref = st.reference
    grid = np.arange(0.0, ref.duration + st.sim.sample_period / 2,
                     st.sim.sample_period)
    rows = [eval_reference(ref, grid, order=k) for k in range(4)]
    if args.out_dir:
        _ensure_dir(args.out_dir)
        path = os.path.join(args.out_dir, "reference.csv")
        with open(path, "w") as fh:
            fh.write("t,z,dz,ddz,dddz\n")
            for i, t in enumerate(grid):
                fh.write(",".join(repr(float(x)) for x in
                                  (t, rows[0][i], rows[1][i], rows[2][i],
                                   rows[3][i])) + "\n")
    _emit({
        "command": "reference",
        "duration": ref.duration,
        "z_start": ref.z_start,
        "z_end": ref.z_end,
        "peak_speed": float(np.max(np.abs(rows[1]))),
        "samples": int(grid.size),
        "written": bool(args.out_dir),
    })
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="softland",
        description="Soft-landing feedforward simulation and "
                    "run-to-run adaptation experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="one switching operation")
    _common_flags(p)
    p.add_argument("--voltage", type=float, default=None,
                   help="constant drive voltage instead of the feedforward")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("r2r", help="adaptation campaign on one device")
    _common_flags(p)
    p.add_argument("--perturb", type=float, default=None,
                   help="draw the device at this relative bound (else nominal)")
    p.set_defaults(fn=cmd_r2r)

    p = sub.add_parser("montecarlo", help="population study")
    _common_flags(p)
    p.add_argument("--plots", action="store_true",
                   help="also write SVG percentile charts (needs matplotlib)")
    p.set_defaults(fn=cmd_montecarlo)

    p = sub.add_parser("sensitivity", help="identifiability table")
    _common_flags(p)
    p.set_defaults(fn=cmd_sensitivity)

    p = sub.add_parser("reference", help="dump the position reference")
    _common_flags(p)
    p.set_defaults(fn=cmd_reference)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # noqa: BLE001 - the CLI boundary
        record = {"error": type(exc).__name__, "message": str(exc)}
        t = getattr(exc, "t", None)
        if t is not None:
            record["t"] = t
        json.dump(record, sys.stderr, sort_keys=True)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
