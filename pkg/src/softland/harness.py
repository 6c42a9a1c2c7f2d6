"""Monte Carlo experiments over populations of perturbed devices.

Each trial draws one device (every physical parameter independently
uniform within a relative band around nominal), runs the full run-to-run
campaign on it under one or both cost modes, and logs per-operation
metrics. Populations are paired across modes: the same seed yields the
same devices, so indirect and direct adaptation face identical plants.
Aggregation reduces the trial axis to percentile bands per operation
index, excluding undefined values (a device that never seats has no
impact velocity) with an explicit count rather than silently.

Determinism contract: a (spec, seed) pair fixes every byte of the
aggregated CSVs. Trials are independent, workers only change wall-clock
time, and aggregation always happens after a sort by trial id.
"""

from __future__ import annotations

import json
import math
import multiprocessing
from dataclasses import dataclass

import numpy as np

from .model import Geometry, PhysicalParams
from .flatctrl import DEFAULT_HOLD_BOOST, DEFAULT_HOLD_RAMP
from .r2r import CostMode, R2RConfig, run_r2r
from .reference import ReferenceTrajectory
from .simulator import SimConfig, detect_impact, simulate_operation

PERCENTILE_LEVELS = (10, 25, 50, 75, 90)
METRICS = ("v_c", "t_c_err", "nrmse_z", "cost",
           "ratio1", "ratio2", "ratio3", "ratio4", "ratio5", "ratio6")


@dataclass
class MonteCarloSpec:
    """Population study parameters."""

    n_trials: int = 100
    n_operations: int = 600
    eps_max: float = 0.05
    seed: int = 12345
    modes: tuple = (CostMode.IM, CostMode.DM)
    levels: tuple = PERCENTILE_LEVELS
    n_workers: int = 1
    baseline_voltage: float = 30.0

    def __post_init__(self):
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        if not 0.0 <= self.eps_max < 1.0:
            raise ValueError("eps_max must lie in [0, 1)")
        self.modes = tuple(CostMode(m) for m in self.modes)
        self.levels = tuple(float(p) for p in self.levels)
        if self.n_workers < 1:
            raise ValueError("n_workers must be >= 1")


def sample_devices(n: int, eps_max: float, seed: int,
                   nominal: PhysicalParams) -> list[PhysicalParams]:
    """Population of perturbed devices, one per trial.

    Component i of device k is nominal_i * (1 + e), e ~ U(-eps_max,
    eps_max), drawn from the trial's own counter-based substream so the
    population is independent of how many trials run or in what order.
    """
    nom = nominal.as_array()
    devices = []
    for trial in range(n):
        rng = np.random.default_rng(
            np.random.SeedSequence(seed, spawn_key=(trial,)))
        eps = rng.uniform(-eps_max, eps_max, size=nom.size)
        devices.append(PhysicalParams.from_array(nom * (1.0 + eps)))
    return devices


def percentiles(values, levels) -> np.ndarray:
    """Linear-interpolation quantiles of a nonempty sample."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("percentiles of an empty sample")
    return np.percentile(values, list(levels), method="linear")


@dataclass
class TrialLog:
    """Per-operation metrics of one device under one cost mode."""

    trial: int
    mode: CostMode
    r_hat: float
    cost: np.ndarray        # (n_ops,)
    v_c: np.ndarray         # (n_ops,) nan when the device never seats
    t_c_err: np.ndarray     # (n_ops,) closing-time error, nan when no seat
    nrmse_z: np.ndarray     # (n_ops,)
    ratio: np.ndarray       # (n_ops, 6) candidate over true-device value
    feasible: np.ndarray    # (n_ops,) bool
    cost_state_reads: int   # summed audit counter (IM: must be 0)


@dataclass
class ModeAggregate:
    """Percentile bands per operation index for one mode."""

    mode: CostMode
    levels: tuple
    n: dict          # metric -> (n_ops,) finite-sample counts
    p: dict          # metric -> (n_ops, n_levels) percentile values

    def series(self, metric: str, level: float) -> np.ndarray:
        j = list(self.levels).index(float(level))
        return self.p[metric][:, j]


@dataclass
class MonteCarloResult:
    spec: MonteCarloSpec
    devices: list
    baseline_v_c: np.ndarray             # (n_trials,) uncontrolled impacts
    logs: dict                           # mode -> [TrialLog] sorted by trial
    aggregates: dict                     # mode -> ModeAggregate

    @property
    def baseline_mean_v_c(self) -> float:
        finite = self.baseline_v_c[np.isfinite(self.baseline_v_c)]
        return float(np.mean(finite)) if finite.size else math.nan


@dataclass
class _Job:
    """Everything one worker needs for one trial. Must stay picklable."""

    trial: int
    device: np.ndarray
    mode: CostMode
    p_nom: PhysicalParams
    geom: Geometry
    ref: ReferenceTrajectory
    sim: SimConfig
    r2r_base: R2RConfig
    n_operations: int
    t_pre: float
    x3_eps: float
    hold_boost: float
    hold_ramp: float
    seed: int


def _run_trial(job: _Job) -> TrialLog:
    p_true = PhysicalParams.from_array(job.device)
    cfg = R2RConfig(
        mode=job.mode, n_operations=job.n_operations,
        spread=job.r2r_base.spread,
        restart_on_collapse=job.r2r_base.restart_on_collapse,
        collapse_tol=job.r2r_base.collapse_tol,
        fatol_rel=job.r2r_base.fatol_rel,
        r_est_voltage=job.r2r_base.r_est_voltage,
        r_est_duration=job.r2r_base.r_est_duration,
        penalty=job.r2r_base.penalty)
    rng = None
    if job.sim.noise_std > 0.0:
        rng = np.random.default_rng(
            np.random.SeedSequence(job.seed, spawn_key=(job.trial, 1)))
    res = run_r2r(p_true, job.p_nom, job.geom, job.ref, job.sim, cfg,
                  t_pre=job.t_pre, x3_eps=job.x3_eps,
                  hold_boost=job.hold_boost, hold_ramp=job.hold_ramp,
                  rng=rng)
    anchor6 = res.theta_anchor.as_array()[:6]
    true6 = res.theta_true.as_array()[:6]
    ratio = res.theta_norm * (anchor6 / true6)
    t_c_err = res.t_c - (job.t_pre + job.ref.duration)
    return TrialLog(
        trial=job.trial, mode=job.mode, r_hat=res.r_hat, cost=res.cost,
        v_c=res.v_c, t_c_err=t_c_err, nrmse_z=res.nrmse_z, ratio=ratio,
        feasible=res.feasible,
        cost_state_reads=int(res.cost_state_reads.sum()))


def run_uncontrolled_baseline(devices, geom: Geometry, sim: SimConfig,
                              voltage: float) -> np.ndarray:
    """Impact speed of each device under a plain voltage step."""
    out = np.full(len(devices), math.nan)
    for k, p in enumerate(devices):
        rec = simulate_operation(p, geom, float(voltage), sim)
        v_c, _ = detect_impact(rec, geom)
        out[k] = v_c
    return out


def _metric_matrix(logs, metric: str) -> np.ndarray:
    if metric.startswith("ratio"):
        i = int(metric[len("ratio"):]) - 1
        return np.stack([lg.ratio[:, i] for lg in logs])
    return np.stack([getattr(lg, metric) for lg in logs])


def aggregate_mode(logs, levels) -> ModeAggregate:
    """Reduce the trial axis to percentile bands, excluding non-finite
    values with a per-row count."""
    logs = sorted(logs, key=lambda lg: lg.trial)
    n_levels = len(levels)
    n_ops = logs[0].cost.size
    counts = {}
    bands = {}
    for metric in METRICS:
        m = _metric_matrix(logs, metric)
        n_col = np.zeros(n_ops, dtype=np.int64)
        p_mat = np.full((n_ops, n_levels), math.nan)
        for k in range(n_ops):
            vals = m[:, k]
            finite = vals[np.isfinite(vals)]
            n_col[k] = finite.size
            if finite.size:
                p_mat[k] = percentiles(finite, levels)
        counts[metric] = n_col
        bands[metric] = p_mat
    return ModeAggregate(mode=logs[0].mode, levels=tuple(levels),
                         n=counts, p=bands)


def run_montecarlo(p_nom: PhysicalParams, geom: Geometry,
                   ref: ReferenceTrajectory, sim: SimConfig,
                   r2r_base: R2RConfig, spec: MonteCarloSpec,
                   t_pre: float = 1.0e-3,
                   x3_eps: float = 1.0e-6,
                   hold_boost: float = DEFAULT_HOLD_BOOST,
                   hold_ramp: float = DEFAULT_HOLD_RAMP) -> MonteCarloResult:
    """Run the full population study. See the module docstring."""
    devices = sample_devices(spec.n_trials, spec.eps_max, spec.seed, p_nom)
    baseline = run_uncontrolled_baseline(devices, geom, sim,
                                         spec.baseline_voltage)
    logs = {}
    aggregates = {}
    for mode in spec.modes:
        jobs = [
            _Job(trial=k, device=devices[k].as_array(), mode=mode,
                 p_nom=p_nom, geom=geom, ref=ref, sim=sim,
                 r2r_base=r2r_base, n_operations=spec.n_operations,
                 t_pre=t_pre, x3_eps=x3_eps,
                 hold_boost=hold_boost, hold_ramp=hold_ramp, seed=spec.seed)
            for k in range(spec.n_trials)
        ]
        if spec.n_workers > 1:
            ctx = multiprocessing.get_context("fork")
            with ctx.Pool(processes=spec.n_workers) as pool:
                mode_logs = pool.map(_run_trial, jobs)
        else:
            mode_logs = [_run_trial(j) for j in jobs]
        mode_logs.sort(key=lambda lg: lg.trial)
        logs[mode] = mode_logs
        aggregates[mode] = aggregate_mode(mode_logs, spec.levels)
    return MonteCarloResult(spec=spec, devices=devices,
                            baseline_v_c=baseline, logs=logs,
                            aggregates=aggregates)


# -- persistence ---------------------------------------------------------------

def _fmt(x) -> str:
    return repr(float(x))


def write_aggregate_csv(path, agg: ModeAggregate) -> None:
    """One row per (operation, metric): counts and percentile bands."""
    cols = ",".join(f"p{level:g}" for level in agg.levels)
    n_ops = agg.n[METRICS[0]].size
    with open(path, "w") as fh:
        fh.write(f"op,metric,n,{cols}\n")
        for k in range(n_ops):
            for metric in METRICS:
                row = agg.p[metric][k]
                fh.write(f"{k},{metric},{int(agg.n[metric][k])},"
                         + ",".join(_fmt(v) for v in row) + "\n")


def write_trial_csv(path, log: TrialLog) -> None:
    with open(path, "w") as fh:
        fh.write("op,cost,v_c,t_c_err,nrmse_z,feasible,"
                 "ratio1,ratio2,ratio3,ratio4,ratio5,ratio6\n")
        for k in range(log.cost.size):
            fields = [str(k), _fmt(log.cost[k]), _fmt(log.v_c[k]),
                      _fmt(log.t_c_err[k]), _fmt(log.nrmse_z[k]),
                      str(int(log.feasible[k]))]
            fields += [_fmt(v) for v in log.ratio[k]]
            fh.write(",".join(fields) + "\n")


def write_baseline_csv(path, baseline: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write("trial,v_c_uncontrolled\n")
        for k, v in enumerate(baseline):
            fh.write(f"{k},{_fmt(v)}\n")


def write_meta_json(path, result: MonteCarloResult, extra: dict | None = None) -> None:
    spec = result.spec
    meta = {
        "n_trials": spec.n_trials,
        "n_operations": spec.n_operations,
        "eps_max": spec.eps_max,
        "seed": spec.seed,
        "modes": [m.value for m in spec.modes],
        "levels": list(spec.levels),
        "baseline_voltage": spec.baseline_voltage,
        "baseline_mean_v_c": result.baseline_mean_v_c,
        "quantile_estimator": "linear interpolation between order statistics",
        "undefined_values": "excluded per row; column n counts the rest",
    }
    if extra:
        meta.update(extra)
    with open(path, "w") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_run_directory(out_dir, result: MonteCarloResult,
                        extra_meta: dict | None = None) -> None:
    """Standard layout: meta.json, baseline.csv, agg_<mode>.csv and
    per-trial logs under trials/<mode>/."""
    import os
    os.makedirs(out_dir, exist_ok=True)
    write_meta_json(os.path.join(out_dir, "meta.json"), result, extra_meta)
    write_baseline_csv(os.path.join(out_dir, "baseline.csv"),
                       result.baseline_v_c)
    for mode, agg in result.aggregates.items():
        write_aggregate_csv(
            os.path.join(out_dir, f"agg_{mode.value}.csv"), agg)
        tdir = os.path.join(out_dir, "trials", mode.value)
        os.makedirs(tdir, exist_ok=True)
        for log in result.logs[mode]:
            write_trial_csv(
                os.path.join(tdir, f"trial_{log.trial:04d}.csv"), log)


def write_percentile_plot(path, agg: ModeAggregate, metric: str,
                          title: str | None = None) -> bool:
    """Optional SVG band chart of one metric; needs matplotlib.

    Returns False (and writes nothing) when matplotlib is missing.
    """
    try:
        import matplotlib
        matplotlib.use("svg", force=True)
        import matplotlib.pyplot as plt
    except ImportError:
        return False
    p = agg.p[metric]
    ops = np.arange(p.shape[0])
    levels = list(agg.levels)
    fig, ax = plt.subplots(figsize=(7, 4))
    if 10.0 in levels and 90.0 in levels:
        ax.fill_between(ops, p[:, levels.index(10.0)],
                        p[:, levels.index(90.0)], alpha=0.2,
                        label="p10-p90")
    if 25.0 in levels and 75.0 in levels:
        ax.fill_between(ops, p[:, levels.index(25.0)],
                        p[:, levels.index(75.0)], alpha=0.35,
                        label="p25-p75")
    if 50.0 in levels:
        ax.plot(ops, p[:, levels.index(50.0)], lw=1.5, label="p50")
    ax.set_xlabel("operation")
    ax.set_ylabel(metric)
    ax.set_title(title or f"{metric} ({agg.mode.value})")
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return True
