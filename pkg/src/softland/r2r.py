"""Run-to-run adaptation of the feedforward parameters.

One switching operation yields exactly one scalar cost, so the optimizer
must live as a state machine across operations: it proposes a parameter
vector, the plant runs once, the measured cost comes back, and only then
may it propose again. The machine below is a Nelder-Mead simplex walk
organized around that propose/update handshake.

Two cost modes are supported. The indirect mode scores the integrated
squared gap between measured and predicted coil current, so it needs no
motion sensing at all; an audit counter on the state traces proves the
cost path never read them. The direct mode scores the squared impact
velocity and stands in as the full-state-information benchmark.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .flatctrl import (DEFAULT_HOLD_BOOST, DEFAULT_HOLD_RAMP,
                       InfeasibleReferenceError, SingularFluxError,
                       build_control)
from .model import (Geometry, IdentParams, PhysicalParams, SaturationError,
                    rho_to_theta)
from .reference import ReferenceTrajectory, eval_reference
from .simulator import (IntegrationError, SimConfig, compute_nrmse,
                        detect_impact, sample_grid, simulate_operation,
                        trapz_uniform)


class CostMode(str, Enum):
    """Which measurement the per-operation cost is built from."""

    IM = "im"   # indirect: coil-current prediction error
    DM = "dm"   # direct: squared impact velocity


class ProtocolError(RuntimeError):
    """propose/update called out of order."""


# Simplex phases. The machine is always waiting either to propose the
# next candidate or to receive the cost of the last one.
INIT = "init"
REFLECT = "reflect"
EXPAND = "expand"
CONTRACT_OUT = "contract_out"
CONTRACT_IN = "contract_in"
SHRINK = "shrink"


class SimplexMachine:
    """Nelder-Mead as an externally driven propose/update machine.

    Standard coefficients (reflect 1, expand 2, contract 1/2, shrink 1/2)
    on n+1 vertices in R^n. Candidates with coordinates listed in
    `positive` are projected onto [floor, inf) before being proposed.
    A cost of nan is accepted and treated as +inf (worst possible).

    With fatol_rel > 0 the machine freezes once the vertex costs have
    both improved on the initial simplex and collapsed to within that
    relative spread of the best: from then on it proposes the best
    vertex verbatim and ignores incoming costs. On a cost landscape
    with an exactly flat valley this stops the simplex from drifting
    along the valley chasing evaluation noise after convergence.
    """

    def __init__(self, x0, spread: float = 0.05,
                 reflect: float = 1.0, expand: float = 2.0,
                 contract: float = 0.5, shrink: float = 0.5,
                 positive=(), floor: float = 1.0e-6,
                 restart_on_collapse: bool = False,
                 collapse_tol: float = 1.0e-6,
                 fatol_rel: float = 0.0):
        x0 = np.asarray(x0, dtype=float)
        if x0.ndim != 1 or x0.size < 1:
            raise ValueError("x0 must be a nonempty 1-d vector")
        if not 0.0 < spread:
            raise ValueError("spread must be > 0")
        self.n = x0.size
        self.spread = float(spread)
        self.alpha = float(reflect)
        self.gamma = float(expand)
        self.beta = float(contract)
        self.sigma = float(shrink)
        self.positive = tuple(int(i) for i in positive)
        self.floor = float(floor)
        self.restart_on_collapse = bool(restart_on_collapse)
        self.collapse_tol = float(collapse_tol)
        self.fatol_rel = float(fatol_rel)
        self.frozen = False
        self._f0_best = math.inf      # best cost of the initial simplex
        self.vertices = np.empty((self.n + 1, self.n))
        self.costs = np.full(self.n + 1, math.inf)
        self._seed_simplex(x0)
        self.phase = INIT
        self._awaiting = False
        self._pending = None          # candidate whose cost is outstanding
        self._slot = 0                # INIT / SHRINK: vertex being filled
        self._centroid = None         # frozen at REFLECT proposal
        self._order = None            # argsort of costs, frozen per sweep
        self._fr = math.inf           # reflected cost (for expand/contract)
        self._xr = None
        self._shrink_queue = []
        self.n_proposed = 0
        self.n_updates = 0
        self.iterations = 0           # completed reflect-level decisions
        self.restarts = 0

    def _seed_simplex(self, x0):
        self.vertices[0] = x0
        for i in range(self.n):
            v = x0.copy()
            v[i] = v[i] * (1.0 + self.spread) if v[i] != 0.0 else self.spread
            self.vertices[i + 1] = v
        self.costs[:] = math.inf

    def _project(self, x):
        x = np.asarray(x, dtype=float).copy()
        for i in self.positive:
            if x[i] < self.floor:
                x[i] = self.floor
        return x

    def diameter(self) -> float:
        """Largest vertex distance from the current best vertex."""
        best = self.vertices[int(np.argmin(self.costs))]
        return float(np.max(np.linalg.norm(self.vertices - best, axis=1)))

    def best(self) -> tuple[np.ndarray, float]:
        i = int(np.argmin(self.costs))
        return self.vertices[i].copy(), float(self.costs[i])

    # -- propose -----------------------------------------------------------

    def propose(self) -> np.ndarray:
        if self._awaiting:
            raise ProtocolError("propose called before update")
        if self.frozen:
            cand = self.vertices[int(np.argmin(self.costs))].copy()
            self._pending = cand
            self._awaiting = True
            self.n_proposed += 1
            return cand.copy()
        if self.phase == INIT:
            cand = self._project(self.vertices[self._slot])
            self.vertices[self._slot] = cand
        elif self.phase == REFLECT:
            if self.fatol_rel > 0.0:
                fb = float(np.min(self.costs))
                fw = float(np.max(self.costs))
                if fb < self._f0_best and fw - fb <= self.fatol_rel * fb:
                    self.frozen = True
                    return self.propose()
            if (self.restart_on_collapse
                    and self.diameter() < self.collapse_tol):
                self._restart()
                return self.propose()
            self._order = np.argsort(self.costs, kind="stable")
            worst = self.vertices[self._order[-1]]
            self._centroid = (self.vertices[self._order[:-1]]
                              .mean(axis=0))
            cand = self._project(self._centroid
                                 + self.alpha * (self._centroid - worst))
            self._xr = cand
        elif self.phase == EXPAND:
            cand = self._project(self._centroid
                                 + self.gamma * (self._xr - self._centroid))
        elif self.phase == CONTRACT_OUT:
            cand = self._project(self._centroid
                                 + self.beta * (self._xr - self._centroid))
        elif self.phase == CONTRACT_IN:
            worst = self.vertices[self._order[-1]]
            cand = self._project(self._centroid
                                 + self.beta * (worst - self._centroid))
        elif self.phase == SHRINK:
            best = self.vertices[self._order[0]]
            i = self._shrink_queue[self._slot]
            cand = self._project(best + self.sigma * (self.vertices[i] - best))
        else:  # pragma: no cover
            raise ProtocolError(f"unknown phase {self.phase!r}")
        self._pending = cand
        self._awaiting = True
        self.n_proposed += 1
        return cand.copy()

    def _restart(self):
        x_best, f_best = self.best()
        self._seed_simplex(x_best)
        self.costs[0] = f_best
        self.phase = INIT
        self._slot = 1
        self.restarts += 1

    # -- update ------------------------------------------------------------

    def update(self, cost: float) -> None:
        if not self._awaiting:
            raise ProtocolError("update called before propose")
        f = float(cost)
        if math.isnan(f):
            f = math.inf
        self._awaiting = False
        x = self._pending
        self._pending = None
        self.n_updates += 1
        if self.frozen:
            return
        if self.phase == INIT:
            self.costs[self._slot] = f
            self._slot += 1
            if self._slot > self.n:
                self.phase = REFLECT
                self._f0_best = float(np.min(self.costs))
            return
        order = self._order
        i_best = order[0]
        i_second_worst = order[-2]
        i_worst = order[-1]
        if self.phase == REFLECT:
            if f < self.costs[i_best]:
                self._fr = f
                self.phase = EXPAND
            elif f < self.costs[i_second_worst]:
                self._replace(i_worst, x, f)
                self._finish_iteration()
            elif f < self.costs[i_worst]:
                self._fr = f
                self.phase = CONTRACT_OUT
            else:
                self._fr = f
                self.phase = CONTRACT_IN
        elif self.phase == EXPAND:
            if f < self._fr:
                self._replace(i_worst, x, f)
            else:
                self._replace(i_worst, self._xr, self._fr)
            self._finish_iteration()
        elif self.phase == CONTRACT_OUT:
            if f <= self._fr:
                self._replace(i_worst, x, f)
                self._finish_iteration()
            else:
                self._begin_shrink()
        elif self.phase == CONTRACT_IN:
            if f < self.costs[i_worst]:
                self._replace(i_worst, x, f)
                self._finish_iteration()
            else:
                self._begin_shrink()
        elif self.phase == SHRINK:
            i = self._shrink_queue[self._slot]
            self.vertices[i] = x
            self.costs[i] = f
            self._slot += 1
            if self._slot >= len(self._shrink_queue):
                self._finish_iteration()

    def _replace(self, idx, x, f):
        self.vertices[idx] = x
        self.costs[idx] = f

    def _finish_iteration(self):
        self.phase = REFLECT
        self.iterations += 1

    def _begin_shrink(self):
        self._shrink_queue = [int(i) for i in self._order[1:]]
        self._slot = 0
        self.phase = SHRINK


# -- adaptation wrappers around the normalized parameter space --------------

# Indices (into theta1..theta6) that must stay positive for the flat
# inversion and the reluctance model to make sense.
POSITIVE_COMPONENTS = (0, 3, 4, 5)


@dataclass
class OptimizerState:
    """Simplex machine plus the denormalization anchor."""

    machine: SimplexMachine
    theta_anchor: IdentParams     # nominal-transform values; theta7 fixed
    last_norm: np.ndarray | None = None

    def denormalize(self, x: np.ndarray) -> IdentParams:
        a = self.theta_anchor
        return IdentParams(
            theta1=x[0] * a.theta1, theta2=x[1] * a.theta2,
            theta3=x[2] * a.theta3, theta4=x[3] * a.theta4,
            theta5=x[4] * a.theta5, theta6=x[5] * a.theta6,
            theta7=a.theta7)


def nm_init(theta_anchor: IdentParams, spread: float = 0.05,
            restart_on_collapse: bool = False,
            collapse_tol: float = 1.0e-6,
            fatol_rel: float = 0.0) -> OptimizerState:
    """Fresh optimizer around the anchor (all-ones in normalized space)."""
    machine = SimplexMachine(
        np.ones(6), spread=spread,
        positive=POSITIVE_COMPONENTS, floor=1.0e-6,
        restart_on_collapse=restart_on_collapse, collapse_tol=collapse_tol,
        fatol_rel=fatol_rel)
    return OptimizerState(machine=machine, theta_anchor=theta_anchor)


def nm_propose(state: OptimizerState) -> IdentParams:
    x = state.machine.propose()
    state.last_norm = x
    return state.denormalize(x)


def nm_update(state: OptimizerState, cost: float) -> None:
    state.machine.update(cost)


def nm_best(state: OptimizerState) -> tuple[IdentParams, float]:
    x, f = state.machine.best()
    return state.denormalize(x), f


# -- costs -------------------------------------------------------------------

def compute_cost_im(y2: np.ndarray, y2_hat: np.ndarray, dt: float) -> float:
    """Integrated squared current-prediction error (trapezoid rule)."""
    y2 = np.asarray(y2, dtype=float)
    y2_hat = np.asarray(y2_hat, dtype=float)
    if y2.shape != y2_hat.shape:
        raise ValueError("measured and predicted currents must share a grid")
    e = y2 - y2_hat
    return trapz_uniform(e * e, dt)


def no_impact_penalty(geom: Geometry, ref: ReferenceTrajectory) -> float:
    """Penalty charged by the direct cost when the device never seats."""
    return 1.0e6 * (geom.z_max / ref.duration) ** 2


def compute_cost_dm(v_c: float, penalty: float) -> float:
    """Squared impact velocity; the penalty stands in when v_c is nan."""
    if math.isnan(v_c):
        return penalty
    return v_c * v_c


def estimate_resistance(u_ss: float, i_ss: float) -> float:
    """DC resistance from one steady-state voltage/current pair."""
    if not i_ss > 0.0:
        raise ValueError("steady-state current must be positive")
    if not u_ss > 0.0:
        raise ValueError("steady-state voltage must be positive")
    return u_ss / i_ss


# -- the run-to-run experiment ------------------------------------------------

@dataclass
class R2RConfig:
    """Knobs of one adaptation campaign.

    fatol_rel > 0 freezes the simplex once its costs agree to that
    relative spread (and beat the initial simplex); the remaining
    operations then rerun the converged candidate. Off by default: the
    prediction-error landscape does have an exactly cost-flat subspace
    (jointly rescaling the first four components changes neither the
    feedforward nor the prediction, so drift along it is harmless), and
    on populations with slow-converging members an early freeze locks in
    a poor candidate for the rest of the campaign, which measurably
    worsens the landing statistics.
    """

    mode: CostMode = CostMode.IM
    n_operations: int = 600
    spread: float = 0.05
    restart_on_collapse: bool = False
    collapse_tol: float = 1.0e-6
    fatol_rel: float = 0.0
    r_est_voltage: float = 5.0
    r_est_duration: float = 2.0e-2
    penalty: float | None = None    # None: no_impact_penalty(geom, ref)

    def __post_init__(self):
        self.mode = CostMode(self.mode)
        if self.n_operations < 1:
            raise ValueError("n_operations must be >= 1")


@dataclass
class R2RResult:
    """Per-operation logs of one adaptation campaign on one device."""

    mode: CostMode
    r_hat: float
    theta_anchor: IdentParams
    theta_true: IdentParams
    cost: np.ndarray            # (n,) cost fed to the optimizer
    v_c: np.ndarray             # (n,) impact speed, nan if no impact
    t_c: np.ndarray             # (n,) final closing instant, nan if none
    nrmse_z: np.ndarray         # (n,) position-tracking error
    theta_norm: np.ndarray      # (n, 6) evaluated candidates, normalized
    feasible: np.ndarray        # (n,) bool: the operation ran to tf
    cost_state_reads: np.ndarray  # (n,) state-trace reads by the cost path
    n_steps_total: int
    optimizer: OptimizerState

    def best_operation(self) -> int:
        return int(np.argmin(self.cost))


def estimate_resistance_from_hold(p_true: PhysicalParams, geom: Geometry,
                                  cfg: R2RConfig,
                                  sim: SimConfig) -> float:
    """Ohm's-law identification from a quiet constant-voltage hold.

    A small DC voltage is applied with the armature parked; once the flux
    has settled the current obeys u = R i. This runs before adaptation
    and its operation is not scored.
    """
    hold = SimConfig(t0=0.0, tf=cfg.r_est_duration,
                     rel_tol=sim.rel_tol, abs_tol=sim.abs_tol,
                     dt_max=sim.dt_max, sample_period=sim.sample_period,
                     event_tol=sim.event_tol, max_steps=sim.max_steps)
    rec = simulate_operation(p_true, geom, cfg.r_est_voltage, hold)
    return estimate_resistance(cfg.r_est_voltage, float(rec.y2[-1]))


def run_r2r(p_true: PhysicalParams, p_nom: PhysicalParams, geom: Geometry,
            ref: ReferenceTrajectory, sim: SimConfig, cfg: R2RConfig,
            t_pre: float = 1.0e-3, x3_eps: float = 1.0e-6,
            hold_boost: float = DEFAULT_HOLD_BOOST,
            hold_ramp: float = DEFAULT_HOLD_RAMP,
            rng: np.random.Generator | None = None) -> R2RResult:
    """Adapt the feedforward on one device over repeated operations.

    The true device p_true is only ever touched through simulation; the
    controller starts from the transform of the nominal catalogue values
    p_nom, with the resistance component replaced by the Ohm's-law
    estimate. Every operation: propose, build the control, run, score,
    update. Operations that fail to run (infeasible inversion, flux
    saturation, integrator breakdown) are charged the no-impact penalty
    so the simplex retreats from them.
    """
    n = cfg.n_operations
    r_hat = estimate_resistance_from_hold(p_true, geom, cfg, sim)
    anchor = rho_to_theta(p_nom).replace_component(6, r_hat)
    theta_true = rho_to_theta(p_true)
    state = nm_init(anchor, spread=cfg.spread,
                    restart_on_collapse=cfg.restart_on_collapse,
                    collapse_tol=cfg.collapse_tol,
                    fatol_rel=cfg.fatol_rel)
    penalty = cfg.penalty
    if penalty is None:
        penalty = no_impact_penalty(geom, ref)
    grid = sample_grid(sim)
    z_ref_grid = eval_reference(ref, grid - t_pre)
    dt = sim.sample_period
    cost = np.empty(n)
    v_c = np.full(n, math.nan)
    t_c = np.full(n, math.nan)
    nrmse_z = np.full(n, math.nan)
    theta_norm = np.empty((n, 6))
    feasible = np.zeros(n, dtype=bool)
    reads = np.zeros(n, dtype=np.int64)
    n_steps_total = 0
    for k in range(n):
        th_k = nm_propose(state)
        theta_norm[k] = state.last_norm
        try:
            signal = build_control(ref, th_k, p_nom.R_g0, p_nom.k_g,
                                   t_pre=t_pre, grid=grid, x3_eps=x3_eps,
                                   hold_boost=hold_boost,
                                   hold_ramp=hold_ramp)
            rec = simulate_operation(p_true, geom, signal, sim, rng=rng)
        except (InfeasibleReferenceError, SingularFluxError,
                SaturationError, IntegrationError):
            cost[k] = penalty
            nm_update(state, penalty)
            continue
        n_steps_total += rec.n_steps
        if cfg.mode is CostMode.IM:
            j = compute_cost_im(rec.y2, rec.y2_hat, dt)
            reads[k] = rec.state_reads()   # audit: must still be zero
        # Landing metrics are logged for every run; in IM mode they are
        # evaluation-only and never reach the optimizer.
        vck, tck = detect_impact(rec, geom)
        v_c[k] = vck
        t_c[k] = tck
        nrmse_z[k] = compute_nrmse(rec.z, z_ref_grid, dt)
        if cfg.mode is CostMode.DM:
            j = compute_cost_dm(vck, penalty)
        cost[k] = j
        feasible[k] = True
        rec.v_c, rec.t_c, rec.nrmse_z, rec.cost = vck, tck, nrmse_z[k], j
        nm_update(state, j)
    return R2RResult(
        mode=cfg.mode, r_hat=r_hat, theta_anchor=anchor,
        theta_true=theta_true, cost=cost, v_c=v_c, t_c=t_c, nrmse_z=nrmse_z,
        theta_norm=theta_norm, feasible=feasible, cost_state_reads=reads,
        n_steps_total=n_steps_total, optimizer=state)
