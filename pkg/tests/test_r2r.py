"""Propose/update simplex machine, costs, and the adaptation loop."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from softland.config import build_setup
from softland.model import rho_to_theta
from softland.r2r import (CostMode, ProtocolError, R2RConfig, SimplexMachine,
                          compute_cost_dm, compute_cost_im,
                          estimate_resistance, estimate_resistance_from_hold,
                          nm_best, nm_init, nm_propose, nm_update,
                          no_impact_penalty, run_r2r)
from softland.reference import build_reference

ST = build_setup()


def sphere(target):
    return lambda x: float(np.sum((np.asarray(x) - target) ** 2))


def drive(machine, f, n):
    for _ in range(n):
        x = machine.propose()
        machine.update(f(x))


def test_cost_im_constant_error_closed_form():
    # constant error e over a window of length W integrates to e^2 W
    n, dt, e = 400, 2.5e-6, 0.03
    y2 = np.full(n, 0.2)
    assert_allclose(compute_cost_im(y2 + e, y2, dt),
                    e * e * (n - 1) * dt, rtol=1.0e-12)
    with pytest.raises(ValueError):
        compute_cost_im(y2, y2[:-1], dt)


def test_cost_dm_and_penalty():
    assert compute_cost_dm(0.25, 1.0e6) == 0.0625
    assert compute_cost_dm(math.nan, 1.0e6) == 1.0e6
    pen = no_impact_penalty(ST.geometry, ST.reference)
    assert_allclose(pen, 49382.71604938272, rtol=1.0e-12)


def test_estimate_resistance():
    assert estimate_resistance(30.0, 0.6) == 50.0
    with pytest.raises(ValueError):
        estimate_resistance(30.0, 0.0)
    with pytest.raises(ValueError):
        estimate_resistance(-1.0, 0.6)


def test_resistance_recovered_from_quiet_hold():
    cfg = R2RConfig(n_operations=1)
    r_hat = estimate_resistance_from_hold(ST.device, ST.geometry, cfg, ST.sim)
    assert_allclose(r_hat, ST.device.R, rtol=1.0e-4)


def test_initial_simplex_structure():
    state = nm_init(rho_to_theta(ST.device), spread=0.05)
    m = state.machine
    assert m.vertices.shape == (7, 6)
    assert_allclose(m.vertices[0], np.ones(6))
    for i in range(6):
        want = np.ones(6)
        want[i] = 1.05
        assert_allclose(m.vertices[i + 1], want)
    # edges from vertex 0 span R^6: the simplex is nondegenerate
    edges = m.vertices[1:] - m.vertices[0]
    assert np.linalg.matrix_rank(edges) == 6
    # first proposal is the anchor itself
    first = nm_propose(state)
    assert_allclose(first.as_array(), state.theta_anchor.as_array())


def test_two_dim_walk_matches_hand_calculation():
    """First six proposals on x^2 + y^2 from (1, 1), spread 0.05.

    Worked by hand with the standard coefficients: three seed vertices,
    one accepted reflection, then a reflection that triggers a greedy
    expansion.
    """
    m = SimplexMachine(np.array([1.0, 1.0]), spread=0.05)
    f = sphere(np.zeros(2))
    want = [(1.0, 1.0), (1.05, 1.0), (1.0, 1.05),
            (1.05, 0.95), (1.0, 0.95), (0.975, 0.925)]
    got = []
    for _ in range(len(want)):
        x = m.propose()
        got.append(tuple(x))
        m.update(f(x))
    assert_allclose(got, want, rtol=1.0e-12, atol=1.0e-15)
    assert m.n_proposed == m.n_updates == len(want)


def test_six_dim_sphere_converges_within_budget():
    for seed in (0, 1):
        rng = np.random.default_rng(seed)
        target = 1.0 + 0.05 * rng.uniform(-1.0, 1.0, size=6)
        m = SimplexMachine(np.ones(6), spread=0.05)
        f = sphere(target)
        best_seen = math.inf
        n_to_converge = None
        for k in range(200):
            x = m.propose()
            m.update(f(x))
            _, fb = m.best()
            assert fb <= best_seen + 1.0e-15
            best_seen = fb
            xb, _ = m.best()
            if np.linalg.norm(xb - target) < 1.0e-3:
                n_to_converge = k + 1
                break
        assert n_to_converge is not None and n_to_converge <= 200
        assert m.n_proposed == m.n_updates


def test_propose_update_handshake_enforced():
    m = SimplexMachine(np.ones(2))
    with pytest.raises(ProtocolError):
        m.update(1.0)
    m.propose()
    with pytest.raises(ProtocolError):
        m.propose()


def test_nan_cost_treated_as_worst():
    m = SimplexMachine(np.array([1.0, 1.0]), spread=0.05)
    f = sphere(np.zeros(2))
    for _ in range(3):
        x = m.propose()
        m.update(f(x))
    m.propose()
    m.update(math.nan)
    # reflection rejected outright: the machine turns inward
    assert m.phase == "contract_in"
    assert np.all(np.isfinite(m.costs))
    x = m.propose()
    assert np.all(np.isfinite(x))


def test_positive_projection_on_proposals():
    m = SimplexMachine(np.array([1.0e-7, 1.0]), positive=(0,), floor=1.0e-6)
    x = m.propose()
    assert x[0] == 1.0e-6


def test_freeze_proposes_best_and_ignores_costs():
    target = np.full(6, 1.2)
    m = SimplexMachine(np.ones(6), spread=0.05, fatol_rel=0.5)
    f = sphere(target)
    for _ in range(400):
        x = m.propose()
        m.update(f(x))
        if m.frozen:
            break
    assert m.frozen
    xb, fb = m.best()
    snap_v = m.vertices.copy()
    snap_c = m.costs.copy()
    for _ in range(3):
        x = m.propose()
        assert_allclose(x, xb, rtol=0, atol=0)
        m.update(0.0)   # even a perfect cost must be ignored now
    assert np.array_equal(m.vertices, snap_v)
    assert np.array_equal(m.costs, snap_c)
    assert m.n_proposed == m.n_updates


def test_no_freeze_on_cost_plateau():
    # a wall of identical penalties never counts as convergence
    m = SimplexMachine(np.ones(6), spread=0.05, fatol_rel=0.5)
    drive(m, lambda x: 1.0e6, 40)
    assert not m.frozen


def test_run_r2r_im_smoke():
    cfg = R2RConfig(mode="im", n_operations=8)
    res = run_r2r(ST.device, ST.device, ST.geometry, ST.reference, ST.sim,
                  cfg, t_pre=ST.t_pre, x3_eps=ST.x3_eps,
                  hold_boost=ST.hold_boost, hold_ramp=ST.hold_ramp)
    assert res.mode is CostMode.IM
    assert_allclose(res.r_hat, ST.device.R, rtol=1.0e-4)
    assert res.feasible.all()
    # the cost path may not read motion state in indirect mode
    assert np.all(res.cost_state_reads == 0)
    assert_allclose(res.theta_norm[0], np.ones(6))
    # true device, near-true anchor: scored error starts at the floor
    assert res.cost[0] < 1.0e-8
    assert res.v_c[0] < 1.0e-3
    assert res.n_steps_total > 0
    opt = res.optimizer.machine
    assert opt.n_proposed == opt.n_updates == 8
    th_best, f_best = nm_best(res.optimizer)
    assert f_best <= np.min(res.cost) + 1.0e-18


def test_run_r2r_dm_cost_is_squared_impact_speed():
    cfg = R2RConfig(mode="dm", n_operations=6, penalty=777.0)
    res = run_r2r(ST.device, ST.device, ST.geometry, ST.reference, ST.sim,
                  cfg, t_pre=ST.t_pre, x3_eps=ST.x3_eps,
                  hold_boost=ST.hold_boost, hold_ramp=ST.hold_ramp)
    want = np.where(np.isnan(res.v_c), 777.0, res.v_c ** 2)
    assert_allclose(res.cost, want, rtol=1.0e-12)


def test_run_r2r_charges_penalty_on_infeasible_operations():
    fast = build_reference(z_start=ST.geometry.z_max,
                           z_end=ST.geometry.z_min, duration=5.0e-4)
    cfg = R2RConfig(mode="im", n_operations=2, penalty=123.0)
    res = run_r2r(ST.device, ST.device, ST.geometry, fast, ST.sim, cfg,
                  t_pre=ST.t_pre, x3_eps=ST.x3_eps,
                  hold_boost=ST.hold_boost, hold_ramp=ST.hold_ramp)
    assert not res.feasible.any()
    assert_allclose(res.cost, [123.0, 123.0])
    assert np.all(np.isnan(res.v_c))
    assert res.optimizer.machine.n_updates == 2
