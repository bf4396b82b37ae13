import math

import numpy as np
import pytest

from rothe_mixture import stepper
from rothe_mixture.discretization import Grid, State, norm
from rothe_mixture.model import constant
from rothe_mixture.stepper import (BUDGET_H1, PHI_FLOOR, REACHED_TMAX, monitor_claim, pospart,
                                   run, step_phi, step_v, step_w, update_height)

from conftest import make_run, make_spec


def zero_state(spec, n, phi=None):
    ns = spec.d - 1
    if phi is None:
        phi = np.repeat(spec.phi0[:, None], n, axis=1)
    return State(0, 0.0, phi, np.zeros((ns, n)), np.zeros(n), 0.0, np.zeros(ns))


def test_pospart():
    assert pospart(0.3) == 0.3
    assert pospart(-0.2) == 0.0
    assert pospart(0.0) == 0.0
    assert np.array_equal(pospart(np.array([-1.0, 2.0])), [0.0, 2.0])


def test_zero_data_keeps_w_zero():
    spec = make_spec()
    cfg = make_run()
    w, g = step_w(zero_state(spec, 21), spec, cfg, 0.0)
    assert np.all(w == 0.0) and np.all(g == 0.0)


def test_w_constant_source_matches_closed_form():
    spec = make_spec(d=2, coeffs={("G_w", 0): constant(1.0)}, phi_res=np.array([0.5, 0.5]),
                     phi0=np.array([0.5, 0.5]))
    dt = 0.1
    errs = []
    for n in (51, 101):
        cfg = make_run(dt=dt, n=n)
        w, _ = step_w(zero_state(spec, n), spec, cfg, 0.0)
        kap = spec.bigD[0] * dt + spec.gamma[0]
        lam = 1 / math.sqrt(kap)
        z = cfg.grid.z
        exact = dt * (1 - np.cosh(lam * (1 - z)) / math.cosh(lam))
        errs.append(np.max(np.abs(w[0] - exact)))
    assert errs[0] < 1e-5
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_influx_row_sets_boundary_value():
    spec = make_spec(jhat=np.array([0.0, 1.0, 0.0]), phi_res=np.array([0.0, 0.5, 0.5]),
                     phi0=np.array([0.3, 0.3, 0.4]))
    cfg = make_run(dt=0.1)
    w, _ = step_w(zero_state(spec, 21), spec, cfg, 0.0)
    assert w[1, 0] == pytest.approx(0.02, abs=1e-17)
    assert w[0, 0] == 0.0


def test_velocity_from_constant_source():
    spec = make_spec(coeffs={("G_v",): constant(0.4)} | {("H", 1, m): constant(0.0) for m in range(2)})
    cfg = make_run(n=33)
    prev = zero_state(spec, 33)
    v = step_v(prev, prev.w, spec, cfg)
    assert np.allclose(v, 0.4 * cfg.grid.z, rtol=0, atol=1e-15)
    assert v[0] == 0.0


def test_velocity_from_pure_divergence_term():
    spec = make_spec(coeffs={("H", 1, 0): constant(0.0)})
    cfg = make_run(n=41, dt=0.2)
    prev = zero_state(spec, 41)
    z = cfg.grid.z
    w_new = prev.w.copy()
    w_new[1] = 0.1 * np.sin(2 * z) + 0.05
    v = step_v(prev, w_new, spec, cfg)
    rate = (w_new[1] - prev.w[1]) / cfg.dt
    assert np.allclose(v, -(rate - rate[0]), atol=1e-15)


def test_velocity_anchor_is_exact_for_random_inputs():
    rng = np.random.default_rng(7)
    spec = make_spec(coeffs={("G_v",): constant(0.3), ("H", 0, 0): constant(0.2)})
    cfg = make_run(n=17)
    for _ in range(10):
        prev = zero_state(spec, 17)
        prev.w = rng.normal(size=prev.w.shape)
        v = step_v(prev, rng.normal(size=prev.w.shape), spec, cfg)
        assert v[0] == 0.0


def test_constant_fractions_are_preserved_exactly():
    spec = make_spec(phi0=np.array([0.3, 0.3, 0.4]))
    cfg = make_run()
    prev = zero_state(spec, 21)
    phi = step_phi(prev, prev.w, spec, cfg)
    assert np.array_equal(phi[spec.free], prev.phi[spec.free])


def test_constant_reaction_shifts_fraction_uniformly():
    spec = make_spec(coeffs={("G_phi", 0): constant(0.5)})
    cfg = make_run(dt=0.1)
    prev = zero_state(spec, 21)
    phi = step_phi(prev, prev.w, spec, cfg)
    assert np.allclose(phi[0], 1 / 3 + 0.05, atol=1e-14)
    assert np.max(np.abs(phi.sum(axis=0) - 1.0)) <= 1e-12


def test_height_without_influx_or_velocity():
    spec = make_spec()
    prev = zero_state(spec, 21)
    prev.W = 0.25
    assert update_height(prev, spec, make_run()) == 0.25


def test_height_influx_clipped_by_positive_part():
    spec = make_spec(jhat=np.array([0.0, 0.0, 1.0]), phi_res=np.array([0.0, 0.5, 0.5]))
    n = 21
    phi = np.repeat(np.array([0.1, 0.2, 0.7])[:, None], n, axis=1)
    prev = zero_state(spec, n, phi)
    prev.v = 0.3 * np.linspace(0, 1, n)
    W = update_height(prev, spec, make_run(dt=0.1))
    assert W == pytest.approx(0.03, abs=1e-17)


def test_height_rate_bounded_by_velocity_gradient(smooth_cfg, smooth_traj):
    spec = smooth_cfg.spec
    h = smooth_cfg.run.grid.h
    d = spec.d
    gam_min = 0.8  # Gamma = 0.8 + 0.4 phi_d is at least 0.8 on the unit cube
    sl = smooth_traj.slices
    for prev, cur in zip(sl, sl[1:]):
        rate = abs(cur.W - prev.W) / smooth_traj.dt
        bound = norm(prev.v, "H1semi", h) + spec.jhat[d - 1] * spec.phi_res[d - 1] / gam_min
        assert rate <= bound * (1 + 1e-9)


def test_stationary_model_never_moves(stationary_cfg, stationary_traj):
    tr = stationary_traj
    assert tr.stop_reason == REACHED_TMAX
    first = tr.slices[0]
    for s in tr.slices[1:]:
        assert np.array_equal(s.phi, first.phi)
        assert np.all(s.w == 0.0) and np.all(s.v == 0.0)
    assert tr.T_dt == pytest.approx(stationary_cfg.run.t_max)


def test_budget_trips_on_first_slice():
    spec = make_spec(coeffs={("G_v",): constant(10.0)})
    cfg = make_run(dt=0.01, V=math.sqrt(1.5))
    tr = run(spec, cfg)
    # one slice adds 100 * 0.01 = 1 to the H1 sum, so slice 1 breaches V^2 = 1.5
    assert tr.stop_reason == BUDGET_H1
    assert len(tr.slices) == 1
    assert tr.rejected.k == 1


def test_floor_stop_keeps_last_valid_slice_in_box():
    spec = make_spec(coeffs={("G_phi", 0): constant(-1.0)}, phi0=np.array([0.2, 0.4, 0.4]))
    cfg = make_run(dt=0.01)
    tr = run(spec, cfg)
    assert tr.stop_reason == PHI_FLOOR
    rep = monitor_claim(tr, cfg)
    assert rep.passed
    assert np.min(tr.rejected.phi) < cfg.phi_min


def test_stopping_time_stable_under_step_refinement(smooth_cfg, smooth_ledger):
    from rothe_mixture import config, feasibility
    caps = feasibility.step_caps(smooth_ledger)["caps"]
    H = min(v for v in caps.values() if math.isfinite(v))
    ends = []
    for dt in (H / 8, H / 16):
        cfg = config.with_dt(smooth_cfg, dt)
        ends.append(run(cfg.spec, cfg.run).T_dt)
    assert abs(ends[0] - ends[1]) <= H / 8


def test_trajectory_invariants(smooth_traj):
    for s in smooth_traj.slices:
        assert np.max(np.abs(s.phi.sum(axis=0) - 1.0)) <= 1e-12
        assert s.v[0] == 0.0
        assert s.w[0, 0] == 0.0   # no influx of the produced component


def test_claim_sums_recomputed(smooth_cfg, smooth_traj):
    rep = monitor_claim(smooth_traj, smooth_cfg.run)
    assert rep.passed
    h = smooth_cfg.run.grid.h
    s2 = sum(norm(s.v, "L2", h) ** 2 for s in smooth_traj.slices) * smooth_traj.dt
    assert rep.sum_l2 == pytest.approx(s2, rel=1e-12)


def test_constant_trajectory_has_positive_margins(stationary_cfg, stationary_traj):
    rep = monitor_claim(stationary_traj, stationary_cfg.run)
    for r in rep.rows:
        assert r["margin_floor"] > 0 and r["margin_ceiling"] > 0
        assert r["margin_l2"] > 0 and r["margin_h1"] > 0


def test_config_rejects_bad_step():
    with pytest.raises(ValueError):
        stepper.StepperConfig(dt=0.0, V=1.0, phi_min=0.05, grid=Grid(5))


def test_stored_slope_satisfies_robin_row(smooth_cfg, smooth_traj):
    A = smooth_cfg.spec.robinA
    for s in smooth_traj.slices[1:]:
        assert np.array_equal(s.w_dz1, A * (s.w[:, -1] - s.W))
