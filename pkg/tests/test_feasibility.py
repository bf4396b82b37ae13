import math

import numpy as np
import pytest

from rothe_mixture import estimates as est
from rothe_mixture import feasibility as fz
from rothe_mixture.discretization import Grid

from conftest import ledger_for, make_spec


def test_steinmetz_examples():
    assert fz.steinmetz_contains([0.5, 0.5, 0.5], 1.0)
    assert fz.steinmetz_contains([0.0, 0.0, 0.0], 1e-9)
    assert not fz.steinmetz_contains([0.0, 1.5], 1.0)


def test_phi_min_caps():
    cap, strict = fz.phi_min_cap(3)
    assert cap == pytest.approx(1 - 2 * math.sqrt(2) / 3, abs=1e-15)
    assert cap == pytest.approx(0.05719, abs=1e-5)
    assert strict
    cap6, strict6 = fz.phi_min_cap(6)
    assert cap6 == pytest.approx(1 / (1 + math.sqrt(2 * 5) * math.sqrt(2)), rel=1e-15)
    assert not strict6
    # with C_inf = sqrt(2) the d = 2 cap closes completely
    assert fz.phi_min_cap(2)[0] == pytest.approx(0.0, abs=1e-15)


def test_uniform_initial_data_membership():
    spec = make_spec()
    rep = fz.check_initial_data(spec, 0.05)
    r = (1 - 0.05) / fz.C_INF
    # leave-one-out sums of (1/3)^2 are 2/9
    assert rep.ok == (2 / 9 <= r * r)
    assert rep.ok
    assert fz.check_initial_data(spec, 0.05).as_dict()["admissible"]


def test_initial_data_above_cap_rejected():
    rep = fz.check_initial_data(make_spec(), 0.058)
    assert not rep.ok


def test_decoupled_pseudo_parabolicity_passes():
    spec = make_spec()
    lhs, rhs = est.pseudo_parabolicity(spec)
    assert np.all(lhs == 0.0)
    assert np.all(lhs < rhs)


@pytest.fixture(scope="module")
def decoupled(decoupled_cfg):
    led = ledger_for(decoupled_cfg, dt=decoupled_cfg.feasibility.get("dt", decoupled_cfg.run.dt))
    return decoupled_cfg, led


def test_decoupled_assumptions_pass(decoupled):
    cfg, led = decoupled
    rep = fz.check_assumptions(cfg.spec, led, phi_min=cfg.run.phi_min, dt=cfg.run.dt)
    assert rep.passed, str(rep)
    for ident in fz.ASSUMPTION_IDS:
        assert rep[ident]["pass"]


def test_step_cap_relations(decoupled):
    _, led = decoupled
    sc = fz.step_caps(led)
    assert sc["z_tilde"] < sc["Q3"] * sc["y_star"] ** 2
    assert sc["H_2star"] < sc["H_star"]
    assert sc["H"] == min(sc["caps"].values())
    # y* solves Q'(s) = 1
    s = sc["y_star"] ** 2
    Q1, Q2, Q3 = sc["Q1"], sc["Q2"], sc["Q3"]
    assert Q1 + Q2 * (2 * s + Q3 * s * s) * math.exp(Q3 * s) == pytest.approx(1.0, rel=1e-9)


def test_origin_value_of_box_bound(decoupled):
    cfg, led = decoupled
    P = led.P_alpha(0.0, 0.0)
    phi0 = cfg.spec.phi0
    for left in range(cfg.spec.d):
        want = sum(phi0[j] ** 2 for j in range(cfg.spec.d) if j != left)
        assert P[left] == pytest.approx(want, rel=1e-14)
    ok = bool(np.all(P < fz.box_threshold(led.phi_min)))
    assert ok == fz.check_initial_data(cfg.spec, led.phi_min).ok


def test_zero_budget_row_never_in_R(decoupled):
    cfg, led = decoupled
    dt = cfg.run.dt
    for x in (0.0, 0.01, 0.1):
        assert led.Q_dt(x, 0.0, dt) >= led.c["Q0"] * dt > 0.0


def test_region_monotone(decoupled):
    cfg, led = decoupled
    s = fz.region_scan(led, cfg.run.dt, 0.1, 0.05, cells=(8, 8))
    assert np.all(np.diff(s.P, axis=0) >= 0) and np.all(np.diff(s.P, axis=1) >= 0)
    assert np.all(np.diff(s.Q, axis=0) >= 0) and np.all(np.diff(s.Q, axis=1) >= 0)


def test_tiny_budget_raster_is_empty(decoupled):
    cfg, led = decoupled
    s = fz.region_scan(led, cfg.run.dt, 0.1, 1e-6, cells=(4, 4))
    assert not s.in_R.any()
    assert not fz.find_witness(s).found


def test_witness_on_decoupled_preset(decoupled):
    cfg, led = decoupled
    dt = cfg.run.dt
    f = cfg.feasibility
    s = fz.region_scan(led, dt, f["x_max"], f["y_max"], cells=tuple(f["raster"]))
    w = fz.find_witness(s)
    assert w.found
    chk = fz.recheck(led, w.x, w.y, dt)
    assert chk["box_ok"] and chk["budget_ok"]
    sc = fz.step_caps(led)
    assert dt < sc["H"]
    assert 0.0 < w.y < sc["y_tilde"]
    assert led.Q_dt(w.x, w.y, dt) < w.y ** 2


def test_assess_reports_failure_for_broken_model():
    spec = make_spec(robinA=np.array([500.0, 500.0]),
                     coeffs={("E", m, 0, 1, m): est_const(0.1) for m in range(2)})
    rep, led = fz.assess(spec, {}, 1.0, 0.5, 0.05, 0.01, Grid(21))
    assert not rep.passed
    assert "A4.x" in [r for r in rep.failures()]


def est_const(v):
    from rothe_mixture.model import constant
    return constant(v)


def test_lambert_reexported():
    assert fz.lambert_w0 is est.lambert_w0


def test_report_rejects_duplicate_ids():
    rep = fz.AssumptionReport()
    rep.add("A2.1", True)
    with pytest.raises(ValueError):
        rep.add("A2.1", False)
