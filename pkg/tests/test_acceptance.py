"""
Acceptance checks.  Each test prints one PASS/FAIL line (shown even when
pytest captures output) and then asserts the same condition.
"""

import copy
import math
import time

import numpy as np
import pytest

from rothe_mixture import config, convergence as cv, estimates as est, feasibility as fz
from rothe_mixture.discretization import Grid, norm
from rothe_mixture.elliptic import LinearBVP, solve_fd, solve_fundamental
from rothe_mixture.model import infimum_bounds
from rothe_mixture.stepper import REACHED_TMAX, monitor_claim, run

from conftest import ledger_for
from test_convergence import fake_traj
from test_estimates import brute_force1, gronwall1_draw


@pytest.fixture
def report(capsys):
    def emit(num, ok, detail):
        with capsys.disabled():
            print("\n%s criterion %s: %s" % ("PASS" if ok else "FAIL", num, detail))
        return ok
    return emit


def test_1_gronwall_soundness(report):
    t = time.perf_counter()
    rng = np.random.default_rng(20240601)
    worst1 = 0.0
    for _ in range(1000):
        A, B, C, Z, x0, h, z = gronwall1_draw(rng)
        xb, yb = est.gronwall1(A, B, C, Z, x0, h, z)
        x, ys = brute_force1(A, B, C, x0, h, z, rng)
        worst1 = max(worst1, float(np.max(x / xb)), float(np.max(ys / yb)))
    worst2 = 0.0
    for _ in range(500):
        K = int(rng.integers(1, 201))
        c = rng.uniform(0.01, 3.0)
        g = rng.uniform(0.0, 0.1, K)
        y, run_sum = [], 0.0
        for k in range(K + 1):
            y.append(c + run_sum)
            if k < K:
                run_sum += g[k] * y[k]
        worst2 = max(worst2, float(np.max(np.array(y) / est.gronwall2(c, g))))
    el = time.perf_counter() - t
    ok = worst1 <= 1 + 1e-12 and worst2 <= 1 + 1e-12 and el < 5
    report(1, ok, "max realized/bound %.6f (first inequality), %.6f (second), %.2f s"
           % (worst1, worst2, el))
    assert ok


def test_2_scalar_inequality_constant(report):
    t = time.perf_counter()
    a = est.sup_inequality_constant()
    el = time.perf_counter() - t
    ok = 0.6838 <= a <= 0.6842 and el < 1
    report(2, ok, "sup a = %.10f, %.3f s" % (a, el))
    assert ok


def _random_bvp(rng):
    m = int(rng.integers(1, 3))
    amp = rng.uniform(-0.5, 0.5, (m, m))
    freq = rng.uniform(0.5, 2.0, (m, m))
    c = rng.uniform(-1, 1, m)
    k = rng.uniform(0.5, 3.0, m)
    return LinearBVP(m, lambda z: amp[None] * np.cos(freq[None] * np.asarray(z)[:, None, None]),
                     rng.uniform(0.5, 2.0, m),
                     lambda z: c[:, None] * np.sin(k[:, None] * z[None] + 0.3),
                     A_plus=np.diag(rng.uniform(0, 1, m)), B_plus=np.eye(m),
                     A_minus=np.eye(m), B_minus=np.zeros((m, m)),
                     C_plus=rng.uniform(-1, 1, m), C_minus=rng.uniform(-1, 1, m))


# grid for the solver comparison; at n = 201 the FD truncation alone is ~9e-6
AGREEMENT_NODES = 1001


def test_3_elliptic_solver(report):
    t = time.perf_counter()
    errs = []
    for n in (51, 101, 201):
        g = Grid(n)
        bvp = LinearBVP(1, None, [1.0], lambda z: -(np.pi**2 + 1) * np.cos(np.pi * z)[None],
                        A_plus=[[1.0]], B_plus=[[0.0]], A_minus=[[1.0]], B_minus=[[0.0]],
                        C_plus=[-1.0], C_minus=[1.0])
        errs.append(float(np.max(np.abs(solve_fd(bvp, g)[0] - np.cos(np.pi * g.z)))))
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    rng = np.random.default_rng(51)
    g = Grid(AGREEMENT_NODES)
    worst = 0.0
    for _ in range(50):
        bvp = _random_bvp(rng)
        worst = max(worst, float(np.max(np.abs(solve_fd(bvp, g) - solve_fundamental(bvp, g, 1)))))
    el = time.perf_counter() - t
    ok = all(3.5 <= r <= 4.5 for r in ratios) and worst <= 1e-6 and el < 10
    report(3, ok, "order ratios %.4f %.4f; FD vs fundamental %.3e on n=%d; %.2f s"
           % (ratios[0], ratios[1], worst, AGREEMENT_NODES, el))
    assert ok


def _check_run(cfg):
    spec = cfg.spec
    tr = run(spec, cfg.run)
    h = cfg.run.grid.h
    fluid = spec.d - 1
    gam = infimum_bounds(spec, cfg.run.phi_min).gamma_alpha
    worst_sum = 0.0
    anchors = True
    chain = True
    grad_sum = 0.0
    W0 = tr.slices[0].W
    for k, s in enumerate(tr.slices):
        worst_sum = max(worst_sum, float(np.max(np.abs(s.phi.sum(axis=0) - 1.0))))
        anchors &= bool(s.v[0] == 0.0 and s.w[0, 0] == 0.0)
        rhs = abs(W0) + grad_sum + spec.jhat[fluid] * spec.phi_res[fluid] * (s.t - tr.t0) / gam
        chain &= bool(abs(s.W) <= rhs * (1 + 1e-12) + 1e-15)
        grad_sum += norm(s.v, "H1semi", h) * tr.dt
    return tr, worst_sum, anchors, chain


def test_4_conservation_and_anchors(report):
    names = ("stationary", "smooth", "decoupled", "phifloor", "budget")
    worst, anchors, chain = 0.0, True, True
    for name in names:
        _, ws, an, ch = _check_run(config.load_preset(name))
        worst, anchors, chain = max(worst, ws), anchors and an, chain and ch
    ok = worst <= 1e-12 and anchors and chain
    report(4, ok, "%d presets; max |sum phi - 1| %.2e; anchors %s; height chain %s"
           % (len(names), worst, anchors, chain))
    assert ok


def test_5_energy_audit(report):
    t = time.perf_counter()
    cfg = config.load_preset("smooth")
    tr = run(cfg.spec, cfg.run)
    led = ledger_for(cfg)
    audit = est.audit_energy(tr, led)
    worst = min(r["margin"] / abs(r["rhs"]) if r["rhs"] else r["margin"] for r in audit.rows)
    literal = all(r["margin"] >= -1e-6 * abs(r["rhs"]) for r in audit.rows)
    ids = sorted({r["id"].split("[")[0] for r in audit.rows})
    dom = est.check_dominance(tr, led)
    el = time.perf_counter() - t
    ok = (literal and not dom.failures and el < 30 and len(tr.slices) >= 100
          and cfg.run.grid.n == 101 and cfg.spec.d == 3)
    report(5, ok, "%d slices, %d audited rows (%s), worst margin/|rhs| %.3e; "
           "%d dominance rows, %d failing; %.2f s"
           % (len(tr.slices), len(audit.rows), " ".join(ids), worst, len(dom.rows),
              len(dom.failures), el))
    assert ok


def test_6_interpolant_gap(report, smooth_cfg, smooth_traj):
    h = smooth_cfg.run.grid.h
    worst = 0.0
    for var in ("phi", "w", "v"):
        gap, bound = cv.interpolant_gap(smooth_traj, var, "L2", h)
        worst = max(worst, abs(gap / bound - 1 / 3))
    rng = np.random.default_rng(6)
    for _ in range(100):
        vals = rng.normal(size=int(rng.integers(2, 12)))
        tr = fake_traj([[[v], [1 - v]] for v in vals], rng.uniform(0.001, 1.0))
        gap, bound = cv.interpolant_gap(tr, "phi", "L2", 0.1)
        worst = max(worst, abs(gap / bound - 1 / 3))
    ok = worst <= 1e-12
    report(6, ok, "max |gap/bound - 1/3| = %.3e over smooth run and 100 random ones" % worst)
    assert ok


def test_7_convergence_signature(report):
    t = time.perf_counter()
    cfg = config.load_preset("smooth")
    table = cv.cauchy_study(cfg, halvings=3)
    ratios = table.ratios["total"]
    rc, rf, decay, _ = cv.residual_decay(cfg, cfg.converge["n_test"])
    el = time.perf_counter() - t
    ok = (table.conclusive and all(1.5 <= r <= 2.5 for r in ratios) and decay >= 1.5
          and el < 120)
    report(7, ok, "Cauchy errors %s, ratios %s; residual %.3e -> %.3e (decay %.3f); %.1f s"
           % (" ".join("%.3e" % e for e in table.errors["total"]),
              " ".join("%.4f" % r for r in ratios), rc.max, rf.max, decay, el))
    assert ok


def test_8_feasibility_pipeline(report):
    t = time.perf_counter()
    cfg = config.load_preset("decoupled")
    r, f = cfg.run, cfg.feasibility
    dt = f.get("dt", r.dt)
    rep, led = fz.assess(cfg.spec, est.EtaConfig(cfg.spec.gamma, cfg.eta), r.t_max - r.t0, r.V,
                         r.phi_min, dt, r.grid)
    sc = fz.step_caps(led)
    sample = fz.region_scan(led, dt, f["x_max"], f["y_max"], tuple(f["raster"]))
    w = fz.find_witness(sample)
    chk = fz.recheck(led, w.x, w.y, dt) if w.found else {"box_ok": False, "budget_ok": False}
    P = led.P_alpha(w.x, w.y)
    box = bool(np.all(P < fz.box_threshold(r.phi_min)))
    budget = led.Q_dt(w.x, w.y, dt) < w.y ** 2
    raw = copy.deepcopy(cfg.raw)
    raw["run"].update(t_max=r.t0 + w.x, V=w.y, dt=dt)
    wcfg = config.from_dict(raw, cfg.base_dir, cfg.source)
    tr = run(wcfg.spec, wcfg.run)
    claim = monitor_claim(tr, wcfg.run)
    el = time.perf_counter() - t
    ok = (rep.passed and sc["H_2star"] < sc["H_star"] and w.found and chk["box_ok"]
          and chk["budget_ok"] and box and budget and tr.stop_reason == REACHED_TMAX
          and claim.passed and el < 60)
    report(8, ok, "assumptions %s; H** %.10g < H* %.10g; witness (T-t0, V) = (%.6g, %.6g); "
           "run %s, claim %s; %.1f s"
           % ("pass" if rep.passed else "FAIL " + ",".join(rep.failures()), sc["H_2star"],
              sc["H_star"], w.x, w.y, tr.stop_reason, "green" if claim.passed else "red", el))
    assert ok


def _lambert_grid():
    return np.concatenate([[0.0], np.logspace(-12, 6, 2000)])


def test_9_lambert_relative_residual(report):
    worst = 0.0
    for x in _lambert_grid():
        w = est.lambert_w0(x)
        worst = max(worst, abs(w * math.exp(w) - x) / max(1.0, x))
    ok = worst <= 1e-13
    report("9 (scaled)", ok, "max |w e^w - x| / max(1, x) = %.3e" % worst)
    assert ok


@pytest.mark.xfail(strict=True, reason="absolute residual at x near 1e6 is bounded below by "
                   "the spacing of doubles there (about 1.2e-10)")
def test_9_lambert_absolute_residual(report):
    worst, at = 0.0, 0.0
    for x in _lambert_grid():
        w = est.lambert_w0(x)
        r = abs(w * math.exp(w) - x)
        if r > worst:
            worst, at = r, x
    ok = worst <= 1e-13
    report(9, ok, "max |w e^w - x| = %.3e at x = %.6g (one ulp of x is %.3e)"
           % (worst, at, np.spacing(at)))
    assert ok
