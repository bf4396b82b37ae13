"""
Time interpolants of a trajectory, their gap, Cauchy differences between
step sizes, and weak-form residuals against a fixed test basis.
"""

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .discretization import cumtrapz, diff1, norm2, trapz
from .stepper import Frozen, pospart, run

VARIABLES = ("phi", "w", "v")
FAMILIES = ("1weak", "2weak", "3weak", "1wmw", "0wmw", "heightw")
# number of elements of the fixed temporal hat partition
TIME_ELEMENTS = 4


def _field(state, variable):
    if variable == "W":
        return np.atleast_1d(np.asarray(state.W, dtype=float))
    return getattr(state, variable)


class Interpolant:

    """Piecewise linear ('hat') or piecewise constant ('bar') in time."""

    def __init__(self, traj, kind="hat"):
        if kind not in ("hat", "bar"):
            raise ValueError("kind must be 'hat' or 'bar'")
        if not traj.slices:
            raise ValueError("empty trajectory")
        self.traj = traj
        self.kind = kind
        self.t = traj.times()

    def index(self, t):
        """Slice k with t_{k-1} < t <= t_k (0 for t <= t_0)."""
        k = int(np.searchsorted(self.t, t, side="left"))
        if k >= len(self.t):
            raise ValueError("t=%r beyond the last slice" % t)
        return k

    def __call__(self, t, variable="phi"):
        k = self.index(t)
        cur = _field(self.traj.slices[k], variable)
        if k == 0 or t == self.t[k] or self.kind == "bar":
            return cur
        prev = _field(self.traj.slices[k - 1], variable)
        theta = (t - self.t[k - 1]) / (self.t[k] - self.t[k - 1])
        return prev + theta * (cur - prev)

    def left_limit(self, k, variable="phi"):
        """Value just after t_{k-1}, inside slice k."""
        if self.kind == "bar":
            return _field(self.traj.slices[k], variable)
        return _field(self.traj.slices[k - 1], variable)


def interpolant_gap(traj, variable="phi", norm_kind="L2", h=None):
    """
    Integral over time of the squared X-norm between the two interpolants,
    against the sum of the squared difference quotients times dt^3.
    Per slice the integrand is quadratic in t, so Simpson's rule is exact.
    """
    if len(traj.slices) < 2:
        raise ValueError("need at least two slices")
    hat, bar = Interpolant(traj, "hat"), Interpolant(traj, "bar")
    t = hat.t
    gap = bound = 0.0
    for k in range(1, len(t)):
        dt = t[k] - t[k - 1]
        mid = 0.5 * (t[k - 1] + t[k])
        f0 = norm2(bar.left_limit(k, variable) - hat.left_limit(k, variable), norm_kind, h)
        fm = norm2(bar(mid, variable) - hat(mid, variable), norm_kind, h)
        f1 = norm2(bar(t[k], variable) - hat(t[k], variable), norm_kind, h)
        gap += dt / 6.0 * (f0 + 4 * fm + f1)
        dq = (_field(traj.slices[k], variable) - _field(traj.slices[k - 1], variable)) / dt
        bound += norm2(dq, norm_kind, h) * dt**3
    if gap > bound * (1 + 1e-12):
        raise AssertionError("interpolant gap %r exceeds its bound %r" % (gap, bound))
    return gap, bound


# --------------------------------------------------------------------------
# Cauchy study

@dataclass
class RateTable:
    dts: list
    stop_reasons: list
    window: float
    errors: dict                 # variable -> list of e_i, plus "total"
    conclusive: bool
    band: tuple = (1.5, 2.5)
    ends: list = field(default_factory=list)

    @property
    def ratios(self):
        return {k: [_ratio(a, b) for a, b in zip(v[:-1], v[1:])] for k, v in self.errors.items()}

    @property
    def passed(self):
        e = self.errors["total"]
        if all(x == 0 for x in e):
            return True
        lo, hi = self.band
        return all(lo <= r <= hi for r in self.ratios["total"])

    @property
    def decreasing(self):
        e = self.errors["total"]
        return all(b < a or (a == 0 and b == 0) for a, b in zip(e[:-1], e[1:]))

    def rows(self):
        names = list(self.errors)
        rat = self.ratios
        for i, dt in enumerate(self.dts[:-1]):
            row = {"i": i, "dt": dt, "dt_next": self.dts[i + 1]}
            for nm in names:
                row["e_" + nm] = self.errors[nm][i]
                row["ratio_" + nm] = rat[nm][i - 1] if i > 0 else math.nan
            yield row


def _ratio(a, b):
    if b == 0:
        return math.nan if a == 0 else math.inf
    return a / b


def cauchy_difference(coarse, fine, window, h, variables=VARIABLES):
    """
    L2(t0, t0+window; L2) distance of two hat interpolants.  The fine slice
    times refine the coarse ones, so per fine interval the squared distance
    is quadratic in t and Simpson's rule integrates it exactly.
    """
    hc, hf = Interpolant(coarse, "hat"), Interpolant(fine, "hat")
    tf = hf.t
    t_end = coarse.t0 + window
    out = {}
    for var in variables:
        acc = 0.0
        for k in range(1, len(tf)):
            a, b = tf[k - 1], tf[k]
            if a >= t_end - 1e-12 * max(1.0, abs(t_end)):
                break
            m = 0.5 * (a + b)
            va = norm2(hf.left_limit(k, var) - hc(a, var), "L2", h)
            vm = norm2(hf(m, var) - hc(m, var), "L2", h)
            vb = norm2(hf(b, var) - hc(b, var), "L2", h)
            acc += (b - a) / 6.0 * (va + 4 * vm + vb)
        out[var] = math.sqrt(max(acc, 0.0))
    return out


def workers_cap(n_jobs):
    env = os.environ.get("ROTHE_THREADS")
    try:
        cap = int(env) if env else (os.cpu_count() or 1)
    except ValueError:
        cap = 1
    return max(1, min(cap, n_jobs))


def _run_job(args):
    raw, base_dir, dt, n = args
    from .config import from_dict
    raw = dict(raw)
    raw["run"] = dict(raw.get("run", {}), dt=dt)
    if n is not None:
        raw["run"]["n"] = n
    cfg = from_dict(raw, base_dir)
    return run(cfg.spec, cfg.run)


def run_many(cfg, jobs):
    """Run (dt, n) variants of a config, in parallel when allowed."""
    args = [(cfg.raw, cfg.base_dir, dt, n) for dt, n in jobs]
    nw = workers_cap(len(args))
    if nw == 1:
        return [_run_job(a) for a in args]
    with ProcessPoolExecutor(max_workers=nw) as pool:
        return list(pool.map(_run_job, args))


def cauchy_study(cfg, halvings=3, band=(1.5, 2.5)):
    dt0 = cfg.run.dt
    dts = [dt0 / 2**i for i in range(halvings + 1)]
    trajs = run_many(cfg, [(dt, None) for dt in dts])
    return rate_table(trajs, dts, cfg.run.grid.h, band)


def rate_table(trajs, dts, h, band=(1.5, 2.5)):
    reasons = [tr.stop_reason for tr in trajs]
    window = min(tr.T_dt - tr.t0 for tr in trajs)
    errors = {v: [] for v in VARIABLES}
    errors["total"] = []
    for a, b in zip(trajs[:-1], trajs[1:]):
        if window <= 0 or len(a.slices) < 2:
            e = {v: 0.0 for v in VARIABLES}
        else:
            e = cauchy_difference(a, b, window, h)
        for v in VARIABLES:
            errors[v].append(e[v])
        errors["total"].append(math.sqrt(sum(e[v] ** 2 for v in VARIABLES)))
    # runs that stop at different times do not share a window
    ends = [tr.T_dt for tr in trajs]
    same = max(ends) - min(ends) <= 1e-9 * max(1.0, abs(max(ends)))
    return RateTable(dts, reasons, window, errors, len(set(reasons)) == 1 and same,
                     tuple(band), ends)


# --------------------------------------------------------------------------
# weak residuals

def basis_modes(z, n_test):
    """cos(p pi z) for p = 0..n_test and sin(p pi z) for p = 1..n_test."""
    vals, ders, names = [], [], []
    for p in range(n_test + 1):
        vals.append(np.cos(p * math.pi * z))
        ders.append(-p * math.pi * np.sin(p * math.pi * z))
        names.append("cos%d" % p)
    for p in range(1, n_test + 1):
        vals.append(np.sin(p * math.pi * z))
        ders.append(p * math.pi * np.cos(p * math.pi * z))
        names.append("sin%d" % p)
    return np.array(vals), np.array(ders), names


def hat_integrals(nodes, a, b):
    """Exact integrals over [a, b] of the hat functions on ``nodes``."""
    out = np.zeros(len(nodes))
    for q in range(len(nodes)):
        left = nodes[q - 1] if q > 0 else nodes[q]
        right = nodes[q + 1] if q + 1 < len(nodes) else nodes[q]
        pieces = []
        if q > 0:
            pieces.append((left, nodes[q], lambda t, l=left, c=nodes[q]: (t - l) / (c - l)))
        if q + 1 < len(nodes):
            pieces.append((nodes[q], right, lambda t, c=nodes[q], r=right: (r - t) / (r - c)))
        for lo, hi, f in pieces:
            s, e = max(lo, a), min(hi, b)
            if e > s:
                out[q] += 0.5 * (f(s) + f(e)) * (e - s)
    return out


@dataclass
class ResidualReport:
    n_test: int
    families: dict                      # name -> max |residual|
    extra: dict = field(default_factory=dict)

    @property
    def max(self):
        return max(self.families.values()) if self.families else 0.0

    def rows(self):
        for k, v in self.families.items():
            yield {"family": k, "max_abs": v, "kind": "main"}
        for k, v in self.extra.items():
            yield {"family": k, "max_abs": v, "kind": "extra"}


def weak_residual(traj, spec, n_test=8, grid=None):
    """
    Weak-form residuals of the trajectory.  Time derivatives are the hat
    slopes, everything else is the bar value; spatial derivatives are FD.
    Test functions: cos/sin modes up to ``n_test`` in z times hat functions
    on a fixed partition of the run window into TIME_ELEMENTS pieces.

    Extra columns: ``2weak_defect`` evaluates the velocity equation at the
    lagged levels the scheme uses (its antiderivative defect), and
    ``3weak_alt`` uses F_m w_m in place of F_m v in the displacement equation.
    """
    sl = traj.slices
    if len(sl) < 2:
        raise ValueError("need at least two slices")
    n = sl[0].v.shape[0]
    h = 1.0 / (n - 1)
    z = np.linspace(0.0, 1.0, n)
    psi, dpsi, _ = basis_modes(z, n_test)
    t = traj.times()
    nodes = np.linspace(t[0], t[-1], TIME_ELEMENTS + 1)
    d, ns = spec.d, spec.d - 1
    free = spec.free
    A = spec.robinA

    nm = psi.shape[0]
    nq = len(nodes)
    acc = {"1weak": np.zeros((len(free), nm, nq)), "2weak": np.zeros((nm, nq)),
           "3weak": np.zeros((ns, nm, nq)), "1wmw": np.zeros((ns, nq)),
           "0wmw": np.zeros((ns, nq)), "heightw": np.zeros(nq),
           "2weak_defect": np.zeros((nm, nq)), "3weak_alt": np.zeros((ns, nm, nq))}

    def test(r):
        return trapz(psi * r, h)

    def test_flux(flux):
        # (d_z flux, psi) after integration by parts
        return flux[-1] * psi[:, -1] - flux[0] * psi[:, 0] - trapz(dpsi * flux, h)

    for k in range(1, len(sl)):
        prev, cur = sl[k - 1], sl[k]
        dt = cur.t - prev.t
        wt = hat_integrals(nodes, prev.t, cur.t)
        fr = Frozen(spec, cur.phi)
        dphi = (cur.phi - prev.phi) / dt
        dw = (cur.w - prev.w) / dt
        dW = (cur.W - prev.W) / dt
        Gam = fr("Gamma")
        gv = diff1(Gam * cur.v, h)
        dzw = diff1(cur.w, h)

        for a, l in enumerate(free):
            r = dphi[l] + fr("I", l) * gv - fr("G_phi", l)
            div = np.zeros(n)
            for m in range(ns):
                r += fr("B", l, 0, 0, m) * cur.w[m] + fr("B", l, 0, 1, m) * dw[m]
                div += fr("B", l, 1, 0, m) * cur.w[m] + fr("B", l, 1, 1, m) * dw[m]
            val = test(r) + test_flux(div) + trapz(dpsi * (spec.delta[l] * diff1(cur.phi[l], h)), h)
            acc["1weak"][a] += np.outer(val, wt)

        flux = Gam * cur.v
        for m in range(ns):
            flux = flux + fr("H", 0, m) * cur.w[m] + fr("H", 1, m) * dw[m]
        acc["2weak"] += np.outer(test_flux(flux) - test(fr("G_v")), wt)

        # lagged levels exactly as the velocity update pairs them
        fp = Frozen(spec, prev.phi)
        lag = fp("Gamma") * cur.v
        for m in range(ns):
            lag = lag + fp("H", 0, m) * prev.w[m] + fp("H", 1, m) * dw[m]
        rem = lag - lag[0] - cumtrapz(fp("G_v"), h)
        acc["2weak_defect"] += np.outer(rem[-1] * psi[:, -1] - trapz(dpsi * rem, h), wt)

        for m in range(ns):
            fl = -spec.bigD[m] * dzw[m] - spec.gamma[m] * diff1(dw[m], h)
            for j in range(ns):
                fl = fl + (fr("E", m, 0, 0, j) * cur.w[j] + fr("E", m, 1, 0, j) * dzw[j]
                           + fr("E", m, 0, 1, j) * dw[j])
            base = dw[m] - fr("G_w", m)
            tf = test_flux(fl)
            acc["3weak"][m] += np.outer(test(base + fr("F", m) * cur.v) + tf, wt)
            acc["3weak_alt"][m] += np.outer(test(base + fr("F", m) * cur.w[m]) + tf, wt)

            slope = cur.w_dz1[m] if cur.w_dz1 is not None else dzw[m, -1]
            acc["1wmw"][m] += (slope - A[m] * (cur.w[m, -1] - cur.W)) * wt
            H1 = fr("H", 1, m)[0]
            inflow = spec.jhat[m] * pospart(spec.phi_res[m] - cur.phi[m, 0])
            acc["0wmw"][m] += (dw[m, 0] - (inflow / H1 if inflow else 0.0)) * wt

        fluid = d - 1
        influx = spec.jhat[fluid] * pospart(spec.phi_res[fluid] - cur.phi[fluid, -1]) / Gam[-1]
        acc["heightw"] += (dW - cur.v[-1] - influx) * wt

    fam = {k: float(np.max(np.abs(acc[k]))) for k in FAMILIES}
    extra = {k: float(np.max(np.abs(acc[k]))) for k in ("2weak_defect", "3weak_alt")}
    return ResidualReport(n_test, fam, extra)


def residual_decay(cfg, n_test=8):
    """
    Residual maxima at (dt, n) and (dt/2, 2n-1); returns both reports and
    the decay factor of the overall maximum.
    """
    n = cfg.run.grid.n
    coarse, fine = run_many(cfg, [(cfg.run.dt, n), (cfg.run.dt / 2, 2 * n - 1)])
    rc = weak_residual(coarse, cfg.spec, n_test)
    rf = weak_residual(fine, cfg.spec, n_test)
    return rc, rf, _ratio(rc.max, rf.max), (coarse.stop_reason, fine.stop_reason)
