"""
Parameter-regime certificate: the standing assumptions, the admissible
initial-fraction region and a raster search over (T - t0, V) for a window
where both the fraction box and the velocity budget are provably kept.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .estimates import (C_INF, SUP_A, EstimateError, _bisect, _exp, build_ledger,
                        lambert_w0)
from .model import infimum_bounds

__all__ = ["steinmetz_contains", "phi_min_cap", "check_initial_data", "lambert_w0",
           "AssumptionReport", "check_assumptions", "assess", "step_caps",
           "RegionSample", "region_scan", "Witness", "find_witness", "recheck",
           "ASSUMPTION_IDS"]

ASSUMPTION_IDS = ("A2.1", "A2.2", "A4.x", "A4.y", "A4.z", "A5.3", "A5.5", "A5.8", "A5.10")


def steinmetz_contains(point, r):
    """True iff every leave-one-out sum of squares of ``point`` is at most r**2."""
    p = np.asarray(point, dtype=float)
    if p.ndim != 1 or p.size < 2:
        raise ValueError("need a point with at least two coordinates")
    if not r > 0:
        raise ValueError("radius must be positive")
    sq = p * p
    total = float(np.sum(sq))
    return all(total - s <= r * r for s in sq)


def box_threshold(phi_min):
    """Bound on the H^1 sums that keeps every fraction inside the box."""
    return 0.5 * ((1.0 - phi_min) / C_INF) ** 2


def phi_min_cap(d):
    """
    Largest admissible fraction floor, as (cap, strict).  For d <= 5 the cap
    is 1 - sqrt(2(d-1)) C_inf / d, which is 0 at d = 2, so no floor passes.
    """
    root = math.sqrt(2 * (d - 1)) * C_INF
    if d <= 5:
        return 1.0 - root / d, True
    return 1.0 / (1.0 + root), False


@dataclass
class InitialDataReport:
    ok: bool
    radius: float
    in_solid: bool
    sum_one: bool
    above_floor: bool
    cap: float
    cap_ok: bool
    leave_one_out: list

    def as_dict(self):
        out = dict(self.__dict__)
        out["admissible"] = out.pop("ok")
        return out


def check_initial_data(spec, phi_min):
    phi0 = np.asarray(spec.phi0, dtype=float)
    d = phi0.size
    r = (1.0 - phi_min) / (math.sqrt(2.0) * C_INF)
    sq = phi0 * phi0
    loo = [float(np.sum(sq) - s) for s in sq]
    in_solid = r > 0 and steinmetz_contains(phi0, r)
    sum_one = abs(float(np.sum(phi0)) - 1.0) <= 1e-12
    above = bool(np.all(phi0 >= phi_min))
    cap, strict = phi_min_cap(d)
    cap_ok = phi_min < cap if strict else phi_min <= cap
    return InitialDataReport(bool(in_solid and sum_one and above and cap_ok), r, bool(in_solid),
                             sum_one, above, cap, bool(cap_ok), loo)


@dataclass
class AssumptionReport:
    records: dict = field(default_factory=dict)
    values: dict = field(default_factory=dict)

    def add(self, ident, ok, **witness):
        if ident in self.records:
            raise ValueError("duplicate assumption record %s" % ident)
        self.records[ident] = {"id": ident, "pass": bool(ok), "witness": witness}

    @property
    def passed(self):
        return all(self.records[i]["pass"] for i in ASSUMPTION_IDS)

    def failures(self):
        return [i for i in ASSUMPTION_IDS if not self.records[i]["pass"]]

    def __getitem__(self, ident):
        return self.records[ident]

    def lines(self):
        out = []
        for i in ASSUMPTION_IDS:
            rec = self.records[i]
            out.append("%-6s %s" % (i, "pass" if rec["pass"] else "FAIL"))
            for k, v in rec["witness"].items():
                out.append("    %s = %s" % (k, _fmt(v)))
        out.append("constants:")
        for k, v in self.values.items():
            out.append("    %s = %s" % (k, _fmt(v)))
        return out

    def __str__(self):
        return "\n".join(self.lines())


def _fmt(v):
    if isinstance(v, (np.ndarray, list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in np.ravel(np.asarray(v, dtype=float))) + "]"
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, float, np.floating, np.integer)):
        return "%.17g" % v
    return str(v)


def _div(a, b):
    if b == 0:
        return math.inf if a > 0 else (0.0 if a == 0 else -math.inf)
    return a / b


def _basic_records(rep, spec, phi_min):
    d = spec.d
    pres = np.asarray(spec.phi_res)
    ok = (d >= 2 and bool(np.all(np.asarray(spec.jhat) >= 0))
          and bool(np.all((pres >= 0) & (pres <= 1)))
          and abs(float(np.sum(pres)) - 1.0) <= 1e-12)
    rep.add("A2.1", ok, d=d, jhat=spec.jhat, phi_res=pres, phi_res_sum=float(np.sum(pres)))
    init = check_initial_data(spec, phi_min)
    rep.add("A5.3", init.ok, **init.as_dict())
    return init


def step_caps(led, Q0=None):
    """
    Velocity-budget step caps.  Returns a dict with y*, z-tilde, H*, H**,
    y-tilde and the five candidates whose minimum is H.
    """
    c = led.c
    spec = led.spec
    d, e = spec.d, spec.eliminated
    Q0 = c.get("Q0") if Q0 is None else Q0
    Q1, Q2, Q3 = c["Q1"], c["Q2"], c["Q3"]
    out = {"Q0": Q0, "Q1": Q1, "Q2": Q2, "Q3": Q3}

    # y* solves Q'(s) = 1 with s = y^2; Q' = Q1 + Q2 (2 s + Q3 s^2) exp(Q3 s)
    if Q1 < 1 and Q2 > 0:
        def dQ(s):
            return Q1 + Q2 * (2 * s + Q3 * s * s) * _exp(Q3 * s) - 1.0
        hi = 1.0
        while dQ(hi) < 0:
            hi *= 2.0
        s_star = _bisect(dQ, 0.0, hi)
        out["y_star"] = math.sqrt(s_star)
        out["H_star"] = _div(Q2 * s_star**2 * (1 + Q3 * s_star) * _exp(Q3 * s_star), Q0)
        if Q3 > 0:
            z = 2.0 / 3.0 * lambert_w0(0.75 * Q3 / Q2 * (1 - Q1))
            out["z_tilde"] = z
            out["H_2star"] = _div(Q2 * z * z * (1 + z) * _exp(z), Q0 * Q3 * Q3)
            out["z_tilde<Q3*y*^2"] = z < Q3 * s_star
        else:
            # Q3 -> 0 limit of the explicit cap
            out["z_tilde"] = 0.0
            out["H_2star"] = _div((1 - Q1) ** 2, 4 * Q2 * Q0)
            out["z_tilde<Q3*y*^2"] = True
    elif Q1 < 1:
        # no quartic term: the budget curve never bends back up
        out.update(y_star=math.inf, H_star=math.inf, z_tilde=math.inf, H_2star=math.inf)
        out["z_tilde<Q3*y*^2"] = True
    else:
        out.update(y_star=math.nan, H_star=math.nan, z_tilde=math.nan, H_2star=math.nan)
        out["z_tilde<Q3*y*^2"] = False
    out["H_2star<H_star"] = bool(out["H_2star"] < out["H_star"]) or (
        math.isinf(out["H_2star"]) and math.isinf(out["H_star"]))

    # y-tilde: radius in V below which the box bound holds at x = 0
    thr = box_threshold(led.phi_min)
    phi0 = np.asarray(spec.phi0, dtype=float)
    Za, cb, Db, Ph = c["Za_hat"], c["cb_hat"], c["Db_hat"], c["P_hat"]
    args = []
    for left in range(d):
        base = float(np.sum(phi0**2) - phi0[left] ** 2)
        if left == e:
            coef = (d - 1) * Za + cb
        else:
            coef = (d - 2) * Za + d * cb + Ph
        args.append((thr - base, coef))
    if any(num <= 0 for num, _ in args):
        yt = math.nan
    elif Db > 0:
        yt = math.sqrt(lambert_w0(min(_div(num * Db, coef) for num, coef in args)) / Db)
    else:
        yt = math.sqrt(min(_div(num, coef) for num, coef in args))
    out["y_tilde"] = yt

    caps = {
        "(1-Q1)^2/(4Q2Q0)": _div((1 - Q1) ** 2, 4 * Q2 * Q0) if Q1 < 1 else math.nan,
        "y_tilde^4*Q2/Q0": _div(yt**4 * Q2, Q0) if yt == yt else math.nan,
        "H_2star": out["H_2star"],
        "0.6838/B": _div(SUP_A, c["B"]),
        "0.6838/D_a": _div(SUP_A, c["Da"]),
    }
    out["caps"] = caps
    vals = list(caps.values())
    out["H"] = math.nan if any(v != v for v in vals) else min(vals)
    return out


def check_assumptions(spec, ledger, eta=None, phi_min=None, dt=None):
    """
    Evaluate each standing assumption from the ledger constants.  ``dt`` is
    the step to certify; it defaults to the step stored in the ledger.
    """
    phi_min = ledger.phi_min if phi_min is None else phi_min
    dt = ledger.dt if dt is None else dt
    rep = AssumptionReport()
    _basic_records(rep, spec, phi_min)
    rep.add("A2.2", ledger.gamma_inf > 0 and ledger.h_inf > 0,
            Gamma_inf=ledger.gamma_inf, H1_inf=ledger.h_inf)
    _ledger_records(rep, spec, ledger, eta or ledger.eta, dt)
    return rep


def _ledger_records(rep, spec, led, eta, dt):
    c = led.c
    gam = spec.gamma
    d = spec.d
    ns = d - 1
    lhs, rhs = c["pseudo_lhs"], c["pseudo_rhs"]
    pp = bool(np.all(lhs < rhs))
    k5, k6 = c["Kw5"], c["Kw6"]
    rep.add("A4.x", pp and c["B"] + c["C"] > 0 and bool(np.all(k5 < 1)) and bool(np.all(k6 < gam)),
            lhs=lhs, rhs=rhs, B_plus_C=c["B"] + c["C"], Kw5=k5, Kw6=k6, gamma=gam)
    capB = _div(SUP_A, c["B"])
    capD = _div(SUP_A, c["Da"])
    dt_ok = dt is not None
    rep.add("A4.y", dt_ok and dt < capB, dt=dt, H=capB)
    kb = [float(c["Kbphi2"][l] * spec.delta[l]) for l in spec.free]
    rep.add("A4.z", dt_ok and dt < min(capB, capD) and max(kb) < 2,
            dt=dt, H=min(capB, capD), D_a=c["Da"], Kbphi2_delta=kb)

    rep.add("A5.5", c["Q1"] < 1, Q1=c["Q1"], Kw7_plus_Kw8=c["Kw7"] + c["Kw8"])

    # literal form of the companion condition to A5.5
    Mc, F, H1, Mv = c["Mc"], c["F"], c["H1"], c["Mv"]
    den_f = np.array([1 - sum(Mc[j, 0, 1, m] / (2 * math.sqrt(gam[j])) for j in range(ns))
                      for m in range(ns)])
    den_h = np.array([gam[m] - Mv[m] ** 2 / (2 * eta("Mv2", m))
                      - sum(Mc[m, 0, 1, j] * math.sqrt(gam[m]) / 2 + Mc[m, 1, 1, j] / 2
                            + Mc[j, 1, 1, m] / 2 for j in range(ns))
                      for m in range(ns)])
    positive = bool(np.all(den_f > 0) and np.all(den_h > 0))
    if positive:
        s = sum(F[m] ** 2 / den_f[m] + eta("Mv2", m) / 2 for m in range(ns))
        val = (d - 0.5) * (d + 3) / led.gamma_inf**2 * s * float(np.max(H1**2 / den_h))
    else:
        val = math.inf
    rep.add("A5.8", positive and val < 1, value=val, denominators_F=den_f,
            denominators_H=den_h)

    caps = step_caps(led)
    rep.values.update({k: v for k, v in caps.items() if k != "caps"})
    rep.values.update({"cap " + k: v for k, v in caps["caps"].items()})
    for k in ("cb_hat", "Db_hat", "Za_hat", "P_hat", "B", "C", "Da"):
        rep.values[k] = c[k]
    H = caps["H"]
    rep.add("A5.10", dt_ok and H == H and dt < H and caps["z_tilde<Q3*y*^2"]
            and caps["H_2star<H_star"], dt=dt, H=H, **caps["caps"])


def assess(spec, eta, horizon, V, phi_min, dt, grid):
    """
    Build the ledger and evaluate every assumption.  A ledger that cannot be
    built (non-positive infima) yields a report whose dependent records fail.
    Returns (report, ledger or None).
    """
    inf = infimum_bounds(spec, phi_min)
    try:
        led = build_ledger(spec, eta, horizon, V, phi_min, dt=dt, grid=grid, inf=inf)
    except EstimateError as exc:
        rep = AssumptionReport()
        _basic_records(rep, spec, phi_min)
        rep.add("A2.2", False, Gamma_inf=inf.gamma_alpha, H1_inf=inf.h_alpha)
        for i in ASSUMPTION_IDS:
            if i not in rep.records:
                rep.add(i, False, reason="not evaluated: %s" % exc)
        return rep, None
    return check_assumptions(spec, led, dt=dt), led


@dataclass
class RegionSample:
    x: np.ndarray           # cell centers in T - t0
    y: np.ndarray           # cell centers in V
    P: np.ndarray           # (ny, nx, d) box bounds per left-out component
    Q: np.ndarray           # (ny, nx) velocity budget bound
    threshold: float
    dt: float
    ledger: object = None

    @property
    def P_max(self):
        return np.max(self.P, axis=2)

    @property
    def in_S(self):
        return self.P_max < self.threshold

    @property
    def in_R(self):
        return self.Q < (self.y**2)[:, None]

    @property
    def in_both(self):
        return self.in_S & self.in_R

    def margins(self):
        """Relative slack of both inequalities; positive inside."""
        s = 1.0 - self.P_max / self.threshold
        y2 = (self.y**2)[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(y2 > 0, 1.0 - self.Q / np.where(y2 > 0, y2, 1.0), -np.inf)
        return s, r

    def rows(self):
        """Row-major (x, y, P_max, Q, inS, inR) records."""
        Pm, S, R = self.P_max, self.in_S, self.in_R
        for j, yv in enumerate(self.y):
            for i, xv in enumerate(self.x):
                yield (float(xv), float(yv), float(Pm[j, i]), float(self.Q[j, i]),
                       int(S[j, i]), int(R[j, i]))


def region_scan(ledger, dt, x_max, y_max, cells=(64, 64), Q0=None):
    nx, ny = cells
    if nx < 1 or ny < 1:
        raise ValueError("raster needs at least one cell per axis")
    xs = (np.arange(nx) + 0.5) * (x_max / nx)
    ys = (np.arange(ny) + 0.5) * (y_max / ny)
    d = ledger.spec.d
    P = np.empty((ny, nx, d))
    Q = np.empty((ny, nx))
    for j, yv in enumerate(ys):
        for i, xv in enumerate(xs):
            P[j, i] = ledger.P_alpha(xv, yv)
            Q[j, i] = ledger.Q_dt(xv, yv, dt, Q0)
    return RegionSample(xs, ys, P, Q, box_threshold(ledger.phi_min), float(dt), ledger)


@dataclass
class Witness:
    found: bool
    x: float
    y: float
    s_margin: float
    r_margin: float
    i: int
    j: int


def find_witness(sample):
    """
    Cell center of S and R maximizing the smaller relative margin.  When the
    intersection is empty, the best cell overall is returned with found=False.
    """
    s, r = sample.margins()
    score = np.minimum(s, r)
    both = sample.in_both
    if both.any():
        masked = np.where(both, score, -np.inf)
        found = True
    else:
        masked = np.where(np.isnan(score), -np.inf, score)
        found = False
    j, i = np.unravel_index(int(np.argmax(masked)), masked.shape)
    return Witness(found, float(sample.x[i]), float(sample.y[j]), float(s[j, i]),
                   float(r[j, i]), int(i), int(j))


def recheck(ledger, x, y, dt, Q0=None):
    """Pointwise re-evaluation of both strict inequalities at (x, y)."""
    P = ledger.P_alpha(x, y)
    Q = ledger.Q_dt(x, y, dt, Q0)
    thr = box_threshold(ledger.phi_min)
    return {"P": P, "Q": Q, "threshold": thr, "y2": y * y,
            "box_ok": bool(np.all(P < thr)), "budget_ok": bool(Q < y * y)}
