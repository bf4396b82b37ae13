"""
A-priori constants, two discrete Gronwall inequalities, closed-form bounds and
energy audits of a computed trajectory.

Indices are 0-based.  Displacement components m, j run over 0..d-2, fraction
components l, n over the free set (every index except the eliminated one).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .discretization import norm2
from .model import infimum_bounds

C_INF = math.sqrt(2.0)   # H^1 -> L^inf embedding on the unit interval
C_P = 1.0                # Poincare constant for functions vanishing at z=0
SUP_A = 0.6838           # validity limit of 1/(1-a) <= exp(a + a^2)
GROWTH = 1.0 + SUP_A


class EstimateError(ValueError):
    pass


def _exp(a):
    # bounds may legitimately be astronomically large; report them as inf
    return math.exp(a) if a < 709.0 else math.inf


# ---------------------------------------------------------------- Young weights

class EtaConfig:
    """
    Positive weights of the Young inequalities behind the constants.

    Keys look like ``"M:0,1,1,0,0"`` (family name, then indices) or a bare
    family name, which sets every member of that family.  An index may be
    ``*`` to match anything, as in ``"M:*,*,0,*,1"``.  ``"default"``
    replaces the fallback 0.1.  Two families of weights are fixed by the
    derivation and cannot be overridden.

    Families: 1, 2, L1, L2, N11, N12, N21, N22, M1, M2 (per m);
    M (m, i, n, j, s); Mv1, Mv2, Mmm (per m); for x in {a, b}: x, xg (per l),
    xB (l, i, j, m), and an (l, n), bn (l, n), aBn / bBn (l, i, j, m, n).
    """

    def __init__(self, gamma, values=None, default=0.1):
        self.gamma = np.asarray(gamma, dtype=float)
        self.values = {}
        self.default = float(default)
        self.accessed = set()
        for k, v in (values or {}).items():
            if k == "default":
                if not v > 0:
                    raise EstimateError("eta default must be positive")
                self.default = float(v)
            else:
                self.set(k, v)

    @staticmethod
    def key(name, idx):
        return name if not idx else "%s:%s" % (name, ",".join(str(i) for i in idx))

    @staticmethod
    def parse(key):
        if ":" not in key:
            return key, ()
        name, rest = key.split(":", 1)
        try:
            return name, tuple(s.strip() if s.strip() == "*" else int(s) for s in rest.split(","))
        except ValueError:
            raise EstimateError("malformed eta key %r" % key)

    def pinned(self, name, idx):
        if "*" in idx:
            return None
        if name == "M" and len(idx) == 5 and idx[2] == 1 and idx[4] == 1:
            if idx[1] == 0:
                return 1.0 / math.sqrt(self.gamma[idx[0]])
            return 1.0
        return None

    def set(self, key, value):
        name, idx = self.parse(key)
        if self.pinned(name, idx) is not None:
            raise EstimateError("eta %s is fixed by the derivation and cannot be set" % key)
        value = float(value)
        if not value > 0 or not math.isfinite(value):
            raise EstimateError("eta %s must be positive and finite, got %r" % (key, value))
        self.values[key] = value

    def __call__(self, name, *idx):
        p = self.pinned(name, idx)
        if p is not None:
            return p
        k = self.key(name, idx)
        self.accessed.add(k)
        if k in self.values:
            return self.values[k]
        for pat, val in self.values.items():
            pn, pidx = self.parse(pat)
            if pn == name and "*" in pidx and len(pidx) == len(idx) and all(
                    a == "*" or a == b for a, b in zip(pidx, idx)):
                return val
        return self.values.get(name, self.default)

    def copy(self):
        out = EtaConfig(self.gamma, dict(self.values), self.default)
        return out

    def as_dict(self):
        d = dict(self.values)
        d["default"] = self.default
        return d


# ---------------------------------------------------------------- Gronwall

def gronwall1(A, B, C, Z, x0, h, z_seq):
    """
    Closed-form bounds for x^k - x^{k-1} + y^k h <= (A + B x^k + C x^{k-1} + z^k) h.

    Returns (x_bounds, y_sum_bounds) for k = 0..len(z_seq).
    """
    if not A > 0:
        raise EstimateError("Gronwall hypothesis A > 0 violated (A=%r)" % A)
    if not Z > 0:
        raise EstimateError("Gronwall hypothesis Z > 0 violated (Z=%r)" % Z)
    if not B + C > 0:
        raise EstimateError("Gronwall hypothesis B + C > 0 violated")
    if B * h > SUP_A:
        raise EstimateError("Gronwall hypothesis B*h <= 0.6838 violated (B*h=%r)" % (B * h))
    z = np.asarray(z_seq, dtype=float)
    if np.sum(z) * h > Z * (1 + 1e-12):
        raise EstimateError("Gronwall hypothesis sum(z)*h <= Z violated")
    k = np.arange(len(z) + 1)
    rate = C + GROWTH * B
    grow = np.exp(rate * k * h)
    xb = (x0 + Z + A * rate / (C + B) * k * h) * grow
    yb = (x0 + Z + A * h * k) * grow
    return xb, yb


def gronwall2(c, g_seq):
    """Bound y_k <= c exp(sum_{j<k} g_j) for y_k <= c + sum_{j<k} g_j y_j."""
    if not c > 0:
        raise EstimateError("Gronwall hypothesis c > 0 violated (c=%r)" % c)
    g = np.asarray(g_seq, dtype=float)
    if np.any(g < 0):
        raise EstimateError("Gronwall hypothesis g >= 0 violated")
    return c * np.exp(np.concatenate([[0.0], np.cumsum(g)]))


def sup_inequality_constant(tol=1e-12):
    """Largest a with 1/(1-a) <= exp(a + a^2), found by bisection."""
    f = lambda a: a + a * a + math.log1p(-a)    # >= 0 where the inequality holds
    lo, hi = 0.5, 0.9
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) >= 0:
            lo = mid
        else:
            hi = mid
    return lo


# ---------------------------------------------------------------- ledger

@dataclass
class ConstantsLedger:
    spec: object
    eta: EtaConfig
    horizon: float
    V: float
    phi_min: float
    dt: float = None
    gamma_inf: float = 0.0
    h_inf: float = 0.0
    c: dict = field(default_factory=dict)       # every scalar or array constant
    flags: dict = field(default_factory=dict)   # name -> bool

    # -- time-dependent pieces --------------------------------------------

    def M_affine(self, tau, V=None):
        """Per-m constant part of the boundary coupling, at elapsed time tau."""
        V = self.V if V is None else V
        c = self.c
        q, r = c["q"], c["r"]
        tau = max(float(tau), 0.0)
        W0 = abs(self.spec.W0)
        ns = len(q)
        out = np.zeros(ns)
        for m in range(ns):
            s = 0.0
            for j in range(ns):
                s += c["E10"][m, j] * c["absA"][j] * (q[j] * tau + V * math.sqrt(tau) + r * tau + W0)
                s += 2 * c["E00"][m, j] * q[j] * tau + 2 * c["E01"][m, j] * q[j]
            s += self.spec.bigD[m] * c["absA"][m] * (q[m] * tau + V * math.sqrt(tau) + r * tau + W0)
            s += self.spec.gamma[m] * c["absA"][m] * (q[m] + r)
            out[m] = s
        return out

    def Kw0(self, tau, V=None):
        c = self.c
        eta = self.eta
        Mk = self.M_affine(tau, V)
        tot = 0.0
        for m in range(len(Mk)):
            tot += c["Gw"][m] ** 2 / 2 * (1 / eta("1", m) + 1 / eta("2", m))
            tot += c["N0"][m] * (1 + tau)
            tot += c["N1"][m] ** 2 / 2 * (1 / eta("N11", m) + tau / eta("N12", m))
            tot += c["N2"][m] ** 2 / 2 * (1 / eta("N21", m) + tau / eta("N22", m))
            tot += Mk[m] ** 2 / 2 * (1 / eta("M1", m) + 1 / eta("M2", m))
        return tot

    # -- aggregates as functions of (x, y) = (elapsed time, velocity budget) --

    def Chat2(self, x, y):
        c = self.c
        A = self.Kw0(x, y)
        B, C = c["B"], c["C"]
        rate = C + GROWTH * B
        return ((c["Kw7"] + c["Kw8"]) * y * y + A * rate / (C + B) * x) * _exp(rate * x)

    def cb(self, x, y):
        c = self.c
        ch = self.Chat2(x, y)
        return c["cb1"] * x + c["cb2"] * y * y + c["cb3"] * x * ch + c["cb4"] * ch

    def Db(self, x, y):
        c = self.c
        ch = self.Chat2(x, y)
        return float(np.max(c["Db1"] * y * y + c["Db2"] * ch))

    def Aa(self, x, y):
        c = self.c
        ch = self.Chat2(x, y)
        return (c["Kaphi0"] + self.cb(x, y) * _exp(self.Db(x, y)) * c["Kaphi3max"]
                + c["Aa_w"] * ch)

    def Za(self, x, y):
        c = self.c
        return c["Kaphi1"] * y * y + c["Za_w"] * self.Chat2(x, y)

    def Xb(self, x, y):
        return self.cb(x, y) * _exp(self.Db(x, y))

    def phi_l2_bound(self, x, y, l):
        c = self.c
        return ((self.spec.phi0[l] ** 2 + self.Za(x, y) + GROWTH * self.Aa(x, y) * x)
                * _exp(GROWTH * c["Da"] * x))

    def Pcal(self, x, y):
        """H^1 bound of the eliminated fraction."""
        d = self.spec.d
        e = self.spec.eliminated
        return (self.spec.phi0[e] ** 2 + (2 * C_INF**2 + 1) * y * y + 2 * d * self.Chat2(x, y)
                + (d - 1) * self.Xb(x, y))

    def P_alpha(self, x, y):
        """Box-constraint bounds, one per left-out component (the cyclic set)."""
        spec = self.spec
        free = spec.free
        e = spec.eliminated
        Lb = {l: self.phi_l2_bound(x, y, l) for l in free}
        Xb = self.Xb(x, y)
        P = self.Pcal(x, y)
        out = np.empty(spec.d)
        for left in range(spec.d):
            if left == e:
                out[left] = sum(Lb.values()) + Xb
            else:
                out[left] = sum(v for l, v in Lb.items() if l != left) + P + Xb
        return out

    def Q_dt(self, x, y, dt, Q0=None):
        """Upper bound of the running velocity-gradient budget."""
        c = self.c
        spec = self.spec
        d = spec.d
        Q0 = c.get("Q0") if Q0 is None else Q0
        if Q0 is None:
            raise EstimateError("Q0 unknown; build the ledger with a grid")
        ch = self.Chat2(x, y)
        cbE = self.cb(x, y) * _exp(self.Db(x, y))
        H0, H1 = c["H0"], c["H1"]
        gD = spec.gamma + spec.bigD
        t1 = 8 * c["Gamma"] ** 2 * C_INF**2 * (d - 1) * cbE * y * y
        t2 = c["Gv"] ** 2 * x
        t3 = x * max(np.max(H0**2 / gD), np.max(4 * (d - 1) * C_INF**2 * H0**2 * cbE)) * ch
        t4 = max(np.max(H1**2 / (spec.gamma - c["Kw6"])),
                 np.max(4 * (d - 1) * C_INF**2 * H1**2 * cbE / (1 - c["Kw5"]))) * ch
        return Q0 * dt + (4 * d - 2) / self.gamma_inf**2 * (t1 + t2 + t3 + t4)

    def Q_bold(self, y, dt):
        c = self.c
        s = y * y
        return c["Q0"] * dt + c["Q1"] * s + c["Q2"] * s * s * _exp(c["Q3"] * s)

    @property
    def certified(self):
        return all(self.flags.values())

    def summary(self):
        out = {}
        for k, v in self.c.items():
            if isinstance(v, np.ndarray):
                out[k] = v.tolist()
            elif isinstance(v, (int, float, np.floating)):
                out[k] = float(v)
        out["flags"] = dict(self.flags)
        return out


def lambert_w0(x, tol=1e-15, maxiter=100):
    """Principal branch of the inverse of w*exp(w) for x >= 0 (bracketed Halley)."""
    x = float(x)
    if not x >= 0:
        raise EstimateError("lambert_w0 needs x >= 0, got %r" % x)
    if x == 0.0:
        return 0.0
    if math.isinf(x):
        return math.inf
    lo, hi = 0.0, math.log1p(x)
    w = math.log1p(x) if x <= math.e else math.log(x) - math.log(math.log(x))
    for _ in range(maxiter):
        ew = math.exp(w)
        f = w * ew - x
        if f > 0:
            hi = min(hi, w)
        else:
            lo = max(lo, w)
        fp = ew * (w + 1)
        step = f / (fp - (w + 2) * f / (2 * w + 2))
        wn = w - step
        if not lo <= wn <= hi:
            wn = 0.5 * (lo + hi)
        if abs(wn - w) <= tol * max(1.0, abs(wn)):
            return wn
        w = wn
    return w


def _bisect(f, lo, hi, iters=200):
    flo = f(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo <= 1e-16 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


def _bounds(spec):
    """Sup-and-Lipschitz bounds of every coefficient family as arrays."""
    d = spec.d
    ns = d - 1
    b = spec.coeffs.bound
    out = {
        "Gamma": b("Gamma"), "Gv": b("G_v"),
        "I": np.array([b("I", l) for l in range(d)]),
        "Gphi": np.array([b("G_phi", l) for l in range(d)]),
        "Gw": np.array([b("G_w", m) for m in range(ns)]),
        "F": np.array([b("F", m) for m in range(ns)]),
        "H0": np.array([b("H", 0, m) for m in range(ns)]),
        "H1": np.array([b("H", 1, m) for m in range(ns)]),
        "E": np.array([[[[b("E", m, i, n, j) for j in range(ns)] for n in range(2)]
                        for i in range(2)] for m in range(ns)]),
        "Bc": np.array([[[[b("B", l, i, j, m) for m in range(ns)] for j in range(2)]
                         for i in range(2)] for l in range(d)]),
    }
    return out


def build_ledger(spec, eta, horizon, V, phi_min, dt=None, grid=None, inf=None):
    """
    Evaluate every constant of the estimates from the declared coefficient
    bounds.  Assumption failures are recorded in ``ledger.flags``.
    Pass a grid to also evaluate the initial velocity gradient Q0.
    """
    if not isinstance(eta, EtaConfig):
        eta = EtaConfig(spec.gamma, eta)
    d = spec.d
    ns = d - 1
    free = spec.free
    inf = inf or infimum_bounds(spec, phi_min)
    if inf.violated:
        raise EstimateError("lower bounds of Gamma or H_1 are not positive on the "
                            "admissible box")
    led = ConstantsLedger(spec, eta, float(horizon), float(V), float(phi_min), dt,
                          inf.gamma_alpha, inf.h_alpha)
    c = led.c
    c.update(_bounds(spec))
    gam, bigD, absA = spec.gamma, spec.bigD, np.abs(spec.robinA)
    E = c["E"]
    c["E00"], c["E01"], c["E10"], c["E11"] = E[:, 0, 0, :], E[:, 0, 1, :], E[:, 1, 0, :], E[:, 1, 1, :]
    c["absA"] = absA
    c["Gamma_inf"], c["H_inf"] = inf.gamma_alpha, inf.h_alpha

    # boundary rates
    q = np.array([spec.jhat[m] * spec.phi_res[m] / inf.h_alpha for m in range(ns)])
    r = spec.jhat[d - 1] * spec.phi_res[d - 1] / inf.gamma_alpha
    c["q"], c["r"] = q, r

    # coefficients of the M and N decompositions; index [m, i, n, j]
    Mc = np.zeros((ns, 2, 2, ns))
    for m in range(ns):
        for j in range(ns):
            Mc[m, 0, 0, j] = c["E00"][m, j]
            Mc[m, 1, 0, j] = c["E10"][m, j] * (1 + absA[j]) + c["E00"][m, j]
            Mc[m, 0, 1, j] = c["E01"][m, j]
            # the gamma|A| term belongs to j = m only; it is counted for every j,
            # matching the pseudo-parabolicity condition
            Mc[m, 1, 1, j] = c["E01"][m, j] + gam[m] * absA[m]
    c["Mc"] = Mc
    c["Mmm"] = bigD * absA
    c["Mv"] = gam * absA
    c["N0"], c["N1"], c["N2"] = c["Gw"] * q, c["F"] * q, q.copy()

    F = c["F"]
    Kw1, Kw2, Kw3, Kw4, Kw5, Kw6 = (np.zeros(ns) for _ in range(6))
    for m in range(ns):
        Kw1[m] = eta("1", m) / 2 + eta("L1", m) / 2
        s = eta("M1", m) / 2 + eta("Mmm", m) / 2
        for j in range(ns):
            for i in range(2):
                s += eta("M", m, i, 0, j, 0) / 2 + eta("M", m, i, 1, j, 0) / 2
        Kw2[m] = s + c["Mv"][m] ** 2 / (2 * eta("Mv1", m)) + c["Mmm"][m] - bigD[m]
        Kw3[m] = sum(Mc[j, 0, 0, m] ** 2 / (2 * eta("M", j, 0, 0, m, 0))
                     + Mc[j, 0, 0, m] / 2 * eta("M", j, 0, 0, m, 1) for j in range(ns))
        Kw4[m] = sum(Mc[j, 1, 0, m] ** 2 / (2 * eta("M", j, 1, 0, m, 0))
                     + Mc[j, 1, 0, m] / 2 * eta("M", j, 1, 0, m, 1) for j in range(ns))
        Kw5[m] = (eta("2", m) + eta("L2", m) + eta("N21", m) + eta("N22", m)) / 2 + sum(
            Mc[j, 0, 1, m] ** 2 / (2 * eta("M", j, 0, 1, m, 0))
            + Mc[j, 0, 1, m] / 2 * eta("M", j, 0, 1, m, 1) for j in range(ns))
        s = (eta("M2", m) / 2 + c["Mmm"][m] ** 2 / (2 * eta("Mmm", m))
             + c["Mv"][m] ** 2 / (2 * eta("Mv2", m)))
        for j in range(ns):
            s += Mc[m, 0, 1, j] / (2 * eta("M", m, 0, 1, j, 1))
            s += sum(Mc[m, i, 0, j] / (2 * eta("M", m, i, 0, j, 1)) for i in range(2))
            s += (Mc[j, 1, 1, m] ** 2 / (2 * eta("M", j, 1, 1, m, 0))
                  + Mc[m, 1, 1, j] / 2 * eta("M", m, 1, 1, j, 1)
                  + Mc[j, 1, 1, m] / (2 * eta("M", j, 1, 1, m, 1)))
        Kw6[m] = s
    c.update(Kw1=Kw1, Kw2=Kw2, Kw3=Kw3, Kw4=Kw4, Kw5=Kw5, Kw6=Kw6)
    c["Kw7"] = float(sum(F[m] ** 2 / 2 * (1 / eta("L1", m) + 1 / eta("L2", m)) for m in range(ns)))
    c["Kw8"] = float(sum((eta("N11", m) + eta("N12", m) + eta("Mv1", m) + eta("Mv2", m)) / 2
                         for m in range(ns)))

    # fraction constants; x = a uses the max over l, x = b the sum with sigma = delta
    I, G, Gphi, Bc, delta = c["I"], c["Gamma"], c["Gphi"], c["Bc"], spec.delta

    def agg(x, vals):
        return max(vals) if x == "a" else sum(vals)

    for x in ("a", "b"):
        sig = {l: (1.0 if x == "a" else delta[l]) for l in free}
        c["K%sphi0" % x] = agg(x, [Gphi[l] ** 2 / (sig[l] ** 2 * eta(x + "g", l)) for l in free])
        vals = []
        for l in free:
            v = I[l] ** 2 * G**2 / (sig[l] ** 2 * eta(x, l))
            if x == "a":
                v += 2 * sum(I[l] ** 2 * G**2 * C_P**2 / eta("an", l, n) for n in free)
            vals.append(v)
        c["K%sphi1" % x] = agg(x, vals)
        K2 = np.zeros(d)
        for l in free:
            s = eta(x, l) + eta(x + "g", l)
            s += sum(eta(x + "B", l, i, jj, m) for m in range(ns) for i in range(2) for jj in range(2))
            if x == "b":
                s += 2 * sum(eta("bn", l, n) + sum(eta("bBn", l, 1, jj, m, n)
                                                  for m in range(ns) for jj in range(2))
                             for n in free)
            K2[l] = s
        c["K%sphi2" % x] = K2
        for slot, (i, jj) in zip((4, 5, 6, 7), ((0, 0), (1, 0), (0, 1), (1, 1))):
            K = np.zeros(ns)
            for m in range(ns):
                vals = []
                for l in free:
                    v = Bc[l, i, jj, m] ** 2 / (sig[l] ** 2 * eta(x + "B", l, i, jj, m))
                    if x == "a" and slot in (4, 6):
                        # gradient-of-coefficient terms pair w (slot 4) or D(w) (slot 6)
                        v += 2 * sum(Bc[l, 1, jj, m] ** 2 / eta("aBn", l, 1, jj, m, n) for n in free)
                    vals.append(v)
                K[m] = agg(x, vals)
            c["K%sphi%d" % (x, slot)] = K
    K3a = np.zeros((d, d))
    for l in free:
        for n in free:
            K3a[l, n] = 2 * (eta("an", l, n) + sum(eta("aBn", l, 1, 0, m, n) + eta("aBn", l, 1, 1, m, n)
                                                  for m in range(ns)))
    c["Kaphi3"] = K3a
    c["Kaphi3max"] = max(K3a[l, n] for l in free for n in free)
    # coefficient of |d_z phi_l^{k-1}|^2 in the gradient inequality; the weights
    # come from the equation of component n, so its diffusivity delta_n appears
    K31 = np.zeros(d)
    K32 = np.zeros((d, ns))
    K33 = np.zeros((d, ns))
    for l in free:
        K31[l] = 2 * sum(I[n] ** 2 * G**2 * C_INF**2 / (delta[n] ** 2 * eta("bn", n, l)) for n in free)
        for m in range(ns):
            K32[l, m] = 2 * sum(Bc[n, 1, 1, m] ** 2 * C_INF**2 / (delta[n] ** 2 * eta("bBn", n, 1, 1, m, l))
                                for n in free)
            K33[l, m] = 2 * sum(Bc[n, 1, 0, m] ** 2 * C_INF**2 / (delta[n] ** 2 * eta("bBn", n, 1, 0, m, l))
                                for n in free)
    c["Kphi3_1"], c["Kphi3_2"], c["Kphi3_3"] = K31, K32, K33

    # aggregates
    gD = gam + bigD
    c["B"] = 2 * float(np.max(np.maximum(Kw1, Kw2 / gD)))
    c["C"] = 2 * float(np.max(np.maximum(Kw3, Kw4 / gD)))
    mu_m = np.minimum(1 - Kw5, gam - Kw6)
    c["mu_m"] = mu_m
    c["mu"] = mu = float(np.min(mu_m))
    c["Kphi3_4"] = np.array([float(np.sum((K32[l] + K33[l]) / mu_m)) if l in free else 0.0
                             for l in range(d)])
    c["cb1"] = c["Kbphi0"]
    c["cb2"] = c["Kbphi1"]
    c["cb3"] = float(np.max(np.maximum(c["Kbphi4"], c["Kbphi5"] / gD))) / mu
    c["cb4"] = float(np.max(np.maximum(c["Kbphi6"] / (1 - Kw5), c["Kbphi7"] / (gam - Kw6)))) / mu
    c["Db1"] = np.array([2 * K31[l] for l in free])
    c["Db2"] = np.array([c["Kphi3_4"][l] / mu for l in free])
    c["Aa_w"] = float(np.max(np.maximum(c["Kaphi4"], c["Kaphi5"] / gD))) / mu
    c["Za_w"] = float(np.max(np.maximum(c["Kaphi6"] / (1 - Kw5), c["Kaphi7"] / (gam - Kw6)))) / mu
    c["Da"] = float(max(c["Kaphi2"][l] for l in free))

    led.flags["B+C>0"] = c["B"] + c["C"] > 0
    led.flags["Kw5<1"] = bool(np.all(Kw5 < 1))
    led.flags["Kw6<gamma"] = bool(np.all(Kw6 < gam))
    led.flags["Kbphi2*delta<2"] = bool(all(c["Kbphi2"][l] * delta[l] < 2 for l in free))
    pp = pseudo_parabolicity(spec)
    c["pseudo_lhs"], c["pseudo_rhs"] = pp
    led.flags["pseudo-parabolicity"] = bool(np.all(pp[0] < pp[1]))
    if dt is not None:
        led.flags["dt*B<=0.6838"] = dt * c["B"] <= SUP_A

    # values at the horizon
    T = led.horizon
    c["A"] = led.Kw0(T)
    if mu > 0:
        c["Chat2_T"] = led.Chat2(T, led.V)
        c["Ctilde2"] = c["Chat2_T"] / mu
        c["cb"] = led.cb(T, led.V)
        c["Db"] = led.Db(T, led.V)
        c["Aa"] = led.Aa(T, led.V)
        c["Za"] = led.Za(T, led.V)

    # constants of the velocity budget near x = 0
    KK = c["Kw7"] + c["Kw8"]
    c["cb_hat"] = c["cb2"] + c["cb4"] * KK
    c["Db_hat"] = float(np.max(c["Db1"] + c["Db2"] * KK))
    c["Za_hat"] = c["Kaphi1"] + c["Za_w"] * KK
    c["P_hat"] = 2 * C_INF**2 + 1 + 2 * d * KK
    g2 = inf.gamma_alpha**2
    H1 = c["H1"]
    c["Q1"] = (4 * d - 2) / g2 * float(np.max(H1**2 / (gam - Kw6))) * KK
    c["Q2"] = ((4 * d - 2) * (4 * d - 4) / g2 * C_INF**2 * c["cb_hat"]
               * float(np.max(2 * G**2 + H1**2 / (1 - Kw5) * KK)))
    c["Q3"] = c["Db_hat"]
    if grid is not None:
        from .elliptic import initial_velocity
        v0, _ = initial_velocity(spec, grid)
        c["Q0"] = norm2(v0, "H1semi", grid.h)
    return led


def pseudo_parabolicity(spec):
    """Left and right sides of the pseudo-parabolicity condition, as (m, j) arrays."""
    ns = spec.d - 1
    gam, absA = spec.gamma, np.abs(spec.robinA)
    b = spec.coeffs.bound
    lhs = np.zeros((ns, ns))
    rhs = np.zeros((ns, ns))
    for m in range(ns):
        for j in range(ns):
            lhs[m, j] = (gam[m] * absA[m] + gam[j] * absA[j]
                         + b("E", m, 0, 1, j) * (1 + math.sqrt(gam[m])) + b("E", j, 0, 1, m))
            rhs[m, j] = 2 * gam[m] / (ns)
    return lhs, rhs


def tune_eta(spec, eta, horizon, V, phi_min, dt=None, target=None, sweeps=8, lo=1e-4, hi=1e2):
    """
    Coordinate descent on the free weights (log scale) that lowers
    max(K_w5m, K_w6m / gamma_m, K_bphi2l delta_l / 2).

    With dt given, moves that break dt*B <= 0.6838 are refused.  With a
    target, the search stops once the objective is below it.
    """
    eta = eta.copy() if isinstance(eta, EtaConfig) else EtaConfig(spec.gamma, eta)
    inf = infimum_bounds(spec, phi_min)

    def score(e):
        led = build_ledger(spec, e, horizon, V, phi_min, inf=inf)
        c = led.c
        if dt is not None and dt * c["B"] > SUP_A:
            return math.inf, math.inf
        vals = list(c["Kw5"]) + list(c["Kw6"] / spec.gamma)
        vals += [c["Kbphi2"][l] * spec.delta[l] / 2 for l in spec.free]
        # the mean breaks ties between components that share the maximum
        return max(vals) + 1e-3 * sum(vals) / len(vals), max(vals)

    build_ledger(spec, eta, horizon, V, phi_min, inf=inf)
    keys = sorted(eta.accessed)
    best, top = score(eta)
    for _ in range(sweeps):
        if target is not None and top < target:
            break
        improved = False
        for k in keys:
            name, idx = EtaConfig.parse(k)
            cur = eta(name, *idx)
            for fac in (10.0, 0.1, 2.0, 0.5):
                val = min(max(cur * fac, lo), hi)
                if val == cur:
                    continue
                trial = eta.copy()
                trial.set(k, val)
                s, t = score(trial)
                if s < best - 1e-15:
                    best, top, eta, cur, improved = s, t, trial, val, True
        if not improved:
            break
    return eta, top


# ---------------------------------------------------------------- a-priori bounds

@dataclass
class BoundSet:
    t_elapsed: float
    w_energy: float        # sum_m |w_m|^2 + (gamma_m + D_m) |d_z w_m|^2
    w_rate_sum: float      # running sum of the weighted rates times dt
    xb: float              # sum_l |d_z phi_l|^2
    yb_sum: float
    phi_l2: dict           # l -> bound of |phi_l|^2
    P: float               # H^1 bound of the eliminated fraction

    def as_dict(self):
        return {"t_elapsed": self.t_elapsed, "w_energy": self.w_energy,
                "w_rate_sum": self.w_rate_sum, "xb": self.xb, "yb_sum": self.yb_sum,
                "P": self.P, **{"phi_l2_%d" % l: v for l, v in self.phi_l2.items()}}


def apriori_bounds(ledger, t_elapsed):
    need = ["B+C>0", "Kw5<1", "Kw6<gamma", "Kbphi2*delta<2", "pseudo-parabolicity"]
    if "dt*B<=0.6838" in ledger.flags:
        need.append("dt*B<=0.6838")
    bad = [k for k in need if not ledger.flags.get(k, False)]
    if bad:
        raise EstimateError("bounds not certified: %s" % ", ".join(bad))
    c = ledger.c
    x = max(float(t_elapsed), 0.0)
    y = ledger.V
    A = ledger.Kw0(x, y)
    rate = c["C"] + GROWTH * c["B"]
    KK = c["Kw7"] + c["Kw8"]
    w_energy = (KK * y * y + A * rate / (c["C"] + c["B"]) * x) * _exp(rate * x)
    w_rate = (KK * y * y + A * x) * _exp(rate * x)
    cb, Db = ledger.cb(x, y), ledger.Db(x, y)
    return BoundSet(x, w_energy, w_rate, cb * _exp(Db), cb * (1 + Db * _exp(Db)),
                    {l: ledger.phi_l2_bound(x, y, l) for l in ledger.spec.free},
                    ledger.Pcal(x, y))


# ---------------------------------------------------------------- audits

@dataclass
class AuditReport:
    rows: list
    tol_rel: float = 1e-6

    @property
    def failures(self):
        return [r for r in self.rows if not r["ok"]]

    @property
    def passed(self):
        return not self.failures

    def worst(self, key="margin"):
        return min(self.rows, key=lambda r: r[key]) if self.rows else None

    def by_id(self):
        out = {}
        for r in self.rows:
            out.setdefault(r["id"], []).append(r)
        return out


def _n2(u, kind, h):
    return norm2(u, kind, h)


def slice_norms(prev, cur, dt, h):
    """Discrete norms used by the audits for the step prev -> cur."""
    Dw = (cur.w - prev.w) / dt
    Dphi = (cur.phi - prev.phi) / dt
    ns = cur.w.shape[0]
    d = cur.phi.shape[0]
    N = {
        "w": np.array([_n2(cur.w[m], "L2", h) for m in range(ns)]),
        "dw": np.array([_n2(cur.w[m], "H1semi", h) for m in range(ns)]),
        "w_prev": np.array([_n2(prev.w[m], "L2", h) for m in range(ns)]),
        "dw_prev": np.array([_n2(prev.w[m], "H1semi", h) for m in range(ns)]),
        "Dw": np.array([_n2(Dw[m], "L2", h) for m in range(ns)]),
        "dDw": np.array([_n2(Dw[m], "H1semi", h) for m in range(ns)]),
        "v_prev": _n2(prev.v, "L2", h),
        "dv_prev": _n2(prev.v, "H1semi", h),
        "vinf_prev": _n2(prev.v, "Linf", h),
        "phi": np.array([_n2(cur.phi[l], "L2", h) for l in range(d)]),
        "phi_prev": np.array([_n2(prev.phi[l], "L2", h) for l in range(d)]),
        "dphi": np.array([_n2(cur.phi[l], "H1semi", h) for l in range(d)]),
        "dphi_prev": np.array([_n2(prev.phi[l], "H1semi", h) for l in range(d)]),
        "Dphi": np.array([_n2(Dphi[l], "L2", h) for l in range(d)]),
        "dDphi": np.array([_n2(Dphi[l], "H1semi", h) for l in range(d)]),
    }
    return N


# ulps of per-node roundoff assumed in stored fields
NOISE_ULPS = 1024.0


def norm_noise(prev, cur, N, dt, h):
    """
    Roundoff allowance for every entry of ``slice_norms``: a per-node error of
    NOISE_ULPS ulps of the field's size, divided by h for gradients and by dt
    for difference quotients, propagated as 2|u|e + e^2 into the squared norm.
    """
    eps = NOISE_ULPS * np.finfo(float).eps
    ep = eps * max(1.0, float(np.max(np.abs(cur.phi))), float(np.max(np.abs(prev.phi))))
    ew = eps * max(float(np.max(np.abs(cur.w))), float(np.max(np.abs(prev.w))), 1e-300)
    ev = eps * max(float(np.max(np.abs(prev.v))), 1e-300)
    lev = {"w": ew, "w_prev": ew, "dw": ew / h, "dw_prev": ew / h, "Dw": ew / dt,
           "dDw": ew / (dt * h), "v_prev": ev, "dv_prev": ev / h, "vinf_prev": ev,
           "phi": ep, "phi_prev": ep, "dphi": ep / h, "dphi_prev": ep / h,
           "Dphi": ep / dt, "dDphi": ep / (dt * h)}
    return {k: 2 * np.sqrt(N[k]) * e + e * e for k, e in lev.items()}


def _row(k, t, ident, lhs, rhs, tol, allow=0.0):
    margin = rhs - lhs
    return {"k": k, "t": t, "id": ident, "lhs": float(lhs), "rhs": float(rhs),
            "margin": float(margin), "allow": float(allow),
            "ok": bool(margin >= -(tol * abs(rhs) + allow))}


def audit_energy(traj, ledger, tol_rel=1e-6, h=None):
    """Evaluate both sides of every tested energy inequality on each step."""
    spec = ledger.spec
    c = ledger.c
    d = spec.d
    ns = d - 1
    free = spec.free
    e = spec.eliminated
    gam, bigD, delta = spec.gamma, spec.bigD, spec.delta
    slices = traj.slices
    if len(slices) < 2:
        raise EstimateError("audit needs at least two slices")
    n = slices[0].phi.shape[1]
    h = h or 1.0 / (n - 1)
    dt = traj.dt
    I, G, Gphi, Bc = c["I"], c["Gamma"], c["Gphi"], c["Bc"]
    rows = []
    for prev, cur in zip(slices[:-1], slices[1:]):
        N = slice_norms(prev, cur, dt, h)
        Z = norm_noise(prev, cur, N, dt, h)
        tau = cur.t - traj.t0
        k = cur.k

        # displacement energy
        xk = np.sum(N["w"] + (gam + bigD) * N["dw"])
        xp = np.sum(N["w_prev"] + (gam + bigD) * N["dw_prev"])
        lhs = 0.5 * (xk - xp) / dt + np.sum(
            (1 + dt / 2) * N["Dw"] + (gam * (1 + dt / 2) + bigD * dt / 2) * N["dDw"])
        rhs = (ledger.Kw0(tau) + np.sum(c["Kw1"] * N["w"] + c["Kw2"] * N["dw"]
                                        + c["Kw3"] * N["w_prev"] + c["Kw4"] * N["dw_prev"]
                                        + c["Kw5"] * N["Dw"] + c["Kw6"] * N["dDw"])
               + c["Kw7"] * N["v_prev"] + c["Kw8"] * N["dv_prev"])
        allow = np.sum(0.5 * (Z["w"] + Z["w_prev"] + (gam + bigD) * (Z["dw"] + Z["dw_prev"])) / dt
                       + (1 + dt / 2) * Z["Dw"] + (gam * (1 + dt / 2) + bigD * dt / 2) * Z["dDw"])
        rows.append(_row(k, cur.t, "wboundsA", lhs, rhs, tol_rel, allow))

        wterms_a = np.sum(c["Kaphi4"] * N["w_prev"] + c["Kaphi5"] * N["dw_prev"]
                          + c["Kaphi6"] * N["Dw"] + c["Kaphi7"] * N["dDw"])
        for l in free:
            lhs = (N["phi"][l] - N["phi_prev"][l]) / dt + 2 * delta[l] * N["dphi"][l] + dt * N["Dphi"][l]
            rhs = (c["Kaphi0"] + c["Kaphi1"] * N["dv_prev"] + c["Kaphi2"][l] * N["phi"][l]
                   + sum(c["Kaphi3"][l, nn] * N["dphi_prev"][nn] for nn in free) + wterms_a)
            allow = ((Z["phi"][l] + Z["phi_prev"][l]) / dt + 2 * delta[l] * Z["dphi"][l]
                     + dt * Z["Dphi"][l])
            rows.append(_row(k, cur.t, "phiboundsA[%d]" % l, lhs, rhs, tol_rel, allow))

        # gradient inequality summed over the free fractions
        Dw = (cur.w - prev.w) / dt
        vH1 = _n2(prev.v, "H1", h)
        DwH1 = np.array([_n2(Dw[m], "H1", h) for m in range(ns)])
        wH1 = np.array([_n2(prev.w[m], "H1", h) for m in range(ns)])
        lhs = sum((N["dphi"][l] - N["dphi_prev"][l]) / dt + 2 / delta[l] * N["Dphi"][l]
                  + dt * N["dDphi"][l] for l in free)
        rhs = c["Kbphi0"] + c["Kbphi1"] * N["dv_prev"]
        for l in free:
            K3 = c["Kphi3_1"][l] * vH1 + np.sum(c["Kphi3_2"][l] * DwH1 + c["Kphi3_3"][l] * wH1)
            rhs += c["Kbphi2"][l] * N["Dphi"][l] + K3 * N["dphi_prev"][l]
        rhs += np.sum(c["Kbphi4"] * N["w_prev"] + c["Kbphi5"] * N["dw_prev"]
                      + c["Kbphi6"] * N["Dw"] + c["Kbphi7"] * N["dDw"])
        allow = sum((Z["dphi"][l] + Z["dphi_prev"][l]) / dt + 2 / delta[l] * Z["Dphi"][l]
                    + dt * Z["dDphi"][l] for l in free)
        rows.append(_row(k, cur.t, "phibounds1A", lhs, rhs, tol_rel, allow))

        # eliminated fraction
        r = np.sqrt
        gsum = sum(r(N["dphi_prev"][nn]) for nn in free)
        lhs = (N["phi"][e] - N["phi_prev"][e]) / dt + dt * N["Dphi"][e]
        bracket = 0.0
        cross = 0.0
        for l in free:
            bracket += (2 * I[l] * G * gsum * r(N["vinf_prev"]) + I[l] * G * r(N["dv_prev"]) + Gphi[l])
            for m in range(ns):
                bracket += (Bc[l, 0, 0, m] * r(N["w_prev"][m]) + Bc[l, 0, 1, m] * r(N["Dw"][m])
                            + Bc[l, 1, 0, m] * r(N["dw_prev"][m]) + Bc[l, 1, 1, m] * r(N["dDw"][m]))
                cross += gsum * (Bc[l, 1, 0, m] * r(N["w_prev"][m]) + Bc[l, 1, 1, m] * r(N["Dw"][m]))
        rhs = (2 * r(N["phi"][e]) * bracket + 4 * cross
               + 2 * r(N["dphi"][e]) * sum(delta[l] * r(N["dphi"][l]) for l in free))
        allow = (Z["phi"][e] + Z["phi_prev"][e]) / dt + dt * Z["Dphi"][e]
        rows.append(_row(k, cur.t, "phid", lhs, rhs, tol_rel, allow))

        rhs = (d - 1) * sum(N["dphi"][l] for l in free)
        allow = Z["dphi"][e] + (d - 1) * sum(Z["dphi"][l] for l in free)
        rows.append(_row(k, cur.t, "phidz", N["dphi"][e], rhs, tol_rel, allow))
    return AuditReport(rows, tol_rel)


def realized_sequences(traj, ledger, h=None):
    """Discrete counterparts of the bounded quantities, per accepted slice."""
    spec = ledger.spec
    c = ledger.c
    gam, bigD, delta = spec.gamma, spec.bigD, spec.delta
    n = traj.slices[0].phi.shape[1]
    h = h or 1.0 / (n - 1)
    dt = traj.dt
    out = []
    ysum = ybsum = 0.0
    ysum_n = ybsum_n = 0.0
    prev = None
    for s in traj.slices:
        ns = s.w.shape[0]
        x = sum(norm2(s.w[m], "L2", h) + (gam[m] + bigD[m]) * norm2(s.w[m], "H1semi", h)
                for m in range(ns))
        # roundoff allowance of each quantity, same model as the energy audit
        Z = norm_noise(prev or s, s, slice_norms(prev or s, s, dt, h), dt, h)
        if prev is not None:
            N = slice_norms(prev, s, dt, h)
            ysum += dt * float(np.sum((1 - c["Kw5"]) * N["Dw"] + (gam - c["Kw6"]) * N["dDw"]))
            ybsum += dt * 2 * sum((2 / delta[l] - c["Kbphi2"][l]) * N["Dphi"][l] for l in spec.free)
            ysum_n += dt * float(np.sum(abs(1 - c["Kw5"]) * Z["Dw"] + np.abs(gam - c["Kw6"]) * Z["dDw"]))
            ybsum_n += dt * 2 * sum(abs(2 / delta[l] - c["Kbphi2"][l]) * Z["Dphi"][l] for l in spec.free)
        e = spec.eliminated
        row = {"k": s.k, "t": s.t, "w_energy": x, "w_rate_sum": ysum,
               "xb": sum(norm2(s.phi[l], "H1semi", h) for l in spec.free), "yb_sum": ybsum,
               "P": norm2(s.phi[e], "H1", h)}
        noise = {"w_energy": float(np.sum(Z["w"] + (gam + bigD) * Z["dw"])), "w_rate_sum": ysum_n,
                 "xb": sum(Z["dphi"][l] for l in spec.free), "yb_sum": ybsum_n,
                 "P": Z["phi"][e] + Z["dphi"][e]}
        for l in spec.free:
            row["phi_l2_%d" % l] = norm2(s.phi[l], "L2", h)
            noise["phi_l2_%d" % l] = Z["phi"][l]
        row["noise"] = noise
        out.append(row)
        prev = s
    return out


def check_dominance(traj, ledger, h=None):
    """Compare realized quantities with the closed-form bounds at every slice."""
    rows = []
    for real in realized_sequences(traj, ledger, h):
        b = apriori_bounds(ledger, real["t"] - traj.t0).as_dict()
        for key, val in real.items():
            if key in ("k", "t", "noise"):
                continue
            allow = float(real["noise"][key])
            rows.append({"k": real["k"], "t": real["t"], "id": key, "lhs": val, "rhs": b[key],
                         "margin": b[key] - val, "allow": allow,
                         "ok": bool(val <= b[key] + allow)})
    return AuditReport(rows, 0.0)


def audit_solvability(traj, ledger, V, phi_min, h=None):
    """Largest attained/bound ratio for each inequality of the solvability bounds."""
    spec = ledger.spec
    d = spec.d
    n = traj.slices[0].phi.shape[1]
    h = h or 1.0 / (n - 1)
    dt = traj.dt
    bounds = [apriori_bounds(ledger, s.t - traj.t0).as_dict() for s in traj.slices]
    vals = [v for b in bounds for k, v in b.items() if k != "t_elapsed"]
    Cbig = max(max(vals), max(math.sqrt(v) for v in vals))
    top = 1.0 - (d - 1) * phi_min
    att = {k: 0.0 for k in ("sum_v_L2", "sum_dv_L2", "phi_box", "phi_H1", "sum_phi_H2",
                            "sum_Dphi_L2", "w_H2", "sum_Dw_H1")}
    sv = sdv = 0.0
    sphi = np.zeros(d)
    sDphi = np.zeros(d)
    ns = d - 1
    sDw = np.zeros(ns)
    prev = None
    for s in traj.slices:
        sv += norm2(s.v, "L2", h) * dt
        sdv += norm2(s.v, "H1semi", h) * dt
        att["sum_v_L2"] = max(att["sum_v_L2"], sv / V**2)
        att["sum_dv_L2"] = max(att["sum_dv_L2"], sdv / V**2)
        lo, hi = float(np.min(s.phi)), float(np.max(s.phi))
        att["phi_box"] = max(att["phi_box"], phi_min / lo if lo > 0 else math.inf, hi / top)
        for l in range(d):
            att["phi_H1"] = max(att["phi_H1"], math.sqrt(norm2(s.phi[l], "H1", h)) / Cbig)
        for m in range(ns):
            att["w_H2"] = max(att["w_H2"], math.sqrt(norm2(s.w[m], "H2", h)) / Cbig)
        if prev is not None:
            for l in range(d):
                sphi[l] += norm2(s.phi[l], "H2", h) * dt
                sDphi[l] += norm2((s.phi[l] - prev.phi[l]) / dt, "L2", h) * dt
            for m in range(ns):
                sDw[m] += norm2((s.w[m] - prev.w[m]) / dt, "H1", h) * dt
            att["sum_phi_H2"] = max(att["sum_phi_H2"], float(np.max(sphi)) / Cbig)
            att["sum_Dphi_L2"] = max(att["sum_Dphi_L2"], float(np.max(sDphi)) / Cbig)
            att["sum_Dw_H1"] = max(att["sum_Dw_H1"], float(np.max(sDw)) / Cbig)
        prev = s
    rows = [{"id": k, "ratio": v, "ok": bool(v <= 1.0), "bound": Cbig} for k, v in att.items()]
    rep = AuditReport(rows, 0.0)
    rep.C = Cbig
    rep.budget = (sv, sdv)
    return rep
