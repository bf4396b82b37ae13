"""Mixture model definition: coefficient providers, constants, validation."""

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator


class ModelError(ValueError):
    pass


# =============================================================================
# coefficient providers

class Coefficient:

    """
    A scalar function of the fraction vector phi with declared bounds.

    ``sup`` bounds |f| on [0,1]^d and ``lip`` bounds every partial
    derivative there.  Both are declared, never inferred; validate_model
    audits them by sampling.
    """

    def __init__(self, func, sup, lip, kind="custom", params=None):
        self.func = func
        self.sup = float(sup)
        self.lip = float(lip)
        self.kind = kind
        self.params = dict(params or {})

    @property
    def bound(self):
        # one number bounding both the values and the slopes
        return max(self.sup, self.lip)

    @property
    def is_zero(self):
        return self.kind == "constant" and self.params.get("value", None) == 0.0

    def __call__(self, phi):
        phi = np.asarray(phi, dtype=float)
        out = self.func(phi)
        if phi.ndim == 1:
            return float(out)
        return np.broadcast_to(np.asarray(out, dtype=float), phi.shape[1:]).copy()

    def describe(self):
        d = {"kind": self.kind, "sup": self.sup, "lip": self.lip}
        d.update(self.params)
        return d

    def __repr__(self):
        return "Coefficient(%s, sup=%g, lip=%g)" % (self.kind, self.sup, self.lip)


def constant(value, sup=None, lip=None):
    value = float(value)
    return Coefficient(lambda phi: np.full(phi.shape[1:], value) if phi.ndim > 1 else value,
                       abs(value) if sup is None else sup,
                       0.0 if lip is None else lip,
                       kind="constant", params={"value": value})


def affine(const, slope, sup=None, lip=None):
    """const + slope . phi"""
    const = float(const)
    slope = np.asarray(slope, dtype=float)

    def f(phi):
        return const + np.tensordot(slope, phi, axes=(0, 0))

    # extremes over the unit cube sit at corners
    hi = const + slope[slope > 0].sum()
    lo = const + slope[slope < 0].sum()
    s = max(abs(hi), abs(lo))
    L = float(np.max(np.abs(slope))) if slope.size else 0.0
    return Coefficient(f, s if sup is None else sup, L if lip is None else lip,
                       kind="affine", params={"const": const, "slope": slope.tolist()})


def product(scale, powers, sup=None, lip=None):
    """scale * prod_i phi_i**p_i with each p_i = 0 or p_i >= 1."""
    scale = float(scale)
    powers = np.asarray(powers, dtype=float)
    if np.any((powers > 0) & (powers < 1)) or np.any(powers < 0):
        raise ModelError("product powers must be 0 or >= 1 for a Lipschitz provider")

    def f(phi):
        out = np.full(phi.shape[1:], scale) if phi.ndim > 1 else scale
        for i, p in enumerate(powers):
            if p != 0:
                out = out * phi[i] ** p
        return out

    L = abs(scale) * (float(powers.max()) if powers.size else 0.0)
    return Coefficient(f, abs(scale) if sup is None else sup, L if lip is None else lip,
                       kind="product", params={"scale": scale, "powers": powers.tolist()})


def table(values, sup=None, lip=None):
    """Multilinear interpolation of a table on a uniform grid over [0,1]^d."""
    values = np.asarray(values, dtype=float)
    d = values.ndim
    axes = [np.linspace(0.0, 1.0, s) for s in values.shape]
    interp = RegularGridInterpolator(axes, values, method="linear", bounds_error=False,
                                     fill_value=None)

    def f(phi):
        pts = np.clip(np.atleast_2d(phi.reshape(d, -1).T), 0.0, 1.0)
        out = interp(pts)
        return out.reshape(phi.shape[1:]) if phi.ndim > 1 else out[0]

    L = 0.0
    for ax in range(d):
        if values.shape[ax] > 1:
            h = 1.0 / (values.shape[ax] - 1)
            L = max(L, float(np.max(np.abs(np.diff(values, axis=ax)))) / h)
    s = float(np.max(np.abs(values)))
    return Coefficient(f, s if sup is None else sup, L if lip is None else lip,
                       kind="table", params={"shape": list(values.shape)})


def from_config(entry, d, base_dir=None):
    """Build a Coefficient from a config literal or inline table."""
    if isinstance(entry, (int, float)):
        return constant(entry)
    if not isinstance(entry, dict):
        raise ModelError("coefficient entry must be a number or a table, got %r" % (entry,))
    kind = entry.get("kind", "constant")
    sup, lip = entry.get("sup"), entry.get("lip")
    if kind == "constant":
        return constant(entry["value"], sup, lip)
    if kind == "affine":
        slope = entry.get("slope", [0.0] * d)
        if len(slope) != d:
            raise ModelError("affine slope must have length d=%d" % d)
        return affine(entry.get("const", 0.0), slope, sup, lip)
    if kind == "product":
        powers = entry.get("powers")
        if powers is None or len(powers) != d:
            raise ModelError("product powers must have length d=%d" % d)
        return product(entry.get("scale", 1.0), powers, sup, lip)
    if kind == "table":
        if "values" in entry:
            vals = np.asarray(entry["values"], dtype=float)
        else:
            import os
            path = entry["file"]
            if base_dir is not None and not os.path.isabs(path):
                path = os.path.join(base_dir, path)
            vals = np.load(path)
        if vals.ndim != d:
            raise ModelError("table must have d=%d axes" % d)
        return table(vals, sup, lip)
    raise ModelError("unknown coefficient kind %r" % kind)


# families and their index shapes, given d
def family_shapes(d):
    return {
        "I": (d,),
        "Gamma": (),
        "B": (d, 2, 2, d - 1),
        "H": (2, d - 1),
        "F": (d - 1,),
        "E": (d - 1, 2, 2, d - 1),
        "G_phi": (d,),
        "G_v": (),
        "G_w": (d - 1,),
    }


class Coefficients:

    """
    All coefficient functions of the model, one Coefficient per index.

    Access as ``c.get("B", l, i, j, m)``; ``c.bound("B", l, i, j, m)`` gives
    the declared constant used in the ledger.
    """

    def __init__(self, d, entries=None):
        self.d = d
        self.shapes = family_shapes(d)
        self.table = {}
        entries = entries or {}
        zero = constant(0.0)
        for fam, shape in self.shapes.items():
            for idx in itertools.product(*[range(s) for s in shape]):
                self.table[(fam,) + idx] = entries.get((fam,) + idx, zero)

    def get(self, fam, *idx):
        return self.table[(fam,) + tuple(idx)]

    def set(self, fam, idx, coef):
        key = (fam,) + tuple(idx)
        if key not in self.table:
            raise ModelError("no coefficient %s%s for d=%d" % (fam, tuple(idx), self.d))
        self.table[key] = coef

    def bound(self, fam, *idx):
        return self.get(fam, *idx).bound

    def items(self):
        return self.table.items()

    def describe(self):
        return {".".join(str(k) for k in key): c.describe() for key, c in self.table.items()}


def coefficients_from_config(d, section, base_dir=None):
    """
    Resolve every coefficient index from a config table.

    Keys look like "B.0.1.1.0"; a shorter key such as "H.1" or "E" covers
    every index that starts with it.  The longest matching key wins, then
    the "default" entry, then zero.
    """
    section = dict(section or {})
    default = section.pop("default", 0.0)
    parsed = {}
    shapes = family_shapes(d)
    for key in section:
        parts = key.split(".")
        fam = parts[0]
        if fam not in shapes:
            raise ModelError("unknown coefficient family in key %r" % key)
        try:
            idx = tuple(int(p) for p in parts[1:])
        except ValueError:
            raise ModelError("bad coefficient index in key %r" % key)
        if len(idx) > len(shapes[fam]) or any(i < 0 or i >= s for i, s in zip(idx, shapes[fam])):
            raise ModelError("coefficient key %r out of range for d=%d" % (key, d))
        parsed[(fam,) + idx] = key

    coeffs = Coefficients(d)
    cache = {}
    for full in list(coeffs.table):
        chosen = None
        for cut in range(len(full), 0, -1):
            if full[:cut] in parsed:
                chosen = parsed[full[:cut]]
                break
        if chosen is None:
            if default == 0.0:
                continue
            chosen = "default"
        if chosen not in cache:
            entry = default if chosen == "default" else section[chosen]
            cache[chosen] = from_config(entry, d, base_dir)
        coeffs.table[full] = cache[chosen]
    return coeffs


# =============================================================================
# model

@dataclass
class ModelSpec:

    """Dimension, coefficients, constants and initial/reservoir data."""

    d: int
    coeffs: Coefficients
    delta: np.ndarray
    bigD: np.ndarray
    gamma: np.ndarray
    robinA: np.ndarray
    jhat: np.ndarray
    phi_res: np.ndarray
    phi0: np.ndarray
    W0: float = 0.0
    name: str = "model"

    def __post_init__(self):
        for k in ("delta", "bigD", "gamma", "robinA", "jhat", "phi_res", "phi0"):
            setattr(self, k, np.asarray(getattr(self, k), dtype=float))
        self.W0 = float(self.W0)
        expected = {"delta": self.d, "bigD": self.d - 1, "gamma": self.d - 1,
                    "robinA": self.d - 1, "jhat": self.d, "phi_res": self.d, "phi0": self.d}
        for k, n in expected.items():
            if getattr(self, k).shape != (n,):
                raise ModelError("%s must have length %d (d=%d)" % (k, n, self.d))

    @property
    def free(self):
        """Indices of the components solved for (all except d-2, 0-based)."""
        return [l for l in range(self.d) if l != self.d - 2]

    @property
    def eliminated(self):
        return self.d - 2


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""
    worst: object = None


@dataclass
class ValidationReport:
    checks: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def add(self, name, passed, detail="", worst=None):
        self.checks.append(Check(name, bool(passed), detail, worst))

    def failures(self):
        return [c for c in self.checks if not c.passed]

    def __str__(self):
        lines = []
        for c in self.checks:
            lines.append("%-4s %s %s" % ("ok" if c.passed else "FAIL", c.name, c.detail))
        return "\n".join(lines)


def lattice(d, lo, hi, resolution):
    """All points of a uniform lattice on [lo,hi]^d, shape (d, resolution**d)."""
    ax = np.linspace(lo, hi, resolution)
    mesh = np.meshgrid(*([ax] * d), indexing="ij")
    return np.stack([m.ravel() for m in mesh])


def _sample(coef, pts, name):
    vals = np.asarray(coef(pts), dtype=float)
    bad = ~np.isfinite(vals)
    if bad.any():
        i = int(np.argmax(bad))
        raise ModelError("coefficient %s is not finite at phi=%s" % (name, pts[:, i].tolist()))
    return vals


def validate_model(spec, resolution=9):
    """Check structural invariants and audit declared coefficient bounds."""
    if resolution < 2:
        raise ModelError("resolution must be >= 2")
    rep = ValidationReport()
    d = spec.d
    rep.add("dimension", d >= 2, "d=%d" % d)
    for name in ("delta", "bigD", "gamma"):
        arr = getattr(spec, name)
        rep.add("%s positive" % name, np.all(arr > 0), "min=%g" % arr.min(), arr.min())
    rep.add("jhat nonnegative", np.all(spec.jhat >= 0), "min=%g" % spec.jhat.min())
    rep.add("no influx of produced component", spec.jhat[0] == 0.0, "jhat[0]=%g" % spec.jhat[0])
    s = spec.phi_res.sum()
    rep.add("reservoir fractions sum to 1", abs(s - 1.0) <= 1e-12, "sum=%.15g" % s, s)
    rep.add("reservoir fractions in [0,1]",
            np.all((spec.phi_res >= 0) & (spec.phi_res <= 1)), str(spec.phi_res.tolist()))
    s0 = spec.phi0.sum()
    rep.add("initial fractions sum to 1", abs(s0 - 1.0) <= 1e-12, "sum=%.15g" % s0, s0)

    pts = lattice(d, 0.0, 1.0, resolution)
    h = 1.0 / (resolution - 1)
    seen = {}
    for key, coef in spec.coeffs.items():
        name = ".".join(str(k) for k in key)
        if id(coef) in seen:
            # shared provider objects were already audited
            continue
        seen[id(coef)] = name
        vals = _sample(coef, pts, name)
        smax = float(np.max(np.abs(vals)))
        tol = 1e-12 * max(1.0, smax)
        rep.add("sup bound %s" % name, smax <= coef.sup + tol,
                "sampled %.6g vs declared %.6g" % (smax, coef.sup), smax)
        grid = vals.reshape((resolution,) * d)
        slope = 0.0
        for ax in range(d):
            slope = max(slope, float(np.max(np.abs(np.diff(grid, axis=ax)))) / h)
        rep.add("lipschitz bound %s" % name, slope <= coef.lip + 1e-9 * max(1.0, slope),
                "sampled %.6g vs declared %.6g" % (slope, coef.lip), slope)
    return rep


@dataclass
class InfimumReport:
    alpha: float
    gamma_alpha: float
    h_alpha: float
    gamma_raw: float
    h_raw: float
    margin_gamma: float
    margin_h: float

    @property
    def violated(self):
        # positivity requirement on both lower bounds
        return not (self.gamma_alpha > 0 and self.h_alpha > 0)

    @property
    def flag(self):
        return "positivity of Gamma or H.1 violated" if self.violated else ""

    def __iter__(self):
        return iter((self.gamma_alpha, self.h_alpha))


def infimum_bounds(spec, alpha, resolution=33):
    """
    Lower bounds of Gamma and min_m H_1m over the box (alpha, 1-(d-1)alpha)^d.

    The sampled lattice minimum is reduced by lip * d * h / 2, the largest
    change between any box point and its nearest lattice point.
    """
    d = spec.d
    if not (0 < alpha < 1.0 / d):
        raise ModelError("alpha must lie in (0, 1/d)")
    lo, hi = alpha, 1.0 - (d - 1) * alpha
    pts = lattice(d, lo, hi, resolution)
    hl = (hi - lo) / (resolution - 1)

    g = spec.coeffs.get("Gamma")
    graw = float(np.min(_sample(g, pts, "Gamma")))
    gmar = g.lip * d * hl / 2
    hraw, hmar = np.inf, 0.0
    best = np.inf
    for m in range(d - 1):
        c = spec.coeffs.get("H", 1, m)
        raw = float(np.min(_sample(c, pts, "H.1.%d" % m)))
        mar = c.lip * d * hl / 2
        if raw - mar < best:
            best = raw - mar
            hraw, hmar = raw, mar
    return InfimumReport(alpha, graw - gmar, hraw - hmar, graw, hraw, gmar, hmar)


def probe(coef):
    """Wrap a coefficient so that every argument it is called with is recorded."""
    calls = []

    def f(phi):
        calls.append(np.array(phi, copy=True))
        return coef.func(phi)

    out = Coefficient(f, coef.sup, coef.lip, kind="probe", params={"inner": coef.kind})
    out.calls = calls
    return out
