"""
Rothe time stepping: one linear elliptic solve per unknown per slice, all
coefficients frozen at the previous slice.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .discretization import Grid, State, cumtrapz, diff1, diff2, norm2
from .elliptic import EllipticError, LinearBVP, initial_velocity, solve_fd
from .model import ModelError, validate_model


REACHED_TMAX = "ReachedTmax"
BUDGET_L2 = "VelocityBudgetL2"
BUDGET_H1 = "VelocityBudgetH1"
PHI_FLOOR = "PhiFloor"
SOLVER_FAILURE = "SolverFailure"


class StepError(RuntimeError):
    """Raised inside a slice; ``reason`` is the stop reason it maps to."""

    def __init__(self, msg, reason=SOLVER_FAILURE):
        super().__init__(msg)
        self.reason = reason


@dataclass
class StepperConfig:
    dt: float
    V: float
    phi_min: float
    grid: Grid
    t0: float = 0.0
    t_max: float = 1.0
    # optional certified step cap from the feasibility scan
    step_cap: float = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive, got %r" % (self.dt,))
        if not self.V > 0:
            raise ValueError("V must be positive, got %r" % (self.V,))
        if not self.t_max > self.t0:
            raise ValueError("t_max must exceed t0")
        if not self.phi_min > 0:
            raise ValueError("phi_min must be positive")

    @property
    def n_slices(self):
        return int(math.ceil((self.t_max - self.t0) / self.dt - 1e-9))


@dataclass
class Trajectory:
    slices: list
    stop_reason: str
    T_dt: float
    sum_l2: list
    sum_h1: list
    dt: float
    t0: float
    rejected: object = None
    message: str = ""
    flags: list = field(default_factory=list)

    @property
    def running_sums(self):
        return {"L2": self.sum_l2[-1], "H1": self.sum_h1[-1]}

    def times(self):
        return np.array([s.t for s in self.slices])

    def stack(self, name):
        return np.array([getattr(s, name) for s in self.slices])


def pospart(x):
    return np.maximum(x, 0.0) if isinstance(x, np.ndarray) else max(float(x), 0.0)


class Frozen:

    """Coefficients evaluated once on the nodal fractions of one slice."""

    def __init__(self, spec, phi):
        self.spec = spec
        self.phi = phi
        self.cache = {}

    def __call__(self, fam, *idx):
        key = (fam,) + idx
        if key not in self.cache:
            c = self.spec.coeffs.get(fam, *idx)
            if c.is_zero:
                self.cache[key] = np.zeros(self.phi.shape[1])
            else:
                self.cache[key] = np.asarray(c(self.phi), dtype=float)
        return self.cache[key]


def _coeffs(prev, spec, frozen):
    return frozen if frozen is not None else Frozen(spec, prev.phi)


def update_height(prev, spec, cfg, frozen=None):
    """Boundary height from the previous slice's velocity and fluid influx."""
    fr = _coeffs(prev, spec, frozen)
    d = spec.d
    G1 = fr("Gamma")[-1]
    if not G1 > 0:
        raise StepError("Gamma=%g at z=1 is not positive" % G1, PHI_FLOOR)
    influx = spec.jhat[d - 1] * pospart(spec.phi_res[d - 1] - prev.phi[d - 1, -1]) / G1
    return prev.W + cfg.dt * (prev.v[-1] + influx)


def step_w(prev, spec, cfg, W_new, frozen=None):
    """
    Displacements at the new slice.  Returns (w_new, boundary slope at z=1).

    The unknown is the increment dw = w^k - w^{k-1}; its z=1 row carries the
    solver's own boundary slope of w^{k-1} so the Robin condition holds
    exactly for w^k at every slice.
    """
    fr = _coeffs(prev, spec, frozen)
    ns = spec.d - 1
    grid = cfg.grid
    h, dt = grid.h, cfg.dt
    n = grid.n
    w, v = prev.w, prev.v
    dw_prev = diff1(w, h)
    kap = spec.bigD * dt + spec.gamma

    Enod = np.zeros((n, ns, ns))
    f = np.zeros((ns, n))
    for m in range(ns):
        rhs = fr("G_w", m) - fr("F", m) * v + spec.bigD[m] * diff2(w[m], h)
        flux = np.zeros(n)
        for j in range(ns):
            flux += fr("E", m, 0, 0, j) * w[j] + fr("E", m, 1, 0, j) * dw_prev[j]
            Enod[:, m, j] = fr("E", m, 0, 1, j) / kap[m]
        rhs -= diff1(flux, h)
        f[m] = -dt * rhs / kap[m]

    dirichlet = np.zeros(ns)
    for m in range(ns):
        if spec.jhat[m] == 0.0:
            continue
        H0 = fr("H", 1, m)[0]
        if not H0 > 0:
            raise StepError("non-positive boundary coefficient: H.1.%d=%g at z=0" % (m, H0))
        dirichlet[m] = dt * spec.jhat[m] * pospart(spec.phi_res[m] - prev.phi[m, 0]) / H0

    A = spec.robinA
    g_prev = prev.w_dz1 if prev.w_dz1 is not None else np.zeros(ns)
    Cp = A * (w[:, -1] - W_new) - g_prev
    bvp = LinearBVP(ns, Enod, 1.0 / kap, f,
                    A_plus=-np.diag(A), B_plus=np.eye(ns),
                    A_minus=np.eye(ns), B_minus=np.zeros((ns, ns)),
                    C_plus=Cp, C_minus=dirichlet)
    try:
        inc = solve_fd(bvp, grid)
    except EllipticError as exc:
        raise StepError("displacement solve failed: %s" % exc)
    w_new = w + inc
    # boundary values exactly as prescribed, no roundoff from the solve
    w_new[:, 0] = w[:, 0] + dirichlet
    g_new = A * (w_new[:, -1] - W_new)
    return w_new, g_new


def step_v(prev, w_new, spec, cfg, frozen=None):
    """Velocity by antidifferentiation from v(0)=0."""
    fr = _coeffs(prev, spec, frozen)
    ns = spec.d - 1
    h, dt = cfg.grid.h, cfg.dt
    Gam = fr("Gamma")
    if not np.all(Gam > 0):
        raise StepError("Gamma is not positive at node %d" % int(np.argmin(Gam)), PHI_FLOOR)
    total = cumtrapz(fr("G_v"), h)
    for m in range(ns):
        S = fr("H", 0, m) * prev.w[m] + fr("H", 1, m) * (w_new[m] - prev.w[m]) / dt
        total -= S - S[0]
    v = total / Gam
    v[0] = 0.0
    return v


def _neumann_laplacian(u, h):
    """Second difference with mirrored ghosts, the solver's own Neumann closure."""
    out = np.empty_like(u)
    out[..., 1:-1] = (u[..., 2:] - 2 * u[..., 1:-1] + u[..., :-2]) / h**2
    out[..., 0] = 2 * (u[..., 1] - u[..., 0]) / h**2
    out[..., -1] = 2 * (u[..., -2] - u[..., -1]) / h**2
    return out


def step_phi(prev, w_new, spec, cfg, frozen=None):
    """Free fractions by Neumann solves; the eliminated one from the sum rule."""
    fr = _coeffs(prev, spec, frozen)
    ns = spec.d - 1
    grid = cfg.grid
    h, dt = grid.h, cfg.dt
    phi = prev.phi
    rate = (w_new - prev.w) / dt
    flow = diff1(fr("Gamma") * prev.v, h)
    out = np.empty_like(phi)
    lap = _neumann_laplacian(phi, h)
    for l in spec.free:
        rhs = fr("G_phi", l) - fr("I", l) * flow
        div = np.zeros(grid.n)
        for m in range(ns):
            rhs -= fr("B", l, 0, 0, m) * prev.w[m] + fr("B", l, 0, 1, m) * rate[m]
            div += fr("B", l, 1, 0, m) * prev.w[m] + fr("B", l, 1, 1, m) * rate[m]
        rhs -= diff1(div, h)
        dl = spec.delta[l]
        # increment form: a state with zero forcing is reproduced bit for bit
        bvp = LinearBVP(1, None, [1.0 / (dl * dt)], (-rhs / dl - lap[l])[None],
                        A_plus=[[0.0]], B_plus=[[1.0]], A_minus=[[0.0]], B_minus=[[1.0]],
                        C_plus=[0.0], C_minus=[0.0])
        try:
            out[l] = phi[l] + solve_fd(bvp, grid)[0]
        except EllipticError as exc:
            raise StepError("fraction solve for component %d failed: %s" % (l, exc))
    out[spec.eliminated] = 1.0 - out[spec.free].sum(axis=0)
    return out


def advance(prev, spec, cfg):
    """One full slice; the height only needs previous data so it goes first."""
    fr = Frozen(spec, prev.phi)
    W_new = update_height(prev, spec, cfg, fr)
    w_new, g_new = step_w(prev, spec, cfg, W_new, fr)
    v_new = step_v(prev, w_new, spec, cfg, fr)
    phi_new = step_phi(prev, w_new, spec, cfg, fr)
    k = prev.k + 1
    return State(k, cfg.t0 + k * cfg.dt, phi_new, w_new, v_new, W_new, g_new)


def initial_state(spec, cfg):
    grid = cfg.grid
    ns = spec.d - 1
    phi = np.repeat(spec.phi0[:, None], grid.n, axis=1)
    phi[spec.eliminated] = 1.0 - phi[spec.free].sum(axis=0)
    v0, _ = initial_velocity(spec, grid)
    return State(0, cfg.t0, phi, np.zeros((ns, grid.n)), v0, spec.W0, np.zeros(ns))


def _violation(state, sl2, sh1, cfg):
    if sl2 > cfg.V**2:
        return BUDGET_L2
    if sh1 > cfg.V**2:
        return BUDGET_H1
    if np.min(state.phi) < cfg.phi_min:
        return PHI_FLOOR
    return None


def run(spec, cfg, validate=True):
    if not cfg.phi_min < 1.0 / spec.d:
        raise ValueError("phi_min must lie in (0, 1/d)")
    if validate:
        rep = validate_model(spec)
        if not rep.passed:
            raise ModelError("model validation failed:\n%s" % "\n".join(
                "%s %s" % (c.name, c.detail) for c in rep.failures()))
    flags = []
    if cfg.step_cap is not None and cfg.dt >= cfg.step_cap:
        flags.append("outside certified regime")
    h = cfg.grid.h
    try:
        s0 = initial_state(spec, cfg)
    except EllipticError as exc:
        return Trajectory([], SOLVER_FAILURE, cfg.t0, [0.0], [0.0], cfg.dt, cfg.t0,
                          message=str(exc), flags=flags)
    sl2 = norm2(s0.v, "L2", h) * cfg.dt
    sh1 = norm2(s0.v, "H1semi", h) * cfg.dt
    traj = Trajectory([s0], None, cfg.t0, [sl2], [sh1], cfg.dt, cfg.t0, flags=flags)
    why = _violation(s0, sl2, sh1, cfg)
    if why:
        traj.stop_reason = why
        traj.message = "initial slice already violates the stopping rule"
        return traj

    state = s0
    for k in range(1, cfg.n_slices + 1):
        try:
            new = advance(state, spec, cfg)
        except StepError as exc:
            traj.stop_reason = exc.reason
            traj.message = "slice %d: %s" % (k, exc)
            return traj
        except (EllipticError, FloatingPointError, np.linalg.LinAlgError) as exc:
            traj.stop_reason = SOLVER_FAILURE
            traj.message = "slice %d: %s" % (k, exc)
            return traj
        l2 = sl2 + norm2(new.v, "L2", h) * cfg.dt
        h1 = sh1 + norm2(new.v, "H1semi", h) * cfg.dt
        why = _violation(new, l2, h1, cfg)
        if why:
            traj.stop_reason = why
            traj.rejected = new
            traj.message = "slice %d breaches the stopping rule" % k
            return traj
        sl2, sh1 = l2, h1
        traj.slices.append(new)
        traj.sum_l2.append(sl2)
        traj.sum_h1.append(sh1)
        traj.T_dt = new.t
        state = new
    traj.stop_reason = REACHED_TMAX
    return traj


@dataclass
class ClaimReport:
    rows: list
    passed: bool
    sum_l2: float
    sum_h1: float


def monitor_claim(traj, cfg, d=None):
    """Per-slice budget sums, fraction extremes and their margins."""
    rows = []
    ok = True
    V2 = cfg.V**2
    for s, l2, h1 in zip(traj.slices, traj.sum_l2, traj.sum_h1):
        dd = d or s.phi.shape[0]
        lo, hi = float(np.min(s.phi)), float(np.max(s.phi))
        top = 1.0 - (dd - 1) * cfg.phi_min
        row = {"k": s.k, "t": s.t, "sum_l2": l2, "sum_h1": h1,
               "margin_l2": V2 - l2, "margin_h1": V2 - h1,
               "phi_lo": lo, "phi_hi": hi,
               "margin_floor": lo - cfg.phi_min, "margin_ceiling": top - hi}
        good = (row["margin_l2"] >= 0 and row["margin_h1"] >= 0 and row["margin_floor"] >= 0
                and row["margin_ceiling"] >= -1e-12)
        row["ok"] = good
        ok &= good
        rows.append(row)
    return ClaimReport(rows, ok, traj.sum_l2[-1], traj.sum_h1[-1])
