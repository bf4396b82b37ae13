"""Uniform grid on [0,1], finite-difference operators and discrete norms."""

from dataclasses import dataclass, field

import numpy as np


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    n: int

    def __post_init__(self):
        if self.n < 3:
            raise GridError("a grid needs at least 3 nodes, got %d" % self.n)

    @property
    def h(self):
        return 1.0 / (self.n - 1)

    @property
    def z(self):
        # linspace pins both endpoints exactly
        return np.linspace(0.0, 1.0, self.n)


@dataclass
class Field:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n,):
            raise GridError("field has %s values on a grid of %d nodes"
                            % (self.values.shape, self.grid.n))
        if not np.all(np.isfinite(self.values)):
            raise GridError("field values must be finite")


@dataclass
class State:

    """One time slice: fractions (d,n), displacements (d-1,n), velocity (n,)."""

    k: int
    t: float
    phi: np.ndarray
    w: np.ndarray
    v: np.ndarray
    W: float
    # boundary slope of w at z=1 as seen by the solver (Robin row)
    w_dz1: np.ndarray = field(default=None)

    def copy(self):
        return State(self.k, self.t, self.phi.copy(), self.w.copy(), self.v.copy(), self.W,
                     None if self.w_dz1 is None else self.w_dz1.copy())


def _values(f):
    return f.values if isinstance(f, Field) else np.asarray(f, dtype=float)


def _spacing(f, h):
    if h is not None:
        return h
    if isinstance(f, Field):
        return f.grid.h
    return 1.0 / (np.shape(f)[-1] - 1)


def diff1(f, h=None):
    """First derivative along the last axis, second order everywhere."""
    u = _values(f)
    h = _spacing(f, h)
    if u.shape[-1] < 3:
        raise GridError("diff1 needs at least 3 nodes")
    out = np.empty_like(u)
    out[..., 1:-1] = (u[..., 2:] - u[..., :-2]) / (2 * h)
    # one-sided stencils written in differences so constants give exact zeros
    u0, un = u[..., :1], u[..., -1:]
    out[..., 0] = (4 * (u[..., 1] - u0[..., 0]) - (u[..., 2] - u0[..., 0])) / (2 * h)
    out[..., -1] = (4 * (un[..., 0] - u[..., -2]) - (un[..., 0] - u[..., -3])) / (2 * h)
    return out


def diff2(f, h=None):
    """Second derivative; 3-point inside, 4-point one-sided at the ends."""
    u = _values(f)
    h = _spacing(f, h)
    n = u.shape[-1]
    if n < 3:
        raise GridError("diff2 needs at least 3 nodes")
    out = np.empty_like(u)
    out[..., 1:-1] = (u[..., 2:] - 2 * u[..., 1:-1] + u[..., :-2]) / h**2
    if n == 3:
        out[..., 0] = out[..., 1]
        out[..., -1] = out[..., 1]
    else:
        a, b = u[..., 0], u[..., -1]
        out[..., 0] = (-5 * (u[..., 1] - a) + 4 * (u[..., 2] - a) - (u[..., 3] - a)) / h**2
        out[..., -1] = (-5 * (u[..., -2] - b) + 4 * (u[..., -3] - b) - (u[..., -4] - b)) / h**2
    return out


def trapz(u, h):
    """Trapezoid integral along the last axis."""
    u = np.asarray(u, dtype=float)
    return h * (u.sum(axis=-1) - 0.5 * (u[..., 0] + u[..., -1]))


def inner(f, g, h=None):
    return trapz(_values(f) * _values(g), _spacing(f, h))


def cumtrapz(u, h):
    """Running trapezoid integral from z=0, starting at exactly 0."""
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    out[..., 1:] = np.cumsum(0.5 * h * (u[..., 1:] + u[..., :-1]), axis=-1)
    return out


def norm2(f, kind="L2", h=None):
    """Squared norm, summed over leading axes when f is a stack of fields."""
    u = _values(f)
    h = _spacing(f, h)
    if kind == "L2":
        return float(np.sum(trapz(u * u, h)))
    if kind == "H1semi":
        du = diff1(u, h)
        return float(np.sum(trapz(du * du, h)))
    if kind == "H1":
        return norm2(u, "L2", h) + norm2(u, "H1semi", h)
    if kind == "H2":
        d2 = diff2(u, h)
        return norm2(u, "H1", h) + float(np.sum(trapz(d2 * d2, h)))
    if kind == "Linf":
        return float(np.max(np.abs(u))) ** 2
    raise GridError("unknown norm kind %r" % kind)


def norm(f, kind="L2", h=None):
    return float(np.sqrt(norm2(f, kind, h)))


def dt_quotient(u_k, u_km1, dt):
    if not dt > 0:
        raise GridError("time step must be positive, got %r" % (dt,))
    return (_values(u_k) - _values(u_km1)) / dt
