"""
Linear two-point boundary value systems

    u'' - (E(z) u)' - D u - R(z) u = f(z)   on (0, 1)
    A_- u(0) + B_- u'(0) = C_-,   A_+ u(1) + B_+ u'(1) = C_+

solved by banded finite differences (production) and by a fundamental
matrix integration (independent oracle).  R is an optional zeroth-order
coupling, zero unless given.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded


class EllipticError(RuntimeError):
    pass


@dataclass
class LinearBVP:
    n_sys: int
    E: object            # callable z -> (len(z), ns, ns), array (n, ns, ns) or None
    Dmat: np.ndarray     # (ns,) positive diagonal
    f: object            # callable z -> (ns, len(z)) or array (ns, n)
    A_plus: np.ndarray
    B_plus: np.ndarray
    A_minus: np.ndarray
    B_minus: np.ndarray
    C_plus: np.ndarray
    C_minus: np.ndarray
    R: object = None     # same conventions as E

    def __post_init__(self):
        ns = self.n_sys
        self.Dmat = np.asarray(self.Dmat, dtype=float).reshape(-1)
        if self.Dmat.shape == (ns * ns,):
            self.Dmat = np.diag(self.Dmat.reshape(ns, ns)).copy()
        if self.Dmat.shape != (ns,):
            raise EllipticError("Dmat must be a diagonal of length %d" % ns)
        if np.any(self.Dmat <= 0):
            raise EllipticError("Dmat entries must be positive")
        for k in ("A_plus", "B_plus", "A_minus", "B_minus"):
            setattr(self, k, np.asarray(getattr(self, k), dtype=float).reshape(ns, ns))
        for k in ("C_plus", "C_minus"):
            setattr(self, k, np.asarray(getattr(self, k), dtype=float).reshape(ns))


def _matrix_field(M, z, ns):
    """Evaluate a matrix coefficient at points z -> (len(z), ns, ns)."""
    if M is None:
        return np.zeros((len(z), ns, ns))
    if callable(M):
        out = np.asarray(M(z), dtype=float)
        return np.broadcast_to(out, (len(z), ns, ns)).copy() if out.ndim == 3 else \
            np.broadcast_to(out, (ns, ns))[None].repeat(len(z), 0)
    M = np.asarray(M, dtype=float)
    if M.ndim == 2:
        return np.broadcast_to(M, (len(z), ns, ns)).copy()
    # nodal array: interpolate linearly (extrapolate past the ends)
    nodes = np.linspace(0.0, 1.0, M.shape[0])
    out = np.empty((len(z), ns, ns))
    for a in range(ns):
        for b in range(ns):
            out[:, a, b] = _lin(nodes, M[:, a, b], z)
    return out


def _vector_field(f, z, ns):
    if callable(f):
        return np.asarray(f(z), dtype=float).reshape(ns, len(z))
    f = np.asarray(f, dtype=float).reshape(ns, -1)
    nodes = np.linspace(0.0, 1.0, f.shape[1])
    return np.stack([_lin(nodes, f[a], z) for a in range(ns)])


def _lin(x, y, z):
    out = np.interp(z, x, y)
    lo, hi = z < x[0], z > x[-1]
    if lo.any():
        out[lo] = y[0] + (z[lo] - x[0]) * (y[1] - y[0]) / (x[1] - x[0])
    if hi.any():
        out[hi] = y[-1] + (z[hi] - x[-1]) * (y[-1] - y[-2]) / (x[-1] - x[-2])
    return out


def boundary_block(bvp):
    """The 2n x 2n boundary matrix [[A+ + B+ E(1), B+], [A- + B- E(0), B-]]."""
    ns = bvp.n_sys
    Ez = _matrix_field(bvp.E, np.array([0.0, 1.0]), ns)
    top = np.hstack([bvp.A_plus + bvp.B_plus @ Ez[1], bvp.B_plus])
    bot = np.hstack([bvp.A_minus + bvp.B_minus @ Ez[0], bvp.B_minus])
    return np.vstack([top, bot])


def boundary_determinant(bvp):
    # reported only; with Dirichlet rows (B = 0) this block is always singular
    return float(np.linalg.det(boundary_block(bvp)))


# =============================================================================
# finite differences

def _banded_matvec(ab, l, u, x):
    N = x.shape[0]
    y = np.zeros(N)
    for k in range(-l, u + 1):
        diag = ab[u - k]
        if k >= 0:
            y[:N - k] += diag[k:] * x[k:]
        else:
            y[-k:] += diag[:N + k] * x[:N + k]
    return y


def solve_fd(bvp, grid, return_ghosts=False):
    """
    Central differences at every node with one ghost node beyond each end.

    Unknowns are interleaved by node (ghost, 0, ..., n-1, ghost); the
    boundary rows sit in the ghost blocks.  Returns an (ns, n) array.
    """
    ns, n, h = bvp.n_sys, grid.n, grid.h
    z = grid.z
    zg = np.concatenate([[-h], z, [1.0 + h]])
    if callable(bvp.E) or bvp.E is None or np.ndim(bvp.E) == 2:
        E = _matrix_field(bvp.E, zg, ns)
    else:
        En = np.asarray(bvp.E, dtype=float)
        E = np.concatenate([(2 * En[0] - En[1])[None], En, (2 * En[-1] - En[-2])[None]])
    if callable(bvp.R) or bvp.R is None or np.ndim(bvp.R) == 2:
        R = _matrix_field(bvp.R, z, ns)
    else:
        R = np.asarray(bvp.R, dtype=float)
    f = _vector_field(bvp.f, z, ns) if callable(bvp.f) else np.asarray(bvp.f, float).reshape(ns, n)

    N = (n + 2) * ns
    bw = 3 * ns - 1
    ab = np.zeros((2 * bw + 1, N))
    rhs = np.zeros(N)

    def put(r, c, val):
        ab[bw + r - c, c] += val

    # PDE rows: node i lives in block i+1
    for i in range(n):
        blk = i + 1
        for a in range(ns):
            r = blk * ns + a
            rhs[r] = f[a, i]
            put(r, (blk - 1) * ns + a, 1.0 / h**2)
            put(r, (blk + 1) * ns + a, 1.0 / h**2)
            put(r, blk * ns + a, -2.0 / h**2 - bvp.Dmat[a])
            for b in range(ns):
                # -(E u)' with E at ghost-padded index i+1
                put(r, (blk + 1) * ns + b, -E[i + 2, a, b] / (2 * h))
                put(r, (blk - 1) * ns + b, E[i, a, b] / (2 * h))
                put(r, blk * ns + b, -R[i, a, b])

    # left boundary rows in block 0: A- u_0 + B- (u_1 - u_{-1}) / 2h = C-
    for a in range(ns):
        r = a
        rhs[r] = bvp.C_minus[a]
        for b in range(ns):
            put(r, 1 * ns + b, bvp.A_minus[a, b])
            put(r, 2 * ns + b, bvp.B_minus[a, b] / (2 * h))
            put(r, 0 * ns + b, -bvp.B_minus[a, b] / (2 * h))
    # right boundary rows in block n+1
    for a in range(ns):
        r = (n + 1) * ns + a
        rhs[r] = bvp.C_plus[a]
        for b in range(ns):
            put(r, n * ns + b, bvp.A_plus[a, b])
            put(r, (n + 1) * ns + b, bvp.B_plus[a, b] / (2 * h))
            put(r, (n - 1) * ns + b, -bvp.B_plus[a, b] / (2 * h))

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            x = solve_banded((bw, bw), ab, rhs)
    except (np.linalg.LinAlgError, ValueError, RuntimeWarning) as exc:
        raise EllipticError("finite-difference system is singular (%s); boundary block "
                            "determinant %.3e" % (exc, boundary_determinant(bvp)))
    if not np.all(np.isfinite(x)):
        raise EllipticError("finite-difference solve produced non-finite values; boundary "
                            "block determinant %.3e" % boundary_determinant(bvp))

    res = _banded_matvec(ab, bw, bw, x) - rhs
    scale = max(np.max(np.abs(rhs)), np.max(np.abs(x)) / h**2, 1e-300)
    if np.max(np.abs(res)) > 1e-10 * scale:
        # one step of iterative refinement before giving up
        x = x - solve_banded((bw, bw), ab, res)
        res = _banded_matvec(ab, bw, bw, x) - rhs
        if np.max(np.abs(res)) > 1e-10 * scale:
            raise EllipticError("finite-difference residual %.3e exceeds tolerance"
                                % np.max(np.abs(res)))
    u = x.reshape(n + 2, ns).T
    if return_ghosts:
        return u[:, 1:-1].copy(), u[:, 0].copy(), u[:, -1].copy()
    return u[:, 1:-1].copy()


# =============================================================================
# fundamental matrix

def solve_fundamental(bvp, grid, rk_steps=4):
    """
    Integrate the first-order form y = (u, U), U = u' - E u:

        y' = [[E, I], [D + R, 0]] y + (0, f)

    as y(z) = Psi(z) (c + J(z)), with Psi' = M Psi, Psi(0) = I, the inverse
    Phi' = -Phi M and J' = Phi (0, f), all by classical RK4.  The constant
    c comes from the two boundary rows.
    """
    ns, n, h = bvp.n_sys, grid.n, grid.h
    tr = _matrix_field(bvp.E, grid.z, ns)
    tr = np.abs(np.trace(tr, axis1=1, axis2=2))
    if np.min(tr) == 0.0:
        # the closed form is still valid; only noted
        pass
    I = np.eye(ns)
    Dm = np.diag(bvp.Dmat)

    def M(zs):
        Ez = _matrix_field(bvp.E, zs, ns)
        Rz = _matrix_field(bvp.R, zs, ns)
        out = np.zeros((len(zs), 2 * ns, 2 * ns))
        out[:, :ns, :ns] = Ez
        out[:, :ns, ns:] = I
        out[:, ns:, :ns] = Dm + Rz
        return out

    def b(zs):
        out = np.zeros((len(zs), 2 * ns))
        out[:, ns:] = _vector_field(bvp.f, zs, ns).T
        return out

    hs = h / rk_steps
    m = (n - 1) * rk_steps
    zs0 = np.arange(m) * hs
    Mk = [M(zs0), M(zs0 + hs / 2), M(zs0 + hs)]
    bk = [b(zs0), b(zs0 + hs / 2), b(zs0 + hs)]

    Psi = np.eye(2 * ns)
    Phi = np.eye(2 * ns)
    J = np.zeros(2 * ns)
    Psis = [Psi.copy()]
    Js = [J.copy()]
    for s in range(m):
        M0, Mh, M1 = Mk[0][s], Mk[1][s], Mk[2][s]
        b0, bh, b1 = bk[0][s], bk[1][s], bk[2][s]
        # Psi
        k1 = M0 @ Psi
        k2 = Mh @ (Psi + hs / 2 * k1)
        k3 = Mh @ (Psi + hs / 2 * k2)
        k4 = M1 @ (Psi + hs * k3)
        Psi_n = Psi + hs / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        # Phi and J together
        p1 = -Phi @ M0
        j1 = Phi @ b0
        P2 = Phi + hs / 2 * p1
        p2 = -P2 @ Mh
        j2 = P2 @ bh
        P3 = Phi + hs / 2 * p2
        p3 = -P3 @ Mh
        j3 = P3 @ bh
        P4 = Phi + hs * p3
        p4 = -P4 @ M1
        j4 = P4 @ b1
        Phi = Phi + hs / 6 * (p1 + 2 * p2 + 2 * p3 + p4)
        J = J + hs / 6 * (j1 + 2 * j2 + 2 * j3 + j4)
        Psi = Psi_n
        if (s + 1) % rk_steps == 0:
            Psis.append(Psi.copy())
            Js.append(J.copy())

    Ez = _matrix_field(bvp.E, np.array([0.0, 1.0]), ns)
    Rm = np.hstack([bvp.A_minus + bvp.B_minus @ Ez[0], bvp.B_minus])
    Rp = np.hstack([bvp.A_plus + bvp.B_plus @ Ez[1], bvp.B_plus])
    P1 = Psis[-1]
    K = np.vstack([Rp @ P1, Rm])
    rhs = np.concatenate([bvp.C_plus - Rp @ P1 @ Js[-1], bvp.C_minus])
    cond = np.linalg.cond(K)
    if not np.isfinite(cond) or cond > 1e12:
        raise EllipticError("boundary block is numerically singular (condition %.3e); "
                            "use solve_fd instead" % cond)
    c = np.linalg.solve(K, rhs)
    Y = np.stack([P @ (c + Jz) for P, Jz in zip(Psis, Js)])
    return Y[:, :ns].T.copy()


def fundamental_matrix(bvp, grid, rk_steps=4):
    """Psi at the grid nodes, shape (n, 2ns, 2ns); Psi[0] is the identity."""
    ns = bvp.n_sys
    I = np.eye(ns)
    Dm = np.diag(bvp.Dmat)
    hs = grid.h / rk_steps

    def M(z):
        Ez = _matrix_field(bvp.E, np.array([z]), ns)[0]
        Rz = _matrix_field(bvp.R, np.array([z]), ns)[0]
        return np.block([[Ez, I], [Dm + Rz, np.zeros((ns, ns))]])

    Psi = np.eye(2 * ns)
    out = [Psi.copy()]
    z = 0.0
    for i in range(grid.n - 1):
        for _ in range(rk_steps):
            k1 = M(z) @ Psi
            k2 = M(z + hs / 2) @ (Psi + hs / 2 * k1)
            k3 = M(z + hs / 2) @ (Psi + hs / 2 * k2)
            k4 = M(z + hs) @ (Psi + hs * k3)
            Psi = Psi + hs / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            z += hs
        out.append(Psi.copy())
    return np.array(out)


def trace_condition(bvp, grid):
    """min_z |Tr E(z)|; a warning is issued by callers when it vanishes."""
    Ez = _matrix_field(bvp.E, grid.z, bvp.n_sys)
    return float(np.min(np.abs(np.trace(Ez, axis1=1, axis2=2))))


# =============================================================================
# velocity at the initial time

def initial_velocity(spec, grid):
    """
    Velocity v0 and displacement rate w_dot0 at t0, where phi is the uniform
    initial state and w vanishes.

    Integrating the velocity equation from z=0 gives
        Gamma v = G_v z - sum_j H_1j (w_dot_j - w_dot_j(0)),
    which is substituted into the displacement equations to get one
    (d-1)-component BVP for w_dot.  Row z=0 is the influx condition, row
    z=1 is the time derivative of the Robin condition.
    """
    d = spec.d
    ns = d - 1
    c = spec.coeffs
    phi0 = spec.phi0
    Gam = c.get("Gamma")(phi0)
    if Gam == 0.0:
        raise EllipticError("Gamma vanishes at the initial fractions; initial velocity undefined")
    H1 = np.array([c.get("H", 1, m)(phi0) for m in range(ns)])
    F = np.array([c.get("F", m)(phi0) for m in range(ns)])
    Gw = np.array([c.get("G_w", m)(phi0) for m in range(ns)])
    Gv = c.get("G_v")(phi0)
    E01 = np.array([[c.get("E", m, 0, 1, j)(phi0) for j in range(ns)] for m in range(ns)])
    gam = spec.gamma
    A = spec.robinA

    # Dirichlet values of w_dot at z=0
    w0 = np.zeros(ns)
    for m in range(ns):
        flux = spec.jhat[m] * max(spec.phi_res[m] - phi0[m], 0.0)
        if H1[m] == 0.0:
            if flux != 0.0:
                raise EllipticError("coefficient H.1.%d vanishes at the initial fractions "
                                    "while component %d has influx" % (m, m))
            warnings.warn("H.1.%d vanishes at the initial fractions; using zero boundary rate" % m)
            continue
        w0[m] = flux / H1[m]

    jd = spec.jhat[d - 1] * max(spec.phi_res[d - 1] - phi0[d - 1], 0.0)
    anchor = H1 @ w0

    Ebvp = E01 / gam[:, None]
    R = -np.outer(F, H1) / (Gam * gam[:, None])
    z = grid.z
    f = ((-Gw[:, None] + (F[:, None] / Gam) * (Gv * z[None, :] + anchor)) / gam[:, None])

    Ap = -np.diag(A) - np.outer(A, H1) / Gam
    Cp = -A * (Gv + anchor + jd) / Gam
    bvp = LinearBVP(ns, Ebvp, 1.0 / gam, f,
                    A_plus=Ap, B_plus=np.eye(ns), A_minus=np.eye(ns), B_minus=np.zeros((ns, ns)),
                    C_plus=Cp, C_minus=w0, R=R)
    wdot = solve_fd(bvp, grid)
    wdot[:, 0] = w0
    v0 = (Gv * z - H1 @ (wdot - w0[:, None])) / Gam
    v0[0] = 0.0
    return v0, wdot
