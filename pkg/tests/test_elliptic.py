import numpy as np
import pytest

from rothe_mixture.discretization import Grid, diff2
from rothe_mixture.elliptic import (EllipticError, LinearBVP, boundary_determinant,
                                    fundamental_matrix, initial_velocity, solve_fd,
                                    solve_fundamental, trace_condition)
from rothe_mixture.model import affine, constant

from conftest import make_spec


def cosine_problem():
    # u'' - u = -(pi^2 + 1) cos(pi z), u(0) = 1, u(1) = -1
    return LinearBVP(1, None, [1.0], lambda z: -(np.pi**2 + 1) * np.cos(np.pi * z)[None],
                     A_plus=[[1.0]], B_plus=[[0.0]], A_minus=[[1.0]], B_minus=[[0.0]],
                     C_plus=[-1.0], C_minus=[1.0])


def test_fd_manufactured_second_order():
    errs = []
    for n in (51, 101, 201):
        g = Grid(n)
        u = solve_fd(cosine_problem(), g)[0]
        errs.append(np.max(np.abs(u - np.cos(np.pi * g.z))))
    assert errs[0] < 1e-3
    r = [errs[i] / errs[i + 1] for i in range(2)]
    assert all(3.5 < x < 4.5 for x in r), r


def test_fundamental_manufactured():
    g = Grid(201)
    u = solve_fundamental(cosine_problem(), g, rk_steps=4)[0]
    assert np.max(np.abs(u - np.cos(np.pi * g.z))) < 1e-8


def test_zero_data_gives_zero():
    bvp = LinearBVP(2, np.zeros((2, 2)), [1.0, 2.0], np.zeros((2, 11)),
                    A_plus=np.eye(2), B_plus=np.eye(2), A_minus=np.eye(2),
                    B_minus=np.zeros((2, 2)), C_plus=[0, 0], C_minus=[0, 0])
    assert np.all(solve_fd(bvp, Grid(11)) == 0.0)
    assert np.max(np.abs(solve_fundamental(bvp, Grid(11)))) < 1e-15


def test_block_diagonal_matches_separate_solves():
    g = Grid(41)
    z = g.z
    f = np.stack([np.sin(3 * z), z**2])
    E = lambda zz: np.array([[[0.3 * t, 0.0], [0.0, -0.2]] for t in zz])
    both = LinearBVP(2, E, [1.0, 4.0], f,
                     A_plus=np.diag([1.0, 0.5]), B_plus=np.eye(2),
                     A_minus=np.eye(2), B_minus=np.zeros((2, 2)),
                     C_plus=[0.1, 0.2], C_minus=[1.0, -1.0])
    u = solve_fd(both, g)
    a = solve_fd(LinearBVP(1, lambda zz: (0.3 * zz)[:, None, None], [1.0], f[:1],
                           A_plus=[[1.0]], B_plus=[[1.0]], A_minus=[[1.0]], B_minus=[[0.0]],
                           C_plus=[0.1], C_minus=[1.0]), g)
    b = solve_fd(LinearBVP(1, [[-0.2]], [4.0], f[1:],
                           A_plus=[[0.5]], B_plus=[[1.0]], A_minus=[[1.0]], B_minus=[[0.0]],
                           C_plus=[0.2], C_minus=[-1.0]), g)
    assert np.max(np.abs(u[0] - a[0])) < 1e-12
    assert np.max(np.abs(u[1] - b[0])) < 1e-12


def test_fundamental_matrix_starts_at_identity():
    bvp = LinearBVP(2, [[0.1, 0.2], [0.0, -0.3]], [1.0, 2.0], np.zeros((2, 5)),
                    A_plus=np.eye(2), B_plus=np.eye(2), A_minus=np.eye(2),
                    B_minus=np.zeros((2, 2)), C_plus=[0, 0], C_minus=[0, 0])
    Psi = fundamental_matrix(bvp, Grid(5))
    assert np.array_equal(Psi[0], np.eye(4))
    assert trace_condition(bvp, Grid(5)) == pytest.approx(0.2)


def test_fd_against_fundamental_on_variable_coefficients():
    g = Grid(201)
    bvp = LinearBVP(1, lambda z: (0.5 * np.sin(z))[:, None, None], [2.0],
                    lambda z: (np.exp(z))[None],
                    A_plus=[[0.3]], B_plus=[[1.0]], A_minus=[[1.0]], B_minus=[[0.0]],
                    C_plus=[0.0], C_minus=[0.5])
    a = solve_fd(bvp, g)
    b = solve_fundamental(bvp, g)
    # the two discretizations differ by the O(h^2) truncation of FD
    assert np.max(np.abs(a - b)) < 1e-4


def test_dmat_must_be_positive():
    with pytest.raises(EllipticError):
        LinearBVP(1, None, [0.0], np.zeros((1, 3)), [[1.0]], [[0.0]], [[1.0]], [[0.0]], [0], [0])


def test_neumann_rows_with_zero_boundary_determinant():
    # the determinant is only a diagnostic; u'' - u = 0 with Neumann rows is
    # uniquely solvable even though the block vanishes
    bvp = LinearBVP(1, None, [1.0], np.zeros((1, 5)), [[0.0]], [[1.0]], [[0.0]], [[1.0]], [0], [0])
    assert boundary_determinant(bvp) == 0.0
    assert np.all(solve_fd(bvp, Grid(5)) == 0.0)


def test_initial_velocity_zero_forcing():
    v0, wdot = initial_velocity(make_spec(), Grid(21))
    assert np.all(v0 == 0.0)
    assert np.all(wdot == 0.0)


def test_initial_velocity_constant_source():
    spec = make_spec(coeffs={("G_v",): constant(0.7)} | {("H", 1, m): constant(0.0) for m in range(2)})
    g = Grid(21)
    # H_1 = 0 is allowed here since no component has influx
    with pytest.warns(UserWarning):
        v0, _ = initial_velocity(spec, g)
    assert np.allclose(v0, 0.7 * g.z, atol=1e-15)


def test_initial_velocity_is_smooth():
    spec = make_spec(coeffs={("G_v",): constant(0.5), ("F", 0): constant(0.3),
                             ("H", 0, 1): constant(0.2), ("G_w", 1): constant(0.4),
                             ("Gamma",): affine(1.0, [0.0, 0.0, 0.5])},
                     robinA=np.array([0.3, 0.1]))
    curv = []
    for n in (51, 101):
        v0, _ = initial_velocity(spec, Grid(n))
        curv.append(np.max(np.abs(diff2(v0))))
    # bounded second difference, no growth under refinement
    assert curv[1] < 1.1 * curv[0] + 1e-12
    assert v0[0] == 0.0
