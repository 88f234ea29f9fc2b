"""Assembly invariants and the MINI route for the stabilized scheme."""

import numpy as np
import pytest
import scipy.sparse as sp

from stokeslab.corners import ExactStokes, corner_pairs
from stokeslab.meshing import (MeshHierarchy, build_initial_domain,
                               refine_uniform)
from stokeslab.stokes import (StokesOperators, assemble_mini, assemble_stokes,
                              divergence_matrix, energy_defect,
                              export_matrix_coo, interpolate_velocity,
                              mini_delta, read_matrix_coo, scalar_stiffness,
                              solve_direct)


def _lshape(level):
    mesh = build_initial_domain("lshape_3_2pi")
    for _ in range(level):
        mesh = refine_uniform(mesh)
    return mesh


def test_stiffness_kernel_and_linear_energy():
    mesh = _lshape(2)
    k = scalar_stiffness(mesh)
    assert abs(k - k.T).max() < 1e-14
    # constants are in the kernel, and |grad(ax + by)|^2 integrates exactly
    ones = np.ones(mesh.num_vertices)
    assert np.abs(k @ ones).max() < 1e-13
    lin = 2.0 * mesh.vertices[:, 0] - 0.5 * mesh.vertices[:, 1]
    area = mesh.areas().sum()
    assert lin @ (k @ lin) == pytest.approx((4.0 + 0.25) * area, rel=1e-13)


def test_divergence_total_flux():
    mesh = refine_uniform(build_initial_domain("square"))
    b = divergence_matrix(mesh)
    u = interpolate_velocity(mesh, lambda xy: xy)  # div = 2
    assert b.sum(axis=0) @ u == pytest.approx(-2.0, rel=1e-13)
    # rigid rotation is divergence free elementwise
    rot = interpolate_velocity(
        mesh, lambda xy: np.stack([-xy[..., 1], xy[..., 0]], axis=-1))
    assert np.abs(b @ rot).max() < 1e-14


def test_mini_delta_on_right_isosceles():
    # every triangle of the criss-cross families is right isosceles, where
    # the condensed bubble parameter collapses to the single number 1/160
    for mesh in (_lshape(2), refine_uniform(build_initial_domain("square"))):
        assert np.abs(mini_delta(mesh) - 1.0 / 160.0).max() < 1e-14


def _pw_const_load(pts):
    out = np.zeros(pts.shape[:-1] + (2,))
    left = pts[..., 0] < 0.0
    out[..., 0] = np.where(left, 1.5, -0.25)
    out[..., 1] = np.where(left, -0.75, 2.0)
    return out


def test_mini_condensation_reproduces_pspg():
    mesh = _lshape(2)
    for gamma in [(0.0, 0.0), (0.2, -0.1)]:
        mini = assemble_mini(mesh, gamma=gamma, f=_pw_const_load)
        c_mini, f_mini = mini.condense()
        base = mini.base
        assert abs(c_mini - base.c_mat).max() < 1e-13
        assert np.abs(f_mini - base.f_st).max() < 1e-13


@pytest.mark.parametrize("gamma", [(0.0, 0.0), (0.2, -0.1)])
def test_mini_solution_matches_pspg(gamma):
    # the two assembly routes must agree in exact arithmetic for
    # elementwise-constant loads; 1e-10 covers the two direct solves
    mesh = _lshape(2)
    mini = assemble_mini(mesh, gamma=gamma, f=_pw_const_load)
    u_mini, p_mini, _ = mini.solve()
    system = assemble_stokes(mesh, gamma=gamma, stab="pspg",
                             f=_pw_const_load)
    u, p = solve_direct(system)
    assert np.abs(u - u_mini).max() < 1e-10
    assert np.abs(p - p_mini).max() < 1e-10


def test_layer_scaling_enters_system():
    mesh = _lshape(1)
    ops = StokesOperators(mesh)
    s0 = ops.system((0.0, 0.0))
    s1 = ops.system((0.3, -0.2))
    diff = s1.k_free - (ops.k0 - 0.3 * ops.kl1 + 0.2 * ops.kl2)
    assert abs(diff).max() < 1e-14
    cdiff = s1.c_mat - (ops.c0 + (1 / 0.7 - 1) * ops.cl1
                        + (1 / 1.2 - 1) * ops.cl2)
    assert abs(cdiff).max() < 1e-14
    assert abs(s0.k_free - ops.k0).max() == 0.0


def test_gamma_requires_corner_and_ball():
    mesh = refine_uniform(build_initial_domain("square"))
    with pytest.raises(ValueError):
        assemble_stokes(mesh, gamma=(0.1, 0.0))
    with pytest.raises(ValueError):
        assemble_stokes(_lshape(1), gamma=(1.0, 0.0))


def test_saddle_matrix_symmetric_and_mode():
    system = assemble_stokes(_lshape(1), gamma=(0.1, -0.1), stab="pspg")
    k = system.saddle_matrix()
    assert abs(k - k.T).max() < 1e-14
    assert system.pressure_mode == "mean"
    chan = assemble_stokes(build_initial_domain("channel"))
    assert chan.pressure_mode == "free"


def test_dirichlet_rows_identity():
    mesh = _lshape(1)
    lift = lambda xy: np.stack([xy[..., 1], -xy[..., 0]], axis=-1)
    system = assemble_stokes(mesh, dirichlet_data=lift)
    u, _ = solve_direct(system)
    nv = mesh.num_vertices
    dv = system.ops.dirichlet_vertices
    want = lift(mesh.vertices[dv])
    assert np.abs(u[dv] - want[:, 0]).max() < 1e-12
    assert np.abs(u[dv + nv] - want[:, 1]).max() < 1e-12


def _poly_g(t):
    return (t - t ** 2) ** 2


def _poly_dg(t):
    return 2 * (t - t ** 2) * (1 - 2 * t)


def _poly_d2g(t):
    return 2 * (1 - 6 * t + 6 * t ** 2)


class _PolyExact:
    """Separable no-slip field on the unit square, zero-mean pressure."""

    energy = 4.0 / 1225.0

    def velocity(self, xy):
        x, y = xy[..., 0], xy[..., 1]
        return np.stack([_poly_g(x) * _poly_dg(y),
                         -_poly_dg(x) * _poly_g(y)], axis=-1)

    def velocity_gradient(self, xy):
        x, y = xy[..., 0], xy[..., 1]
        out = np.empty(xy.shape[:-1] + (2, 2))
        out[..., 0, 0] = _poly_dg(x) * _poly_dg(y)
        out[..., 0, 1] = _poly_g(x) * _poly_d2g(y)
        out[..., 1, 0] = -_poly_d2g(x) * _poly_g(y)
        out[..., 1, 1] = -_poly_dg(x) * _poly_dg(y)
        return out

    def pressure(self, xy):
        return xy[..., 0] ** 3 * xy[..., 1] - 0.125


def _poly_load(pts):
    x, y = pts[..., 0], pts[..., 1]
    d3 = lambda t: 24 * t - 12
    f1 = -_poly_d2g(x) * _poly_dg(y) - _poly_g(x) * d3(y) + 3 * x ** 2 * y
    f2 = d3(x) * _poly_g(y) + _poly_dg(x) * _poly_d2g(y) + x ** 3
    return np.stack([f1, f2], axis=-1)


@pytest.mark.parametrize("stab,gamma", [("pressure_laplacian", (0.0, 0.0)),
                                        ("pspg", (0.3, -0.2))])
def test_energy_defect_forms_agree(stab, gamma):
    # the expanded error form and the energy-driven root form coincide
    # for the homogeneous Dirichlet problem; only quadrature of the
    # degree-8 load limits the match, at O(h^6)
    from stokeslab.meshing import DIRICHLET, TriMesh

    v = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    t = np.array([[0, 1, 2], [0, 2, 3]])
    be = np.array([[0, 1, DIRICHLET], [1, 2, DIRICHLET],
                   [2, 3, DIRICHLET], [3, 0, DIRICHLET]])
    hier = MeshHierarchy(TriMesh(v, t, be, singular_vertex=0), 4)
    exact = _PolyExact()
    for lvl, tol in [(3, 1e-8), (4, 1e-10)]:
        system = assemble_stokes(hier.levels[lvl], gamma=gamma, stab=stab,
                                 f=_poly_load)
        u, p = solve_direct(system)
        g_full = energy_defect(system, u, p, exact, form="full")
        g_root = energy_defect(system, u, p, exact, form="functional")
        assert g_full == pytest.approx(g_root, abs=tol)
        # the defect itself is the O(h^2) pollution measure
        assert 0.0 < g_root < 6e-4 * 4.0 ** (3 - lvl)


def test_matrix_coo_roundtrip(tmp_path):
    mesh = _lshape(1)
    k = scalar_stiffness(mesh)
    path = tmp_path / "k.txt"
    export_matrix_coo(k, path)
    back = read_matrix_coo(path)
    assert (back != k).nnz == 0
