"""Correction identification: roots, invariances, extrapolation."""

import numpy as np
import pytest

from stokeslab.corners import ExactStokes, corner_pairs
from stokeslab.meshing import (DIRICHLET, MeshHierarchy, TriMesh,
                               build_initial_domain)
from stokeslab.gamma_fit import (GammaConvergenceError, _DefectEvaluator,
                                 contraction_ratios, estimate_gamma_star,
                                 extrapolate_modes, solve_gamma_newton)
from stokeslab.stokes import StokesOperators


@pytest.fixture(scope="module")
def lshape_setup():
    coarse = build_initial_domain("lshape_3_2pi")
    pairs = corner_pairs(coarse.omega, 2)
    exacts = [ExactStokes([p], coarse) for p in pairs]
    hier = MeshHierarchy(coarse, 2)
    return hier, exacts


def test_newton_residuals_meet_tolerance(lshape_setup):
    hier, exacts = lshape_setup
    gamma, info = solve_gamma_newton(hier.levels[2], exacts)
    assert info["residuals"][-1] <= 1e-11 * exacts[0].energy
    assert info["iterations"] <= 25
    assert np.abs(gamma).max() < 0.95


def test_known_roots_regression(lshape_setup):
    # identification values on these fixed patches; frozen from converged
    # runs of this code path
    hier, exacts = lshape_setup
    gamma, _ = solve_gamma_newton(hier.levels[2], exacts)
    assert gamma == pytest.approx([0.29405208, -0.12008107], abs=1e-6)

    coarse = build_initial_domain("corner_8_7pi")
    pairs = corner_pairs(coarse.omega, 1)
    exacts = [ExactStokes([p], coarse) for p in pairs]
    h2 = MeshHierarchy(coarse, 2)
    g1, _ = solve_gamma_newton(h2.levels[1], exacts)
    g2, _ = solve_gamma_newton(h2.levels[2], exacts, gamma0=g1)
    assert g1 == pytest.approx([0.04721805, 0.0], abs=1e-6)
    assert g2 == pytest.approx([0.04462220, 0.0], abs=1e-6)


class _Scaled:
    """Singular pair data scaled by a constant factor."""

    def __init__(self, exact, factor):
        self.exact = exact
        self.factor = factor
        self.energy = factor ** 2 * exact.energy

    def velocity(self, xy):
        return self.factor * self.exact.velocity(xy)


def test_defect_and_root_scale_invariance(lshape_setup):
    # g_h is quadratic in the pair, so scaling the data by 2 multiplies
    # the defect by 4 and leaves the root untouched
    hier, exacts = lshape_setup
    mesh = hier.levels[2]
    scaled = [_Scaled(e, 2.0) for e in exacts]

    gamma = np.array([0.17, -0.06])
    g_base = _DefectEvaluator(StokesOperators(mesh), exacts)(gamma)
    g_scal = _DefectEvaluator(StokesOperators(mesh), scaled)(gamma)
    assert g_scal == pytest.approx(4.0 * g_base, rel=1e-12)

    root_base, _ = solve_gamma_newton(mesh, exacts)
    root_scal, _ = solve_gamma_newton(mesh, scaled)
    assert np.abs(root_base - root_scal).max() < 1e-10


class _SmoothExact:
    """Curved solenoidal field with harmonic components and zero pressure."""

    energy = 80.0  # integral of |grad u|^2 over the unit square

    def velocity(self, xy):
        x, y = xy[..., 0], xy[..., 1]
        return np.stack([2 * x + 3 * x ** 2 - 3 * y ** 2,
                         -2 * y - 6 * x * y], axis=-1)


def test_smooth_solution_defect_second_order():
    # with no corner singularity in the data the pollution functional at
    # gamma = 0 decays at the optimal rate; there is nothing to correct
    v = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    t = np.array([[0, 1, 2], [0, 2, 3]])
    be = np.array([[0, 1, DIRICHLET], [1, 2, DIRICHLET],
                   [2, 3, DIRICHLET], [3, 0, DIRICHLET]])
    mesh0 = TriMesh(v, t, be, singular_vertex=0)
    hier = MeshHierarchy(mesh0, 5)
    ex = _SmoothExact()
    defects = []
    for lvl in range(3, 6):
        ev = _DefectEvaluator(StokesOperators(hier.levels[lvl]), [ex])
        defects.append(abs(ev(np.zeros(2))[0]) / ex.energy)
    rates = np.log2(np.array(defects[:-1]) / defects[1:])
    assert defects[-1] < 1e-4
    assert np.all(rates > 1.8) and np.all(rates < 3.0)


def test_newton_failure_reports_history(lshape_setup):
    hier, exacts = lshape_setup
    with pytest.raises(GammaConvergenceError) as err:
        solve_gamma_newton(hier.levels[1], exacts, max_iter=1)
    assert len(err.value.history) == 1


def test_contraction_ratios_from_exponents():
    r = contraction_ratios(1.5 * np.pi, 2)
    assert r[0] == pytest.approx(2.0 ** -(2 - 2 * 0.544483736782464),
                                 abs=1e-12)
    assert r[1] == pytest.approx(2.0 ** -(2 - 2 * 0.908529189846099),
                                 abs=1e-12)


def test_extrapolation_recovers_synthetic_limit():
    levels = np.arange(1, 7)
    star, c1, c2 = 0.21, 0.4, -0.15
    vals = star + c1 * 0.53 ** levels + c2 * 0.88 ** levels
    fit, coefs, resid = extrapolate_modes(levels, vals, [0.53, 0.88])
    assert fit == pytest.approx(star, abs=1e-12)
    assert coefs == pytest.approx([c1, c2], abs=1e-10)
    assert resid < 1e-12


def test_estimate_report_single_mode():
    report = estimate_gamma_star("corner_5_4pi", max_level=3)
    assert report["n_corrections"] == 1
    assert report["gamma_star"][1] == 0.0
    assert report["levels"] == [1, 2, 3]
    assert report["gamma_h"].shape == (3, 2)
    assert np.isfinite(report["fit_residual"])
    assert all(n <= 25 for n in report["newton_iterations"])
