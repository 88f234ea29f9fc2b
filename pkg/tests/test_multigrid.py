"""Cycle behavior of the coupled Uzawa multigrid and its scalar sibling."""

import numpy as np
import pytest

from stokeslab.corners import ExactStokes, corner_pairs
from stokeslab.meshing import DOMAIN_ANGLES, MeshHierarchy, build_initial_domain
from stokeslab.multigrid import (MGBreakdownError, MGHierarchy, OpCounter,
                                 ScalarMG, UzawaSmoother, coarse_pminres,
                                 consistent_rhs, initial_guess,
                                 project_pressure_mean, scg_solve,
                                 vcycle_once, vcycle_solve)
from stokeslab.stokes import solve_direct


def _mg(kind, levels, **kw):
    hier = MeshHierarchy(build_initial_domain(kind), levels)
    if kind in DOMAIN_ANGLES:
        ex = ExactStokes(corner_pairs(DOMAIN_ANGLES[kind], 2), hier.levels[-1])
        return MGHierarchy(hier, dirichlet_data=ex.velocity, **kw)
    f = lambda pts: np.column_stack([np.ones(len(pts)), np.zeros(len(pts))])
    return MGHierarchy(hier, f=f, **kw)


def _resnorm(system, u, p, rhs_u, rhs_p):
    ru = rhs_u - system.amat @ u - system.bmat.T @ p
    rp = rhs_p - system.bmat @ u + system.c_mat @ p
    return np.sqrt(ru @ ru + rp @ rp)


def test_consistent_rhs_removes_boundary_defect():
    mg = _mg("lshape_3_2pi", 3)
    sys = mg.finest
    # interpolated Dirichlet data carries a nonzero discrete boundary flux
    assert abs(sys.rhs_p.sum()) > 1e-10
    rhs_u, rhs_p = consistent_rhs(sys)
    assert abs(rhs_p.sum()) < 1e-13 * len(rhs_p)
    assert np.array_equal(rhs_u, sys.rhs_u)
    # the projection never touches the velocity side
    assert sys.rhs_p.sum() != 0.0


def test_smoother_contracts_residual():
    mg = _mg("lshape_3_2pi", 3)
    sys = mg.finest
    rhs_u, rhs_p = consistent_rhs(sys)
    u, p = initial_guess(sys, seed=7)
    sm = UzawaSmoother(sys)
    norms = [_resnorm(sys, u, p, rhs_u, rhs_p)]
    for _ in range(6):
        sm.smooth(u, p, rhs_u, rhs_p, steps=1)
        norms.append(_resnorm(sys, u, p, rhs_u, rhs_p))
    norms = np.array(norms)
    assert np.all(norms[1:] < norms[:-1])
    # a single sweep takes out most of the rough content
    assert norms[1] < 0.5 * norms[0]


def test_two_level_cycle_rate():
    mg = _mg("lshape_3_2pi", 3)  # coarsest_level=2 leaves two levels
    assert mg.n_levels == 2
    sys = mg.finest
    rhs_u, rhs_p = consistent_rhs(sys)
    u, p = initial_guess(sys, seed=0)
    r_prev = _resnorm(sys, u, p, rhs_u, rhs_p)
    rates = []
    for _ in range(4):
        vcycle_once(mg, u, p, rhs_u, rhs_p)
        r = _resnorm(sys, u, p, rhs_u, rhs_p)
        rates.append(r / r_prev)
        r_prev = r
    assert max(rates) < 0.35


def test_direct_solution_is_cycle_fixed_point():
    mg = _mg("lshape_3_2pi", 4)
    sys = mg.finest
    u, p = solve_direct(sys)
    rhs_u, rhs_p = consistent_rhs(sys)
    r0 = _resnorm(sys, u, p, rhs_u, rhs_p)
    scale = np.sqrt(rhs_u @ rhs_u + rhs_p @ rhs_p)
    assert r0 < 1e-10 * scale
    vcycle_once(mg, u, p, rhs_u, rhs_p)
    assert _resnorm(sys, u, p, rhs_u, rhs_p) < 1e-9 * scale


def test_zero_rhs_converges_in_zero_cycles():
    hier = MeshHierarchy(build_initial_domain("square"), 3)
    mg = MGHierarchy(hier)
    u, p, log = vcycle_solve(mg, initial="zero")
    assert log.converged and log.iterations == 0
    assert log.residuals == [0.0]
    assert not np.any(u) and not np.any(p)


def test_level_independent_cycle_counts():
    # the acceptance study runs levels 3-6 on both domains; keep a short
    # version here so a regression is caught before that gate
    counts = []
    for levels in (3, 4, 5):
        mg = _mg("lshape_3_2pi", levels)
        _, _, log = vcycle_solve(mg, tol=1e-8, seed=0)
        assert log.converged
        counts.append(log.iterations)
    assert max(counts) - min(counts) <= 1


def test_solver_is_deterministic():
    logs = []
    for _ in range(2):
        mg = _mg("lshape_3_2pi", 4)
        _, _, log = vcycle_solve(mg, tol=1e-8, seed=3)
        logs.append(log)
    assert logs[0].residuals == logs[1].residuals
    assert logs[0].iterations == logs[1].iterations


def test_solution_matches_direct():
    mg = _mg("corner_5_4pi", 4)
    sys = mg.finest
    u_d, p_d = solve_direct(sys)
    u, p, log = vcycle_solve(mg, tol=1e-10, seed=1)
    assert log.converged
    project_pressure_mean(sys, p_d)
    assert np.abs(u - u_d).max() < 1e-8
    assert np.abs(p - p_d).max() < 1e-6


def test_distorted_fan_raises_instead_of_returning_junk():
    # the 8/7 pi fan is the one mesh family with non right-isosceles
    # elements; at the bench relaxation the cycle leaves its stability
    # margin there and must fail loudly
    try:
        _, _, log = vcycle_solve(_mg("corner_8_7pi", 4), seed=1)
        assert log.converged  # acceptable if a future smoother fixes it
    except MGBreakdownError:
        pass
    # the documented remedy: more conservative pressure relaxation
    mg = _mg("corner_8_7pi", 3, sor_omega=0.2)
    _, _, log = vcycle_solve(mg, tol=1e-8, seed=1)
    assert log.converged


def test_multicolor_sweep_converges():
    mg = _mg("lshape_3_2pi", 4, sweep="multicolor")
    _, _, log = vcycle_solve(mg, tol=1e-8, seed=0)
    assert log.converged
    assert log.iterations <= 14


def test_coarse_pminres_consistency():
    mg = _mg("lshape_3_2pi", 4)
    sys = mg.levels[0]
    rhs_u, rhs_p = consistent_rhs(sys)
    u, p, its = coarse_pminres(sys, rhs_u, rhs_p, rtol=1e-9)
    assert its > 0
    # the rtol is on the preconditioned residual, leave an order of slack
    scale = np.sqrt(rhs_u @ rhs_u + rhs_p @ rhs_p)
    assert _resnorm(sys, u, p, rhs_u, rhs_p) < 1e-7 * scale


def test_coarse_iterations_logged_each_cycle():
    mg = _mg("square", 4)
    _, _, log = vcycle_solve(mg, tol=1e-8, seed=0)
    assert len(log.coarse_iterations) == log.iterations
    assert all(n > 0 for n in log.coarse_iterations)


def test_op_counter_geometric_weighting():
    c = OpCounter(3)
    c.add(2, "A", 4.0)   # finest: weight 1
    c.add(1, "A", 4.0)   # one level down: weight 1/4
    c.add(0, "B", 8.0)   # two down: weight 1/16
    w = c.weighted()
    assert w["A"] == pytest.approx(4.0 + 1.0)
    assert w["B"] == pytest.approx(0.5)
    d = c.as_dict()
    assert d["L2:A"] == 4.0 and d["L0:B"] == 8.0


def test_schur_cg_agrees_and_costs_more():
    mg = _mg("lshape_3_2pi", 3)
    u_v, p_v, log_v = vcycle_solve(mg, tol=1e-10, seed=0)
    u_s, p_s, log_s = scg_solve(mg, tol=1e-10)
    assert np.abs(u_v - u_s).max() < 1e-6
    assert np.abs(p_v - p_s).max() < 1e-5
    # velocity elimination pays for every CG step with nested solves
    assert log_s.ops["A"] > 3.0 * log_v.ops["A"]


def test_scalar_mg_matches_direct_poisson():
    from scipy.sparse.linalg import spsolve

    hier = MeshHierarchy(build_initial_domain("square"), 4)
    smg = ScalarMG(hier, f=1.0)
    z, log = smg.solve(tol=1e-10, seed=0)
    assert log.converged
    z_d = spsolve(smg.mats[-1].tocsc(), smg.rhs)
    assert np.abs(z - z_d).max() < 1e-9
    # interior values of the membrane problem are strictly positive
    interior = np.setdiff1d(np.arange(len(z)), smg.dirichlet[-1])
    assert z[interior].min() > 0.0


def test_scalar_mg_level_independence():
    counts = []
    for levels in (3, 4, 5):
        hier = MeshHierarchy(build_initial_domain("square"), levels)
        smg = ScalarMG(hier, f=1.0)
        _, log = smg.solve(tol=1e-8, seed=0)
        assert log.converged
        counts.append(log.iterations)
    assert max(counts) - min(counts) <= 1
