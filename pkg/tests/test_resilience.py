"""Fault injection, subdomain recovery, and the cycle-delay accounting."""

import numpy as np
import pytest

from stokeslab.meshing import MeshHierarchy, build_initial_domain
from stokeslab.multigrid import consistent_rhs, initial_guess, vcycle_once, \
    project_pressure_mean, vcycle_solve
from stokeslab.resilience import (FaultEvent, FaultScenario, Partition,
                                  RecoveryConfig, inject_fault, recover_local,
                                  run_fault_experiment, _bench_mg)

_CACHE = {}


def _setup():
    if "mg" not in _CACHE:
        mg = _bench_mg("lshape_3_2pi", 4)
        _CACHE["mg"] = mg
        _CACHE["part"] = Partition(mg.hierarchy, 16,
                                   base_level=mg.coarsest_level)
    return _CACHE["mg"], _CACHE["part"]


def _report(strategy, cycles=4, n_H=2, eta_super=4, events=None, **kw):
    key = (strategy, cycles, n_H, eta_super, events, tuple(sorted(kw.items())))
    if key not in _CACHE:
        sc = FaultScenario(
            events=events if events is not None else (FaultEvent(3, 5),),
            recovery=RecoveryConfig(strategy=strategy, cycles=cycles,
                                    n_H=n_H, eta_super=eta_super), **kw)
        _CACHE[key] = run_fault_experiment(sc)
    return _CACHE[key]


def _converged_state(mg, cycles=5, seed=0):
    sys = mg.finest
    rhs_u, rhs_p = consistent_rhs(sys)
    u, p = initial_guess(sys, seed)
    for _ in range(cycles):
        vcycle_once(mg, u, p, rhs_u, rhs_p)
        project_pressure_mean(sys, p)
    return u, p, rhs_u, rhs_p


def test_partition_covers_elements_disjointly():
    mg, part = _setup()
    for level in (2, 3, 4):
        emap = part.element_map(level)
        mesh = mg.hierarchy.levels[level]
        assert len(emap) == len(mesh.triangles)
        assert emap.min() >= 0 and emap.max() < 16
        # balanced up to the integer split
        counts = np.bincount(emap, minlength=16)
        assert counts.max() - counts.min() <= counts.min()


def test_children_inherit_parent_subdomain():
    mg, part = _setup()
    coarse = part.element_map(3)
    fine = part.element_map(4)
    assert np.array_equal(fine.reshape(-1, 4), np.repeat(coarse, 4).reshape(-1, 4))


def test_interior_and_interface_partition_vertices():
    mg, part = _setup()
    mesh = mg.hierarchy.levels[4]
    # independent oracle: collect the set of touching subdomains per vertex
    touch = [set() for _ in range(mesh.num_vertices)]
    emap = part.element_map(4)
    for t, tri in enumerate(mesh.triangles):
        for v in tri:
            touch[v].add(emap[t])
    interiors = [part.interior_vertices(s, 4) for s in range(16)]
    interface = part.interface_vertices(4)
    for s, idx in enumerate(interiors):
        for v in idx:
            assert touch[v] == {s}
    for v in interface:
        assert len(touch[v]) >= 2
    total = sum(len(i) for i in interiors) + len(interface)
    assert total == mesh.num_vertices


def test_unknown_fraction_of_one_subdomain():
    # one of 48 subdomains on the level-5 L-shape carries about 2 percent
    hier = MeshHierarchy(build_initial_domain("lshape_3_2pi"), 5)
    mg = _bench_mg("lshape_3_2pi", 5)
    part = Partition(mg.hierarchy, 48, base_level=2)
    frac = part.unknown_fraction(0, 5, mg.finest)
    assert 0.01 < frac < 0.03


def test_inject_zeroes_interior_and_nothing_else():
    mg, part = _setup()
    u, p, rhs_u, rhs_p = _converged_state(mg)
    sys = mg.finest
    nv = sys.mesh.num_vertices
    u0, p0 = u.copy(), p.copy()
    idx = part.interior_vertices(3, 4)
    m = sys.m_p[idx]
    want_mean = float(m @ p[idx] / m.sum())

    meta = inject_fault((u, p), part, FaultEvent(3, 5), 4, sys)

    assert np.all(u[idx] == 0.0) and np.all(u[idx + nv] == 0.0)
    assert np.all(p[idx] == 0.0)
    keep = np.setdiff1d(np.arange(nv), idx)
    assert np.array_equal(u[keep], u0[keep])
    assert np.array_equal(u[keep + nv], u0[keep + nv])
    assert np.array_equal(p[keep], p0[keep])
    assert meta["pressure_mean"] == pytest.approx(want_mean, rel=1e-14)
    assert 0.0 < meta["fraction"] < 0.1


def test_inject_invalid_subdomain_raises():
    mg, part = _setup()
    u, p, *_ = _converged_state(mg)
    with pytest.raises(ValueError):
        inject_fault((u, p), part, FaultEvent(16, 5), 4, mg.finest)


def test_event_and_config_validation():
    with pytest.raises(ValueError):
        FaultEvent(0, 0)
    with pytest.raises(ValueError):
        RecoveryConfig(strategy="teleport")
    with pytest.raises(ValueError):
        RecoveryConfig(n_H=-1)
    with pytest.raises(ValueError):
        RecoveryConfig(eta_super=0)


def test_empty_subdomain_fault_is_noop():
    mg, _ = _setup()
    part = Partition(mg.hierarchy, 300, base_level=2)
    counts = np.bincount(part.base_map, minlength=300)
    empty = int(np.flatnonzero(counts == 0)[0])
    u, p, *_ = _converged_state(mg)
    u0, p0 = u.copy(), p.copy()
    meta = inject_fault((u, p), part, FaultEvent(empty, 5), 4, mg.finest)
    assert np.array_equal(u, u0) and np.array_equal(p, p0)
    assert meta["fraction"] == 0.0


def test_recovery_touches_only_the_faulty_interior():
    mg, part = _setup()
    sys = mg.finest
    nv = sys.mesh.num_vertices
    u, p, rhs_u, rhs_p = _converged_state(mg)
    ev = FaultEvent(3, 5)
    meta = inject_fault((u, p), part, ev, 4, sys)
    u1, p1 = u.copy(), p.copy()
    recover_local((u, p), mg, part, ev, RecoveryConfig("vcycle", 4),
                  rhs_u, rhs_p, pressure_mean=meta["pressure_mean"])
    idx = part.interior_vertices(3, 4)
    keep = np.setdiff1d(np.arange(nv), idx)
    assert np.array_equal(u[keep], u1[keep])
    assert np.array_equal(u[keep + nv], u1[keep + nv])
    assert np.array_equal(p[keep], p1[keep])
    # and it actually rebuilt something
    assert np.linalg.norm(u[np.concatenate([idx, idx + nv])]) > 0


def test_recovery_on_healthy_state_is_nearly_noop():
    mg, part = _setup()
    sys = mg.finest
    u, p, rhs_u, rhs_p = _converged_state(mg, cycles=10)
    u0, p0 = u.copy(), p.copy()
    ev = FaultEvent(3, 5)
    idx = part.interior_vertices(3, 4)
    m = sys.m_p[idx]
    mean = float(m @ p[idx] / m.sum())
    recover_local((u, p), mg, part, ev, RecoveryConfig("vcycle", 4),
                  rhs_u, rhs_p, pressure_mean=mean)
    # values already solved the subproblem; the rebuild reproduces them
    # up to the subsolver tolerance
    assert np.linalg.norm(u - u0) < 1e-5 * max(np.linalg.norm(u0), 1.0)
    assert np.linalg.norm(p - p0) < 1e-4 * max(np.linalg.norm(p0), 1.0)


def test_residual_jumps_on_fault_and_report_phases():
    rep = _report("vcycle")
    rels = {c: r for c, r, tag in rep.rows if tag == "iterate"}
    fault = [(c, r) for c, r, tag in rep.rows if tag == "fault"]
    assert len(fault) == 1
    c5, jumped = fault[0]
    assert c5 == 5
    assert jumped > 10 * rels[5]


def test_four_local_cycles_restore_the_baseline():
    rep = _report("vcycle", cycles=4)
    assert rep.converged
    assert rep.delay == 0


def test_delay_monotone_in_local_cycles():
    delays = [_report("vcycle", cycles=c).delay for c in (1, 2, 4)]
    assert delays[0] >= delays[1] >= delays[2]
    assert delays[2] == 0


def test_no_recovery_costs_extra_cycles():
    rep = _report("none")
    assert rep.converged
    assert rep.delay >= 3


def test_smoother_and_krylov_do_not_restore():
    for strategy in ("smoother", "minres", "pminres"):
        rep = _report(strategy, cycles=4)
        assert rep.converged
        assert rep.delay > 0, strategy


def test_global_dn_recovers_within_two_cycles():
    rep = _report("global_dn", n_H=2, eta_super=4)
    assert rep.converged
    assert rep.delay <= 2
    assert sum(tag == "decoupled" for _, _, tag in rep.rows) == 2


def test_global_dn_without_superman_no_worse_than_none():
    none = _report("none")
    dn = _report("global_dn", n_H=6, eta_super=1)
    assert dn.iterations <= none.iterations


def test_two_faults_handled_independently():
    rep = _report("vcycle", events=(FaultEvent(3, 5), FaultEvent(7, 9)))
    tags = [tag for _, _, tag in rep.rows]
    assert tags.count("fault") == 2
    assert tags.count("recovery") == 2
    assert rep.converged


def test_fault_free_report_equals_plain_solve():
    rep = _report("none", events=())
    mg, _ = _setup()
    u, p, log = vcycle_solve(mg, tol=1e-15, max_cycles=200, seed=0)
    assert rep.iterations == log.iterations
    assert [r for _, r, _ in rep.rows] == log.residuals


def test_laplace_mode_fault_and_recovery():
    base = dict(kind="square", level=5, mode="laplace", tol=1e-15)
    rep = _report("vcycle", cycles=4, **base)
    assert rep.converged and rep.delay == 0
    rep_none = _report("none", **base)
    assert rep_none.delay > 0
    rep_dn = _report("global_dn", n_H=2, eta_super=4, **base)
    assert rep_dn.converged and rep_dn.delay <= 2
