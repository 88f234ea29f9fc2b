"""Hard-fault injection and recovery for the multigrid iteration.

Subdomains are logical partitions of the coarse elements, inherited by
all refinements.  A fault wipes every unknown interior to one subdomain;
the interface values are shared with the neighbors and survive.  The
recovery strategies rebuild the lost values from a Dirichlet subproblem
on the faulty subdomain, either locally (smoother, Krylov, or multigrid
cycles on the subdomain hierarchy) or by a Dirichlet-Neumann split that
lets the healthy part keep iterating against frozen interface fluxes.

Everything runs in one process; acceleration of the local recovery is
modeled by granting the faulty side several local cycles per global one.
Delay is measured in outer cycles against a fault-free run of the same
seed, which is the metric that survives the move to desk scale.
"""

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, minres, splu

from .corners import ExactStokes, corner_pairs
from .meshing import DOMAIN_ANGLES, MeshHierarchy, build_initial_domain
from .multigrid import (_TOL_KW, _sgs_parts, MGHierarchy, ScalarMG,
                        UzawaSmoother, consistent_rhs, initial_guess,
                        project_pressure_mean, vcycle_once)

STRATEGIES = ("none", "smoother", "minres", "pminres",
              "vcycle", "fcycle", "wcycle", "global_dn")
# a Krylov "cycle" is granted this many iterations, roughly the work of
# one local V(3,3) cycle, so the strategy comparison is not a strawman
KRYLOV_ITERS_PER_CYCLE = 10


def _coordinate_bisection(points, n):
    """Recursive coordinate bisection of point ids into n balanced parts."""
    out = np.empty(len(points), dtype=np.int64)

    def rec(idx, lo, m):
        if len(idx) == 0:
            return
        if m == 1:
            out[idx] = lo
            return
        m1 = m // 2
        coords = points[idx]
        axis = int(np.argmax(coords.max(axis=0) - coords.min(axis=0)))
        order = np.argsort(coords[:, axis], kind="stable")
        k = len(idx) * m1 // m
        rec(idx[order[:k]], lo, m1)
        rec(idx[order[k:]], lo + m1, m - m1)

    rec(np.arange(len(points)), 0, n)
    return out


class Partition:
    """Subdomain decomposition of a mesh hierarchy.

    The base-level elements are split by recursive coordinate bisection
    of their centroids; children inherit the subdomain of their parent.
    A vertex interior to a subdomain touches only that subdomain's
    elements; interface vertices touch at least two and are considered
    redundantly stored, so they survive a fault.
    """

    def __init__(self, hierarchy, n_subdomains, base_level=2):
        if n_subdomains < 1:
            raise ValueError("need at least one subdomain")
        self.hierarchy = hierarchy
        self.base_level = min(base_level, len(hierarchy.levels) - 1)
        self.n_subdomains = n_subdomains
        base = hierarchy.levels[self.base_level]
        centroids = base.vertices[base.triangles].mean(axis=1)
        self.base_map = _coordinate_bisection(centroids, n_subdomains)
        self._owner = {}

    def element_map(self, level):
        """Subdomain id per element of the given hierarchy level."""
        if level < self.base_level:
            raise ValueError(f"level {level} is below the partition base")
        return np.repeat(self.base_map, 4 ** (level - self.base_level))

    def _ownership(self, level):
        # lo == hi: the unique owner; lo < hi: interface vertex
        if level not in self._owner:
            mesh = self.hierarchy.levels[level]
            emap = self.element_map(level)
            tri = mesh.triangles.ravel()
            per_tri = np.repeat(emap, 3)
            lo = np.full(mesh.num_vertices, self.n_subdomains, dtype=np.int64)
            hi = np.full(mesh.num_vertices, -1, dtype=np.int64)
            np.minimum.at(lo, tri, per_tri)
            np.maximum.at(hi, tri, per_tri)
            self._owner[level] = (lo, hi)
        return self._owner[level]

    def interior_vertices(self, subdomain, level):
        lo, hi = self._ownership(level)
        return np.flatnonzero((lo == hi) & (lo == subdomain))

    def interface_vertices(self, level):
        lo, hi = self._ownership(level)
        return np.flatnonzero(lo < hi)

    def unknown_fraction(self, subdomain, level, system):
        """Fraction of (u, p) unknowns lost when this subdomain faults."""
        idx = self.interior_vertices(subdomain, level)
        nv = self.hierarchy.levels[level].num_vertices
        n_dir = len(system.ops.dirichlet_vertices)
        free_interior = np.setdiff1d(idx, system.ops.dirichlet_vertices,
                                     assume_unique=True)
        lost = 2 * len(free_interior) + len(idx)
        total = 2 * (nv - n_dir) + nv
        return lost / total


@dataclass(frozen=True)
class FaultEvent:
    subdomain: int
    cycle: int

    def __post_init__(self):
        if self.cycle < 1:
            raise ValueError("fault cycle index must be >= 1")


@dataclass
class RecoveryConfig:
    strategy: str = "vcycle"
    cycles: int = 4
    n_H: int = 2
    eta_super: int = 4

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.n_H < 0:
            raise ValueError("n_H must be >= 0")
        if self.eta_super < 1:
            raise ValueError("eta_super must be >= 1")


def inject_fault(state, partition, event, level, system=None):
    """Zero all unknowns interior to the faulty subdomain, in place.

    state is (u, p) for a Stokes iterate or a plain array for a scalar
    one.  Returns a metadata dict: the fraction of unknowns hit and the
    pre-fault subdomain pressure mean (one scalar, the only extra field
    storage the local recovery is allowed).
    """
    if not 0 <= event.subdomain < partition.n_subdomains:
        raise ValueError(f"no subdomain {event.subdomain}")
    idx = partition.interior_vertices(event.subdomain, level)
    meta = {"fraction": 0.0, "pressure_mean": 0.0}
    if isinstance(state, tuple):
        u, p = state
        nv = len(p)
        if len(idx):
            if system is not None:
                w = system.m_p[idx]
                meta["pressure_mean"] = float(w @ p[idx] / w.sum())
                meta["fraction"] = partition.unknown_fraction(
                    event.subdomain, level, system)
            u[idx] = 0.0
            u[idx + nv] = 0.0
            p[idx] = 0.0
    else:
        z = state
        if len(idx):
            meta["fraction"] = len(idx) / len(z)
            z[idx] = 0.0
    return meta


class _LocalSystem:
    """Just enough of a system for the smoother to run on."""

    def __init__(self, amat, bmat, c_mat, m_p):
        self.amat = amat
        self.bmat = bmat
        self.c_mat = c_mat
        self.m_p = m_p
        self.pressure_mode = "free"
        self.dirichlet_dofs = np.empty(0, dtype=np.int64)


def _budget_pminres(s, bu, bp, x_u, x_p, maxiter):
    """Block-preconditioned MINRES cut off at a work budget.

    Jacobi on the velocity block and the inverse lumped mass on
    pressure keep one iteration's cost comparable to one smoothing
    sweep, so the iteration budget is an honest work match against the
    multigrid recovery.  Exhausting the budget returns the current
    iterate instead of raising: the point of the comparison is what a
    fixed budget buys.
    """
    n_u, n_p = len(bu), len(bp)
    da = s.amat.diagonal()

    def mv(x):
        v, q = x[:n_u], x[n_u:]
        return np.concatenate([s.amat @ v + s.bmat.T @ q,
                               s.bmat @ v - s.c_mat @ q])

    def psolve(x):
        return np.concatenate([x[:n_u] / da, x[n_u:] / s.m_p])

    op = LinearOperator((n_u + n_p,) * 2, matvec=mv)
    pre = LinearOperator((n_u + n_p,) * 2, matvec=psolve)
    x0 = np.concatenate([x_u, x_p])
    x, _ = minres(op, np.concatenate([bu, bp]), x0=x0, M=pre,
                  maxiter=maxiter, **{_TOL_KW: 1e-14})
    x_u[:] = x[:n_u]
    x_p[:] = x[n_u:]


class SubdomainStokes:
    """Stokes subproblem on a vertex set, with its own small hierarchy.

    vsets[j] are the vertices the subproblem owns on multigrid level
    k0 + j; everything else is boundary data supplied by the caller.
    Used both for the faulty subdomain (vertices interior to it) and,
    during the Dirichlet-Neumann split, for the healthy remainder
    including the interface.
    """

    def __init__(self, mg, vsets, k0=0):
        self.mg = mg
        self.k0 = k0
        self.vsets = vsets
        self.ivs = []      # free velocity dof indices per local level
        self.ips = vsets   # pressure dof indices per local level
        self.systems = []
        self.smoothers = []
        for j, ip in enumerate(vsets):
            sysk = mg.levels[k0 + j]
            nv = sysk.mesh.num_vertices
            iv = np.setdiff1d(ip, sysk.ops.dirichlet_vertices,
                              assume_unique=True)
            ivv = np.concatenate([iv, iv + nv])
            a = sysk.amat[ivv][:, ivv].tocsr()
            b = sysk.bmat[ip][:, ivv].tocsr()
            c = sysk.c_mat.tocsr()[ip][:, ip].tocsr()
            self.ivs.append(ivv)
            self.systems.append(_LocalSystem(a, b, c, sysk.m_p[ip]))
            self.smoothers.append(UzawaSmoother(self.systems[j]))
        # componentwise transfers restricted to the owned vertex sets
        self.pr_v, self.pr_p = [None], [None]
        for j in range(1, len(vsets)):
            pr = mg.prolongs[k0 + j].tocsr()
            iv_f = self.ivs[j][:len(self.ivs[j]) // 2]
            iv_c = self.ivs[j - 1][:len(self.ivs[j - 1]) // 2]
            self.pr_v.append(pr[iv_f][:, iv_c].tocsr())
            self.pr_p.append(pr[vsets[j]][:, vsets[j - 1]].tocsr())
        s0 = self.systems[0]
        # a subdomain spanning (almost) the whole enclosed domain keeps
        # the constant-pressure kernel; splu needs the mean multiplier
        # of the direct solver then, a plain factorization otherwise
        n_p0 = s0.c_mat.shape[0]
        kern = 0.0
        if n_p0:
            ones0 = np.ones(n_p0)
            scale = abs(s0.bmat).sum() + abs(s0.c_mat).sum() + 1e-300
            kern = (np.linalg.norm(s0.bmat.T @ ones0)
                    + np.linalg.norm(s0.c_mat @ ones0)) / scale
        self.coarse_pinned = bool(n_p0) and kern < 1e-10
        if self.coarse_pinned:
            n_u0 = s0.amat.shape[0]
            col = sp.csr_matrix((s0.m_p, (np.arange(n_p0),
                                          np.zeros(n_p0, dtype=np.int64))),
                                shape=(n_p0, 1))
            zu = sp.csr_matrix((n_u0, 1))
            saddle = sp.bmat([[s0.amat, s0.bmat.T, zu],
                              [s0.bmat, -s0.c_mat, col],
                              [zu.T, col.T, None]], format="csc")
        else:
            saddle = sp.bmat([[s0.amat, s0.bmat.T],
                              [s0.bmat, -s0.c_mat]], format="csc")
        self.coarse_lu = splu(saddle)
        self.n_levels = len(vsets)

    @property
    def top(self):
        return self.n_levels - 1

    def boundary_rhs(self, u_ext, p_ext, rhs_u, rhs_p):
        """Lift exterior data into the local right hand side (finest)."""
        sysk = self.mg.finest
        bu = (rhs_u - sysk.amat @ u_ext - sysk.bmat.T @ p_ext)[self.ivs[-1]]
        bp = (rhs_p - sysk.bmat @ u_ext + sysk.c_mat @ p_ext)[self.ips[-1]]
        return bu, bp

    def _cycle(self, j, x_u, x_p, bu, bp, kind):
        if j == 0:
            rhs = np.concatenate([bu, bp])
            if self.coarse_pinned:
                rhs = np.append(rhs, 0.0)
            x = self.coarse_lu.solve(rhs)
            x_u[:] = x[:len(bu)]
            x_p[:] = x[len(bu):len(bu) + len(bp)]
            return
        s = self.systems[j]
        sm = self.smoothers[j]
        pre = (self.mg.pre_smooth if j == self.top
               else self.mg.pre_smooth_coarse)
        sm.smooth(x_u, x_p, bu, bp, pre)
        ru = bu - s.amat @ x_u - s.bmat.T @ x_p
        rp = bp - s.bmat @ x_u + s.c_mat @ x_p
        nuf = len(self.ivs[j]) // 2
        nuc = len(self.ivs[j - 1]) // 2
        rv = self.pr_v[j].T
        ruc = np.concatenate([rv @ ru[:nuf], rv @ ru[nuf:]])
        rpc = self.pr_p[j].T @ rp
        ec_u = np.zeros(2 * nuc)
        ec_p = np.zeros(len(self.ips[j - 1]))
        passes = 2 if (kind == "w" and j > 1) else 1
        for _ in range(passes):
            self._cycle(j - 1, ec_u, ec_p, ruc, rpc,
                        "v" if kind == "f" else kind)
        x_u += np.concatenate([self.pr_v[j] @ ec_u[:nuc],
                               self.pr_v[j] @ ec_u[nuc:]])
        x_p += self.pr_p[j] @ ec_p
        sm.smooth(x_u, x_p, bu, bp, pre)
        if kind == "f":
            self._cycle(j, x_u, x_p, bu, bp, "v")

    def solve(self, x_u, x_p, bu, bp, config):
        """Apply config.cycles of the configured subsolver, in place."""
        s = self.systems[self.top]
        if config.strategy == "smoother":
            self.smoothers[self.top].smooth(x_u, x_p, bu, bp, config.cycles)
        elif config.strategy == "pminres":
            _budget_pminres(s, bu, bp, x_u, x_p,
                            config.cycles * KRYLOV_ITERS_PER_CYCLE)
        elif config.strategy == "minres":
            n_u, n_p = len(bu), len(bp)

            def mv(x):
                v, q = x[:n_u], x[n_u:]
                return np.concatenate([s.amat @ v + s.bmat.T @ q,
                                       s.bmat @ v - s.c_mat @ q])

            op = LinearOperator((n_u + n_p,) * 2, matvec=mv)
            x, _ = minres(op, np.concatenate([bu, bp]),
                          x0=np.concatenate([x_u, x_p]),
                          maxiter=config.cycles * KRYLOV_ITERS_PER_CYCLE,
                          **{_TOL_KW: 1e-14})
            x_u[:] = x[:n_u]
            x_p[:] = x[n_u:]
        elif config.strategy in ("vcycle", "fcycle", "wcycle"):
            for _ in range(config.cycles):
                self._cycle(self.top, x_u, x_p, bu, bp, config.strategy[0])
        else:
            raise ValueError(f"{config.strategy!r} is not a local subsolver")


def _interior_vsets(mg, partition, subdomain):
    c0 = mg.coarsest_level
    k0 = max(0, partition.base_level - c0)
    vsets = [partition.interior_vertices(subdomain, c0 + k0 + j)
             for j in range(mg.n_levels - k0)]
    return vsets, k0


def _project_compatible(solver, u_ext, p_ext, rhs_p):
    """Zero the net boundary mass flux if the local problem demands it.

    The constant-pressure mode is in the local kernel only when no
    interior velocity dof carries mass flux and the restricted
    stabilization annihilates constants; then the boundary data must
    balance exactly, and the copy is adjusted by the minimal-norm
    change along the discrete flux functional.  With stabilization and
    exterior pressure coupling the local system is regular and the data
    is returned untouched: projecting anyway would distort the data and
    excite the weakly pinned pressure level.
    """
    sysk = solver.mg.finest
    s = solver.systems[-1]
    ip = solver.ips[-1]
    ones = np.zeros(sysk.c_mat.shape[0])
    ones[ip] = 1.0
    phi = sysk.bmat.T @ ones           # flux functional over velocity dofs
    phi_int = phi[solver.ivs[-1]]
    ones_loc = np.ones(len(ip))
    pinned = np.linalg.norm(phi_int) + np.linalg.norm(s.c_mat @ ones_loc)
    if pinned > 1e-12 * max(1.0, np.linalg.norm(phi)):
        return u_ext
    phi = phi.copy()
    phi[solver.ivs[-1]] = 0.0          # keep only the boundary data part
    d = float(rhs_p[ip].sum() - phi @ u_ext + (sysk.c_mat.T @ ones) @ p_ext)
    w2 = float(phi @ phi)
    if w2 < 1e-28:
        if abs(d) > 1e-12:
            raise ValueError(
                "degenerate interface: no boundary dof carries flux, "
                f"cannot remove the defect {d:.2e}")
        return u_ext
    u_ext = u_ext.copy()
    u_ext += (d / w2) * phi
    return u_ext


def recover_local(state, mg, partition, event, config, rhs_u, rhs_p,
                  pressure_mean=0.0, solver=None):
    """Rebuild the faulty subdomain from interface data, in place.

    Solves the Stokes subproblem on the subdomain interior with the
    current interface values as Dirichlet data for velocity and
    pressure.  The boundary data is projected to carry zero net mass
    flux first, and the initial pressure iterate starts from the stored
    pre-fault subdomain mean.  Values outside the subdomain interior
    are never touched.
    """
    if config.strategy == "none":
        return state
    u, p = state
    if solver is None:
        vsets, k0 = _interior_vsets(mg, partition, event.subdomain)
        solver = SubdomainStokes(mg, vsets, k0)
    ivv, ip = solver.ivs[-1], solver.ips[-1]
    u_ext = u.copy()
    u_ext[ivv] = 0.0
    p_ext = p.copy()
    p_ext[ip] = 0.0
    u_ext = _project_compatible(solver, u_ext, p_ext, rhs_p)
    bu, bp = solver.boundary_rhs(u_ext, p_ext, rhs_u, rhs_p)
    x_u = np.zeros(len(ivv))
    x_p = np.full(len(ip), pressure_mean)
    solver.solve(x_u, x_p, bu, bp, config)
    u[ivv] = x_u
    p[ip] = x_p
    return state


def _frozen_flux(mg, u, p, ivv, ip):
    """Interface contributions of the given (pre-fault) subdomain values."""
    sysk = mg.finest
    u_f = np.zeros_like(u)
    u_f[ivv] = u[ivv]
    p_f = np.zeros_like(p)
    p_f[ip] = p[ip]
    s_u = sysk.amat @ u_f + sysk.bmat.T @ p_f
    s_p = sysk.bmat @ u_f - sysk.c_mat @ p_f
    return s_u, s_p


def recover_global_dn(state, mg, partition, event, config, rhs_u, rhs_p,
                      flux, pressure_mean=0.0, on_cycle=None):
    """Decoupled Dirichlet-Neumann recovery, counted in outer cycles.

    For n_H cycles the healthy remainder iterates against the frozen
    interface fluxes of the last coupled iterate (a Neumann problem)
    while the faulty subdomain runs eta_super local Dirichlet cycles
    per global one.  The two updates touch disjoint unknowns, so the
    sequential interleaving equals a concurrent execution.  Returns the
    number of outer cycles consumed.
    """
    if config.n_H == 0:
        return 0
    u, p = state
    f_vsets, k0 = _interior_vsets(mg, partition, event.subdomain)
    h_vsets = [np.setdiff1d(np.arange(mg.levels[k0 + j].mesh.num_vertices),
                            f_vsets[j], assume_unique=True)
               for j in range(len(f_vsets))]
    f_side = SubdomainStokes(mg, f_vsets, k0)
    h_side = SubdomainStokes(mg, h_vsets, k0)
    s_u, s_p = flux

    # healthy side: the faulty values reach its interface rows only
    # through the frozen flux vector, so no exterior state is needed
    bu_h = (rhs_u - s_u)[h_side.ivs[-1]]
    bp_h = (rhs_p - s_p)[h_side.ips[-1]]
    y_u = u[h_side.ivs[-1]].copy()
    y_p = p[h_side.ips[-1]].copy()
    # with the hole carved out the healthy pressure level is only
    # weakly pinned; hold it at its pre-decoupling mean, the analog of
    # the projection the coupled iteration applies every cycle
    m_h = mg.finest.m_p[h_side.ips[-1]]
    mean_h = float(m_h @ y_p / m_h.sum()) if h_side.coarse_pinned else 0.0

    # faulty side: Dirichlet data frozen at the post-fault interface
    u_ext = u.copy()
    u_ext[f_side.ivs[-1]] = 0.0
    p_ext = p.copy()
    p_ext[f_side.ips[-1]] = 0.0
    u_ext = _project_compatible(f_side, u_ext, p_ext, rhs_p)
    bu_f, bp_f = f_side.boundary_rhs(u_ext, p_ext, rhs_u, rhs_p)
    x_u = np.zeros(len(f_side.ivs[-1]))
    x_p = np.full(len(f_side.ips[-1]), pressure_mean)

    for _ in range(config.n_H):
        h_side._cycle(h_side.top, y_u, y_p, bu_h, bp_h, "v")
        if h_side.coarse_pinned:
            y_p += mean_h - m_h @ y_p / m_h.sum()
        for _ in range(config.eta_super):
            f_side._cycle(f_side.top, x_u, x_p, bu_f, bp_f, "v")
        u[h_side.ivs[-1]] = y_u
        p[h_side.ips[-1]] = y_p
        u[f_side.ivs[-1]] = x_u
        p[f_side.ips[-1]] = x_p
        if on_cycle is not None:
            on_cycle()
    return config.n_H


@dataclass
class FaultScenario:
    kind: str = "lshape_3_2pi"
    level: int = 4
    subdomains: int = 16
    mode: str = "stokes"            # or "laplace"
    events: tuple = (FaultEvent(3, 5),)
    recovery: RecoveryConfig = field(default_factory=RecoveryConfig)
    tol: float = 1e-15
    seed: int = 0
    max_cycles: int = 200


@dataclass
class FaultReport:
    rows: list                      # (cycle, relative residual, phase)
    baseline_iterations: int
    iterations: int
    seconds: float
    fractions: list
    converged: bool = True

    @property
    def delay(self):
        return self.iterations - self.baseline_iterations


def _bench_mg(kind, level):
    hier = MeshHierarchy(build_initial_domain(kind), level)
    if kind in DOMAIN_ANGLES:
        ex = ExactStokes(corner_pairs(DOMAIN_ANGLES[kind], 2),
                         hier.levels[-1])
        return MGHierarchy(hier, dirichlet_data=ex.velocity)
    f = lambda pts: np.column_stack([np.ones(len(pts)), np.zeros(len(pts))])
    return MGHierarchy(hier, f=f)


def _run_stokes(scenario, mg, partition, inject):
    sysf = mg.finest
    rhs_u, rhs_p = consistent_rhs(sysf)
    u, p = initial_guess(sysf, scenario.seed)
    nv = sysf.mesh.num_vertices

    def resnorm():
        ru = rhs_u - sysf.amat @ u - sysf.bmat.T @ p
        rp = rhs_p - sysf.bmat @ u + sysf.c_mat @ p
        return np.sqrt(ru @ ru + rp @ rp)

    r0 = resnorm()
    rows = [(0, 1.0, "start")]
    fractions = []
    pending = sorted(scenario.events, key=lambda e: e.cycle) if inject else []
    cfg = scenario.recovery
    level_top = mg.coarsest_level + mg.n_levels - 1
    solvers = {}
    cycle = 0
    converged = False
    while cycle < scenario.max_cycles:
        vcycle_once(mg, u, p, rhs_u, rhs_p)
        project_pressure_mean(sysf, p)
        cycle += 1
        rel = resnorm() / r0
        rows.append((cycle, rel, "iterate"))
        if rel <= scenario.tol:
            converged = True
            break
        while pending and pending[0].cycle <= cycle:
            ev = pending.pop(0)
            flux = None
            if cfg.strategy == "global_dn":
                idx = partition.interior_vertices(ev.subdomain, level_top)
                flux = _frozen_flux(mg, u, p,
                                    np.concatenate([idx, idx + nv]), idx)
            meta = inject_fault((u, p), partition, ev, level_top, sysf)
            fractions.append(meta["fraction"])
            rows.append((cycle, resnorm() / r0, "fault"))
            if cfg.strategy == "none":
                continue
            if cfg.strategy == "global_dn":
                counter = {"c": cycle}

                def tick():
                    counter["c"] += 1
                    rows.append((counter["c"], resnorm() / r0, "decoupled"))

                recover_global_dn((u, p), mg, partition, ev, cfg,
                                  rhs_u, rhs_p, flux,
                                  pressure_mean=meta["pressure_mean"],
                                  on_cycle=tick)
                cycle = counter["c"]
            else:
                if ev.subdomain not in solvers:
                    vsets, k0 = _interior_vsets(mg, partition, ev.subdomain)
                    solvers[ev.subdomain] = SubdomainStokes(mg, vsets, k0)
                recover_local((u, p), mg, partition, ev, cfg, rhs_u, rhs_p,
                              pressure_mean=meta["pressure_mean"],
                              solver=solvers[ev.subdomain])
                rows.append((cycle, resnorm() / r0, "recovery"))
    return rows, cycle, converged, fractions


class _ScalarSub:
    """Scalar analog of SubdomainStokes for the Laplace experiments."""

    def __init__(self, smg, vsets, k0=0):
        self.smg = smg
        self.k0 = k0
        self.vsets = []
        self.mats = []
        for j, vs in enumerate(vsets):
            iv = np.setdiff1d(vs, smg.dirichlet[k0 + j], assume_unique=True)
            self.vsets.append(iv)
            self.mats.append(smg.mats[k0 + j][iv][:, iv].tocsr())
        self.parts = [_sgs_parts(m) for m in self.mats]
        self.prolongs = [None] + [
            smg.prolongs[k0 + j].tocsr()[self.vsets[j]][:, self.vsets[j - 1]]
            for j in range(1, len(self.mats))]
        self.coarse_lu = splu(self.mats[0].tocsc())

    def boundary_rhs(self, z_ext, rhs):
        return (rhs - self.smg.mats[-1] @ z_ext)[self.vsets[-1]]

    def _smooth(self, j, z, b, steps):
        from scipy.sparse.linalg import spsolve_triangular
        lo, up = self.parts[j]
        for _ in range(steps):
            r = b - self.mats[j] @ z
            dz = spsolve_triangular(lo, r, lower=True)
            dz += spsolve_triangular(up, r - self.mats[j] @ dz, lower=False)
            z += dz

    def _cycle(self, j, z, b, kind="v"):
        if j == 0:
            z[:] = self.coarse_lu.solve(b)
            return
        pre = (self.smg.pre_smooth if j == len(self.mats) - 1
               else self.smg.pre_smooth_coarse)
        self._smooth(j, z, b, pre)
        r = b - self.mats[j] @ z
        rc = self.prolongs[j].T @ r
        ec = np.zeros(self.mats[j - 1].shape[0])
        passes = 2 if (kind == "w" and j > 1) else 1
        for _ in range(passes):
            self._cycle(j - 1, ec, rc, "v" if kind == "f" else kind)
        z += self.prolongs[j] @ ec
        self._smooth(j, z, b, pre)
        if kind == "f":
            self._cycle(j, z, b, "v")

    def solve(self, z, b, config):
        top = len(self.mats) - 1
        if config.strategy == "smoother":
            self._smooth(top, z, b, config.cycles)
        elif config.strategy in ("minres", "pminres"):
            m = None
            if config.strategy == "pminres":
                d = 1.0 / self.mats[top].diagonal()
                m = LinearOperator(self.mats[top].shape,
                                   matvec=lambda x: d * x)
            out, _ = minres(self.mats[top], b, x0=z.copy(), M=m,
                            maxiter=config.cycles * KRYLOV_ITERS_PER_CYCLE,
                            **{_TOL_KW: 1e-14})
            z[:] = out
        elif config.strategy in ("vcycle", "fcycle", "wcycle"):
            for _ in range(config.cycles):
                self._cycle(top, z, b, config.strategy[0])
        else:
            raise ValueError(f"{config.strategy!r} is not a local subsolver")


def _run_laplace(scenario, smg, partition, inject):
    rng = np.random.default_rng(scenario.seed)
    rhs = smg.rhs
    z = rng.random(smg.mats[-1].shape[0])
    kmat = smg.mats[-1]
    k0 = partition.base_level
    level_top = len(smg.mats) - 1

    def resnorm():
        return np.linalg.norm(rhs - kmat @ z)

    def make_side(vsets):
        return _ScalarSub(smg, vsets, k0)

    r0 = resnorm()
    rows = [(0, 1.0, "start")]
    fractions = []
    pending = sorted(scenario.events, key=lambda e: e.cycle) if inject else []
    cfg = scenario.recovery
    solvers = {}
    cycle = 0
    converged = False
    while cycle < scenario.max_cycles:
        smg.cycle(level_top, z, rhs)
        cycle += 1
        rel = resnorm() / r0
        rows.append((cycle, rel, "iterate"))
        if rel <= scenario.tol:
            converged = True
            break
        while pending and pending[0].cycle <= cycle:
            ev = pending.pop(0)
            s_flux = None
            if cfg.strategy == "global_dn":
                iv = partition.interior_vertices(ev.subdomain, level_top)
                z_f = np.zeros_like(z)
                z_f[iv] = z[iv]
                s_flux = kmat @ z_f
            meta = inject_fault(z, partition, ev, level_top)
            fractions.append(meta["fraction"])
            rows.append((cycle, resnorm() / r0, "fault"))
            if cfg.strategy == "none":
                continue
            vsets = [partition.interior_vertices(ev.subdomain, k0 + j)
                     for j in range(len(smg.mats) - k0)]
            if cfg.strategy == "global_dn":
                f_side = make_side(vsets)
                h_vsets = [np.setdiff1d(np.arange(smg.mats[k0 + j].shape[0]),
                                        vsets[j], assume_unique=True)
                           for j in range(len(vsets))]
                h_side = make_side(h_vsets)
                b_h = (rhs - s_flux)[h_side.vsets[-1]]
                y = z[h_side.vsets[-1]].copy()
                z_ext = z.copy()
                z_ext[f_side.vsets[-1]] = 0.0
                b_f = f_side.boundary_rhs(z_ext, rhs)
                x = np.zeros(len(f_side.vsets[-1]))
                for _ in range(cfg.n_H):
                    h_side._cycle(len(h_side.mats) - 1, y, b_h)
                    for _ in range(cfg.eta_super):
                        f_side._cycle(len(f_side.mats) - 1, x, b_f)
                    z[h_side.vsets[-1]] = y
                    z[f_side.vsets[-1]] = x
                    cycle += 1
                    rows.append((cycle, resnorm() / r0, "decoupled"))
            else:
                if ev.subdomain not in solvers:
                    solvers[ev.subdomain] = make_side(vsets)
                side = solvers[ev.subdomain]
                z_ext = z.copy()
                z_ext[side.vsets[-1]] = 0.0
                b = side.boundary_rhs(z_ext, rhs)
                x = z[side.vsets[-1]].copy()
                side.solve(x, b, cfg)
                z[side.vsets[-1]] = x
                rows.append((cycle, resnorm() / r0, "recovery"))
    return rows, cycle, converged, fractions


def run_fault_experiment(scenario):
    """Faulted run plus fault-free baseline; both share seed and setup."""
    t0 = time.perf_counter()
    hier = MeshHierarchy(build_initial_domain(scenario.kind), scenario.level)
    if scenario.mode == "laplace":
        smg = ScalarMG(hier, f=1.0)
        partition = Partition(hier, scenario.subdomains, base_level=2)
        _, base_cycles, base_ok, _ = _run_laplace(scenario, smg, partition,
                                                  inject=False)
        rows, cycles, ok, fr = _run_laplace(scenario, smg, partition,
                                            inject=True)
    else:
        mg = _bench_mg(scenario.kind, scenario.level)
        partition = Partition(hier, scenario.subdomains,
                              base_level=mg.coarsest_level)
        _, base_cycles, base_ok, _ = _run_stokes(scenario, mg, partition,
                                                 inject=False)
        rows, cycles, ok, fr = _run_stokes(scenario, mg, partition,
                                           inject=True)
    return FaultReport(rows=rows, baseline_iterations=base_cycles,
                       iterations=cycles, seconds=time.perf_counter() - t0,
                       fractions=fr, converged=ok and base_ok)
