"""Identification of the energy correction parameters.

On every level the correction vector solves the root problem

    a(s_i, s_i) = a_h(u_h(gamma), u_h(gamma)) + c_h(p_h(gamma), p_h(gamma))

for each singular pair s_i that needs correcting (one for omega below
the double-root angle, two above).  A damped Newton iteration with a
finite-difference Jacobian does this per level; the per-level roots are
then extrapolated in the mesh size with a fitted exponent to the
asymptotic value gamma*.  gamma* depends only on the interior angle and
the corner element patch, not on the rest of the mesh.
"""

import numpy as np
from scipy.sparse.linalg import splu

from .corners import OMEGA2, ExactStokes, corner_pairs, solve_corner_eigenvalues
from .meshing import MeshHierarchy, build_initial_domain
from .stokes import StokesOperators

NEWTON_TOL_REL = 1e-11
NEWTON_MAX_ITER = 25
NEWTON_FD_STEP = 1e-5
GAMMA_RADIUS = 0.95


class GammaConvergenceError(RuntimeError):
    def __init__(self, message, history):
        super().__init__(f"{message}; residual history {history}")
        self.history = history


class _DefectEvaluator:
    """Evaluates the root functional g(gamma) with one LU per gamma.

    The saddle matrix depends on gamma but not on the singular pair, so
    all pairs share a factorization and differ only in their Dirichlet
    trace right-hand side.
    """

    def __init__(self, ops, exacts):
        self.ops = ops
        self.exacts = exacts
        mesh = ops.mesh
        nv = mesh.num_vertices
        dv = ops.dirichlet_vertices
        self.g_embeds = []
        for ex in exacts:
            vals = ex.velocity(mesh.vertices[dv])
            g = np.zeros(2 * nv)
            g[dv] = vals[:, 0]
            g[dv + nv] = vals[:, 1]
            self.g_embeds.append(g)

    def __call__(self, gamma):
        ops = self.ops
        mesh = ops.mesh
        nv = mesh.num_vertices
        system = ops.system(gamma)
        lu = splu(system.saddle_matrix())
        dofs = system.dirichlet_dofs
        out = np.empty(len(self.exacts))
        for i, (ex, g_embed) in enumerate(zip(self.exacts, self.g_embeds)):
            rhs_u = np.empty(2 * nv)
            rhs_u[:nv] = -(system.k_free @ g_embed[:nv])
            rhs_u[nv:] = -(system.k_free @ g_embed[nv:])
            rhs_u[dofs] = g_embed[dofs]
            rhs_p = -(ops.b @ g_embed)
            rhs = np.concatenate([rhs_u, rhs_p, [0.0]]
                                 if system.pressure_mode == "mean"
                                 else [rhs_u, rhs_p])
            x = lu.solve(rhs)
            u, p = x[:2 * nv], x[2 * nv:3 * nv]
            a_h = (u[:nv] @ (system.k_free @ u[:nv])
                   + u[nv:] @ (system.k_free @ u[nv:]))
            c_h = p @ (system.c_mat @ p)
            out[i] = ex.energy - a_h - c_h
        return out


def solve_gamma_newton(mesh, exacts, gamma0=None, stab="pressure_laplacian",
                       delta=None, tol_rel=NEWTON_TOL_REL,
                       max_iter=NEWTON_MAX_ITER, fd_step=NEWTON_FD_STEP,
                       radius=GAMMA_RADIUS):
    """Per-level root of the defect functional; returns (gamma, info).

    gamma always has two components; with a single pair the second is
    pinned to zero.  Iterates are projected into the max-norm ball of
    the given radius.  Raises GammaConvergenceError with the residual
    history if the tolerance is not met.
    """
    ops = StokesOperators(mesh, stab=stab, delta=delta)
    evaluate = _DefectEvaluator(ops, exacts)
    d = len(exacts)
    scale = exacts[0].energy
    gamma = np.zeros(2)
    if gamma0 is not None:
        gamma0 = np.atleast_1d(np.asarray(gamma0, dtype=float))
        gamma[:gamma0.size] = gamma0

    history = []
    for it in range(max_iter):
        g = evaluate(gamma)
        res = np.abs(g).max()
        history.append(res)
        if res <= tol_rel * scale:
            return gamma, {"iterations": it, "residuals": history}
        jac = np.empty((d, d))
        for j in range(d):
            step = np.zeros(2)
            step[j] = fd_step
            jac[:, j] = (evaluate(gamma + step) - g) / fd_step
        try:
            dg = np.linalg.solve(jac, -g)
        except np.linalg.LinAlgError as exc:
            raise GammaConvergenceError(f"singular Jacobian: {exc}",
                                        history) from None
        gamma = gamma.copy()
        gamma[:d] += dg
        gamma = np.clip(gamma, -radius, radius)
    raise GammaConvergenceError(
        f"no convergence in {max_iter} Newton iterations", history)


def contraction_ratios(omega, count):
    """Per-level contraction factors 2^-(2 - 2 lambda_i) of the roots.

    The level-l root approaches gamma* like a combination of these
    geometric modes, one per singular exponent below 1.
    """
    lams = solve_corner_eigenvalues(omega, count)
    return [2.0 ** (-(2.0 - 2.0 * lam)) for lam in lams]


def extrapolate_modes(levels, values, ratios):
    """Least-squares limit of  star + sum_k c_k ratios[k]^level.

    The contraction ratios are known from the corner exponents, so only
    the limit and the mode amplitudes are fitted.  Returns (star,
    amplitudes, max fit residual).
    """
    levels = np.asarray(levels, dtype=float)
    values = np.asarray(values, dtype=float)
    cols = [np.ones(len(levels))]
    cols += [np.asarray(r) ** levels for r in ratios]
    a = np.column_stack(cols)
    coef, *_ = np.linalg.lstsq(a, values, rcond=None)
    resid = np.abs(a @ coef - values).max()
    return coef[0], coef[1:], resid


def _fit_modes(levels, npairs):
    """Mode ratios and tail window for the extrapolation fit.

    On top of the singular modes there is a regular 4^-level background;
    it is fitted too once enough levels are available.  Early roots carry
    higher-order transients, so up to two of them are dropped while
    keeping one more point than fitted parameters.
    """
    n = len(levels)
    n_modes = npairs + 1 if n >= npairs + 3 else npairs
    drop = min(2, max(0, n - (n_modes + 2)))
    return n_modes, slice(drop, n)


def estimate_gamma_star(kind, max_level=None, start_level=1,
                        stab="pressure_laplacian", delta=None,
                        tol_rel=NEWTON_TOL_REL):
    """Nested-level Newton plus extrapolation for a corner domain kind.

    Returns a report dict with the per-level roots, Newton iteration
    counts, the fit residual, and the extrapolated gamma_star.  The slow
    second mode of two-correction angles needs one level more than the
    single-correction default.
    """
    coarse = build_initial_domain(kind)
    omega = coarse.omega
    npairs = 1 if omega < OMEGA2 else 2
    if max_level is None:
        max_level = 5 if npairs == 1 else 6
    pairs = corner_pairs(omega, npairs)
    exacts = [ExactStokes([p], coarse) for p in pairs]

    hier = MeshHierarchy(coarse, max_level)
    levels = list(range(start_level, max_level + 1))
    roots, iters = [], []
    guess = None
    for lvl in levels:
        gamma, info = solve_gamma_newton(hier.levels[lvl], exacts,
                                         gamma0=guess, stab=stab,
                                         delta=delta, tol_rel=tol_rel)
        roots.append(gamma.copy())
        iters.append(info["iterations"])
        guess = gamma

    roots_arr = np.array(roots)
    star = np.zeros(2)
    star[:] = roots_arr[-1]
    ratios = contraction_ratios(omega, npairs)
    fit_residual = np.nan
    if len(roots) >= npairs + 1:
        n_modes, win = _fit_modes(levels, npairs)
        modes = (ratios + [0.25])[:n_modes]
        lv = np.asarray(levels)[win]
        resids = []
        for j in range(npairs):
            star[j], _, r = extrapolate_modes(lv, roots_arr[win, j], modes)
            resids.append(r)
        fit_residual = max(resids)
    return {
        "kind": kind,
        "omega": float(omega),
        "n_corrections": npairs,
        "levels": levels,
        "gamma_h": roots_arr,
        "newton_iterations": iters,
        "gamma_star": star,
        "contraction_ratios": ratios,
        "fit_residual": fit_residual,
    }
