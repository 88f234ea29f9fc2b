"""Stabilized equal-order P1-P1 Stokes elements with energy correction.

The velocity block is a scalar Laplacian per component; pressure is
stabilized either by a plain pressure Laplacian or by PSPG, whose
element parameter delta_T is chosen so that the scheme is algebraically
equivalent to a condensed MINI element (delta_T = c_1T c_2 / alpha_T,
which evaluates to 1/160 on right isosceles patches).  The energy
correction scales the velocity stiffness on the first two element
layers around the corner by (1 - gamma_i) and the stabilization (and
its PSPG right-hand side) by (1 - gamma_i)^(-1).
"""

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .meshing import DIRICHLET, INFLOW, corner_layers
from .quadrature import physical_points, triangle_rule

C2_BUBBLE = 9.0 / 20.0  # integral of the unit bubble over |T|


def _as_load(f):
    if f is None:
        return None
    if callable(f):
        return f
    const = np.asarray(f, dtype=float).reshape(2)
    return lambda pts: np.broadcast_to(const, pts.shape[:-1] + (2,))


def scalar_stiffness(mesh, tri_idx=None):
    """P1 stiffness sum_T |T| grad_i . grad_j, optionally layer-restricted."""
    nv = mesh.num_vertices
    tris = mesh.triangles if tri_idx is None else mesh.triangles[tri_idx]
    areas = mesh.areas() if tri_idx is None else mesh.areas()[tri_idx]
    grads = mesh.gradients() if tri_idx is None else mesh.gradients()[tri_idx]
    vals = np.einsum("t,tid,tjd->tij", areas, grads, grads)
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    return sp.csr_matrix((vals.ravel(), (rows, cols)), shape=(nv, nv))


def divergence_matrix(mesh):
    """B[i, j] = -int phi_i div(basis_j) on the full space, (nv, 2 nv)."""
    nv = mesh.num_vertices
    tris = mesh.triangles
    areas = mesh.areas()
    grads = mesh.gradients()
    blocks = []
    for k in range(2):
        vals = -np.einsum("t,tj->tj", areas / 3.0, grads[:, :, k])
        vals = np.broadcast_to(vals[:, None, :], (len(tris), 3, 3))
        rows = np.repeat(tris, 3, axis=1).ravel()
        cols = np.tile(tris, (1, 3)).ravel()
        blocks.append(sp.csr_matrix((vals.ravel(), (rows, cols)),
                                    shape=(nv, nv)))
    return sp.hstack(blocks, format="csr")


def bubble_alpha(mesh):
    """alpha_T = int_T |grad phi_T|^2 for the cubic bubble 27 l1 l2 l3."""
    bary, w = triangle_rule(6)  # integrand is quartic, rule is exact
    grads = mesh.gradients()
    # grad phi_T = 27 sum_i (prod_{j != i} lam_j) grad lam_i
    lam = bary  # (nq, 3)
    prods = np.stack([lam[:, 1] * lam[:, 2], lam[:, 0] * lam[:, 2],
                      lam[:, 0] * lam[:, 1]], axis=1)  # (nq, 3)
    gb = 27.0 * np.einsum("qi,tid->tqd", prods, grads)
    val = np.einsum("q,tqd,tqd->t", w, gb, gb)
    return mesh.areas() * val


def mini_delta(mesh):
    """Element stabilization parameter of the condensed MINI element."""
    h2 = mesh.diameters() ** 2
    return C2_BUBBLE ** 2 * mesh.areas() / (h2 * bubble_alpha(mesh))


def stabilization_matrix(mesh, delta, tri_idx=None):
    """c(p, q) = sum_T delta_T h_T^2 |T| grad p . grad q, layer-restricted."""
    nv = mesh.num_vertices
    sel = slice(None) if tri_idx is None else tri_idx
    tris = mesh.triangles[sel]
    coef = (delta * mesh.diameters() ** 2 * mesh.areas())[sel]
    grads = mesh.gradients()[sel]
    vals = np.einsum("t,tid,tjd->tij", coef, grads, grads)
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    return sp.csr_matrix((vals.ravel(), (rows, cols)), shape=(nv, nv))


class StokesOperators:
    """Gamma-independent matrices for one mesh; systems are cheap rebuilds.

    The layer split k0 - g1 kl1 - g2 kl2 (and the inverse-scaled c
    parts) lets a Newton iteration on gamma reuse one assembly.
    """

    def __init__(self, mesh, stab="pressure_laplacian", delta=None):
        if stab not in ("pressure_laplacian", "pspg"):
            raise ValueError(f"unknown stabilization {stab!r}")
        self.mesh = mesh
        self.stab = stab
        if delta is None:
            delta = mini_delta(mesh)
        else:
            delta = np.broadcast_to(np.asarray(delta, dtype=float),
                                    (mesh.num_triangles,)).copy()
        self.delta = delta

        if mesh.singular_vertex is not None:
            self.l1, self.l2 = corner_layers(mesh)
        else:
            self.l1 = self.l2 = np.empty(0, dtype=np.int64)

        self.k0 = scalar_stiffness(mesh)
        self.kl1 = scalar_stiffness(mesh, self.l1)
        self.kl2 = scalar_stiffness(mesh, self.l2)
        self.c0 = stabilization_matrix(mesh, delta)
        self.cl1 = stabilization_matrix(mesh, delta, self.l1)
        self.cl2 = stabilization_matrix(mesh, delta, self.l2)
        self.b = divergence_matrix(mesh)

        # integral of each pressure hat function; doubles as lumped mass
        nv = mesh.num_vertices
        self.m_p = np.bincount(mesh.triangles.ravel(),
                               np.repeat(mesh.areas() / 3.0, 3),
                               minlength=nv)

        be = mesh.boundary_edges
        wall = be[np.isin(be[:, 2], (DIRICHLET, INFLOW)), :2]
        self.dirichlet_vertices = np.unique(wall)
        self.pressure_mode = ("mean" if len(self.dirichlet_vertices)
                              == len(mesh.boundary_vertices()) else "free")

    def system(self, gamma=(0.0, 0.0), f=None, dirichlet_data=None):
        return StokesSystem(self, gamma, f, dirichlet_data)


class StokesSystem:
    """One assembled (and boundary-eliminated) corrected Stokes system.

    Velocity dofs are ordered x components then y components.  k_free and
    c_mat are the gamma-scaled operators without boundary treatment; amat,
    bmat, rhs_u, rhs_p carry symmetric Dirichlet elimination.
    """

    def __init__(self, ops, gamma, f, dirichlet_data):
        g1, g2 = float(gamma[0]), float(gamma[1])
        mesh = ops.mesh
        if mesh.singular_vertex is None and (g1 != 0.0 or g2 != 0.0):
            raise ValueError("gamma correction needs a singular vertex")
        if max(abs(g1), abs(g2)) >= 1.0:
            raise ValueError(f"gamma {gamma} outside (-1, 1)")
        self.ops = ops
        self.mesh = mesh
        self.gamma = (g1, g2)

        self.k_free = ops.k0 - g1 * ops.kl1 - g2 * ops.kl2
        self.c_mat = (ops.c0
                      + (1.0 / (1.0 - g1) - 1.0) * ops.cl1
                      + (1.0 / (1.0 - g2) - 1.0) * ops.cl2)

        nv = mesh.num_vertices
        load = _as_load(f)
        self.f_vol = np.zeros(2 * nv)
        self.f_st = np.zeros(nv)
        if load is not None:
            bary, w = triangle_rule(5)
            pts = physical_points(mesh.corners(), bary)
            fv = load(pts.reshape(-1, 2)).reshape(len(mesh.triangles),
                                                  len(w), 2)
            areas = mesh.areas()
            contrib = np.einsum("t,q,qk,tqd->tkd", areas, w, bary, fv)
            for k in range(2):
                self.f_vol[k * nv:(k + 1) * nv] = np.bincount(
                    mesh.triangles.ravel(), contrib[:, :, k].ravel(),
                    minlength=nv)
            if ops.stab == "pspg":
                favg = np.einsum("q,tqd->td", w, fv)  # mean of f per element
                scale = ops.delta * mesh.diameters() ** 2 * areas
                lay = np.zeros(len(mesh.triangles))
                if mesh.singular_vertex is not None:
                    lay[ops.l1] = 1.0 / (1.0 - g1) - 1.0
                    lay[ops.l2] = 1.0 / (1.0 - g2) - 1.0
                scale = scale * (1.0 + lay)
                grads = mesh.gradients()
                vals = -np.einsum("t,td,tkd->tk", scale, favg, grads)
                self.f_st = np.bincount(mesh.triangles.ravel(), vals.ravel(),
                                        minlength=nv)

        dv = ops.dirichlet_vertices
        self.dirichlet_dofs = np.concatenate([dv, dv + nv])
        if dirichlet_data is None:
            gvals = np.zeros((len(dv), 2))
        else:
            gvals = np.asarray(dirichlet_data(mesh.vertices[dv]), dtype=float)
        self.g_dir = np.concatenate([gvals[:, 0], gvals[:, 1]])

        self._eliminate()

    def _eliminate(self):
        nv = self.mesh.num_vertices
        dv = self.ops.dirichlet_vertices
        g_embed = np.zeros(2 * nv)
        g_embed[self.dirichlet_dofs] = self.g_dir

        free_mask = np.ones(nv, dtype=bool)
        free_mask[dv] = False

        a_full = sp.block_diag([self.k_free, self.k_free], format="csr")
        rhs_u = self.f_vol - a_full @ g_embed
        rhs_p = self.f_st - self.ops.b @ g_embed

        mask_mat = sp.diags(free_mask.astype(float))
        k_bc = mask_mat @ self.k_free @ mask_mat + sp.diags(1.0 - free_mask)
        self.k_bc = k_bc.tocsr()
        self.amat = sp.block_diag([self.k_bc, self.k_bc], format="csr")

        colmask = np.ones(2 * nv)
        colmask[self.dirichlet_dofs] = 0.0
        self.bmat = (self.ops.b @ sp.diags(colmask)).tocsr()

        rhs_u[self.dirichlet_dofs] = self.g_dir
        self.rhs_u = rhs_u
        self.rhs_p = rhs_p
        self.free_vertex_mask = free_mask

    @property
    def m_p(self):
        return self.ops.m_p

    @property
    def pressure_mode(self):
        return self.ops.pressure_mode

    def saddle_matrix(self):
        """Symmetric block system, with a mean multiplier if needed."""
        a, b, c = self.amat, self.bmat, self.c_mat
        if self.pressure_mode == "mean":
            m = sp.csr_matrix(self.m_p[:, None])
            z1 = sp.csr_matrix((a.shape[0], 1))
            k = sp.bmat([[a, b.T, z1], [b, -c, -m], [z1.T, -m.T, None]],
                        format="csc")
        else:
            k = sp.bmat([[a, b.T], [b, -c]], format="csc")
        return k

    def residual(self, u, p):
        """Blockwise residual of the eliminated system."""
        ru = self.rhs_u - self.amat @ u - self.bmat.T @ p
        rp = self.rhs_p - self.bmat @ u + self.c_mat @ p
        return ru, rp


def assemble_stokes(mesh, gamma=(0.0, 0.0), stab="pressure_laplacian",
                    delta=None, f=None, dirichlet_data=None):
    """Corrected stabilized system on one mesh; see StokesSystem."""
    return StokesOperators(mesh, stab, delta).system(gamma, f,
                                                     dirichlet_data)


def solve_direct(system):
    """Sparse LU solve; pressure has zero weighted mean in 'mean' mode."""
    nv2 = system.amat.shape[0]
    nv = nv2 // 2
    k = system.saddle_matrix()
    rhs = np.concatenate([system.rhs_u, system.rhs_p])
    if system.pressure_mode == "mean":
        rhs = np.concatenate([rhs, [0.0]])
    x = splu(k).solve(rhs)
    return x[:nv2], x[nv2:nv2 + nv]


class MiniSystem:
    """Energy-corrected MINI element with explicit bubble dofs.

    Serves as the independent route for the stabilized P1-P1 scheme:
    condense() must reproduce the PSPG matrices, and solve() the P1
    solution part, exactly (up to roundoff) for elementwise constant f.
    """

    def __init__(self, mesh, gamma=(0.0, 0.0), f=None, dirichlet_data=None):
        self.base = assemble_stokes(mesh, gamma, stab="pspg", f=f,
                                    dirichlet_data=dirichlet_data)
        self.mesh = mesh
        nt = mesh.num_triangles
        nv = mesh.num_vertices
        g1, g2 = self.base.gamma
        ops = self.base.ops

        scale = np.ones(nt)
        if mesh.singular_vertex is not None:
            scale[ops.l1] = 1.0 - g1
            scale[ops.l2] = 1.0 - g2
        self.a_bb = np.repeat(scale * bubble_alpha(mesh), 2)

        # b(phi_T e_k, phi_i) = c2 |T| grad_i,k  for i in T
        grads = mesh.gradients()
        coef = C2_BUBBLE * mesh.areas()
        rows, cols, vals = [], [], []
        for k in range(2):
            rows.append(mesh.triangles.ravel())
            cols.append(np.repeat(2 * np.arange(nt) + k, 3))
            vals.append((coef[:, None] * grads[:, :, k]).ravel())
        self.b_bub = sp.csr_matrix(
            (np.concatenate(vals),
             (np.concatenate(rows), np.concatenate(cols))),
            shape=(nv, 2 * nt))

        self.f_bub = np.zeros(2 * nt)
        load = _as_load(f)
        if load is not None:
            bary, w = triangle_rule(5)
            pts = physical_points(mesh.corners(), bary)
            fv = load(pts.reshape(-1, 2)).reshape(nt, len(w), 2)
            bub = 27.0 * bary[:, 0] * bary[:, 1] * bary[:, 2]
            fb = np.einsum("t,q,q,tqd->td", mesh.areas(), w, bub, fv)
            self.f_bub = fb.ravel()

    def condense(self):
        """Eliminate bubbles: returns (C, f_st) of the equivalent scheme."""
        inv = 1.0 / self.a_bb
        c = (self.b_bub @ sp.diags(inv) @ self.b_bub.T).tocsr()
        f_st = -self.b_bub @ (inv * self.f_bub)
        return c, f_st

    def solve(self):
        """Direct solve of the full MINI system; returns (u_p1, p, beta)."""
        base = self.base
        nv2 = base.amat.shape[0]
        nb = len(self.a_bb)
        a_bb = sp.diags(self.a_bb)
        zb = sp.csr_matrix((nv2, nb))
        blocks = [[base.amat, zb, base.bmat.T],
                  [zb.T, a_bb, self.b_bub.T],
                  [base.bmat, self.b_bub, None]]
        rhs = [base.rhs_u, self.f_bub, base.rhs_p - base.f_st]
        if base.pressure_mode == "mean":
            m = sp.csr_matrix(base.m_p[:, None])
            z1 = sp.csr_matrix((nv2, 1))
            z2 = sp.csr_matrix((nb, 1))
            blocks = [[base.amat, zb, base.bmat.T, z1],
                      [zb.T, a_bb, self.b_bub.T, z2],
                      [base.bmat, self.b_bub, None, -m],
                      [z1.T, z2.T, -m.T, None]]
            rhs.append([0.0])
        k = sp.bmat(blocks, format="csc")
        x = splu(k).solve(np.concatenate(rhs))
        nv = nv2 // 2
        return x[:nv2], x[nv2 + nb:nv2 + nb + nv], x[nv2:nv2 + nb]


def assemble_mini(mesh, gamma=(0.0, 0.0), f=None, dirichlet_data=None):
    return MiniSystem(mesh, gamma, f, dirichlet_data)


def interpolate_velocity(mesh, velocity):
    """Nodal interpolant dof vector of an exact velocity field."""
    vals = velocity(mesh.vertices)
    return np.concatenate([vals[:, 0], vals[:, 1]])


def export_matrix_coo(mat, path):
    """Triplet text dump (header: rows cols nnz; lines: i j value)."""
    coo = sp.coo_matrix(mat)
    with open(path, "w") as f:
        f.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            f.write(f"{i} {j} {float(v)!r}\n")


def read_matrix_coo(path):
    with open(path) as f:
        nr, nc, nnz = map(int, f.readline().split())
        rows = np.empty(nnz, dtype=np.int64)
        cols = np.empty(nnz, dtype=np.int64)
        vals = np.empty(nnz)
        for k in range(nnz):
            i, j, v = f.readline().split()
            rows[k], cols[k], vals[k] = int(i), int(j), float(v)
    return sp.csr_matrix((vals, (rows, cols)), shape=(nr, nc))


def energy_defect(system, u, p, exact, form="full"):
    """Pollution functional of a discrete pair against the exact solution.

    form = "full" evaluates

        a(u - u_h, u - u_h) + 2 b(u - u_h, p - p_h)
        - d_h(u_h, u_h) - c_h(p_h, p_h)

    with graded quadrature for the exact-field terms.  form =
    "functional" uses the root form  a(u, u) - a_h(u_h, u_h)
    - c_h(p_h, p_h)  driven by the exact energy, which is what the
    correction identification solves for; exact must provide .energy.
    """
    from .quadrature import integrate_mesh

    mesh = system.mesh
    ops = system.ops
    nv = mesh.num_vertices
    g1, g2 = system.gamma

    c_term = float(p @ (system.c_mat @ p))
    if form == "functional":
        a_h = (u[:nv] @ (system.k_free @ u[:nv])
               + u[nv:] @ (system.k_free @ u[nv:]))
        return exact.energy - a_h - c_term

    if form != "full":
        raise ValueError(f"unknown defect form {form!r}")

    grads = mesh.gradients()
    tris = mesh.triangles
    gx = np.einsum("tkd,tk->td", grads, u[tris])
    gy = np.einsum("tkd,tk->td", grads, u[tris + nv])
    gh = np.stack([gx, gy], axis=1)  # (nt, 2, 2) per-element grad u_h
    div_h = gx[:, 0] + gy[:, 1]

    def grad_defect(pts, sel):
        g = exact.velocity_gradient(pts)
        return ((g - gh[sel][:, None, :, :]) ** 2).sum(axis=(-1, -2))

    t1 = integrate_mesh(mesh, grad_defect, order=5,
                        graded_vertex=mesh.singular_vertex)

    def pressure_defect(pts, sel):
        # (p - p_h) div u_h; div u = 0 for the exact field
        pe = exact.pressure(pts)
        ph = _p1_values(mesh, p, pts, sel)
        return (pe - ph) * div_h[sel][:, None]

    t2 = 2.0 * integrate_mesh(mesh, pressure_defect, order=5,
                              graded_vertex=mesh.singular_vertex)

    d_term = 0.0
    for g, kl in ((g1, ops.kl1), (g2, ops.kl2)):
        if g != 0.0:
            d_term += g * (u[:nv] @ (kl @ u[:nv])
                           + u[nv:] @ (kl @ u[nv:]))

    return t1 + t2 - d_term - c_term


def _p1_values(mesh, dofs, pts, sel):
    """Evaluate a P1 field at points grouped per element."""
    corners = mesh.corners()[sel]
    v0 = corners[:, 0]
    e1 = corners[:, 1] - v0
    e2 = corners[:, 2] - v0
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    d = pts - v0[:, None, :]
    l1 = (d[..., 0] * e2[:, None, 1] - d[..., 1] * e2[:, None, 0]) / \
        det[:, None]
    l2 = (e1[:, None, 0] * d[..., 1] - e1[:, None, 1] * d[..., 0]) / \
        det[:, None]
    l0 = 1.0 - l1 - l2
    vals = dofs[mesh.triangles[sel]]
    return (vals[:, 0, None] * l0 + vals[:, 1, None] * l1
            + vals[:, 2, None] * l2)
