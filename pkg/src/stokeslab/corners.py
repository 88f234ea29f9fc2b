"""Corner singularities of the no-slip Stokes problem on a sector.

The singular exponents at a corner of interior angle omega are the roots
lambda in (0, 2) of

    lambda^2 sin^2(omega) - sin^2(lambda omega) = 0,

which factors into sin(lambda omega) +- lambda sin(omega).  The minus
branch always vanishes at lambda = 1; that root is spurious (it carries
no velocity mode) except at the angle where it is a double root, namely
tan(omega) = omega.  We deflate the factor (lambda - 1) analytically and
refuse to separate the pair of roots that collide there.

Each exponent yields a stream function ``r^(lambda+1) Phi(theta)`` whose
angular part satisfies the no-slip conditions on both edges; velocity
and pressure follow by differentiation.  The pressure is the harmonic
conjugate expression

    p = 4 lambda r^(lambda-1) (D cos((lambda-1) theta)
                               - C sin((lambda-1) theta)),

with C, D the coefficients of the (lambda-1)-frequency part of Phi.
"""

import numpy as np
from scipy.optimize import brentq

from .quadrature import integrate_mesh, gauss_legendre_segment

# double root of the minus branch: tan(omega) = omega in (pi, 3 pi/2)
OMEGA2 = 4.493409457909064

# angle below which (and above pi) only one exponent lies in (0, 1)
OMEGA1 = 1.22552 * np.pi


class DegenerateAngleError(Exception):
    """Requested eigenvalues collide (omega at the double-root angle)."""


def _g_plus(lam, omega):
    return np.sin(lam * omega) + lam * np.sin(omega)


def _g_minus_deflated(lam, omega):
    """(sin(lam w) - lam sin w) / (lam - 1), stable through lam = 1."""
    lam = np.asarray(lam, dtype=float)
    d = lam - 1.0
    so, co = np.sin(omega), np.cos(omega)
    x = d * omega
    # sin(x)/x and (cos(x)-1)/x without cancellation
    sinc = np.sinc(x / np.pi)
    coshalf = np.where(np.abs(x) > 0, -2.0 * np.sin(x / 2.0) ** 2, 0.0)
    cosm1_over = np.divide(coshalf, x, out=np.zeros_like(x + 0.0),
                           where=np.abs(x) > 0)
    cosm1_over = np.where(np.abs(x) < 1e-8, -x / 2.0, cosm1_over)
    return so * omega * cosm1_over + co * omega * sinc - so


def _scan_roots(f, lo, hi, step):
    xs = np.arange(lo, hi + step, step)
    vals = f(xs)
    roots = []
    for k in np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0):
        roots.append(brentq(f, xs[k], xs[k + 1], xtol=1e-15, rtol=1e-15))
    for k in np.flatnonzero(vals == 0.0):
        roots.append(float(xs[k]))
    return roots


def solve_corner_eigenvalues(omega, count=1):
    """Smallest ``count`` singular exponents in (0, 2) for angle omega.

    The spurious root lambda = 1 is removed by deflation and only
    reappears if it is genuine.  Raises DegenerateAngleError when two of
    the requested roots coincide (omega within 1e-6 of the double-root
    angle when count = 2).
    """
    if not 0 < omega <= 2 * np.pi:
        raise ValueError(f"omega {omega} outside (0, 2 pi]")
    if count == 2 and abs(omega - OMEGA2) < 1e-6:
        raise DegenerateAngleError(
            f"exponents collide at omega = {OMEGA2}")
    eps = 1e-4
    roots = _scan_roots(lambda x: _g_plus(x, omega), eps, 2.0 - eps, 1e-3)
    roots += _scan_roots(lambda x: _g_minus_deflated(x, omega),
                         eps, 2.0 - eps, 1e-3)
    roots = sorted(roots)
    if len(roots) < count:
        raise DegenerateAngleError(
            f"only {len(roots)} exponents in (0, 2) for omega = {omega}")
    lams = roots[:count]
    for lam in lams:
        res = lam ** 2 * np.sin(omega) ** 2 - np.sin(lam * omega) ** 2
        if abs(res) > 1e-10:
            raise ArithmeticError(f"root residual {res} at lambda {lam}")
    return lams


class SingularPair:
    """Analytic Stokes eigenpair (velocity, pressure) at a corner.

    The corner sits at the origin with edges at theta = 0 and omega.
    Velocity vanishes on both edges and scales like r^lambda, pressure
    like r^(lambda-1).  coeffs = (A, B, C, D) are the angular weights of
    cos/sin((lambda+1) theta) and cos/sin((lambda-1) theta) in the
    stream function, normalized to unit Euclidean length.
    """

    def __init__(self, omega, lam, coeffs):
        self.omega = omega
        self.lam = lam
        self.coeffs = np.asarray(coeffs, dtype=float)

    def _polar(self, xy):
        xy = np.asarray(xy, dtype=float)
        r = np.hypot(xy[..., 0], xy[..., 1])
        theta = np.mod(np.arctan2(xy[..., 1], xy[..., 0]), 2.0 * np.pi)
        return r, theta

    def _phi(self, theta, deriv=0):
        a, b, c, d = self.coeffs
        lp, lm = self.lam + 1.0, self.lam - 1.0
        tp, tm = lp * theta, lm * theta
        if deriv == 0:
            return (a * np.cos(tp) + b * np.sin(tp)
                    + c * np.cos(tm) + d * np.sin(tm))
        if deriv == 1:
            return (lp * (-a * np.sin(tp) + b * np.cos(tp))
                    + lm * (-c * np.sin(tm) + d * np.cos(tm)))
        if deriv == 2:
            return (-lp ** 2 * (a * np.cos(tp) + b * np.sin(tp))
                    - lm ** 2 * (c * np.cos(tm) + d * np.sin(tm)))
        raise ValueError(deriv)

    def stream(self, xy):
        r, theta = self._polar(xy)
        return r ** (self.lam + 1.0) * self._phi(theta)

    def velocity(self, xy):
        """(..., 2) velocity u = (d psi / dy, -d psi / dx)."""
        r, theta = self._polar(xy)
        lam = self.lam
        phi, dphi = self._phi(theta), self._phi(theta, 1)
        st, ct = np.sin(theta), np.cos(theta)
        rl = r ** lam
        u1 = rl * ((lam + 1.0) * st * phi + ct * dphi)
        u2 = rl * (-(lam + 1.0) * ct * phi + st * dphi)
        return np.stack([u1, u2], axis=-1)

    def velocity_gradient(self, xy):
        """(..., 2, 2) array G with G[i, j] = d u_i / d x_j."""
        r, theta = self._polar(xy)
        lam = self.lam
        phi = self._phi(theta)
        dphi = self._phi(theta, 1)
        ddphi = self._phi(theta, 2)
        st, ct = np.sin(theta), np.cos(theta)
        u_ang = [(lam + 1.0) * st * phi + ct * dphi,
                 -(lam + 1.0) * ct * phi + st * dphi]
        du_ang = [(lam + 1.0) * ct * phi + lam * st * dphi + ct * ddphi,
                  (lam + 1.0) * st * phi - lam * ct * dphi + st * ddphi]
        rl = r ** (lam - 1.0)
        g = np.empty(r.shape + (2, 2))
        for i in range(2):
            g[..., i, 0] = rl * (lam * ct * u_ang[i] - st * du_ang[i])
            g[..., i, 1] = rl * (lam * st * u_ang[i] + ct * du_ang[i])
        return g

    def pressure(self, xy):
        r, theta = self._polar(xy)
        lam = self.lam
        _, _, c, d = self.coeffs
        tm = (lam - 1.0) * theta
        return 4.0 * lam * r ** (lam - 1.0) * (d * np.cos(tm)
                                               - c * np.sin(tm))


def make_singular_pair(omega, lam):
    """Construct the no-slip eigenpair for a computed exponent.

    The angular coefficients span the kernel of the 4x4 boundary
    condition matrix; a one-dimensional kernel is required.
    """
    lp, lm = lam + 1.0, lam - 1.0
    m = np.array([
        [1.0, 0.0, 1.0, 0.0],
        [0.0, lp, 0.0, lm],
        [np.cos(lp * omega), np.sin(lp * omega),
         np.cos(lm * omega), np.sin(lm * omega)],
        [-lp * np.sin(lp * omega), lp * np.cos(lp * omega),
         -lm * np.sin(lm * omega), lm * np.cos(lm * omega)],
    ])
    _, s, vt = np.linalg.svd(m)
    if s[-1] > 1e-8 * s[0]:
        raise ArithmeticError(
            f"no angular mode: smallest singular value {s[-1]}")
    if s[-2] < 1e-6 * s[0]:
        raise DegenerateAngleError("two-dimensional angular kernel")
    coeffs = vt[-1]
    k = np.argmax(np.abs(coeffs))
    if coeffs[k] < 0:
        coeffs = -coeffs
    return SingularPair(omega, lam, coeffs)


def corner_pairs(omega, count):
    """The ``count`` most singular eigenpairs for angle omega."""
    return [make_singular_pair(omega, lam)
            for lam in solve_corner_eigenvalues(omega, count)]


def sum_velocity(pairs, xy):
    out = pairs[0].velocity(xy)
    for p in pairs[1:]:
        out = out + p.velocity(xy)
    return out


def sum_velocity_gradient(pairs, xy):
    out = pairs[0].velocity_gradient(xy)
    for p in pairs[1:]:
        out = out + p.velocity_gradient(xy)
    return out


def sum_pressure(pairs, xy):
    out = pairs[0].pressure(xy)
    for p in pairs[1:]:
        out = out + p.pressure(xy)
    return out


def exact_energy(pairs, mesh, n_gauss=32):
    """Dirichlet energy of the (summed) pair over the meshed sector.

    Since the pair solves the homogeneous Stokes equations, the volume
    integral reduces to the boundary integral of (du/dn - p n) . u; the
    no-slip corner edges contribute nothing, and on the remaining edges
    the integrand is analytic, so per-segment Gauss quadrature converges
    to machine precision.  Coarse-level boundary edges suffice.
    """
    x0 = mesh.vertices[mesh.singular_vertex]
    total = 0.0
    for v0, v1, _ in mesh.boundary_edges:
        a, b = mesh.vertices[v0], mesh.vertices[v1]
        if (np.linalg.norm(a - x0) < 1e-14
                or np.linalg.norm(b - x0) < 1e-14):
            continue  # no-slip edge through the corner
        pts, w = gauss_legendre_segment(a, b, n_gauss)
        t = b - a
        n = np.array([t[1], -t[0]]) / np.linalg.norm(t)  # outward (CCW chain)
        u = sum_velocity(pairs, pts)
        g = sum_velocity_gradient(pairs, pts)
        p = sum_pressure(pairs, pts)
        flux = np.einsum("qij,j->qi", g, n) - p[:, None] * n[None, :]
        total += ((flux * u).sum(axis=1) * w).sum()
    return total


def mean_pressure(pairs, mesh, order=6):
    """Area mean of the summed pair pressure over the meshed domain.

    Sharper-than-default grading: the mean enters pressure error norms
    as a constant offset, so it is computed a couple of digits beyond
    the norms themselves.
    """
    def fn(pts, tris):
        return sum_pressure(pairs, pts)
    area = mesh.areas().sum()
    return integrate_mesh(mesh, fn, order=order, ratio=0.5, layers=25,
                          graded_vertex=mesh.singular_vertex) / area


class ExactStokes:
    """Reference solution built from corner eigenpairs on a meshed sector.

    Bundles the summed fields, the zero-mean pressure shift over the
    domain, and the exact energy a(u, u) from the boundary oracle; this
    is the object convergence studies and the correction identification
    consume.
    """

    def __init__(self, pairs, mesh):
        self.pairs = list(pairs)
        self.mesh = mesh
        self.pressure_shift = mean_pressure(self.pairs, mesh)
        self.energy = exact_energy(self.pairs, mesh)

    def velocity(self, xy):
        return sum_velocity(self.pairs, xy)

    def velocity_gradient(self, xy):
        return sum_velocity_gradient(self.pairs, xy)

    def pressure(self, xy):
        return sum_pressure(self.pairs, xy) - self.pressure_shift


def weighted_norm(mesh, fn, alpha, k=0, grad_fn=None, order=5,
                  x0=None, ratio=0.25, layers=12):
    """Kondratev-weighted norm with weight r^alpha distance to the corner.

    k = 0: ||r^alpha f||.  k = 1 additionally needs grad_fn and returns
    (||r^(alpha-1) f||^2 + ||r^alpha grad f||^2)^(1/2).  fn maps point
    blocks (m, nq, 2) and triangle indices to values whose trailing axes
    are squared and summed.
    """
    sv = mesh.singular_vertex
    if x0 is None:
        if sv is None:
            raise ValueError("weighted norm needs a corner vertex")
        x0 = mesh.vertices[sv]

    def weight(pts, power):
        r = np.hypot(pts[..., 0] - x0[0], pts[..., 1] - x0[1])
        return r ** power

    def sq(vals):
        vals = np.asarray(vals) ** 2
        while vals.ndim > 2:
            vals = vals.sum(axis=-1)
        return vals

    def f0(pts, tris):
        return weight(pts, 2.0 * (alpha - k)) * sq(fn(pts, tris))

    total = integrate_mesh(mesh, f0, order=order, graded_vertex=sv,
                           ratio=ratio, layers=layers)
    if k == 1:
        def f1(pts, tris):
            return weight(pts, 2.0 * alpha) * sq(grad_fn(pts, tris))
        total += integrate_mesh(mesh, f1, order=order, graded_vertex=sv,
                                ratio=ratio, layers=layers)
    return float(np.sqrt(total))
