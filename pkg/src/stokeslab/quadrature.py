"""Triangle quadrature, including geometrically graded rules at a corner.

Weights are normalized so that ``integral = |T| * sum(w * f(x))``.  The
graded rule splits a triangle into geometric strips toward one vertex
(ratio 0.25, 12 layers by default) and applies the standard rule on each
piece, which handles ``r^s`` integrands with s > -2 to near machine
precision without special-casing the singularity.
"""

from functools import lru_cache

import numpy as np

_SQRT15 = np.sqrt(15.0)

# degree -> (barycentric points, weights summing to 1)
_RULES = {}

_RULES[2] = (
    np.array([[2 / 3, 1 / 6, 1 / 6],
              [1 / 6, 2 / 3, 1 / 6],
              [1 / 6, 1 / 6, 2 / 3]]),
    np.full(3, 1 / 3),
)

_a1 = (6.0 - _SQRT15) / 21.0
_a2 = (6.0 + _SQRT15) / 21.0
_pts5 = [np.full(3, 1 / 3)]
_wts5 = [9.0 / 40.0]
for _a, _w in [(_a1, (155.0 - _SQRT15) / 1200.0),
               (_a2, (155.0 + _SQRT15) / 1200.0)]:
    for _k in range(3):
        p = np.full(3, _a)
        p[_k] = 1.0 - 2.0 * _a
        _pts5.append(p)
        _wts5.append(_w)
_RULES[5] = (np.array(_pts5), np.array(_wts5))

# 12-point degree-6 rule
_pts6, _wts6 = [], []
for _a, _w in [(0.063089014491502, 0.050844906370207),
               (0.249286745170910, 0.116786275726379)]:
    for _k in range(3):
        p = np.full(3, _a)
        p[_k] = 1.0 - 2.0 * _a
        _pts6.append(p)
        _wts6.append(_w)
_b1, _b2 = 0.310352451033785, 0.636502499121399
_b3 = 1.0 - _b1 - _b2
for p in [(_b1, _b2, _b3), (_b2, _b3, _b1), (_b3, _b1, _b2),
          (_b1, _b3, _b2), (_b2, _b1, _b3), (_b3, _b2, _b1)]:
    _pts6.append(np.array(p))
    _wts6.append(0.082851075618374)
_RULES[6] = (np.array(_pts6), np.array(_wts6))


def triangle_rule(order):
    """Barycentric points and weights (summing to 1) for given degree."""
    for deg in sorted(_RULES):
        if deg >= order:
            return _RULES[deg]
    raise ValueError(f"no rule of degree {order}")


@lru_cache(maxsize=None)
def graded_rule(order=5, ratio=0.25, layers=12):
    """Composite rule graded toward barycentric vertex 0.

    Returns (points (N, 3), weights (N,)) with weights summing to 1.
    """
    bary, w = triangle_rule(order)
    sub = []
    scales = ratio ** np.arange(layers + 1)
    for s0, s1 in zip(scales[:-1], scales[1:]):
        a1 = np.array([1 - s1, s1, 0.0])
        a0 = np.array([1 - s0, s0, 0.0])
        b0 = np.array([1 - s0, 0.0, s0])
        b1 = np.array([1 - s1, 0.0, s1])
        sub.append((a1, a0, b0))
        sub.append((a1, b0, b1))
    sc = scales[-1]
    sub.append((np.array([1.0, 0.0, 0.0]),
                np.array([1 - sc, sc, 0.0]),
                np.array([1 - sc, 0.0, sc])))

    pts, wts = [], []
    for tri in sub:
        s = np.vstack(tri)
        # area fraction via the (l1, l2) reference coordinates
        r = s[:, 1:]
        frac = abs(np.linalg.det(np.vstack([r[1] - r[0], r[2] - r[0]])))
        pts.append(bary @ s)
        wts.append(w * frac)
    pts = np.vstack(pts)
    wts = np.concatenate(wts)
    pts.flags.writeable = False
    wts.flags.writeable = False
    return pts, wts


def _permute_to_vertex(bary, k):
    """Reorder columns so the grading vertex is local index k."""
    perm = np.roll([0, 1, 2], k)
    out = np.empty_like(bary)
    out[:, perm] = bary
    return out


def physical_points(corners, bary):
    """Map barycentric points into triangles; corners (m,3,2) -> (m,nq,2)."""
    return np.einsum("qk,mkd->mqd", bary, corners)


def integrate_mesh(mesh, fn, order=5, graded_vertex=None,
                   ratio=0.25, layers=12):
    """Integrate ``fn`` over the mesh.

    fn(points (m, nq, 2), tri_indices (m,)) must return values of shape
    (m, nq) or (m, nq, ...); trailing axes are summed (squared norms are
    the caller's job).  Elements touching graded_vertex use the graded
    rule oriented toward it.
    """
    areas = mesh.areas()
    tris = mesh.triangles
    corners = mesh.corners()
    total = 0.0

    if graded_vertex is None:
        corner_mask = np.zeros(len(tris), dtype=bool)
    else:
        corner_mask = (tris == graded_vertex).any(axis=1)

    groups = []
    reg = np.flatnonzero(~corner_mask)
    if len(reg):
        groups.append((reg, *triangle_rule(order)))
    if corner_mask.any():
        gb, gw = graded_rule(order, ratio, layers)
        loc = np.argmax(tris[corner_mask] == graded_vertex, axis=1)
        ct = np.flatnonzero(corner_mask)
        for k in range(3):
            sel = ct[loc == k]
            if len(sel):
                groups.append((sel, _permute_to_vertex(gb, k), gw))

    for sel, bary, w in groups:
        pts = physical_points(corners[sel], bary)
        vals = np.asarray(fn(pts, sel))
        while vals.ndim > 2:
            vals = vals.sum(axis=-1)
        total += (areas[sel] * (vals @ w)).sum()
    return total


def gauss_legendre_segment(a, b, n=24):
    """Points and weights for a straight segment from a to b."""
    x, w = np.polynomial.legendre.leggauss(n)
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    pts = mid[None, :] + x[:, None] * half[None, :]
    return pts, w * np.linalg.norm(half)
