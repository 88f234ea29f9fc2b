"""Triangular meshes: corner sectors, uniform refinement, layer extraction.

Corner domains are sectors ``0 < theta < omega`` of the square
``(-1, 1)^2`` with the re-entrant (or convex) corner at the origin.
The initial grid is an angularly symmetric fan of triangles around the
corner, anchored on the square boundary; square corners falling inside
the sector are filled with one extra triangle each.  Red refinement
keeps coarse vertex indices, so the corner vertex stays at index 0 on
every level.
"""

import io

import numpy as np

# boundary edge markers
DIRICHLET = 1
INFLOW = 2
OUTFLOW = 3

# number of fan triangles around the corner per domain kind
_FAN_COUNTS = {
    "corner_8_7pi": 8,
    "corner_5_4pi": 5,
    "lshape_3_2pi": 6,
    "corner_7_4pi": 7,
}

DOMAIN_ANGLES = {
    "corner_8_7pi": 8.0 * np.pi / 7.0,
    "corner_5_4pi": 5.0 * np.pi / 4.0,
    "lshape_3_2pi": 3.0 * np.pi / 2.0,
    "corner_7_4pi": 7.0 * np.pi / 4.0,
}

DOMAIN_KINDS = tuple(DOMAIN_ANGLES) + ("square", "channel")


class MeshError(Exception):
    pass


class TriMesh:
    """Conforming triangulation with marked boundary edges.

    Arrays are frozen after construction; refinement returns new meshes.

    Attributes
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, counterclockwise
    boundary_edges : (nbe, 3) int array, columns (v0, v1, marker)
    singular_vertex : int or None
        Vertex index of the re-entrant corner, if any.
    omega : float or None
        Interior angle at the singular vertex.
    """

    def __init__(self, vertices, triangles, boundary_edges,
                 singular_vertex=None, omega=None):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        self.boundary_edges = np.ascontiguousarray(boundary_edges,
                                                   dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise MeshError("vertices must be (nv, 2)")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise MeshError("triangles must be (nt, 3)")
        if self.boundary_edges.ndim != 2 or self.boundary_edges.shape[1] != 3:
            raise MeshError("boundary_edges must be (nbe, 3)")
        self.singular_vertex = singular_vertex
        self.omega = omega
        for a in (self.vertices, self.triangles, self.boundary_edges):
            a.flags.writeable = False
        self._edges = None

    @property
    def num_vertices(self):
        return self.vertices.shape[0]

    @property
    def num_triangles(self):
        return self.triangles.shape[0]

    def corners(self):
        """Vertex coordinates per triangle, shape (nt, 3, 2)."""
        return self.vertices[self.triangles]

    def areas(self):
        c = self.corners()
        d1 = c[:, 1] - c[:, 0]
        d2 = c[:, 2] - c[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def diameters(self):
        c = self.corners()
        e = np.stack([c[:, 1] - c[:, 0], c[:, 2] - c[:, 1],
                      c[:, 0] - c[:, 2]])
        return np.sqrt((e ** 2).sum(axis=2)).max(axis=0)

    @property
    def h(self):
        return float(self.diameters().max())

    def edges(self):
        """Unique undirected edges and per-triangle edge indices.

        Returns (edges (ne, 2) sorted pairs, tri_edges (nt, 3)) where
        tri_edges[:, k] is the edge opposite orderings (01, 12, 20).
        """
        if self._edges is None:
            t = self.triangles
            raw = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
            raw = np.sort(raw, axis=1)
            edges, inv = np.unique(raw, axis=0, return_inverse=True)
            tri_edges = inv.reshape(3, -1).T
            self._edges = (edges, tri_edges)
        return self._edges

    def boundary_vertices(self, markers=None):
        be = self.boundary_edges
        if markers is not None:
            be = be[np.isin(be[:, 2], markers)]
        return np.unique(be[:, :2])

    def gradients(self):
        """P1 basis gradients per triangle, shape (nt, 3, 2)."""
        c = self.corners()
        v0, v1, v2 = c[:, 0], c[:, 1], c[:, 2]
        area2 = 2.0 * self.areas()
        g = np.empty((self.num_triangles, 3, 2))
        # grad lambda_i = rot(opposite edge) / (2 |T|)
        for i, (a, b) in enumerate([(v1, v2), (v2, v0), (v0, v1)]):
            e = b - a
            g[:, i, 0] = -e[:, 1] / area2
            g[:, i, 1] = e[:, 0] / area2
        return g


def _square_boundary_point(theta):
    c, s = np.cos(theta), np.sin(theta)
    scale = max(abs(c), abs(s))
    return np.array([c, s]) / scale


def _corner_fan(kind):
    omega = DOMAIN_ANGLES[kind]
    nfan = _FAN_COUNTS[kind]
    thetas = omega * np.arange(nfan + 1) / nfan
    rays = [_square_boundary_point(t) for t in thetas]
    square_corners = {np.pi / 4: (1.0, 1.0), 3 * np.pi / 4: (-1.0, 1.0),
                      5 * np.pi / 4: (-1.0, -1.0), 7 * np.pi / 4: (1.0, -1.0)}

    verts = [np.zeros(2)]
    tris = []
    outer = []  # outer boundary chain of vertex indices
    idx_ray = []
    for p in rays:
        idx_ray.append(len(verts))
        verts.append(p)
    for j in range(nfan):
        lo, hi = thetas[j], thetas[j + 1]
        inside = [a for a in square_corners
                  if lo + 1e-12 < a < hi - 1e-12]
        outer.append(idx_ray[j])
        if inside:
            if len(inside) > 1:
                raise MeshError("fan too coarse for square corners")
            c = np.array(square_corners[inside[0]])
            ic = len(verts)
            verts.append(c)
            tris.append((0, idx_ray[j], idx_ray[j + 1]))
            tris.append((idx_ray[j], ic, idx_ray[j + 1]))
            outer.append(ic)
        else:
            tris.append((0, idx_ray[j], idx_ray[j + 1]))
    outer.append(idx_ray[nfan])

    bedges = [(0, outer[0], DIRICHLET)]
    for a, b in zip(outer[:-1], outer[1:]):
        bedges.append((a, b, DIRICHLET))
    bedges.append((outer[-1], 0, DIRICHLET))

    return TriMesh(np.array(verts), np.array(tris), np.array(bedges),
                   singular_vertex=0, omega=omega)


def _square():
    v = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    t = np.array([[0, 1, 2], [0, 2, 3]])
    be = np.array([[0, 1, DIRICHLET], [1, 2, DIRICHLET],
                   [2, 3, DIRICHLET], [3, 0, DIRICHLET]])
    return TriMesh(v, t, be)


# obstacle circles for the channel: (cx, cy, radius)
CHANNEL_OBSTACLES = ((1.0, 0.6, 0.22), (2.0, 0.4, 0.22), (3.0, 0.6, 0.22))
CHANNEL_LENGTH = 4.0


def _channel(nx=32, ny=8):
    x = np.linspace(0.0, CHANNEL_LENGTH, nx + 1)
    y = np.linspace(0.0, 1.0, ny + 1)
    xx, yy = np.meshgrid(x, y, indexing="ij")
    verts = np.column_stack([xx.ravel(), yy.ravel()])

    def vid(i, j):
        return i * (ny + 1) + j

    tris = []
    for i in range(nx):
        for j in range(ny):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            tris.append((a, b, c))
            tris.append((a, c, d))
    tris = np.array(tris)

    cent = verts[tris].mean(axis=1)
    keep = np.ones(len(tris), dtype=bool)
    for cx, cy, r in CHANNEL_OBSTACLES:
        keep &= (cent[:, 0] - cx) ** 2 + (cent[:, 1] - cy) ** 2 > r ** 2
    tris = tris[keep]

    used = np.unique(tris)
    remap = -np.ones(len(verts), dtype=np.int64)
    remap[used] = np.arange(len(used))
    verts = verts[used]
    tris = remap[tris]

    # boundary edges = edges used by exactly one triangle, oriented as in
    # their triangle so the domain lies to the left
    raw = np.vstack([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    key = np.sort(raw, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True,
                               return_counts=True)
    bnd = raw[counts[inv] == 1]
    mids = 0.5 * (verts[bnd[:, 0]] + verts[bnd[:, 1]])
    markers = np.full(len(bnd), DIRICHLET)
    markers[np.abs(mids[:, 0]) < 1e-12] = INFLOW
    markers[np.abs(mids[:, 0] - CHANNEL_LENGTH) < 1e-12] = OUTFLOW
    be = np.column_stack([bnd, markers])
    return TriMesh(verts, tris, be)


def build_initial_domain(kind, omega=None):
    """Coarse mesh for a named domain.

    kind is one of ``corner_8_7pi``, ``corner_5_4pi``, ``lshape_3_2pi``,
    ``corner_7_4pi``, ``square``, ``channel``.  For corner kinds an
    explicit omega must match the kind.
    """
    if kind not in DOMAIN_KINDS:
        raise MeshError(f"unknown domain kind {kind!r}")
    if kind in DOMAIN_ANGLES:
        if omega is not None and abs(omega - DOMAIN_ANGLES[kind]) > 1e-12:
            raise MeshError(f"omega {omega} does not match kind {kind!r}")
        return _corner_fan(kind)
    if omega is not None:
        raise MeshError(f"kind {kind!r} has no corner angle")
    return _square() if kind == "square" else _channel()


def _refine(mesh):
    """One red refinement step; returns (fine mesh, edge endpoint pairs).

    Fine vertex nv_coarse + e is the midpoint of coarse edge e.  Children
    of triangle t occupy rows 4t .. 4t+3.
    """
    nv = mesh.num_vertices
    t = mesh.triangles
    edges, tri_edges = mesh.edges()
    mid = nv + np.arange(len(edges))
    m01 = mid[tri_edges[:, 0]]
    m12 = mid[tri_edges[:, 1]]
    m20 = mid[tri_edges[:, 2]]
    children = np.stack([
        np.column_stack([t[:, 0], m01, m20]),
        np.column_stack([t[:, 1], m12, m01]),
        np.column_stack([t[:, 2], m20, m12]),
        np.column_stack([m01, m12, m20]),
    ], axis=1).reshape(-1, 3)

    newv = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    verts = np.vstack([mesh.vertices, newv])

    be = mesh.boundary_edges
    key = np.sort(be[:, :2], axis=1)
    loc = np.searchsorted(edges[:, 0] * (nv + 1) + edges[:, 1],
                          key[:, 0] * (nv + 1) + key[:, 1])
    bmid = mid[loc]
    be_fine = np.vstack([
        np.column_stack([be[:, 0], bmid, be[:, 2]]),
        np.column_stack([bmid, be[:, 1], be[:, 2]]),
    ])

    fine = TriMesh(verts, children, be_fine,
                   singular_vertex=mesh.singular_vertex, omega=mesh.omega)
    return fine, edges


def refine_uniform(mesh):
    """Red refinement: every triangle into four congruent children."""
    fine, _ = _refine(mesh)
    return fine


class MeshHierarchy:
    """Nested meshes from repeated uniform refinement.

    levels[0] is the initial grid, levels[-1] the finest.  edge_parents[k]
    gives, for refinement step k -> k+1, the coarse endpoint pair of every
    new midpoint vertex (in order of their fine indices).
    """

    def __init__(self, coarse, num_refinements):
        self.levels = [coarse]
        self.edge_parents = []
        for _ in range(num_refinements):
            fine, edges = _refine(self.levels[-1])
            self.levels.append(fine)
            self.edge_parents.append(edges)

    def __len__(self):
        return len(self.levels)

    @property
    def finest(self):
        return self.levels[-1]

    def prolongation(self, k):
        """P1 interpolation matrix from level k to level k+1 (scalar)."""
        import scipy.sparse as sp
        coarse = self.levels[k]
        nvc = coarse.num_vertices
        ep = self.edge_parents[k]
        nvf = nvc + len(ep)
        rows = np.concatenate([np.arange(nvc),
                               nvc + np.arange(len(ep)),
                               nvc + np.arange(len(ep))])
        cols = np.concatenate([np.arange(nvc), ep[:, 0], ep[:, 1]])
        vals = np.concatenate([np.ones(nvc), np.full(2 * len(ep), 0.5)])
        return sp.csr_matrix((vals, (rows, cols)), shape=(nvf, nvc))

    def ancestor_triangles(self, k_fine, k_coarse):
        """Map fine triangle index to its level-k_coarse ancestor."""
        nt_fine = self.levels[k_fine].num_triangles
        return np.arange(nt_fine) // 4 ** (k_fine - k_coarse)


def corner_layers(mesh):
    """Index arrays (L1, L2) of the two element layers at the corner.

    L1 holds the triangles touching the singular vertex, L2 those sharing
    at least one vertex with an L1 triangle but not in L1.
    """
    if mesh.singular_vertex is None:
        raise MeshError("mesh has no singular vertex")
    t = mesh.triangles
    in_l1 = (t == mesh.singular_vertex).any(axis=1)
    l1_verts = np.unique(t[in_l1])
    touches = np.isin(t, l1_verts).any(axis=1)
    l2 = np.flatnonzero(touches & ~in_l1)
    return np.flatnonzero(in_l1), l2


def validate_mesh(mesh):
    """Raise MeshError on conformity, orientation, or corner-angle defects."""
    areas = mesh.areas()
    if (areas <= 0).any():
        raise MeshError("non-positive triangle area (orientation?)")
    t = mesh.triangles
    raw = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    key = np.sort(raw, axis=1)
    edges, counts = np.unique(key, axis=0, return_counts=True)
    if counts.max() > 2:
        raise MeshError("edge shared by more than two triangles")
    bnd = edges[counts == 1]
    declared = np.sort(np.sort(mesh.boundary_edges[:, :2], axis=1), axis=0)
    if bnd.shape != declared.shape or not np.array_equal(
            np.sort(bnd, axis=0), declared):
        raise MeshError("boundary edges do not match triangulation boundary")
    # every vertex fan must be edge-connected (no pinched vertices)
    _check_fans(mesh)
    if mesh.singular_vertex is not None:
        _check_corner_angle(mesh)


def _check_fans(mesh):
    t = mesh.triangles
    nv = mesh.num_vertices
    tri_of = [[] for _ in range(nv)]
    for it, tri in enumerate(t):
        for v in tri:
            tri_of[v].append(it)
    for v in range(nv):
        tl = tri_of[v]
        if len(tl) <= 1:
            continue
        # union-find over triangles at v, joined by shared edges through v
        parent = list(range(len(tl)))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        others = [frozenset(t[it]) - {v} for it in tl]
        for i in range(len(tl)):
            for j in range(i + 1, len(tl)):
                if others[i] & others[j]:
                    parent[find(i)] = find(j)
        if len({find(i) for i in range(len(tl))}) != 1:
            raise MeshError(f"pinched vertex {v}")


def _check_corner_angle(mesh):
    v0 = mesh.singular_vertex
    t = mesh.triangles
    at = t[(t == v0).any(axis=1)]
    total = 0.0
    for tri in at:
        k = list(tri).index(v0)
        p = mesh.vertices[tri[k]]
        a = mesh.vertices[tri[(k + 1) % 3]] - p
        b = mesh.vertices[tri[(k + 2) % 3]] - p
        total += np.arccos(np.clip(
            a @ b / np.sqrt((a @ a) * (b @ b)), -1.0, 1.0))
    if mesh.omega is not None and abs(total - mesh.omega) > 1e-9:
        raise MeshError(f"corner angle {total} != omega {mesh.omega}")


def write_mesh(mesh, path):
    """Plain-text mesh format: counts, vertices, triangles, boundary edges."""
    buf = io.StringIO()
    buf.write(f"{mesh.num_vertices} {mesh.num_triangles} "
              f"{len(mesh.boundary_edges)}\n")
    for x, y in mesh.vertices:
        buf.write(f"{float(x)!r} {float(y)!r}\n")
    for a, b, c in mesh.triangles:
        buf.write(f"{a} {b} {c}\n")
    for a, b, m in mesh.boundary_edges:
        buf.write(f"{a} {b} {m}\n")
    if mesh.singular_vertex is not None:
        buf.write(f"singular_vertex {mesh.singular_vertex}\n")
    if mesh.omega is not None:
        buf.write(f"omega {float(mesh.omega)!r}\n")
    with open(path, "w") as f:
        f.write(buf.getvalue())


def read_mesh(path):
    with open(path) as f:
        toks = f.read().split("\n")
    nv, nt, nbe = map(int, toks[0].split())
    rows = 1
    verts = np.array([[float(w) for w in line.split()]
                      for line in toks[rows:rows + nv]])
    rows += nv
    tris = np.array([[int(w) for w in line.split()]
                     for line in toks[rows:rows + nt]])
    rows += nt
    bes = np.array([[int(w) for w in line.split()]
                    for line in toks[rows:rows + nbe]])
    rows += nbe
    sv, omega = None, None
    for line in toks[rows:]:
        w = line.split()
        if not w:
            continue
        if w[0] == "singular_vertex":
            sv = int(w[1])
        elif w[0] == "omega":
            omega = float(w[1])
        else:
            raise MeshError(f"unknown trailer {w[0]!r}")
    return TriMesh(verts, tris, bes, singular_vertex=sv, omega=omega)
