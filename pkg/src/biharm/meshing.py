"""Polygonal domains and nested triangulations with corner grading.

A mesh hierarchy is produced by repeated 4-way refinement: every edge
receives one new node and every triangle is split into four.  On edges
emanating from a flagged corner the new node is placed at a fraction
kappa in (0, 1/2] of the edge length from the corner instead of the
midpoint, which grades the mesh geometrically toward the corner while
keeping all triangles shape regular.  Point indices are stable across
levels (refinement only appends points), and each mesh keeps a reference
to the mesh it was refined from, so ancestry of any triangle can be
walked back to level 0.
"""

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GradingRule",
    "PolygonDomain",
    "Mesh",
    "make_domain",
    "builtin_domain",
    "graded_refine",
    "refine_hierarchy",
    "mesh_layers",
    "locate_point",
    "polygon_contains",
    "polygon_boundary_distance",
    "quasi_random_interior",
    "write_mesh",
    "read_mesh",
]

_BARY_TOL = 1e-12


@dataclass(frozen=True)
class GradingRule:
    """Grading factor for one corner; kappa = 1/2 reproduces midpoints."""

    kappa: float

    def __post_init__(self):
        if not (0.0 < self.kappa <= 0.5):
            raise ValueError(f"kappa must lie in (0, 1/2], got {self.kappa!r}")


class PolygonDomain:
    """Simple closed polygon with flagged (graded) corners.

    ``vertices`` are ordered counterclockwise; ``interior_angles[i]`` is
    the interior opening at vertex i, recomputed from coordinates.
    """

    def __init__(self, vertices, graded_corners=()):
        self.vertices = np.asarray(vertices, dtype=float)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2 or len(self.vertices) < 3:
            raise ValueError("vertices must be an (N, 2) array with N >= 3")
        self.graded_corners = frozenset(int(c) for c in graded_corners)
        n = len(self.vertices)
        for c in self.graded_corners:
            if not 0 <= c < n:
                raise ValueError(f"graded corner index {c} out of range")
        if _signed_area(self.vertices) <= 0.0:
            raise ValueError("polygon must be counterclockwise with positive area")
        self.interior_angles = _interior_angles(self.vertices)
        bad = [
            i
            for i, a in enumerate(self.interior_angles)
            if not (0.0 < a < 2.0 * math.pi) or abs(a - math.pi) < 1e-12
        ]
        if bad:
            raise ValueError(f"degenerate interior angle at vertices {bad}")

    def __repr__(self):
        return (
            f"PolygonDomain({len(self.vertices)} vertices, "
            f"graded={sorted(self.graded_corners)})"
        )


def _signed_area(pts):
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _interior_angles(pts):
    prev = np.roll(pts, 1, axis=0)
    nxt = np.roll(pts, -1, axis=0)
    a = nxt - pts
    b = prev - pts
    ang = np.arctan2(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0], np.sum(a * b, axis=1))
    return np.where(ang > 0.0, ang, ang + 2.0 * math.pi)


@dataclass
class Mesh:
    """One level of a nested triangulation."""

    domain: PolygonDomain
    points: np.ndarray        # (npoints, 2)
    triangles: np.ndarray     # (ntriangles, 3) point indices, counterclockwise
    level: int
    parent: np.ndarray        # (ntriangles,) triangle index one level up, -1 at level 0
    corner_vertex: np.ndarray # (npoints,) corner id or -1
    coarser: "Mesh | None" = None
    _edges: np.ndarray = field(default=None, repr=False)
    _boundary_edges: frozenset = field(default=None, repr=False)
    _children: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=float)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        self.parent = np.asarray(self.parent, dtype=np.int64)
        self.corner_vertex = np.asarray(self.corner_vertex, dtype=np.int64)
        areas = self.areas()
        if np.any(areas <= 0.0):
            bad = int(np.argmin(areas))
            raise ValueError(f"triangle {bad} is degenerate or clockwise")

    # -- geometry ---------------------------------------------------------

    def areas(self):
        p = self.points[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def edges(self):
        """Unique undirected edges as sorted (lo, hi) index pairs, sorted."""
        if self._edges is None:
            raw = self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
            raw = np.sort(raw, axis=1)
            self._edges = np.unique(raw, axis=0)
        return self._edges

    @property
    def boundary_edges(self):
        """Edges incident to exactly one triangle, as a frozenset of pairs."""
        if self._boundary_edges is None:
            raw = np.sort(self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
            uniq, counts = np.unique(raw, axis=0, return_counts=True)
            if np.any(counts > 2):
                raise ValueError("non-manifold edge: more than two incident triangles")
            self._boundary_edges = frozenset(
                (int(a), int(b)) for a, b in uniq[counts == 1]
            )
        return self._boundary_edges

    @property
    def boundary_points(self):
        idx = sorted({i for e in self.boundary_edges for i in e})
        return np.asarray(idx, dtype=np.int64)

    def children_of(self, t):
        """Triangle indices on this mesh whose parent is t (one level up)."""
        if self._children is None:
            order = np.argsort(self.parent, kind="stable")
            self._children = order.reshape(-1, 4) if self.level > 0 else None
        if self._children is None:
            raise ValueError("level-0 mesh has no parents")
        return self._children[t]

    def corner_point(self, corner):
        """Point index of a domain corner on this mesh."""
        hits = np.nonzero(self.corner_vertex == corner)[0]
        if len(hits) != 1:
            raise ValueError(f"corner {corner} not present on mesh")
        return int(hits[0])

    def min_angle(self):
        p = self.points[self.triangles]
        angles = []
        for i in range(3):
            a = p[:, (i + 1) % 3] - p[:, i]
            b = p[:, (i + 2) % 3] - p[:, i]
            cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
            dot = np.sum(a * b, axis=1)
            angles.append(np.arctan2(np.abs(cross), dot))
        return float(np.min(angles))


# -- builtin domains ------------------------------------------------------


def builtin_domain(name):
    """The three experiment domains with their deterministic level-0 meshes.

    square        (-1,1)^2, four triangles fanning the center point
    lshape        (-1,1)^2 minus the closed quadrant [0,1]x[-1,0]; six
                  triangles fanning the reentrant corner at the origin
                  (opening 3pi/2, flagged for grading)
    convex_11pi12 kite with largest opening 11pi/12 at the origin
                  (flagged); four triangles fanning the centroid, so the
                  coarsest Stokes system is already solvable
    """
    if name == "square":
        verts = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
        domain = PolygonDomain(verts, graded_corners=())
        points = np.array(verts + [(0.0, 0.0)])
        tris = np.array([(0, 1, 4), (1, 2, 4), (2, 3, 4), (3, 0, 4)])
        corner = np.array([0, 1, 2, 3, -1])
    elif name == "lshape":
        verts = [
            (0.0, 0.0),
            (1.0, 0.0),
            (1.0, 1.0),
            (-1.0, 1.0),
            (-1.0, -1.0),
            (0.0, -1.0),
        ]
        domain = PolygonDomain(verts, graded_corners={0})
        points = np.array(verts + [(0.0, 1.0), (-1.0, 0.0)])
        tris = np.array(
            [(0, 1, 2), (0, 2, 6), (0, 6, 3), (0, 3, 7), (0, 7, 4), (0, 4, 5)]
        )
        corner = np.array([0, 1, 2, 3, 4, 5, -1, -1])
    elif name == "convex_11pi12":
        c1 = math.tan(11.0 * math.pi / 24.0)
        c2 = math.tan(13.0 * math.pi / 72.0)
        s = c1 / c2 + 1.0
        verts = [
            (0.0, 0.0),
            (2.0 / s, -2.0 * c1 / s),
            (2.0, 0.0),
            (2.0 / s, 2.0 * c1 / s),
        ]
        domain = PolygonDomain(verts, graded_corners={0})
        center = np.mean(verts, axis=0)
        points = np.array(verts + [tuple(center)])
        tris = np.array([(0, 1, 4), (1, 2, 4), (2, 3, 4), (3, 0, 4)])
        corner = np.array([0, 1, 2, 3, -1])
    else:
        raise ValueError(f"unknown builtin domain {name!r}")
    mesh = Mesh(
        domain=domain,
        points=points,
        triangles=tris,
        level=0,
        parent=np.full(len(tris), -1),
        corner_vertex=corner,
    )
    _check_graded_edges(mesh)
    return domain, mesh


def make_domain(vertices, graded_corners, triangles=None):
    """Custom polygon; default level-0 mesh is a fan from vertex 0."""
    domain = PolygonDomain(vertices, graded_corners)
    n = len(domain.vertices)
    if triangles is None:
        triangles = [(0, i, i + 1) for i in range(1, n - 1)]
    tris = np.asarray(triangles, dtype=np.int64)
    mesh = Mesh(
        domain=domain,
        points=domain.vertices.copy(),
        triangles=tris,
        level=0,
        parent=np.full(len(tris), -1),
        corner_vertex=np.arange(n),
    )
    _check_graded_edges(mesh)
    return domain, mesh


def _graded_point_index(mesh, rules=None):
    """Map from point index to kappa for flagged corners (rules override)."""
    flagged = {}
    for c in mesh.domain.graded_corners:
        hits = np.nonzero(mesh.corner_vertex == c)[0]
        if len(hits) == 1:
            flagged[int(hits[0])] = 0.5
    if rules:
        for c, rule in rules.items():
            if int(c) not in mesh.domain.graded_corners:
                raise ValueError(f"corner {c} is not flagged for grading")
            kappa = rule.kappa if isinstance(rule, GradingRule) else float(rule)
            if not (0.0 < kappa <= 0.5):
                raise ValueError(f"kappa must lie in (0, 1/2], got {kappa!r}")
            hits = np.nonzero(mesh.corner_vertex == int(c))[0]
            if len(hits) != 1:
                raise ValueError(f"corner {c} not present on mesh")
            flagged[int(hits[0])] = kappa
    return flagged


def _check_graded_edges(mesh):
    flagged = _graded_point_index(mesh)
    if not flagged:
        return
    e = mesh.edges
    both = np.isin(e[:, 0], list(flagged)) & np.isin(e[:, 1], list(flagged))
    if np.any(both):
        i = int(np.nonzero(both)[0][0])
        raise ValueError(
            f"edge {tuple(e[i])} joins two graded corners; "
            "grading is ambiguous on such an edge"
        )


def graded_refine(mesh, rules=None):
    """One 4-way refinement sweep with corner grading.

    ``rules`` maps corner ids to GradingRule (or plain kappa floats); only
    corners flagged in the domain are allowed.  Flagged corners without a
    rule refine with midpoints.  Every edge receives exactly one node,
    placed at kappa fractions from a graded corner endpoint and at the
    midpoint otherwise, so the refined mesh is conforming by construction.
    """
    _check_graded_edges(mesh)
    flagged = _graded_point_index(mesh, rules)
    edges = mesh.edges
    npts = len(mesh.points)

    lo, hi = edges[:, 0], edges[:, 1]
    frac = np.full(len(edges), 0.5)
    if flagged:
        kap = np.full(npts, np.nan)
        for p, k in flagged.items():
            kap[p] = k
        lo_graded = ~np.isnan(kap[lo])
        hi_graded = ~np.isnan(kap[hi])
        if np.any(lo_graded & hi_graded):
            i = int(np.nonzero(lo_graded & hi_graded)[0][0])
            raise ValueError(f"edge {tuple(edges[i])} joins two graded corners")
        # node measured from the graded endpoint A: D = A + kappa (B - A)
        frac = np.where(lo_graded, kap[lo], frac)
        frac = np.where(hi_graded, 1.0 - kap[hi], frac)
    new_pts = mesh.points[lo] + frac[:, None] * (mesh.points[hi] - mesh.points[lo])

    # edge nodes are appended in lexicographic edge order, so the node of
    # edge (a, b) is found by binary search on the packed edge codes
    code = edges[:, 0] * npts + edges[:, 1]

    def node(u, v):
        a, b = np.minimum(u, v), np.maximum(u, v)
        return npts + np.searchsorted(code, a * npts + b)

    tri = mesh.triangles
    mab = node(tri[:, 0], tri[:, 1])
    mbc = node(tri[:, 1], tri[:, 2])
    mca = node(tri[:, 2], tri[:, 0])
    kids = np.empty((len(tri), 4, 3), dtype=np.int64)
    kids[:, 0] = np.stack([tri[:, 0], mab, mca], axis=1)
    kids[:, 1] = np.stack([tri[:, 1], mbc, mab], axis=1)
    kids[:, 2] = np.stack([tri[:, 2], mca, mbc], axis=1)
    kids[:, 3] = np.stack([mab, mbc, mca], axis=1)
    tris = kids.reshape(-1, 3)
    parents = np.repeat(np.arange(len(tri)), 4)

    points = np.vstack([mesh.points, new_pts])
    corner = np.concatenate([mesh.corner_vertex, np.full(len(new_pts), -1)])
    fine = Mesh(
        domain=mesh.domain,
        points=points,
        triangles=np.asarray(tris),
        level=mesh.level + 1,
        parent=np.asarray(parents),
        corner_vertex=corner,
        coarser=mesh,
    )
    # degenerate children would violate the minimum-area contract
    ratio = fine.areas().reshape(-1, 4) / mesh.areas()[:, None]
    if np.any(ratio < 1e-14):
        t = int(np.nonzero(ratio < 1e-14)[0][0])
        raise ValueError(f"refinement produced a degenerate child of triangle {t}")
    return fine


def refine_hierarchy(mesh, levels, rules=None):
    """Meshes at levels 0..levels (index = level)."""
    out = [mesh]
    for _ in range(levels):
        out.append(graded_refine(out[-1], rules))
    return out


def mesh_layers(mesh, corner):
    """Layer index per triangle, relative to one graded corner.

    Only triangles whose level-0 ancestor touches the corner belong to a
    layer; they get the level of their deepest corner-attached ancestor
    (n for the triangles still touching the corner, 0 for the rest of the
    original corner patch).  All other triangles get -1.
    """
    if corner not in mesh.domain.graded_corners:
        raise ValueError(f"corner {corner} is not flagged for grading")
    cp = mesh.corner_point(corner)
    chain = []
    m = mesh
    while m is not None:
        chain.append(m)
        m = m.coarser
    chain.reverse()  # level 0 first
    if chain[0].level != 0:
        raise ValueError("mesh hierarchy does not reach level 0")

    layers = np.full(len(mesh.triangles), -1, dtype=np.int64)
    attached_level = np.full(len(mesh.triangles), -1, dtype=np.int64)
    # walk each triangle's ancestor chain once, vectorized level by level
    idx = np.arange(len(mesh.triangles))
    anc = idx.copy()
    touch = np.zeros((len(chain), len(mesh.triangles)), dtype=bool)
    for lev in range(len(chain) - 1, -1, -1):
        m = chain[lev]
        touch[lev] = np.any(m.triangles[anc] == cp, axis=1)
        if lev > 0:
            anc = m.parent[anc]
    # deepest attached ancestor; require attachment at level 0
    for lev in range(len(chain)):
        attached_level[touch[lev]] = lev
    layers = np.where(touch[0], attached_level, -1)
    return layers


def _barycentric(points, tri_pts, p):
    d1 = tri_pts[1] - tri_pts[0]
    d2 = tri_pts[2] - tri_pts[0]
    det = d1[0] * d2[1] - d1[1] * d2[0]
    r = p - tri_pts[0]
    l1 = (r[0] * d2[1] - r[1] * d2[0]) / det
    l2 = (d1[0] * r[1] - d1[1] * r[0]) / det
    return np.array([1.0 - l1 - l2, l1, l2])


def locate_point(mesh, p):
    """Containing triangle and barycentric coordinates of a point.

    Descends from level 0 through the parent tree (cost proportional to
    the level), so points can be located on fine meshes without scanning
    all triangles.  Ties on shared edges go to the lowest triangle index.
    """
    p = np.asarray(p, dtype=float)
    chain = []
    m = mesh
    while m is not None:
        chain.append(m)
        m = m.coarser
    chain.reverse()
    root = chain[0]
    tri = -1
    for t in range(len(root.triangles)):
        bary = _barycentric(root.points, root.points[root.triangles[t]], p)
        if np.all(bary >= -_BARY_TOL):
            tri = t
            break
    if tri < 0:
        raise ValueError(f"point {tuple(p)} lies outside the domain")
    for m in chain[1:]:
        best, best_bary, best_min = -1, None, -np.inf
        for c in m.children_of(tri):
            bary = _barycentric(m.points, m.points[m.triangles[c]], p)
            worst = float(np.min(bary))
            if worst > best_min + 1e-15:
                best, best_bary, best_min = int(c), bary, worst
        if best_min < -_BARY_TOL:
            raise ValueError(f"point {tuple(p)} escaped the refinement tree")
        tri = best
    bary = _barycentric(mesh.points, mesh.points[mesh.triangles[tri]], p)
    return tri, bary


# -- text format ----------------------------------------------------------


def write_mesh(mesh, path):
    """Line-oriented text dump; floats use shortest round-trip decimals."""
    lines = [f"mesh {len(mesh.points)} {len(mesh.triangles)} {mesh.level}"]
    for i in range(len(mesh.points)):
        x, y = float(mesh.points[i, 0]), float(mesh.points[i, 1])
        c = int(mesh.corner_vertex[i])
        tail = f" {c}" if c >= 0 else ""
        lines.append(f"p {x!r} {y!r}{tail}")
    for t in range(len(mesh.triangles)):
        a, b, c = (int(v) for v in mesh.triangles[t])
        tail = f" {int(mesh.parent[t])}" if mesh.level > 0 else ""
        lines.append(f"t {a} {b} {c}{tail}")
    for c in range(len(mesh.domain.vertices)):
        graded = 1 if c in mesh.domain.graded_corners else 0
        lines.append(f"corner {c} {graded}")
    text = "\n".join(lines) + "\n"
    with open(path, "w") as fh:
        fh.write(text)
    return text


def read_mesh(path):
    """Rebuild a mesh from the text format (inverse of write_mesh)."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    head = lines[0].split()
    if head[0] != "mesh" or len(head) != 4:
        raise ValueError("missing 'mesh <npoints> <ntriangles> <level>' header")
    npts, ntri, level = int(head[1]), int(head[2]), int(head[3])
    points, corner, tris, parents, graded = [], [], [], [], {}
    for ln in lines[1:]:
        parts = ln.split()
        if parts[0] == "p":
            points.append((float(parts[1]), float(parts[2])))
            corner.append(int(parts[3]) if len(parts) > 3 else -1)
        elif parts[0] == "t":
            tris.append((int(parts[1]), int(parts[2]), int(parts[3])))
            parents.append(int(parts[4]) if len(parts) > 4 else -1)
        elif parts[0] == "corner":
            graded[int(parts[1])] = bool(int(parts[2]))
        else:
            raise ValueError(f"unrecognized line {ln!r}")
    if len(points) != npts or len(tris) != ntri:
        raise ValueError("header counts do not match file body")
    corner = np.asarray(corner)
    ids = corner[corner >= 0]
    order = np.argsort(ids)
    verts = np.asarray(points)[corner >= 0][order]
    domain = PolygonDomain(verts, {c for c, g in graded.items() if g})
    return Mesh(
        domain=domain,
        points=np.asarray(points),
        triangles=np.asarray(tris),
        level=level,
        parent=np.asarray(parents),
        corner_vertex=corner,
    )


def polygon_contains(domain, pts):
    """Crossing-number interior test; boundary points are unreliable."""
    v = domain.vertices
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    x, y = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    j = len(v) - 1
    for i in range(len(v)):
        xi, yi = v[i]
        xj, yj = v[j]
        crosses = (yi > y) != (yj > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = (xj - xi) * (y - yi) / (yj - yi) + xi
        inside ^= crosses & (x < xint)
        j = i
    return inside


def polygon_boundary_distance(domain, pts):
    """Distance from each point to the polygon boundary."""
    v = domain.vertices
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    best = np.full(len(pts), np.inf)
    for i in range(len(v)):
        a = v[i]
        b = v[(i + 1) % len(v)]
        ab = b - a
        t = np.clip(((pts - a) @ ab) / (ab @ ab), 0.0, 1.0)
        proj = a + t[:, None] * ab
        best = np.minimum(best, np.linalg.norm(pts - proj, axis=1))
    return best


def quasi_random_interior(domain, n=100, margin=None):
    """First n Halton points strictly inside the polygon.

    Deterministic (unscrambled sequence); points keep a small safety
    margin from the boundary so finite-difference stencils stay inside.
    """
    from scipy.stats import qmc

    v = domain.vertices
    lo, hi = v.min(axis=0), v.max(axis=0)
    diam = float(np.max(hi - lo))
    if margin is None:
        margin = 1e-3 * diam
    sampler = qmc.Halton(d=2, scramble=False)
    out = []
    for _ in range(64):
        raw = sampler.random(256)
        pts = lo + raw * (hi - lo)
        keep = polygon_contains(domain, pts)
        keep &= polygon_boundary_distance(domain, pts) > margin
        out.extend(pts[keep])
        if len(out) >= n:
            return np.asarray(out[:n])
    raise ValueError("could not place enough interior sample points")
