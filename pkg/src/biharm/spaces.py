"""Continuous Lagrange spaces P1..P3 and the Mini bubble enrichment.

Scalar spaces on a triangulation, with a deterministic DOF numbering:
vertex DOFs first (same index as the mesh point), then edge DOFs in
lexicographic edge order (nodes on one edge ordered from the lower
endpoint), then per-triangle interior DOFs.  The bubble space adds one
cubic bubble lambda0*lambda1*lambda2 per triangle to P1 (unnormalized,
so its value at the centroid is 1/27); bubble DOFs are never boundary
DOFs.  Vector fields store two stacked component blocks.
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "FeSpace",
    "Field",
    "build_space",
    "interpolate",
    "interpolate_vector",
    "evaluate",
    "gradient",
    "prolongate",
    "write_field",
    "read_field",
]

_D_LAM = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])  # d lambda_i / d ref


@dataclass
class FeSpace:
    mesh: object
    degree: int
    kind: str                 # "lagrange" or "lagrange_bubble"
    ndof: int
    dof_coords: np.ndarray    # (ndof, 2); bubbles carry the centroid
    boundary_dofs: np.ndarray # sorted DOF indices on the domain boundary
    element_dofs: np.ndarray  # (ntriangles, nlocal)

    @property
    def nlocal(self):
        return self.element_dofs.shape[1]


@dataclass
class Field:
    space: FeSpace
    components: int
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.components not in (1, 2):
            raise ValueError("components must be 1 or 2")
        if self.coefficients.shape != (self.components * self.space.ndof,):
            raise ValueError(
                f"expected {self.components * self.space.ndof} coefficients, "
                f"got {self.coefficients.shape}"
            )

    def component(self, c):
        n = self.space.ndof
        return self.coefficients[c * n : (c + 1) * n]


def _edge_codes(mesh):
    edges = mesh.edges
    return edges, edges[:, 0] * len(mesh.points) + edges[:, 1]


def _edge_index(mesh, u, v):
    _, code = _edge_codes(mesh)
    a, b = np.minimum(u, v), np.maximum(u, v)
    return np.searchsorted(code, a * len(mesh.points) + b)


def build_space(mesh, degree, kind="lagrange"):
    """Scalar FE space on a mesh; see module docstring for numbering."""
    if kind not in ("lagrange", "lagrange_bubble"):
        raise ValueError(f"unknown space kind {kind!r}")
    if degree not in (1, 2, 3):
        raise ValueError(f"degree must be 1, 2 or 3, got {degree}")
    if kind == "lagrange_bubble" and degree != 1:
        raise ValueError("bubble enrichment is defined on degree 1 only")

    tri = mesh.triangles
    nv, nt = len(mesh.points), len(tri)
    edges = mesh.edges
    ne = len(edges)
    centroids = mesh.points[tri].mean(axis=1)

    if kind == "lagrange_bubble":
        ndof = nv + nt
        element_dofs = np.column_stack([tri, nv + np.arange(nt)])
        dof_coords = np.vstack([mesh.points, centroids])
    elif degree == 1:
        ndof = nv
        element_dofs = tri.copy()
        dof_coords = mesh.points.copy()
    else:
        local_edges = [(0, 1), (1, 2), (2, 0)]
        eidx = [_edge_index(mesh, tri[:, u], tri[:, v]) for u, v in local_edges]
        lo, hi = edges[:, 0], edges[:, 1]
        if degree == 2:
            ndof = nv + ne
            cols = [tri] + [nv + e[:, None] for e in eidx]
            element_dofs = np.column_stack(cols)
            dof_coords = np.vstack(
                [mesh.points, 0.5 * (mesh.points[lo] + mesh.points[hi])]
            )
        else:
            ndof = nv + 2 * ne + nt
            cols = [tri]
            for (u, v), e in zip(local_edges, eidx):
                # global node order on edge (a,b), a<b: first the node at
                # distance 1/3 from a; locally the first node is near u
                u_is_lo = tri[:, u] < tri[:, v]
                near_u = nv + 2 * e + np.where(u_is_lo, 0, 1)
                near_v = nv + 2 * e + np.where(u_is_lo, 1, 0)
                cols.append(np.column_stack([near_u, near_v]))
            cols.append(nv + 2 * ne + np.arange(nt)[:, None])
            element_dofs = np.column_stack(cols)
            enodes = np.empty((2 * ne, 2))
            enodes[0::2] = mesh.points[lo] + (mesh.points[hi] - mesh.points[lo]) / 3.0
            enodes[1::2] = mesh.points[lo] + 2.0 * (mesh.points[hi] - mesh.points[lo]) / 3.0
            dof_coords = np.vstack([mesh.points, enodes, centroids])

    bdofs = set(int(i) for e in mesh.boundary_edges for i in e)
    if kind == "lagrange" and degree >= 2:
        per_edge = degree - 1
        for a, b in mesh.boundary_edges:
            e = int(_edge_index(mesh, np.asarray(a), np.asarray(b)))
            for j in range(per_edge):
                bdofs.add(nv + per_edge * e + j)
    boundary_dofs = np.array(sorted(bdofs), dtype=np.int64)

    return FeSpace(
        mesh=mesh,
        degree=degree,
        kind=kind,
        ndof=ndof,
        dof_coords=dof_coords,
        boundary_dofs=boundary_dofs,
        element_dofs=element_dofs.astype(np.int64),
    )


# -- reference basis -------------------------------------------------------


def basis_values(space, lam):
    """Local basis at barycentric points; shape (nq, nlocal)."""
    lam = np.atleast_2d(np.asarray(lam, dtype=float))
    l0, l1, l2 = lam[:, 0], lam[:, 1], lam[:, 2]
    if space.kind == "lagrange_bubble":
        return np.column_stack([l0, l1, l2, l0 * l1 * l2])
    k = space.degree
    if k == 1:
        return lam.copy()
    if k == 2:
        return np.column_stack(
            [
                l0 * (2 * l0 - 1),
                l1 * (2 * l1 - 1),
                l2 * (2 * l2 - 1),
                4 * l0 * l1,
                4 * l1 * l2,
                4 * l2 * l0,
            ]
        )
    # k == 3: vertices, two nodes per edge (near the first endpoint of the
    # local edge first), then the interior node
    def vert(li):
        return 0.5 * li * (3 * li - 1) * (3 * li - 2)

    def edge(li, lj):
        return 4.5 * li * lj * (3 * li - 1)

    return np.column_stack(
        [
            vert(l0),
            vert(l1),
            vert(l2),
            edge(l0, l1),
            edge(l1, l0),
            edge(l1, l2),
            edge(l2, l1),
            edge(l2, l0),
            edge(l0, l2),
            27 * l0 * l1 * l2,
        ]
    )


def basis_ref_grads(space, lam):
    """Gradients w.r.t. reference coordinates; shape (nq, nlocal, 2)."""
    lam = np.atleast_2d(np.asarray(lam, dtype=float))
    nq = len(lam)
    l = [lam[:, i] for i in range(3)]
    d = [_D_LAM[i] for i in range(3)]

    def outer(coef, grad):
        return coef[:, None] * grad[None, :]

    if space.kind == "lagrange_bubble":
        g = np.empty((nq, 4, 2))
        for i in range(3):
            g[:, i] = np.broadcast_to(d[i], (nq, 2))
        g[:, 3] = (
            outer(l[1] * l[2], d[0]) + outer(l[0] * l[2], d[1]) + outer(l[0] * l[1], d[2])
        )
        return g
    k = space.degree
    if k == 1:
        g = np.empty((nq, 3, 2))
        for i in range(3):
            g[:, i] = np.broadcast_to(d[i], (nq, 2))
        return g
    if k == 2:
        g = np.empty((nq, 6, 2))
        for i in range(3):
            g[:, i] = outer(4 * l[i] - 1, d[i])
        for m, (i, j) in enumerate([(0, 1), (1, 2), (2, 0)]):
            g[:, 3 + m] = 4 * (outer(l[j], d[i]) + outer(l[i], d[j]))
        return g
    g = np.empty((nq, 10, 2))
    for i in range(3):
        g[:, i] = outer(13.5 * l[i] ** 2 - 9 * l[i] + 1, d[i])
    pairs = [(0, 1), (1, 0), (1, 2), (2, 1), (2, 0), (0, 2)]
    for m, (i, j) in enumerate(pairs):
        g[:, 3 + m] = 4.5 * (outer(l[j] * (6 * l[i] - 1), d[i]) + outer(l[i] * (3 * l[i] - 1), d[j]))
    g[:, 9] = 27 * (
        outer(l[1] * l[2], d[0]) + outer(l[0] * l[2], d[1]) + outer(l[0] * l[1], d[2])
    )
    return g


def jacobians(mesh):
    """Per-triangle affine data: J (nt,2,2), detJ (nt,), invJT (nt,2,2)."""
    p = mesh.points[mesh.triangles]
    j = np.empty((len(p), 2, 2))
    j[:, :, 0] = p[:, 1] - p[:, 0]
    j[:, :, 1] = p[:, 2] - p[:, 0]
    det = j[:, 0, 0] * j[:, 1, 1] - j[:, 0, 1] * j[:, 1, 0]
    inv_t = np.empty_like(j)
    inv_t[:, 0, 0] = j[:, 1, 1]
    inv_t[:, 0, 1] = -j[:, 1, 0]
    inv_t[:, 1, 0] = -j[:, 0, 1]
    inv_t[:, 1, 1] = j[:, 0, 0]
    inv_t /= det[:, None, None]
    return j, det, inv_t


# -- field construction and evaluation --------------------------------------


def _call_on_points(f, pts):
    try:
        v = np.asarray(f(pts[:, 0], pts[:, 1]), dtype=float)
        if v.ndim == 0:
            v = np.full(len(pts), float(v))
        if v.shape != (len(pts),):
            raise ValueError
        return v
    except (TypeError, ValueError):
        return np.array([float(f(x, y)) for x, y in pts])


def interpolate(space, f):
    """Nodal interpolation; bubble coefficients are set to 0."""
    coeffs = _call_on_points(f, space.dof_coords)
    if space.kind == "lagrange_bubble":
        coeffs[len(space.mesh.points):] = 0.0
    return Field(space=space, components=1, coefficients=coeffs)


def interpolate_vector(space, fx, fy):
    u = interpolate(space, fx)
    v = interpolate(space, fy)
    return Field(
        space=space,
        components=2,
        coefficients=np.concatenate([u.coefficients, v.coefficients]),
    )


def zero_field(space, components=1):
    return Field(space, components, np.zeros(components * space.ndof))


def evaluate(field, triangle, bary):
    """Field value(s) at barycentric points of given triangles.

    ``triangle`` may be a scalar index or an (n,) array matched with an
    (n, 3) array of barycentric coordinates.  Vector fields return the
    trailing axis of length 2.
    """
    scalar_in = np.isscalar(triangle) and np.asarray(bary).ndim == 1
    tri = np.atleast_1d(np.asarray(triangle, dtype=np.int64))
    lam = np.atleast_2d(np.asarray(bary, dtype=float))
    if len(tri) == 1 and len(lam) > 1:
        tri = np.full(len(lam), tri[0])
    vals = basis_values(field.space, lam)  # (n, nloc)
    dofs = field.space.element_dofs[tri]   # (n, nloc)
    out = []
    for c in range(field.components):
        coef = field.component(c)[dofs]
        out.append(np.sum(vals * coef, axis=1))
    res = out[0] if field.components == 1 else np.stack(out, axis=-1)
    return res[0] if scalar_in else res


def gradient(field, triangle, bary):
    """Physical gradient at barycentric points; trailing axis is (d/dx, d/dy)."""
    scalar_in = np.isscalar(triangle) and np.asarray(bary).ndim == 1
    tri = np.atleast_1d(np.asarray(triangle, dtype=np.int64))
    lam = np.atleast_2d(np.asarray(bary, dtype=float))
    if len(tri) == 1 and len(lam) > 1:
        tri = np.full(len(lam), tri[0])
    gref = basis_ref_grads(field.space, lam)  # (n, nloc, 2)
    _, _, inv_t = jacobians(field.space.mesh)
    gphys = np.einsum("nde,nle->nld", inv_t[tri], gref)
    dofs = field.space.element_dofs[tri]
    out = []
    for c in range(field.components):
        coef = field.component(c)[dofs]
        out.append(np.einsum("nl,nld->nd", coef, gphys))
    res = out[0] if field.components == 1 else np.stack(out, axis=-2)
    return res[0] if scalar_in else res


def prolongate(coarse, fine_space):
    """Represent a coarse field exactly on a descendant mesh's space.

    Fine Lagrange DOF values are the coarse field evaluated at the fine
    DOF nodes, located through the refinement ancestry; this reproduces
    the coarse function exactly whenever the fine space contains the
    coarse one elementwise.
    """
    cmesh = coarse.space.mesh
    fmesh = fine_space.mesh
    anc = np.arange(len(fmesh.triangles))
    m = fmesh
    while m is not cmesh:
        if m.coarser is None:
            raise ValueError("fine mesh is not a descendant of the coarse mesh")
        anc = m.parent[anc]
        m = m.coarser

    nt, nloc = fine_space.element_dofs.shape
    rep = np.full(fine_space.ndof, nt, dtype=np.int64)
    np.minimum.at(rep, fine_space.element_dofs.ravel(),
                  np.repeat(np.arange(nt), nloc))
    ctri = anc[rep]

    cp = cmesh.points[cmesh.triangles[ctri]]  # (ndof, 3, 2)
    d1 = cp[:, 1] - cp[:, 0]
    d2 = cp[:, 2] - cp[:, 0]
    r = fine_space.dof_coords - cp[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    l1 = (r[:, 0] * d2[:, 1] - r[:, 1] * d2[:, 0]) / det
    l2 = (d1[:, 0] * r[:, 1] - d1[:, 1] * r[:, 0]) / det
    lam = np.column_stack([1.0 - l1 - l2, l1, l2])

    blocks = []
    for c in range(coarse.components):
        sub = Field(coarse.space, 1, coarse.component(c))
        vals = evaluate(sub, ctri, lam)
        if fine_space.kind == "lagrange_bubble":
            vals[len(fmesh.points):] = 0.0
        blocks.append(vals)
    return Field(fine_space, coarse.components, np.concatenate(blocks))


# -- text format ------------------------------------------------------------


def write_field(field, path):
    kind = field.space.kind
    lines = [f"field {field.space.ndof} {field.components} {field.space.degree} {kind}"]
    lines += [repr(float(c)) for c in field.coefficients]
    text = "\n".join(lines) + "\n"
    with open(path, "w") as fh:
        fh.write(text)
    return text


def read_field(path, space):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    head = lines[0].split()
    if head[0] != "field" or len(head) != 5:
        raise ValueError("missing 'field <ndof> <components> <degree> <kind>' header")
    ndof, comps, degree, kind = int(head[1]), int(head[2]), int(head[3]), head[4]
    if ndof != space.ndof or degree != space.degree or kind != space.kind:
        raise ValueError("field header does not match the target space")
    coeffs = np.array([float(x) for x in lines[1:]])
    if len(coeffs) != comps * ndof:
        raise ValueError("coefficient count does not match header")
    return Field(space, comps, coeffs)
