"""Lagrange/bubble spaces: numbering, reproduction, gradients, prolongation.

DOF-count oracles follow from ndof = V + (k-1) E + (k-1)(k-2)/2 T with the
level-0 square counts V=5, E=8, T=4.  Reproduction oracles are the
polynomials themselves, evaluated at deterministic random points.
"""

import numpy as np
import pytest

from biharm import meshing as msh
from biharm import spaces as sp


def sample_points(mesh, n, seed=7):
    rng = np.random.default_rng(seed)
    tris = rng.integers(0, len(mesh.triangles), n)
    bary = rng.dirichlet([1.0, 1.0, 1.0], n)
    pts = np.einsum("nj,njd->nd", bary, mesh.points[mesh.triangles[tris]])
    return tris, bary, pts


# -- construction -----------------------------------------------------------


@pytest.mark.parametrize(
    "degree,kind,ndof,nboundary",
    [
        (1, "lagrange", 5, 4),           # vertices only, 4 on the boundary
        (2, "lagrange", 5 + 8, 8),       # one midpoint per edge
        (3, "lagrange", 5 + 16 + 4, 12), # two nodes per edge + centroids
        (1, "lagrange_bubble", 5 + 4, 4),
    ],
)
def test_square_level0_dof_counts(degree, kind, ndof, nboundary):
    _, mesh = msh.builtin_domain("square")
    space = sp.build_space(mesh, degree, kind)
    assert space.ndof == ndof
    assert len(space.boundary_dofs) == nboundary
    assert space.element_dofs.shape == (4, {1: 3, 2: 6, 3: 10}[degree] if kind == "lagrange" else (4, 4)[1])


def test_dof_count_formula_all_levels():
    _, m0 = msh.builtin_domain("lshape")
    for mesh in msh.refine_hierarchy(m0, 2, {0: 0.3}):
        v, e, t = len(mesh.points), len(mesh.edges), len(mesh.triangles)
        assert sp.build_space(mesh, 1).ndof == v
        assert sp.build_space(mesh, 2).ndof == v + e
        assert sp.build_space(mesh, 3).ndof == v + 2 * e + t
        assert sp.build_space(mesh, 1, "lagrange_bubble").ndof == v + t


def test_bubble_dofs_never_on_boundary():
    _, mesh = msh.builtin_domain("lshape")
    space = sp.build_space(mesh, 1, "lagrange_bubble")
    assert np.all(space.boundary_dofs < len(mesh.points))
    # bubble coords are the centroids
    assert np.allclose(
        space.dof_coords[len(mesh.points):], mesh.points[mesh.triangles].mean(axis=1)
    )


def test_invalid_spaces_rejected():
    _, mesh = msh.builtin_domain("square")
    with pytest.raises(ValueError):
        sp.build_space(mesh, 4)
    with pytest.raises(ValueError):
        sp.build_space(mesh, 2, "lagrange_bubble")
    with pytest.raises(ValueError):
        sp.build_space(mesh, 1, "hermite")


def test_neighbors_share_edge_dofs():
    _, m0 = msh.builtin_domain("square")
    mesh = msh.graded_refine(m0)
    for degree in (2, 3):
        space = sp.build_space(mesh, degree)
        per = degree - 1
        nv = len(mesh.points)
        seen = {}
        for t, row in enumerate(space.element_dofs):
            for le, (u, v) in enumerate([(0, 1), (1, 2), (2, 0)]):
                a, b = int(mesh.triangles[t, u]), int(mesh.triangles[t, v])
                key = (min(a, b), max(a, b))
                dofs = frozenset(int(d) for d in row[3 + per * le : 3 + per * (le + 1)])
                assert seen.setdefault(key, dofs) == dofs
        # edge nodes of a sorted edge (a,b) are ordered from a
        if degree == 3:
            for (a, b), dofs in seen.items():
                lo = min(dofs)
                expect = mesh.points[a] + (mesh.points[b] - mesh.points[a]) / 3.0
                assert np.allclose(space.dof_coords[lo], expect, atol=1e-15)


# -- interpolation / evaluation ---------------------------------------------


@pytest.mark.parametrize(
    "degree,f,grad",
    [
        (1, lambda x, y: 2 * x - 3 * y + 1, lambda x, y: (2.0, -3.0)),
        (2, lambda x, y: x * y + x**2, lambda x, y: (y + 2 * x, x)),
        (3, lambda x, y: x**3 - 2 * x**2 * y + y**3,
         lambda x, y: (3 * x**2 - 4 * x * y, -2 * x**2 + 3 * y**2)),
    ],
)
def test_polynomial_reproduction(degree, f, grad):
    _, m0 = msh.builtin_domain("lshape")
    mesh = msh.refine_hierarchy(m0, 2, {0: 0.2})[2]
    space = sp.build_space(mesh, degree)
    u = sp.interpolate(space, f)
    tris, bary, pts = sample_points(mesh, 50)
    vals = sp.evaluate(u, tris, bary)
    assert np.allclose(vals, f(pts[:, 0], pts[:, 1]), atol=1e-13)
    g = sp.gradient(u, tris, bary)
    gx, gy = np.broadcast_arrays(*grad(pts[:, 0], pts[:, 1]), pts[:, 0])[:2]
    assert np.allclose(g, np.stack([gx, gy], axis=1), atol=1e-12)


def test_partition_of_unity():
    _, m0 = msh.builtin_domain("convex_11pi12")
    mesh = msh.refine_hierarchy(m0, 1, {0: 0.3})[1]
    rng = np.random.default_rng(11)
    for degree, kind in [(1, "lagrange"), (2, "lagrange"), (3, "lagrange")]:
        space = sp.build_space(mesh, degree, kind)
        for t in range(len(mesh.triangles)):
            bary = rng.dirichlet([1, 1, 1], 20)
            vals = sp.basis_values(space, bary)
            assert np.allclose(vals.sum(axis=1), 1.0, atol=1e-13)


def test_hat_function_values():
    _, mesh = msh.builtin_domain("square")
    space = sp.build_space(mesh, 1)
    c = np.zeros(space.ndof)
    c[4] = 1.0  # hat at the center vertex
    hat = sp.Field(space, 1, c)
    # triangle 0 = (0, 1, 4): value 1 at vertex 4, 0 at opposite edge midpoint
    assert sp.evaluate(hat, 0, [0.0, 0.0, 1.0]) == pytest.approx(1.0, abs=1e-15)
    assert sp.evaluate(hat, 0, [0.5, 0.5, 0.0]) == pytest.approx(0.0, abs=1e-15)


def test_bubble_value_at_centroid():
    _, mesh = msh.builtin_domain("square")
    space = sp.build_space(mesh, 1, "lagrange_bubble")
    c = np.zeros(space.ndof)
    c[len(mesh.points)] = 1.0  # bubble of triangle 0
    b = sp.Field(space, 1, c)
    assert sp.evaluate(b, 0, [1 / 3, 1 / 3, 1 / 3]) == pytest.approx(1.0 / 27.0, abs=1e-15)
    # bubble vanishes on the element boundary
    assert sp.evaluate(b, 0, [0.5, 0.5, 0.0]) == pytest.approx(0.0, abs=1e-15)


def test_interpolate_matches_nodes_for_smooth_f():
    _, mesh = msh.builtin_domain("square")
    space = sp.build_space(mesh, 2)
    u = sp.interpolate(space, lambda x, y: np.sin(x))
    assert np.allclose(u.coefficients, np.sin(space.dof_coords[:, 0]), atol=1e-15)


def test_vector_field_evaluation_and_curl():
    _, m0 = msh.builtin_domain("square")
    mesh = msh.graded_refine(m0)
    space = sp.build_space(mesh, 2)
    vec = sp.interpolate_vector(space, lambda x, y: y, lambda x, y: -x)
    tris, bary, pts = sample_points(mesh, 30)
    vals = sp.evaluate(vec, tris, bary)
    assert np.allclose(vals, np.stack([pts[:, 1], -pts[:, 0]], axis=1), atol=1e-13)
    g = sp.gradient(vec, tris, bary)  # (n, component, 2)
    curl = g[:, 1, 0] - g[:, 0, 1]
    assert np.allclose(curl, -2.0, atol=1e-13)


def test_field_validation():
    _, mesh = msh.builtin_domain("square")
    space = sp.build_space(mesh, 1)
    with pytest.raises(ValueError):
        sp.Field(space, 1, np.zeros(4))
    with pytest.raises(ValueError):
        sp.Field(space, 3, np.zeros(15))


# -- prolongation ------------------------------------------------------------


def test_prolongation_exact_on_coarse_polynomials():
    _, l0 = msh.builtin_domain("lshape")
    hier = msh.refine_hierarchy(l0, 2, {0: 0.2})
    for degree in (1, 2, 3):
        coarse = sp.build_space(hier[0], degree)
        fine = sp.build_space(hier[2], degree)
        f = lambda x, y: (x + y) ** degree
        up = sp.prolongate(sp.interpolate(coarse, f), fine)
        uf = sp.interpolate(fine, f)
        assert np.allclose(up.coefficients, uf.coefficients, atol=1e-13)


def test_prolongation_preserves_h1_seminorm():
    _, l0 = msh.builtin_domain("lshape")
    hier = msh.refine_hierarchy(l0, 2, {0: 0.2})
    coarse = sp.build_space(hier[0], 2)
    rng = np.random.default_rng(3)
    u = sp.Field(coarse, 1, rng.normal(size=coarse.ndof))

    def h1_semi_sq(field):
        from biharm.quadrature import triangle_rule

        mesh = field.space.mesh
        lam, w = triangle_rule(2 * field.space.degree)
        total = 0.0
        _, det, _ = sp.jacobians(mesh)
        for q, wq in zip(lam, w):
            g = sp.gradient(field, np.arange(len(mesh.triangles)),
                            np.tile(q, (len(mesh.triangles), 1)))
            total += wq * np.sum(np.abs(det) * np.sum(g * g, axis=1))
        return total

    fine = sp.build_space(hier[2], 2)
    up = sp.prolongate(u, fine)
    assert h1_semi_sq(up) == pytest.approx(h1_semi_sq(u), rel=1e-12)


def test_prolongate_then_restrict_is_identity():
    _, s0 = msh.builtin_domain("square")
    hier = msh.refine_hierarchy(s0, 2)
    coarse = sp.build_space(hier[0], 2)
    fine = sp.build_space(hier[2], 2)
    u = sp.interpolate(coarse, lambda x, y: x**2 * y + 3.0)
    up = sp.prolongate(u, fine)
    # restrict by evaluating the fine field at the coarse DOF nodes
    restricted = np.empty(coarse.ndof)
    for i, p in enumerate(coarse.dof_coords):
        t, bary = msh.locate_point(hier[2], p)
        restricted[i] = sp.evaluate(up, t, bary)
    assert np.allclose(restricted, u.coefficients, atol=1e-13)


def test_prolongation_is_linear():
    _, s0 = msh.builtin_domain("square")
    hier = msh.refine_hierarchy(s0, 1)
    coarse = sp.build_space(hier[0], 1)
    fine = sp.build_space(hier[1], 1)
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=coarse.ndof), rng.normal(size=coarse.ndof)
    pa = sp.prolongate(sp.Field(coarse, 1, a), fine).coefficients
    pb = sp.prolongate(sp.Field(coarse, 1, b), fine).coefficients
    pab = sp.prolongate(sp.Field(coarse, 1, 2 * a - 3 * b), fine).coefficients
    assert np.allclose(pab, 2 * pa - 3 * pb, atol=1e-12)


def test_prolongation_requires_nested_meshes():
    _, s0 = msh.builtin_domain("square")
    _, l0 = msh.builtin_domain("lshape")
    u = sp.interpolate(sp.build_space(s0, 1), lambda x, y: x)
    with pytest.raises(ValueError, match="descendant"):
        sp.prolongate(u, sp.build_space(l0, 1))


def test_mini_field_prolongates_with_bubble_evaluation():
    _, s0 = msh.builtin_domain("square")
    hier = msh.refine_hierarchy(s0, 1)
    coarse = sp.build_space(hier[0], 1, "lagrange_bubble")
    # fine P1 nodes all lie on coarse edges, where the bubble vanishes;
    # fine P2 midpoints of interior child edges see the bubble
    fine = sp.build_space(hier[1], 2)
    c = np.zeros(coarse.ndof)
    c[len(hier[0].points)] = 1.0  # pure bubble on triangle 0
    up = sp.prolongate(sp.Field(coarse, 1, c), fine)
    assert np.linalg.norm(up.coefficients) > 0.0
    # largest sample: midpoint of a center-child edge, barycentric
    # (1/4, 1/2, 1/4) in the coarse triangle, bubble value 1/32
    assert np.max(np.abs(up.coefficients)) == pytest.approx(1.0 / 32.0, abs=1e-15)


# -- text format --------------------------------------------------------------


def test_field_roundtrip(tmp_path):
    _, mesh = msh.builtin_domain("lshape")
    space = sp.build_space(mesh, 2)
    u = sp.interpolate_vector(space, lambda x, y: np.sin(x), lambda x, y: y**2)
    p = tmp_path / "f.txt"
    d1 = sp.write_field(u, p)
    back = sp.read_field(p, space)
    assert back.components == 2
    assert np.array_equal(back.coefficients, u.coefficients)
    assert sp.write_field(back, tmp_path / "g.txt") == d1


def test_field_read_validates_header(tmp_path):
    _, mesh = msh.builtin_domain("square")
    space = sp.build_space(mesh, 1)
    p = tmp_path / "f.txt"
    p.write_text("field 5 1 2 lagrange\n" + "0.0\n" * 5)
    with pytest.raises(ValueError, match="match"):
        sp.read_field(p, space)
    p.write_text("coeffs 5 1\n")
    with pytest.raises(ValueError, match="header"):
        sp.read_field(p, space)
