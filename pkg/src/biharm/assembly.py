"""Sparse matrices and load vectors for the Poisson and Stokes subproblems.

All integrals are evaluated with triangle rules whose exactness degree
covers the integrand (polynomial parts exactly; analytic data with the
default order k+2, overridable).  Matrices are assembled from
per-element blocks in element-index order into COO triplets and
compressed with duplicate summation, so assembly is deterministic.
Matrices are scipy CSR; velocity vectors use component-major layout
(all x-coefficients, then all y-coefficients).
"""

import numpy as np
import scipy.sparse as sps

from . import kernels
from .quadrature import physical_points, triangle_rule
from .spaces import basis_ref_grads, basis_values, jacobians

__all__ = [
    "poly_degree",
    "assemble_stiffness",
    "assemble_vector_stiffness",
    "assemble_mass",
    "assemble_divergence",
    "assemble_load",
    "assemble_stokes_rhs_analytic",
    "assemble_stokes_rhs_discrete_curl",
    "assemble_curl_rhs",
    "apply_dirichlet",
    "vector_boundary_dofs",
    "is_symmetric",
    "write_matrix",
    "read_matrix",
]


def poly_degree(space):
    """Actual polynomial degree of the space (the bubble is cubic)."""
    return 3 if space.kind == "lagrange_bubble" else space.degree


def _scatter(local, rows, cols, shape):
    i = np.broadcast_to(rows[:, :, None], local.shape).ravel()
    j = np.broadcast_to(cols[:, None, :], local.shape).ravel()
    return sps.coo_matrix((local.ravel(), (i, j)), shape=shape).tocsr()


def _values_on_quad(f, mesh, lam):
    pts = physical_points(lam, mesh.points[mesh.triangles])
    flat = pts.reshape(-1, 2)
    try:
        v = np.asarray(f(flat[:, 0], flat[:, 1]), dtype=float)
        if v.ndim == 0:
            v = np.full(len(flat), float(v))
        if v.shape != (len(flat),):
            raise ValueError
    except (TypeError, ValueError):
        v = np.array([float(f(x, y)) for x, y in flat])
    return v.reshape(pts.shape[:2])


def assemble_stiffness(space, order=None):
    """A_ij = int grad(phi_j) . grad(phi_i); symmetric CSR."""
    if order is None:
        order = max(1, 2 * (poly_degree(space) - 1))
    lam, w = triangle_rule(order)
    gref = basis_ref_grads(space, lam)
    _, det, inv_t = jacobians(space.mesh)
    local = kernels.element_stiffness(det, inv_t, gref, w)
    ed = space.element_dofs
    return _scatter(local, ed, ed, (space.ndof, space.ndof))


def assemble_vector_stiffness(space, order=None):
    """Block-diagonal two-component copy of the scalar stiffness."""
    a = assemble_stiffness(space, order)
    return sps.block_diag([a, a], format="csr")


def assemble_mass(space, order=None):
    """M_ij = int phi_j phi_i; symmetric CSR."""
    if order is None:
        order = 2 * poly_degree(space)
    lam, w = triangle_rule(order)
    vals = basis_values(space, lam)
    _, det, _ = jacobians(space.mesh)
    local = kernels.element_mass(det, vals, w)
    ed = space.element_dofs
    return _scatter(local, ed, ed, (space.ndof, space.ndof))


def assemble_divergence(vspace, pspace, order=None):
    """B with B[(q, v)] = -int (div v) q, shape npressure x 2 nvelocity."""
    if vspace.mesh is not pspace.mesh:
        raise ValueError("velocity and pressure spaces live on different meshes")
    if pspace.degree > vspace.degree:
        raise ValueError("pressure degree exceeds velocity degree")
    if order is None:
        order = max(1, poly_degree(vspace) - 1 + poly_degree(pspace))
    lam, w = triangle_rule(order)
    gref_v = basis_ref_grads(vspace, lam)
    vals_p = basis_values(pspace, lam)
    _, det, inv_t = jacobians(vspace.mesh)
    local = kernels.element_divergence(det, inv_t, gref_v, vals_p, w)
    nv = vspace.ndof
    ed_v = vspace.element_dofs
    cols = np.hstack([ed_v, ed_v + nv])
    return _scatter(local, pspace.element_dofs, cols, (pspace.ndof, 2 * nv))


def assemble_load(space, f, order=None):
    """b_i = int f phi_i with default order k + 2."""
    if order is None:
        order = poly_degree(space) + 2
    lam, w = triangle_rule(order)
    vals = basis_values(space, lam)
    _, det, _ = jacobians(space.mesh)
    fq = _values_on_quad(f, space.mesh, lam)
    local = kernels.element_load(det, vals, fq, w)
    b = np.zeros(space.ndof)
    np.add.at(b, space.element_dofs.ravel(), local.ravel())
    return b


def assemble_stokes_rhs_analytic(vspace, F, order=None):
    """<F, v> for an analytic pair F = (f1, f2); stacked component blocks."""
    f1, f2 = F
    return np.concatenate(
        [assemble_load(vspace, f1, order), assemble_load(vspace, f2, order)]
    )


def _component_grads_at_quad(field, lam):
    space = field.space
    gref = basis_ref_grads(space, lam)
    _, det, inv_t = jacobians(space.mesh)
    ed = space.element_dofs
    return [
        kernels.field_grads_at_quad(det, inv_t, gref, field.component(c)[ed])
        for c in range(field.components)
    ], det


def assemble_stokes_rhs_discrete_curl(vspace, w_field):
    """<curl w, v> = int (dw/dy) v1 - (dw/dx) v2 for a scalar FE field w."""
    if w_field.space.mesh is not vspace.mesh:
        raise ValueError("w lives on a different mesh than the velocity space")
    if w_field.components != 1:
        raise ValueError("w must be a scalar field")
    order = max(1, poly_degree(w_field.space) - 1 + poly_degree(vspace))
    lam, w = triangle_rule(order)
    (gw,), det = _component_grads_at_quad(w_field, lam)
    vals = basis_values(vspace, lam)
    b1 = kernels.element_load(det, vals, np.ascontiguousarray(gw[:, :, 1]), w)
    b2 = kernels.element_load(det, vals, np.ascontiguousarray(-gw[:, :, 0]), w)
    out = np.zeros(2 * vspace.ndof)
    np.add.at(out, vspace.element_dofs.ravel(), b1.ravel())
    np.add.at(out[vspace.ndof:], vspace.element_dofs.ravel(), b2.ravel())
    return out


def assemble_curl_rhs(space, u_field):
    """b_i = int (du2/dx - du1/dy) psi_i for a vector FE field u."""
    if u_field.space.mesh is not space.mesh:
        raise ValueError("u lives on a different mesh than the scalar space")
    if u_field.components != 2:
        raise ValueError("u must be a vector field")
    order = max(1, poly_degree(u_field.space) - 1 + poly_degree(space))
    lam, w = triangle_rule(order)
    (g1, g2), det = _component_grads_at_quad(u_field, lam)
    curl = np.ascontiguousarray(g2[:, :, 0] - g1[:, :, 1])
    vals = basis_values(space, lam)
    local = kernels.element_load(det, vals, curl, w)
    b = np.zeros(space.ndof)
    np.add.at(b, space.element_dofs.ravel(), local.ravel())
    return b


def apply_dirichlet(A, b, dofs):
    """Symmetric elimination: zero rows/cols, unit diagonal, zero rhs."""
    n = A.shape[0]
    if A.shape[0] != A.shape[1]:
        raise ValueError("apply_dirichlet needs a square system")
    dofs = np.asarray(dofs, dtype=np.int64)
    keep = np.ones(n)
    keep[dofs] = 0.0
    pin = np.zeros(n)
    pin[dofs] = 1.0
    d = sps.diags(keep)
    a2 = (d @ A @ d + sps.diags(pin)).tocsr()
    b2 = np.asarray(b, dtype=float) * keep
    return a2, b2


def vector_boundary_dofs(space):
    """Boundary DOFs of both components in component-major layout."""
    return np.concatenate([space.boundary_dofs, space.boundary_dofs + space.ndof])


def is_symmetric(A, tol=1e-12):
    d = abs(A - A.T)
    top = d.max() if d.nnz else 0.0
    scale = abs(A).max() or 1.0
    return top < tol * scale


# -- text format -------------------------------------------------------------


def write_matrix(A, path):
    """Coordinate text dump: `nrows ncols nnz` then `i j value`, 0-based."""
    coo = sps.csr_matrix(A).tocoo()
    lines = [f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}"]
    for i, j, v in zip(coo.row, coo.col, coo.data):
        lines.append(f"{i} {j} {float(v)!r}")
    text = "\n".join(lines) + "\n"
    with open(path, "w") as fh:
        fh.write(text)
    return text


def read_matrix(path):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    nr, nc, nnz = (int(x) for x in lines[0].split())
    if len(lines) - 1 != nnz:
        raise ValueError("entry count does not match header")
    rows, cols, vals = [], [], []
    for ln in lines[1:]:
        i, j, v = ln.split()
        rows.append(int(i))
        cols.append(int(j))
        vals.append(float(v))
    return sps.coo_matrix((vals, (rows, cols)), shape=(nr, nc)).tocsr()
