"""Norms, inter-level differences, convergence rates, and diagnostics.

The convergence indicator compares solutions on successive nested
meshes: R_j = log2(||v_{j-1} - v_{j-2}|| / ||v_j - v_{j-1}||).  The
difference of two nested fields is integrated on the finer mesh, with
the coarse field evaluated exactly through the refinement ancestry, so
no representation error enters (the Mini bubble is not representable on
the refined mesh, but its point values are).
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as spla

from . import kernels
from .assembly import (
    apply_dirichlet,
    assemble_divergence,
    assemble_mass,
    assemble_vector_stiffness,
    poly_degree,
    vector_boundary_dofs,
)
from .quadrature import physical_points, triangle_rule
from .spaces import Field, basis_ref_grads, basis_values, evaluate, gradient, jacobians

__all__ = [
    "ConvergenceReport",
    "field_norm",
    "diff_norm",
    "rate_table",
    "manufactured_error",
    "infsup_diagnostic",
    "write_reports_csv",
    "markdown_table",
]

_NORMS = ("L2", "H1", "Linf")


@dataclass
class ConvergenceReport:
    quantity: str
    norm: str
    levels: list
    diffs: list
    rates: list  # same length as diffs; rates[i] may be None (absent)

    def rows(self):
        for lev, d, r in zip(self.levels, self.diffs, self.rates):
            yield lev, d, r


def _check_norm(norm):
    if norm not in _NORMS:
        raise ValueError(f"norm must be one of {_NORMS}, got {norm!r}")


def _quad_order(space):
    return max(2 * space.degree + 2, 2 * poly_degree(space))


def _lagrange_nodes(space):
    """DOF nodes that carry point values (bubbles excluded)."""
    if space.kind == "lagrange_bubble":
        n = len(space.mesh.points)
        return space.dof_coords[:n], np.arange(n)
    return space.dof_coords, np.arange(space.ndof)


def _ancestry(fine_mesh, coarse_mesh):
    anc = np.arange(len(fine_mesh.triangles))
    m = fine_mesh
    while m is not coarse_mesh:
        if m.coarser is None:
            raise ValueError("fields do not live on nested meshes")
        anc = m.parent[anc]
        m = m.coarser
    return anc


def _bary_in_coarse(fine_mesh, coarse_mesh, anc, lam):
    """Barycentric coords of fine quad points inside coarse ancestors."""
    pts = physical_points(lam, fine_mesh.points[fine_mesh.triangles])
    nt, nq, _ = pts.shape
    cp = coarse_mesh.points[coarse_mesh.triangles[anc]]  # (nt, 3, 2)
    d1 = cp[:, 1] - cp[:, 0]
    d2 = cp[:, 2] - cp[:, 0]
    det = (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])[:, None]
    r = pts - cp[:, None, 0]
    l1 = (r[..., 0] * d2[:, None, 1] - r[..., 1] * d2[:, None, 0]) / det
    l2 = (d1[:, None, 0] * r[..., 1] - d1[:, None, 1] * r[..., 0]) / det
    lam_c = np.stack([1.0 - l1 - l2, l1, l2], axis=-1)  # (nt, nq, 3)
    tri_c = np.repeat(anc, nq)
    return tri_c, lam_c.reshape(-1, 3)


def field_norm(field, norm="L2"):
    """L2 norm, H1 seminorm, or nodal max of a field (components summed)."""
    _check_norm(norm)
    space = field.space
    mesh = space.mesh
    if norm == "Linf":
        nodes, idx = _lagrange_nodes(space)
        best = 0.0
        for c in range(field.components):
            best = max(best, float(np.max(np.abs(field.component(c)[idx]))))
        return best
    lam, w = triangle_rule(_quad_order(space))
    _, det, inv_t = jacobians(mesh)
    total = 0.0
    if norm == "L2":
        vals = basis_values(space, lam)
        for c in range(field.components):
            vq = np.einsum("tl,ql->tq", field.component(c)[space.element_dofs], vals)
            total += float(np.einsum("q,tq->", w, np.abs(det)[:, None] * vq**2))
    else:
        gref = basis_ref_grads(space, lam)
        for c in range(field.components):
            g = kernels.field_grads_at_quad(
                det, inv_t, gref, field.component(c)[space.element_dofs]
            )
            total += float(
                np.einsum("q,tq->", w, np.abs(det)[:, None] * np.sum(g**2, axis=2))
            )
    return math.sqrt(total)


def _order_pair(a, b):
    """Return (fine, coarse); fields may live on the same mesh."""
    ma, mb = a.space.mesh, b.space.mesh
    m = ma
    while m is not None:
        if m is mb:
            return a, b
        m = m.coarser
    m = mb
    while m is not None:
        if m is ma:
            return b, a
        m = m.coarser
    raise ValueError("fields do not live on nested meshes")


def diff_norm(a, b, norm="L2"):
    """Norm of a - b for fields on nested meshes of the same hierarchy.

    Quadrature runs on the finer mesh (order >= 2k+2, and high enough to
    square the bubble exactly); the coarser field is evaluated through
    the parent map.  Linf is sampled at the finer space's Lagrange nodes.
    """
    _check_norm(norm)
    if a.components != b.components:
        raise ValueError("fields have different component counts")
    fine, coarse = _order_pair(a, b)
    fspace, cspace = fine.space, coarse.space
    fmesh, cmesh = fspace.mesh, cspace.mesh
    if (fmesh is cmesh and fspace.degree == cspace.degree
            and fspace.kind == cspace.kind):
        delta = Field(fspace, fine.components,
                      fine.coefficients - coarse.coefficients)
        return field_norm(delta, norm)
    anc = _ancestry(fmesh, cmesh)

    if norm == "Linf":
        nodes, idx = _lagrange_nodes(fspace)
        nt, nloc = fspace.element_dofs.shape
        rep = np.full(fspace.ndof, nt, dtype=np.int64)
        np.minimum.at(rep, fspace.element_dofs.ravel(),
                      np.repeat(np.arange(nt), nloc))
        tri_c = anc[rep[idx]]
        lam_c = _bary_of_points(cmesh, tri_c, nodes)
        best = 0.0
        for c in range(fine.components):
            fa = fine.component(c)[idx]
            fb = evaluate(Field(cspace, 1, coarse.component(c)), tri_c, lam_c)
            best = max(best, float(np.max(np.abs(fa - fb))))
        return best

    order = max(_quad_order(fspace), _quad_order(cspace))
    lam, w = triangle_rule(order)
    _, det, inv_t = jacobians(fmesh)
    tri_c, lam_c = _bary_in_coarse(fmesh, cmesh, anc, lam)
    nt, nq = len(fmesh.triangles), len(w)
    total = 0.0
    for c in range(fine.components):
        sub_c = Field(cspace, 1, coarse.component(c))
        if norm == "L2":
            vals = basis_values(fspace, lam)
            va = np.einsum("tl,ql->tq", fine.component(c)[fspace.element_dofs], vals)
            vb = evaluate(sub_c, tri_c, lam_c).reshape(nt, nq)
            total += float(np.einsum("q,tq->", w, np.abs(det)[:, None] * (va - vb) ** 2))
        else:
            gref = basis_ref_grads(fspace, lam)
            ga = kernels.field_grads_at_quad(
                det, inv_t, gref, fine.component(c)[fspace.element_dofs]
            )
            gb = gradient(sub_c, tri_c, lam_c).reshape(nt, nq, 2)
            d = ga - gb
            total += float(
                np.einsum("q,tq->", w, np.abs(det)[:, None] * np.sum(d**2, axis=2))
            )
    return math.sqrt(total)


def _bary_of_points(mesh, elems, pts):
    """Barycentric coordinates of points inside the given elements."""
    cp = mesh.points[mesh.triangles[elems]]
    d1 = cp[:, 1] - cp[:, 0]
    d2 = cp[:, 2] - cp[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    r = pts - cp[:, 0]
    l1 = (r[:, 0] * d2[:, 1] - r[:, 1] * d2[:, 0]) / det
    l2 = (d1[:, 0] * r[:, 1] - d1[:, 1] * r[:, 0]) / det
    return np.column_stack([1.0 - l1 - l2, l1, l2])


def rate_table(quantity, norm, levels, diffs):
    """Successive-difference convergence report.

    ``diffs[i]`` is ||v_{levels[i]} - v_{levels[i]-1}||; the rate at row i
    is log2(diffs[i-1] / diffs[i]), absent (None) when either difference
    is zero, negative, or missing.
    """
    levels = list(levels)
    diffs = [None if d is None else float(d) for d in diffs]
    if len(levels) != len(diffs):
        raise ValueError("levels and diffs must have equal length")
    if len(diffs) < 3:
        raise ValueError("need at least three difference values for rates")
    rates = [None]
    for prev, cur in zip(diffs, diffs[1:]):
        ok = prev is not None and cur is not None and prev > 0.0 and cur > 0.0
        rates.append(math.log2(prev / cur) if ok else None)
    return ConvergenceReport(quantity, norm, levels, diffs, rates)


def manufactured_error(field, exact, norm="L2", exact_grad=None):
    """Norm of field - exact for an analytic reference solution."""
    _check_norm(norm)
    if field.components != 1:
        raise ValueError("manufactured_error compares scalar fields")
    space = field.space
    mesh = space.mesh
    if norm == "Linf":
        nodes, idx = _lagrange_nodes(space)
        return float(
            np.max(np.abs(field.coefficients[idx] - exact(nodes[:, 0], nodes[:, 1])))
        )
    order = 2 * poly_degree(space) + 4
    lam, w = triangle_rule(order)
    pts = physical_points(lam, mesh.points[mesh.triangles])
    _, det, inv_t = jacobians(mesh)
    if norm == "L2":
        vals = basis_values(space, lam)
        vq = np.einsum("tl,ql->tq", field.coefficients[space.element_dofs], vals)
        eq = exact(pts[..., 0], pts[..., 1])
        return math.sqrt(
            float(np.einsum("q,tq->", w, np.abs(det)[:, None] * (vq - eq) ** 2))
        )
    if exact_grad is None:
        raise ValueError("H1 comparison needs the exact gradient")
    gref = basis_ref_grads(space, lam)
    g = kernels.field_grads_at_quad(det, inv_t, gref,
                                    field.coefficients[space.element_dofs])
    gx, gy = exact_grad(pts[..., 0], pts[..., 1])
    d = g - np.stack(np.broadcast_arrays(gx, gy), axis=-1)
    return math.sqrt(
        float(np.einsum("q,tq->", w, np.abs(det)[:, None] * np.sum(d**2, axis=2)))
    )


def infsup_diagnostic(vspace, pspace):
    """Discrete inf-sup constant of the velocity/pressure pair.

    Dense eigensolve of the pressure Schur complement B A^-1 B^T against
    the pressure mass matrix; the near-zero eigenvalue of the constant
    pressure mode is discarded and the square root of the next smallest
    is returned.  Guarded to small problems.
    """
    n = 2 * vspace.ndof + pspace.ndof
    if n > 5000:
        raise ValueError(f"problem too large for the dense diagnostic ({n} > 5000)")
    a = assemble_vector_stiffness(vspace)
    bdofs = vector_boundary_dofs(vspace)
    a, _ = apply_dirichlet(a, np.zeros(2 * vspace.ndof), bdofs)
    b = assemble_divergence(vspace, pspace).toarray()
    b[:, bdofs] = 0.0
    m = assemble_mass(pspace).toarray()
    ainv_bt = spla.spsolve(a.tocsc(), b.T)
    if ainv_bt.ndim == 1:
        ainv_bt = ainv_bt[:, None]
    schur = b @ ainv_bt
    schur = 0.5 * (schur + schur.T)
    evals = np.sort(scipy.linalg.eigh(schur, m, eigvals_only=True))
    # drop the constant-pressure nullvector and any spurious pressure
    # modes (exact zeros up to roundoff); keep the smallest nonzero
    tol = 1e-10 * max(float(evals[-1]), 1.0)
    nonzero = evals[evals > tol]
    if nonzero.size == 0:
        return 0.0
    return math.sqrt(float(nonzero[0]))


# -- serialization ------------------------------------------------------------


def write_reports_csv(reports, path):
    """CSV rows `quantity,norm,level,diff,rate` for a list of reports."""
    lines = ["quantity,norm,level,diff,rate"]
    for rep in reports:
        for lev, d, r in rep.rows():
            dtxt = "" if d is None else f"{d:.6e}"
            rtxt = "" if r is None else f"{r:.6f}"
            lines.append(f"{rep.quantity},{rep.norm},{lev},{dtxt},{rtxt}")
    text = "\n".join(lines) + "\n"
    with open(path, "w") as fh:
        fh.write(text)
    return text


def markdown_table(reports_by_kappa, title):
    """Markdown rate table: one level per row, one kappa per column pair."""
    kappas = list(reports_by_kappa)
    levels = []
    for rep in reports_by_kappa.values():
        for lev in rep.levels:
            if lev not in levels:
                levels.append(lev)
    levels.sort()
    cols = "".join(f" diff (kappa={k:g}) | rate (kappa={k:g}) |"
                   for k in kappas)
    lines = [f"### {title}", "", f"| j |{cols}",
             "|---|" + "---|" * (2 * len(kappas))]
    for lev in levels:
        cells = []
        for k in kappas:
            rep = reports_by_kappa[k]
            if lev in rep.levels:
                i = rep.levels.index(lev)
                d, r = rep.diffs[i], rep.rates[i]
                cells.append("--" if d is None else f"{d:.5e}")
                cells.append("--" if r is None else f"{r:.2f}")
            else:
                cells.extend(["--", "--"])
        lines.append("| " + str(lev) + " | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"
