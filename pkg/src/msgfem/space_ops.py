"""Subspace masks, restriction/extension operators and the partition of unity.

Functions on a subdomain ``D`` are dof vectors over ``D``'s local layout.
The masked subspace of ``D`` consists of the vectors that vanish on the
contact layer ``D minus d_minus(D)``; extension by zero maps it isometrically
into the masked subspace of any enclosing set, and restriction simply slices
dofs, so the pair is an exact one-sided inverse.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decomposition import Decomposition, d_minus
from .dg_forms import assemble_B, nested_dofs, subdomain_dofs
from .mesh import TriMesh

__all__ = [
    "h0_dofs",
    "restrict",
    "extend_by_zero",
    "PartitionOfUnity",
    "build_pou",
    "interpolate_product",
    "pou_blend",
    "locality_check",
    "export_pou",
]


def h0_dofs(mesh: TriMesh, D: np.ndarray) -> np.ndarray:
    """Local dof indices spanning the masked subspace of ``D``.

    These are exactly the dofs of the elements of ``d_minus(D)``.
    """
    D = np.asarray(D, dtype=np.int64)
    return nested_dofs(d_minus(mesh, D), D)


def restrict(u: np.ndarray, D_star, D) -> np.ndarray:
    """Restrict a dof vector from an enclosing set to a subset (dof slicing)."""
    return u[nested_dofs(D, D_star)]


def extend_by_zero(mesh: TriMesh, v: np.ndarray, D, D_star) -> np.ndarray:
    """Zero-extension of a masked vector on ``D`` into the layout of ``D_star``.

    Rejects vectors that are nonzero on the contact layer of ``D`` since those
    are not members of the masked subspace and the extension would not be an
    isometry for them.
    """
    D = np.asarray(D, dtype=np.int64)
    idx = nested_dofs(D, D_star)
    free = h0_dofs(mesh, D)
    layer = np.setdiff1d(np.arange(3 * D.size), free, assume_unique=True)
    if np.any(v[layer] != 0.0):
        raise ValueError("vector has nonzero dofs on the contact layer of the subdomain")
    out = np.zeros(3 * np.asarray(D_star).size)
    out[idx] = v
    return out


@dataclass(frozen=True)
class PartitionOfUnity:
    """Continuous piecewise-linear weights, one vertex-value row per subdomain.

    Row ``j`` vanishes on every vertex touched by an element outside the
    shrunk subdomain ``d_minus(omega_j)`` and the rows sum to one at every
    vertex.  ``grad_inf`` records the largest elementwise gradient magnitude
    of each weight.
    """

    values: np.ndarray    # (n_subdomains, n_vertices)
    grad_inf: np.ndarray  # (n_subdomains,)

    @property
    def n_subdomains(self) -> int:
        return self.values.shape[0]


def _vertex_graph_distance(mesh: TriMesh, sources: np.ndarray) -> np.ndarray:
    """Edge-graph distance from a vertex source set; unreachable stays at inf."""
    nv = mesh.n_vertices
    dist = np.full(nv, np.inf)
    dist[sources] = 0.0
    frontier = sources
    level = 0
    # neighbours via incident elements; the structured meshes are small enough
    # that a python BFS over vertex fronts is fine
    while frontier.size:
        level += 1
        elems = np.unique(np.concatenate(
            [mesh.vertex_elements(v) for v in frontier]))
        cand = np.unique(mesh.elements[elems].ravel())
        new = cand[np.isinf(dist[cand])]
        dist[new] = level
        frontier = new
    return dist


def build_pou(mesh: TriMesh, decomp: Decomposition) -> PartitionOfUnity:
    """Distance-graded weights normalized to sum to one at each vertex.

    Per subdomain the raw weight is the vertex graph distance to the set of
    forbidden vertices (those touching elements outside the shrunk
    subdomain), capped so the twice-shrunk core sits on the unit plateau,
    then all weights are normalized vertexwise.
    """
    nv = mesh.n_vertices
    M = decomp.n_subdomains
    raw = np.zeros((M, nv))
    all_elems = np.arange(mesh.n_elements, dtype=np.int64)
    for j in range(M):
        omega = decomp.omega(j)
        inner = d_minus(mesh, omega)
        outside = np.setdiff1d(all_elems, inner, assume_unique=True)
        if outside.size == 0:
            raw[j, :] = 1.0
            continue
        forbidden = np.unique(mesh.elements[outside].ravel())
        dist = _vertex_graph_distance(mesh, forbidden)
        core = d_minus(mesh, inner)
        cap = 1.0
        if core.size:
            core_verts = np.unique(mesh.elements[core].ravel())
            cap = max(float(dist[core_verts].min()), 1.0)
        raw[j, :] = np.minimum(dist, cap) / cap

    total = raw.sum(axis=0)
    uncovered = np.flatnonzero(total <= 0.0)
    if uncovered.size:
        raise ValueError(
            f"vertex {int(uncovered[0])} is not interior to any shrunk subdomain; "
            "increase the overlap")
    values = raw / total[None, :]
    grad_inf = np.empty(M)
    for j in range(M):
        g = np.einsum("ei,eid->ed", values[j][mesh.elements], mesh.grads)
        grad_inf[j] = float(np.linalg.norm(g, axis=1).max())
    return PartitionOfUnity(values=values, grad_inf=grad_inf)


def interpolate_product(mesh: TriMesh, chi_vertex_values: np.ndarray,
                        u: np.ndarray, D) -> np.ndarray:
    """Elementwise nodal interpolation of the product of a P1 weight with u.

    Every dof of ``u`` is scaled by the weight's value at its vertex, which is
    exactly the vertexwise Lagrange interpolant of the (quadratic) product.
    """
    D = np.asarray(D, dtype=np.int64)
    chi_dof = chi_vertex_values[mesh.elements[D]].ravel()
    return chi_dof * u


def pou_blend(mesh: TriMesh, decomp: Decomposition, pou: PartitionOfUnity,
              locals_: list) -> np.ndarray:
    """Blend per-subdomain vectors into one global vector.

    Each local contribution is interpolated against its weight and scattered;
    the weight's support condition guarantees the scattered vector vanishes
    outside the shrunk subdomain, so plain accumulation realizes the
    zero-extension.  Restrictions of a single global vector blend back to it.
    """
    out = np.zeros(3 * mesh.n_elements)
    for j in range(decomp.n_subdomains):
        omega = decomp.omega(j)
        loc = interpolate_product(mesh, pou.values[j], locals_[j], omega)
        out[subdomain_dofs(omega)] += loc
    return out


def locality_check(mesh: TriMesh, coefficient, gamma0: float,
                   u_star: np.ndarray, v: np.ndarray, D, D_star):
    """Evaluate the subdomain form against the enclosing form on a masked vector.

    Returns the pair ``(B_D(u|_D, v), B_{D*}(u, E v))`` computed through two
    independent assemblies; the two numbers agree because the masked vector
    kills every face contribution that only one of the forms contains.
    """
    u_D = restrict(u_star, D_star, D)
    a = assemble_B(mesh, coefficient, D, gamma0).quad(u_D, v)
    ev = extend_by_zero(mesh, v, D, D_star)
    b = assemble_B(mesh, coefficient, D_star, gamma0).quad(u_star, ev)
    return a, b


def export_pou(pou: PartitionOfUnity) -> str:
    """One line per subdomain with the vertex values."""
    lines = [" ".join(repr(float(x)) for x in row) for row in pou.values]
    return "\n".join(lines) + "\n"
