"""Conforming triangular meshes of the unit square and per-element coefficient fields.

The mesh is the single geometric data structure of the package: every other
module addresses it through element indices, face tables and the per-element
linear shape-function gradients that are precomputed here.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MeshError

__all__ = [
    "TriMesh",
    "Coefficient",
    "build_structured_mesh",
    "coefficient_field",
    "face_data",
    "export_mesh",
    "export_coefficient",
]


@dataclass(frozen=True)
class TriMesh:
    """Conforming simplicial mesh with full face connectivity.

    Vertices live on the closed unit square.  Elements are triples of vertex
    indices in counterclockwise order.  Interior faces store their two
    adjacent elements with the smaller element index first ("element 1" of
    the face); the stored unit normal points out of element 1.  Boundary
    faces store their single adjacent element and its outward unit normal.

    ``iface_local[k, s]`` gives, for face ``k`` and side ``s`` (0 = element 1,
    1 = element 2), the positions of the two face vertices inside that
    element's vertex triple, in the same vertex order as ``iface_verts[k]``.
    """

    vertices: np.ndarray       # (nv, 2) float
    elements: np.ndarray       # (ne, 3) int, CCW
    areas: np.ndarray          # (ne,)
    grads: np.ndarray          # (ne, 3, 2) gradient of the P1 basis per element
    h_T: np.ndarray            # (ne,) element diameters
    iface_elems: np.ndarray    # (nfi, 2) adjacent elements, first < second
    iface_verts: np.ndarray    # (nfi, 2) shared vertex pair
    iface_h: np.ndarray        # (nfi,) face lengths
    iface_normal: np.ndarray   # (nfi, 2) unit normal out of the first element
    iface_local: np.ndarray    # (nfi, 2, 2) local vertex positions per side
    bface_elem: np.ndarray     # (nfb,)
    bface_verts: np.ndarray    # (nfb, 2)
    bface_h: np.ndarray        # (nfb,)
    bface_normal: np.ndarray   # (nfb, 2) outward unit normal
    bface_local: np.ndarray    # (nfb, 2)
    v2e_indptr: np.ndarray     # CSR vertex -> incident elements
    v2e_elems: np.ndarray
    structured_n: int | None = field(default=None)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def n_interior_faces(self) -> int:
        return self.iface_elems.shape[0]

    @property
    def n_boundary_faces(self) -> int:
        return self.bface_elem.shape[0]

    @property
    def h(self) -> float:
        return float(self.h_T.max())

    def vertex_elements(self, v: int) -> np.ndarray:
        """Elements incident to vertex ``v``."""
        return self.v2e_elems[self.v2e_indptr[v]:self.v2e_indptr[v + 1]]

    @staticmethod
    def from_arrays(vertices, elements, structured_n=None) -> "TriMesh":
        """Build the full connectivity from raw vertex/element arrays."""
        return _build_mesh(np.asarray(vertices, dtype=float),
                           np.asarray(elements, dtype=np.int64),
                           structured_n)


@dataclass(frozen=True)
class Coefficient:
    """Piecewise-constant diffusion coefficient, one positive value per element."""

    values: np.ndarray
    nu_min: float
    nu_max: float

    def __post_init__(self):
        if self.values.ndim != 1:
            raise ValueError("coefficient values must be a flat per-element array")
        if not np.all(self.values > 0.0):
            raise ValueError("coefficient values must be strictly positive")

    @property
    def contrast(self) -> float:
        return self.nu_max / self.nu_min

    @staticmethod
    def from_values(values) -> "Coefficient":
        v = np.asarray(values, dtype=float)
        if v.size == 0 or not np.all(v > 0.0):
            raise ValueError("coefficient values must be nonempty and strictly positive")
        return Coefficient(values=v, nu_min=float(v.min()), nu_max=float(v.max()))


def _element_geometry(vertices, elements):
    p0 = vertices[elements[:, 0]]
    p1 = vertices[elements[:, 1]]
    p2 = vertices[elements[:, 2]]
    d1 = p1 - p0
    d2 = p2 - p0
    twice_area = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    if np.any(twice_area <= 0.0):
        bad = int(np.argmax(twice_area <= 0.0))
        raise MeshError(f"element {bad} has nonpositive area (not counterclockwise?)")
    areas = 0.5 * twice_area
    # grad of barycentric basis: rotated opposite edges over twice the area
    grads = np.empty((elements.shape[0], 3, 2))
    for i, (j, k) in enumerate(((1, 2), (2, 0), (0, 1))):
        e = vertices[elements[:, k]] - vertices[elements[:, j]]
        grads[:, i, 0] = -e[:, 1]
        grads[:, i, 1] = e[:, 0]
    grads /= twice_area[:, None, None]
    edge_len = np.stack([
        np.linalg.norm(p1 - p2, axis=1),
        np.linalg.norm(p2 - p0, axis=1),
        np.linalg.norm(p0 - p1, axis=1),
    ])
    h_T = edge_len.max(axis=0)
    return areas, grads, h_T


def _build_mesh(vertices, elements, structured_n):
    ne = elements.shape[0]
    # one row per element edge, canonical vertex order
    local_pairs = np.array([[0, 1], [1, 2], [2, 0]])
    edges = elements[:, local_pairs].reshape(-1, 2)          # (3ne, 2)
    owner = np.repeat(np.arange(ne), 3)
    edges_sorted = np.sort(edges, axis=1)
    order = np.lexsort((edges_sorted[:, 1], edges_sorted[:, 0]))
    es = edges_sorted[order]
    own = owner[order]
    new_group = np.ones(len(es), dtype=bool)
    new_group[1:] = np.any(es[1:] != es[:-1], axis=1)
    group_ids = np.cumsum(new_group) - 1
    counts = np.bincount(group_ids)
    if np.any(counts > 2):
        raise MeshError("non-conforming mesh: an edge is shared by more than two elements")

    starts = np.flatnonzero(new_group)
    int_rows = starts[counts == 2]
    bnd_rows = starts[counts == 1]

    iface_verts = es[int_rows]
    pair = np.stack([own[int_rows], own[int_rows + 1]], axis=1)
    pair.sort(axis=1)                                        # smaller element first
    iface_elems = pair
    bface_verts = es[bnd_rows]
    bface_elem = own[bnd_rows]

    areas, grads, h_T = _element_geometry(vertices, elements)

    def face_lengths(verts):
        d = vertices[verts[:, 0]] - vertices[verts[:, 1]]
        return np.linalg.norm(d, axis=1)

    iface_h = face_lengths(iface_verts)
    bface_h = face_lengths(bface_verts)

    def local_positions(elems, verts):
        loc = np.empty(verts.shape, dtype=np.int64)
        tri = elements[elems]
        for c in range(2):
            match = tri == verts[:, c, None]
            if not np.all(match.sum(axis=1) == 1):
                raise MeshError("face vertex not found in adjacent element")
            loc[:, c] = np.argmax(match, axis=1)
        return loc

    iface_local = np.stack([local_positions(iface_elems[:, 0], iface_verts),
                            local_positions(iface_elems[:, 1], iface_verts)], axis=1)
    bface_local = local_positions(bface_elem, bface_verts)

    def outward_normal(elems, verts):
        t = vertices[verts[:, 1]] - vertices[verts[:, 0]]
        nrm = np.stack([t[:, 1], -t[:, 0]], axis=1)
        nrm /= np.linalg.norm(nrm, axis=1)[:, None]
        centroid = vertices[elements[elems]].mean(axis=1)
        mid = 0.5 * (vertices[verts[:, 0]] + vertices[verts[:, 1]])
        flip = np.sum(nrm * (mid - centroid), axis=1) < 0.0
        nrm[flip] *= -1.0
        return nrm

    iface_normal = outward_normal(iface_elems[:, 0], iface_verts)
    bface_normal = outward_normal(bface_elem, bface_verts)

    # vertex -> incident elements (CSR)
    flat = elements.ravel()
    v_order = np.argsort(flat, kind="stable")
    v2e_elems = np.repeat(np.arange(ne), 3)[v_order]
    v2e_indptr = np.zeros(vertices.shape[0] + 1, dtype=np.int64)
    np.add.at(v2e_indptr, flat + 1, 1)
    v2e_indptr = np.cumsum(v2e_indptr)

    mesh = TriMesh(
        vertices=vertices, elements=elements, areas=areas, grads=grads, h_T=h_T,
        iface_elems=iface_elems, iface_verts=iface_verts, iface_h=iface_h,
        iface_normal=iface_normal, iface_local=iface_local,
        bface_elem=bface_elem, bface_verts=bface_verts, bface_h=bface_h,
        bface_normal=bface_normal, bface_local=bface_local,
        v2e_indptr=v2e_indptr, v2e_elems=v2e_elems, structured_n=structured_n,
    )
    if 2 * mesh.n_interior_faces + mesh.n_boundary_faces != 3 * ne:
        raise MeshError("face bookkeeping inconsistent with element count")
    return mesh


def build_structured_mesh(n: int) -> TriMesh:
    """Uniform triangulation of the unit square.

    The square is split into ``n x n`` cells and every cell into two right
    triangles by its lower-left/upper-right diagonal, giving ``2 n**2``
    elements over ``(n+1)**2`` vertices.  The element order is row-major in
    the cells with the lower triangle first, so element ``2*(iy*n+ix)+t``
    lives in cell ``(ix, iy)``.
    """
    if n < 1:
        raise ValueError(f"mesh subdivision count must be >= 1, got {n}")
    idx = np.arange(n + 1)
    xs, ys = np.meshgrid(idx / n, idx / n, indexing="xy")
    vertices = np.stack([xs.ravel(), ys.ravel()], axis=1)

    ix, iy = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    ix = ix.ravel()
    iy = iy.ravel()
    v00 = iy * (n + 1) + ix
    v10 = v00 + 1
    v01 = v00 + (n + 1)
    v11 = v01 + 1
    lower = np.stack([v00, v10, v11], axis=1)
    upper = np.stack([v00, v11, v01], axis=1)
    elements = np.empty((2 * n * n, 3), dtype=np.int64)
    elements[0::2] = lower
    elements[1::2] = upper
    return TriMesh.from_arrays(vertices, elements, structured_n=n)


def _square_of_element(mesh: TriMesh, e) -> tuple:
    n = mesh.structured_n
    if n is None:
        raise ValueError("operation requires a structured mesh")
    sq = np.asarray(e) // 2
    return sq % n, sq // n


def coefficient_field(mesh: TriMesh, spec: str, seed: int = 0) -> Coefficient:
    """Create a mesh-resolved coefficient from a compact textual spec.

    Supported forms::

        constant:c
        checkerboard:contrast:block     alternating {1, contrast} on block x block cells
        channels:contrast:count         horizontal stripes of value contrast
        log_uniform:min:max             iid per element, log-uniform, PCG64(seed)

    ``checkerboard`` and ``channels`` require the structured mesh layout.
    """
    parts = spec.strip().split(":")
    kind = parts[0]
    args = parts[1:]
    ne = mesh.n_elements

    def positive(x, name):
        v = float(x)
        if v <= 0.0:
            raise ValueError(f"{name} must be positive, got {x}")
        return v

    if kind == "constant":
        if len(args) != 1:
            raise ValueError("constant coefficient takes one value: constant:c")
        c = positive(args[0], "coefficient value")
        return Coefficient.from_values(np.full(ne, c))
    if kind == "checkerboard":
        if len(args) != 2:
            raise ValueError("usage: checkerboard:contrast:block")
        contrast = positive(args[0], "contrast")
        if contrast < 1.0:
            raise ValueError("contrast must be >= 1")
        block = int(args[1])
        n = mesh.structured_n
        if n is None:
            raise ValueError("checkerboard requires a structured mesh")
        if block < 1 or n % block != 0:
            raise ValueError(f"block size {block} must divide the mesh size {n}")
        sx, sy = _square_of_element(mesh, np.arange(ne))
        parity = (sx // block + sy // block) % 2
        return Coefficient.from_values(np.where(parity == 1, contrast, 1.0))
    if kind == "channels":
        if len(args) != 2:
            raise ValueError("usage: channels:contrast:count")
        contrast = positive(args[0], "contrast")
        if contrast < 1.0:
            raise ValueError("contrast must be >= 1")
        count = int(args[1])
        n = mesh.structured_n
        if n is None:
            raise ValueError("channels requires a structured mesh")
        if count < 1 or n % (2 * count) != 0:
            raise ValueError(f"2*count must divide the mesh size {n}")
        _, sy = _square_of_element(mesh, np.arange(ne))
        stripe = (sy * 2 * count) // n
        return Coefficient.from_values(np.where(stripe % 2 == 1, contrast, 1.0))
    if kind == "log_uniform":
        if len(args) != 2:
            raise ValueError("usage: log_uniform:min:max")
        lo = positive(args[0], "lower bound")
        hi = positive(args[1], "upper bound")
        if hi < lo:
            raise ValueError("upper bound below lower bound")
        rng = np.random.Generator(np.random.PCG64(seed))
        vals = np.exp(rng.uniform(np.log(lo), np.log(hi), size=ne))
        return Coefficient.from_values(vals)
    raise ValueError(f"unknown coefficient kind {kind!r}")


def face_data(mesh: TriMesh, coefficient: Coefficient, kind: str, k: int):
    """Per-face data ``(nu_1, nu_2, h_F, normal)``.

    For interior faces the coefficient values come from the two adjacent
    elements with the smaller element index as side 1; for boundary faces
    both values equal the single element's coefficient.  The normal is the
    unit outward normal of side 1.
    """
    if kind == "interior":
        e1, e2 = mesh.iface_elems[k]
        return (float(coefficient.values[e1]), float(coefficient.values[e2]),
                float(mesh.iface_h[k]), mesh.iface_normal[k].copy())
    if kind == "boundary":
        e = mesh.bface_elem[k]
        nu = float(coefficient.values[e])
        return nu, nu, float(mesh.bface_h[k]), mesh.bface_normal[k].copy()
    raise ValueError(f"face kind must be 'interior' or 'boundary', got {kind!r}")


def export_mesh(mesh: TriMesh) -> str:
    """Plain-text mesh dump: vertices, elements, then face tables (0-based)."""
    out = []
    out.append(f"vertices {mesh.n_vertices}")
    for x, y in mesh.vertices:
        out.append(f"{x!r} {y!r}")
    out.append(f"elements {mesh.n_elements}")
    for a, b, c in mesh.elements:
        out.append(f"{a} {b} {c}")
    out.append(f"interior_faces {mesh.n_interior_faces}")
    for (e1, e2), (p, q) in zip(mesh.iface_elems, mesh.iface_verts):
        out.append(f"{e1} {e2} {p} {q}")
    out.append(f"boundary_faces {mesh.n_boundary_faces}")
    for e, (p, q) in zip(mesh.bface_elem, mesh.bface_verts):
        out.append(f"{e} {p} {q}")
    return "\n".join(out) + "\n"


def export_coefficient(coefficient: Coefficient) -> str:
    """One value per element line."""
    return "\n".join(repr(float(v)) for v in coefficient.values) + "\n"
