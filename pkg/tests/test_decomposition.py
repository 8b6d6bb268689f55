import numpy as np
import pytest

from msgfem.decomposition import (build_decomposition, coloring_constant,
                                  d_minus, d_plus, element_set,
                                  export_decomposition, grow, square_block)
from msgfem.mesh import build_structured_mesh


def vertex_neighbors_brute(mesh, members):
    """Oracle: elements sharing at least one vertex with the set, by full scan."""
    verts = set(mesh.elements[members].ravel().tolist()) if len(members) else set()
    out = []
    for e in range(mesh.n_elements):
        if e in set(np.asarray(members).tolist()):
            out.append(e)
        elif verts and any(v in verts for v in mesh.elements[e]):
            out.append(e)
    return np.array(sorted(out), dtype=np.int64)


def d_minus_brute(mesh, members):
    """Oracle: keep elements whose every vertex-sharing neighbor is a member."""
    member_set = set(np.asarray(members).tolist())
    out = []
    for e in np.asarray(members):
        ok = True
        for v in mesh.elements[e]:
            for other in mesh.vertex_elements(v):
                if int(other) not in member_set:
                    ok = False
        if ok:
            out.append(int(e))
    return np.array(sorted(out), dtype=np.int64)


def test_d_plus_trivial_cases():
    mesh = build_structured_mesh(4)
    everything = np.arange(mesh.n_elements)
    assert np.array_equal(d_plus(mesh, everything), everything)
    assert d_plus(mesh, np.array([], dtype=np.int64)).size == 0


def test_d_plus_single_interior_element_vs_brute_force():
    mesh = build_structured_mesh(4)
    D = element_set(mesh, [2 * (1 * 4 + 1)])  # lower triangle of cell (1, 1)
    assert np.array_equal(d_plus(mesh, D), vertex_neighbors_brute(mesh, D))
    assert d_plus(mesh, D).size > D.size


def test_d_minus_trivial_cases():
    mesh = build_structured_mesh(4)
    everything = np.arange(mesh.n_elements)
    assert np.array_equal(d_minus(mesh, everything), everything)
    interior_single = element_set(mesh, [2 * (4 + 1)])
    assert d_minus(mesh, interior_single).size == 0


def test_d_minus_three_by_three_block_leaves_center_square():
    mesh = build_structured_mesh(8)
    block = square_block(mesh, 2, 5, 2, 5)
    assert block.size == 18
    inner = d_minus(mesh, block)
    assert np.array_equal(inner, square_block(mesh, 3, 4, 3, 4))
    assert inner.size == 2
    assert np.array_equal(inner, d_minus_brute(mesh, block))


@pytest.mark.parametrize("box", [(0, 3, 0, 3), (1, 5, 2, 6), (3, 8, 0, 4)])
def test_hull_sandwich_and_composition(box):
    mesh = build_structured_mesh(8)
    D = square_block(mesh, *box)
    dm = d_minus(mesh, D)
    dp = d_plus(mesh, D)
    assert np.all(np.isin(dm, D)) and np.all(np.isin(D, dp))
    assert np.array_equal(dm, d_minus_brute(mesh, D))
    assert np.array_equal(dp, vertex_neighbors_brute(mesh, D))
    assert np.all(np.isin(dm, d_minus(mesh, dp)))


def test_single_subdomain_is_everything():
    mesh = build_structured_mesh(8)
    decomp = build_decomposition(mesh, 1, 2, 4)
    assert decomp.n_subdomains == 1
    assert decomp.omega(0).size == mesh.n_elements
    assert np.array_equal(decomp.omega(0), decomp.omega_star(0))


def grow_brute(mesh, members, layers):
    cur = np.asarray(members)
    for _ in range(layers):
        cur = vertex_neighbors_brute(mesh, cur)
    return cur


def test_m2_decomposition_against_bfs_oracle():
    mesh = build_structured_mesh(16)
    decomp = build_decomposition(mesh, 2, 2, 4)
    assert decomp.n_subdomains == 4
    cells = {0: (0, 8, 0, 8), 1: (8, 16, 0, 8), 2: (0, 8, 8, 16), 3: (8, 16, 8, 16)}
    union = []
    for j, box in cells.items():
        cell = square_block(mesh, *box)
        assert np.array_equal(decomp.omega(j), grow_brute(mesh, cell, 2))
        assert np.array_equal(decomp.omega_star(j), grow_brute(mesh, cell, 6))
        union.append(decomp.omega(j))
    assert np.unique(np.concatenate(union)).size == 512


def test_coloring_constant_four_quadrants():
    mesh = build_structured_mesh(16)
    decomp = build_decomposition(mesh, 2, 2, 4)
    omegas = [decomp.omega(j) for j in range(4)]
    assert coloring_constant(mesh, omegas) == 4


def test_shrunk_subdomains_still_cover():
    mesh = build_structured_mesh(16)
    decomp = build_decomposition(mesh, 4, 2, 2)
    covered = np.zeros(mesh.n_elements, dtype=bool)
    for j in range(decomp.n_subdomains):
        covered[d_minus(mesh, decomp.omega(j))] = True
    assert covered.all()


def test_boundary_subdomains_truncated_not_removed():
    mesh = build_structured_mesh(8)
    decomp = build_decomposition(mesh, 2, 2, 2)
    corner = square_block(mesh, 0, 1, 0, 1)
    assert np.all(np.isin(corner, decomp.omega(0)))
    assert np.all(np.isin(decomp.omega(0), decomp.omega_star(0)))


@pytest.mark.parametrize("m,l,ls", [(0, 2, 1), (2, 1, 1), (2, 2, 0)])
def test_parameter_validation(m, l, ls):
    mesh = build_structured_mesh(8)
    with pytest.raises(ValueError):
        build_decomposition(mesh, m, l, ls)


def test_overlap_swallowing_mesh_rejected():
    mesh = build_structured_mesh(4)
    with pytest.raises(ValueError, match="swallow"):
        build_decomposition(mesh, 2, 6, 1)


def test_element_set_validation():
    mesh = build_structured_mesh(2)
    assert np.array_equal(element_set(mesh, [3, 1, 1]), [1, 3])
    with pytest.raises(ValueError):
        element_set(mesh, [99])


def test_export_two_lines_per_subdomain():
    mesh = build_structured_mesh(8)
    decomp = build_decomposition(mesh, 2, 2, 2)
    lines = export_decomposition(decomp).strip().split("\n")
    assert len(lines) == 2 * decomp.n_subdomains
    first = np.array([int(t) for t in lines[0].split()])
    assert np.array_equal(first, decomp.omega(0))


def test_grow_is_monotone_and_idempotent_at_full_cover():
    mesh = build_structured_mesh(8)
    D = square_block(mesh, 3, 5, 3, 5)
    g1 = grow(mesh, D, 1)
    g2 = grow(mesh, D, 2)
    assert np.all(np.isin(g1, g2))
    assert grow(mesh, np.arange(mesh.n_elements), 3).size == mesh.n_elements
