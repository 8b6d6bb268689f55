import numpy as np
import pytest
import scipy.linalg as la

from msgfem.decomposition import square_block
from msgfem.dg_forms import (DGAssembler, DofMap, assemble_B, assemble_Bplus,
                             assemble_H, assemble_load, energy_norm,
                             export_matrix, gamma_sq, subdomain_dofs,
                             weighted_avg_weights)
from msgfem.mesh import (Coefficient, TriMesh, build_structured_mesh,
                         coefficient_field, face_data)

G0 = np.sqrt(10.0)


def test_gamma_sq_values_and_symmetry():
    assert gamma_sq(2.0, 2.0, 0.25, 1.0) == pytest.approx(2.0 / 0.25)
    assert gamma_sq(1.0, 3.0, 0.5, 1.0) == pytest.approx(3.0)
    assert gamma_sq(1.0, 3.0, 0.5, 1.0) == gamma_sq(3.0, 1.0, 0.5, 1.0)
    with pytest.raises(ValueError):
        gamma_sq(0.0, 1.0, 0.5, 1.0)


def test_weighted_avg_weights():
    assert weighted_avg_weights(5.0, 5.0) == (1.0, 1.0)
    assert weighted_avg_weights(1.0, 3.0) == (1.5, 0.5)
    rng = np.random.default_rng(0)
    for _ in range(20):
        a, b = rng.uniform(0.1, 100, size=2)
        w1, w2 = weighted_avg_weights(a, b)
        assert w1 + w2 == pytest.approx(2.0, abs=1e-14)


def test_constant_energy_equals_boundary_penalty_sum():
    mesh = build_structured_mesh(2)
    coef = coefficient_field(mesh, "constant:1")
    B = assemble_B(mesh, coef, None, G0)
    ones = np.ones(B.matrix.shape[0])
    oracle = 0.0
    for k in range(mesh.n_boundary_faces):
        nu1, nu2, hF, _ = face_data(mesh, coef, "boundary", k)
        oracle += 2.0 * gamma_sq(nu1, nu2, hF, G0) * hF
    assert B.quad(ones) == pytest.approx(oracle, rel=1e-13)
    assert B.quad(ones) == pytest.approx(16.0 * G0 ** 2, rel=1e-13)


def test_assembled_matrix_is_symmetric():
    mesh = build_structured_mesh(4)
    coef = coefficient_field(mesh, "checkerboard:100:1")
    for kind in ("B", "Bplus", "H", "mass"):
        M = DGAssembler(mesh, coef, G0).matrix(None, kind)
        assert np.abs((M - M.T)).max() <= 1e-13 * np.abs(M).max()


def test_coefficient_scaling_is_exact_for_powers_of_two():
    mesh = build_structured_mesh(4)
    coef = coefficient_field(mesh, "checkerboard:100:2")
    D = square_block(mesh, 0, 3, 1, 4)
    B1 = assemble_B(mesh, coef, D, G0).matrix
    B2 = assemble_B(mesh, Coefficient.from_values(2.0 * coef.values), D, G0).matrix
    assert np.abs((B2 - 2.0 * B1)).max() == 0.0
    B3 = assemble_B(mesh, Coefficient.from_values(3.0 * coef.values), D, G0).matrix
    assert np.abs((B3 - 3.0 * B1)).max() <= 1e-14 * np.abs(B3).max()


def test_bplus_kernel_dichotomy():
    mesh = build_structured_mesh(8)
    coef = coefficient_field(mesh, "checkerboard:10000:2")
    interior = square_block(mesh, 2, 6, 2, 6)
    Bp = assemble_Bplus(mesh, coef, interior, G0)
    ones = np.ones(Bp.matrix.shape[0])
    assert np.abs(Bp.matrix @ ones).max() <= 1e-12 * coef.nu_max
    boundary = square_block(mesh, 0, 4, 0, 4)
    Bpb = assemble_Bplus(mesh, coef, boundary, G0)
    assert Bpb.quad(np.ones(Bpb.matrix.shape[0])) > 0.0


def test_bplus_positive_semidefinite_dense():
    mesh = build_structured_mesh(6)
    coef = coefficient_field(mesh, "checkerboard:100:3")
    rng = np.random.default_rng(1)
    for _ in range(3):
        picks = np.unique(rng.integers(0, mesh.n_elements, size=30))
        Bp = assemble_Bplus(mesh, coef, picks, G0).matrix.toarray()
        assert la.eigvalsh(0.5 * (Bp + Bp.T))[0] >= -1e-12 * coef.nu_max


def test_h_is_bplus_plus_mass_and_positive():
    mesh = build_structured_mesh(8)
    coef = coefficient_field(mesh, "checkerboard:100:2")
    D = square_block(mesh, 2, 6, 2, 6)
    asm = DGAssembler(mesh, coef, G0)
    H = asm.matrix(D, "H")
    Bp = asm.matrix(D, "Bplus")
    Mv = asm.matrix(D, "mass")
    assert np.abs((H - Bp - Mv)).max() <= 1e-12 * np.abs(H).max()
    assert la.eigvalsh(H.toarray())[0] > 0.0
    # constants only see the volume term on interior sets
    ones = np.ones(H.shape[0])
    area = mesh.areas[D].sum()
    assert ones @ (H @ ones) == pytest.approx(area, rel=1e-12)


def test_energy_norm_identities():
    mesh = build_structured_mesh(8)
    coef = coefficient_field(mesh, "constant:2")
    D = square_block(mesh, 2, 6, 2, 6)
    nd = 3 * D.size
    assert energy_norm(mesh, coef, np.zeros(nd), D, "Bplus", G0) == 0.0
    c = 3.0 * np.ones(nd)
    area = mesh.areas[D].sum()
    assert energy_norm(mesh, coef, c, D, "Bplus", G0) <= 1e-6
    assert energy_norm(mesh, coef, c, D, "L2", G0) == pytest.approx(3.0 * np.sqrt(area))
    rng = np.random.default_rng(2)
    u = rng.standard_normal(nd)
    nb = energy_norm(mesh, coef, u, D, "Bplus", G0)
    nl = energy_norm(mesh, coef, u, D, "L2", G0)
    nh = energy_norm(mesh, coef, u, D, "H", G0)
    assert nh ** 2 == pytest.approx(nb ** 2 + nl ** 2, rel=1e-12)
    with pytest.raises(ValueError):
        energy_norm(mesh, coef, u, D, "bogus", G0)


def test_load_trivial_and_moments():
    mesh = build_structured_mesh(4)
    D = square_block(mesh, 1, 3, 1, 3)
    assert np.all(assemble_load(mesh, 0.0, D) == 0.0)
    F = assemble_load(mesh, 1.0, D)
    assert F.sum() == pytest.approx(mesh.areas[D].sum(), rel=1e-13)
    # closed-form moments of f = x on the reference triangle:
    # against the vertex functions at (0,0), (1,0), (0,1)
    ref = TriMesh.from_arrays([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
    Fx = assemble_load(ref, lambda x, y: x, None, degree=2)
    assert Fx == pytest.approx([1 / 24, 1 / 12, 1 / 24], rel=1e-13)


def face_block_oracle(mesh, coef, gamma0, kind):
    """Independent scalar-loop assembly: volume plus per-face blocks, reversed order."""
    nd = 3 * mesh.n_elements
    M = np.zeros((nd, nd))
    for e in range(mesh.n_elements):
        dofs = np.arange(3 * e, 3 * e + 3)
        K = coef.values[e] * mesh.areas[e] * (mesh.grads[e] @ mesh.grads[e].T)
        M[np.ix_(dofs, dofs)] += K
    for k in reversed(range(mesh.n_interior_faces)):
        e1, e2 = mesh.iface_elems[k]
        nu1, nu2, hF, n = face_data(mesh, coef, "interior", k)
        g2 = gamma_sq(nu1, nu2, hF, gamma0)
        w1, w2 = weighted_avg_weights(nu1, nu2)
        dofs = np.concatenate([np.arange(3 * e1, 3 * e1 + 3),
                               np.arange(3 * e2, 3 * e2 + 3)])
        Sp = np.zeros(6)
        Sq = np.zeros(6)
        (ia1, ib1), (ia2, ib2) = mesh.iface_local[k]
        Sp[ia1], Sp[3 + ia2] = 1.0, -1.0
        Sq[ib1], Sq[3 + ib2] = 1.0, -1.0
        pen = g2 * hF / 6.0 * (2 * np.outer(Sp, Sp) + np.outer(Sp, Sq)
                               + np.outer(Sq, Sp) + 2 * np.outer(Sq, Sq))
        blk = pen
        if kind == "B":
            gvec = np.concatenate([w1 * nu1 * (mesh.grads[e1] @ n),
                                   w2 * nu2 * (mesh.grads[e2] @ n)])
            cons = 0.25 * hF * np.outer(Sp + Sq, gvec)
            blk = pen - cons - cons.T
        M[np.ix_(dofs, dofs)] += blk
    for k in reversed(range(mesh.n_boundary_faces)):
        e = mesh.bface_elem[k]
        nu1, nu2, hF, n = face_data(mesh, coef, "boundary", k)
        g2 = gamma_sq(nu1, nu2, hF, gamma0)
        dofs = np.arange(3 * e, 3 * e + 3)
        ia, ib = mesh.bface_local[k]
        Tp = np.zeros(3)
        Tq = np.zeros(3)
        Tp[ia], Tq[ib] = 1.0, 1.0
        mf = hF / 6.0 * (2 * np.outer(Tp, Tp) + np.outer(Tp, Tq)
                         + np.outer(Tq, Tp) + 2 * np.outer(Tq, Tq))
        if kind == "B":
            gvec = nu1 * (mesh.grads[e] @ n)
            cons = 0.5 * hF * np.outer(Tp + Tq, gvec)
            blk = 2.0 * g2 * mf - cons - cons.T
        else:
            blk = g2 * mf
        M[np.ix_(dofs, dofs)] += blk
    return M


@pytest.mark.parametrize("kind", ["B", "Bplus"])
def test_face_sum_consistency_against_scalar_oracle(kind):
    mesh = build_structured_mesh(4)
    coef = coefficient_field(mesh, "checkerboard:1000:1")
    fast = DGAssembler(mesh, coef, G0).matrix(None, kind).toarray()
    slow = face_block_oracle(mesh, coef, G0, kind)
    assert np.abs(fast - slow).max() <= 1e-13 * np.abs(slow).max()


def test_spectral_interval_insensitive_to_contrast():
    # generalized eigenvalues of the full form against its positive part
    mesh = build_structured_mesh(8)

    def interval(spec):
        coef = coefficient_field(mesh, spec)
        asm = DGAssembler(mesh, coef, G0)
        B = asm.matrix(None, "B").toarray()
        Bp = asm.matrix(None, "Bplus").toarray()
        w = la.eigh(0.5 * (B + B.T), 0.5 * (Bp + Bp.T), eigvals_only=True)
        return w[0], w[-1]

    lo1, hi1 = interval("constant:1")
    lo2, hi2 = interval("checkerboard:10000:2")
    assert abs(lo2 - lo1) <= 0.1 * lo1
    assert abs(hi2 - hi1) <= 0.1 * hi1
    assert lo1 > 0.0


def elementwise_l2_projection(mesh, g):
    from msgfem.dg_forms import triangle_quadrature
    bary, w = triangle_quadrature(5)
    pts = np.einsum("qa,ead->eqd", bary, mesh.vertices[mesh.elements])
    gv = g(pts[..., 0], pts[..., 1])
    b = np.einsum("eq,q,qi->ei", gv, w, bary)
    M0 = (np.full((3, 3), 1.0) + np.eye(3)) / 12.0
    return np.einsum("ij,ej->ei", np.linalg.inv(M0), b).ravel()


def test_jump_seminorm_of_elementwise_approximations():
    # the vertex interpolant of a smooth function is continuous, so its jump
    # seminorm vanishes; the discontinuous elementwise projection loses O(h)
    g = lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y)
    vals = []
    for n in (8, 16, 32):
        mesh = build_structured_mesh(n)
        coef = coefficient_field(mesh, "constant:1")
        P = DGAssembler(mesh, coef, G0).matrix(None, "Bplus_faces")
        nodal = g(mesh.vertices[mesh.elements][..., 0],
                  mesh.vertices[mesh.elements][..., 1]).ravel()
        assert abs(nodal @ (P @ nodal)) <= 1e-10
        proj = elementwise_l2_projection(mesh, g)
        vals.append(np.sqrt(proj @ (P @ proj)))
    rates = [np.log(vals[i] / vals[i + 1]) / np.log(2.0) for i in range(2)]
    assert min(rates) >= 0.9


def test_empty_subdomain_rejected():
    mesh = build_structured_mesh(2)
    coef = coefficient_field(mesh, "constant:1")
    with pytest.raises(ValueError):
        assemble_B(mesh, coef, np.array([], dtype=np.int64), G0)
    with pytest.raises(ValueError):
        DGAssembler(mesh, coef, G0).matrix(None, "bogus")


def test_dofmap_and_subdomain_dofs():
    mesh = build_structured_mesh(2)
    dm = DofMap(mesh.n_elements)
    assert dm.total == 3 * mesh.n_elements
    assert np.array_equal(dm.element_dofs(3), [9, 10, 11])
    assert np.array_equal(subdomain_dofs([1, 4]), [3, 4, 5, 12, 13, 14])


def test_matrix_export_round_trip():
    mesh = build_structured_mesh(2)
    coef = coefficient_field(mesh, "constant:1")
    form = assemble_H(mesh, coef, None, G0)
    text = export_matrix(form)
    rebuilt = np.zeros(form.matrix.shape)
    for line in text.strip().split("\n"):
        r, c, v = line.split()
        rebuilt[int(r), int(c)] += float(v)
    assert np.abs(rebuilt - form.matrix.toarray()).max() == 0.0
