"""Independent oracles and the runnable property suite.

The checks here deliberately avoid the multiscale pipeline: the reference
solution is a direct global solve, errors against manufactured solutions are
measured by quadrature, and every identity is evaluated through two separate
assemblies.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse.linalg as spla

from .decomposition import build_decomposition, d_minus, d_plus, square_block
from .dg_forms import (DGAssembler, nested_dofs, subdomain_dofs,
                       triangle_quadrature)
from .errors import SolverError
from .local_problems import harmonic_basis, lu_solve_refined, scaled_residual
from .mesh import TriMesh, build_structured_mesh, coefficient_field
from .space_ops import (build_pou, extend_by_zero, h0_dofs, locality_check,
                        pou_blend, restrict)

__all__ = [
    "ConvergenceRecord",
    "fine_solve",
    "manufactured_convergence",
    "decay_fit",
    "caccioppoli_ratios",
    "CheckResult",
    "SuiteReport",
    "run_property_suite",
]


def fine_solve(mesh: TriMesh, coefficient, f, gamma0: float,
               asm: DGAssembler | None = None) -> np.ndarray:
    """Direct solve of the global discrete problem; the reference solution."""
    if asm is None:
        asm = DGAssembler(mesh, coefficient, gamma0)
    B = asm.matrix(None, "B").tocsc()
    F = asm.load(f)
    try:
        lu = spla.splu(B)
    except RuntimeError as exc:
        raise SolverError(
            "global solve broke down; the penalty parameter may be below the "
            "coercive range of this mesh family") from exc
    u = lu_solve_refined(lu, B, F)
    res = scaled_residual(B, u, F)
    if res > 1e-10:
        raise SolverError(
            f"global residual {res:.3e} exceeds tolerance; the penalty "
            "parameter may be below the coercive range")
    return u


# -- manufactured-solution convergence ---------------------------------------

def _sin_exact(x, y):
    return np.sin(np.pi * x) * np.sin(np.pi * y)


def _sin_rhs(x, y):
    return 2.0 * np.pi ** 2 * np.sin(np.pi * x) * np.sin(np.pi * y)


def _sin_grad(x, y):
    return (np.pi * np.cos(np.pi * x) * np.sin(np.pi * y),
            np.pi * np.sin(np.pi * x) * np.cos(np.pi * y))


def l2_error_vs_function(mesh: TriMesh, u: np.ndarray, g, degree: int = 5) -> float:
    """Quadrature error between a dof vector and a smooth function."""
    bary, w = triangle_quadrature(degree)
    pts = np.einsum("qa,ead->eqd", bary, mesh.vertices[mesh.elements])
    uh = np.einsum("ei,qi->eq", u.reshape(-1, 3), bary)
    diff = uh - g(pts[..., 0], pts[..., 1])
    val = np.einsum("eq,q->e", diff ** 2, w) @ mesh.areas
    return float(np.sqrt(max(val, 0.0)))


def energy_error_vs_function(mesh: TriMesh, coefficient, gamma0: float,
                             u: np.ndarray, grad_g, degree: int = 5) -> float:
    """Jump-energy error against a smooth function vanishing on the boundary.

    The volume part compares broken gradients by quadrature; since the target
    is continuous and zero on the outer boundary, all face terms reduce to the
    jump seminorm of the dof vector itself.
    """
    bary, w = triangle_quadrature(degree)
    pts = np.einsum("qa,ead->eqd", bary, mesh.vertices[mesh.elements])
    grad_h = np.einsum("ei,eid->ed", u.reshape(-1, 3), mesh.grads)
    gx, gy = grad_g(pts[..., 0], pts[..., 1])
    dx = grad_h[:, 0, None] - gx
    dy = grad_h[:, 1, None] - gy
    vol = np.einsum("eq,q->e", dx ** 2 + dy ** 2, w) * coefficient.values
    val = float(vol @ mesh.areas)
    faces = DGAssembler(mesh, coefficient, gamma0).matrix(None, "Bplus_faces")
    val += float(u @ (faces @ u))
    return float(np.sqrt(max(val, 0.0)))


@dataclass
class ConvergenceRecord:
    """Mesh sizes, errors and observed rates of a refinement study."""

    h: list
    l2_errors: list
    energy_errors: list

    @staticmethod
    def _rates(h, e):
        return [float(np.log(e[i] / e[i + 1]) / np.log(h[i] / h[i + 1]))
                for i in range(len(e) - 1)]

    @property
    def l2_rates(self):
        return self._rates(self.h, self.l2_errors)

    @property
    def energy_rates(self):
        return self._rates(self.h, self.energy_errors)


def manufactured_convergence(mesh_sizes, gamma0: float) -> ConvergenceRecord:
    """Refinement study for the unit-coefficient sine problem."""
    hs, l2s, ens = [], [], []
    for n in mesh_sizes:
        mesh = build_structured_mesh(n)
        coef = coefficient_field(mesh, "constant:1")
        u = fine_solve(mesh, coef, _sin_rhs, gamma0)
        hs.append(mesh.h)
        l2s.append(l2_error_vs_function(mesh, u, _sin_exact))
        ens.append(energy_error_vs_function(mesh, coef, gamma0, u, _sin_grad))
    return ConvergenceRecord(h=hs, l2_errors=l2s, energy_errors=ens)


# -- decay fits ----------------------------------------------------------------

def decay_fit(values, exponent: float):
    """Least-squares fit of ``log(values[n])`` against ``(n+1)**exponent``.

    Returns ``(slope, intercept, r_squared)``; refuses fewer than five values.
    """
    v = np.asarray(values, dtype=float)
    if v.size < 5:
        raise ValueError(f"need at least 5 values for a decay fit, got {v.size}")
    if np.any(v <= 0) or not np.all(np.isfinite(v)):
        raise ValueError("decay fit requires positive finite values")
    x = (np.arange(1, v.size + 1, dtype=float)) ** exponent
    y = np.log(v)
    A = np.stack([x, np.ones_like(x)], axis=1)
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + intercept)
    ss_res = float(resid @ resid)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    floor = 1e-20 * max(1.0, float(y @ y))
    if ss_tot <= floor:
        r2 = 1.0 if ss_res <= floor else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), float(r2)


# -- Caccioppoli sampling ------------------------------------------------------

def annulus_distance(mesh: TriMesh, omega, omega_star) -> float:
    """Distance from the inner block to the inner boundary of the outer one."""
    omega = np.asarray(omega, dtype=np.int64)
    omega_star = np.asarray(omega_star, dtype=np.int64)
    outside = np.setdiff1d(np.arange(mesh.n_elements, dtype=np.int64), omega_star,
                           assume_unique=True)
    if outside.size == 0:
        return float("inf")
    vout = np.intersect1d(np.unique(mesh.elements[omega_star].ravel()),
                          np.unique(mesh.elements[outside].ravel()))
    vin = np.unique(mesh.elements[omega].ravel())
    d2 = ((mesh.vertices[vin][:, None, :] - mesh.vertices[vout][None, :, :]) ** 2).sum(-1)
    return float(np.sqrt(d2.min()))


def caccioppoli_ratios(mesh: TriMesh, coefficient, gamma0: float, omega,
                       omega_star, n_samples: int, seed: int):
    """Interior-energy over annulus-mass ratios of random harmonic samples.

    Samples are harmonic extensions of random layer data.  Returns the ratio
    array and the separation distance; the mesh condition (separation larger
    than three annulus element diameters) is enforced.
    """
    omega = np.asarray(omega, dtype=np.int64)
    omega_star = np.asarray(omega_star, dtype=np.int64)
    delta = annulus_distance(mesh, omega, omega_star)
    annulus = np.setdiff1d(omega_star, omega, assume_unique=True)
    touching = d_plus(mesh, annulus)
    if delta <= 3.0 * mesh.h_T[touching].max():
        raise ValueError("separation too small for the interior energy bound")
    basis = harmonic_basis(mesh, coefficient, omega_star, gamma0)
    if basis.shape[1] == 0:
        raise ValueError("oversampling domain has no harmonic layer")
    asm = DGAssembler(mesh, coefficient, gamma0)
    Bp_omega = asm.matrix(omega, "Bplus")
    mass_ann = asm.matrix(annulus, "mass")
    idx_omega = nested_dofs(omega, omega_star)
    idx_ann = nested_dofs(annulus, omega_star)
    rng = np.random.Generator(np.random.PCG64(seed))
    ratios = np.empty(n_samples)
    nu_max = float(coefficient.values[omega_star].max())
    for s in range(n_samples):
        u = basis @ rng.standard_normal(basis.shape[1])
        num = float(np.sqrt(max(u[idx_omega] @ (Bp_omega @ u[idx_omega]), 0.0)))
        den = float(np.sqrt(max(u[idx_ann] @ (mass_ann @ u[idx_ann]), 0.0)))
        ratios[s] = num * delta / (np.sqrt(nu_max) * den) if den > 0 else np.inf
    return ratios, delta


# -- the property suite --------------------------------------------------------

@dataclass
class CheckResult:
    name: str
    status: str            # pass | fail | skip
    witness: dict = field(default_factory=dict)


@dataclass
class SuiteReport:
    checks: list
    elapsed: float = 0.0

    @property
    def ok(self) -> bool:
        return all(c.status != "fail" for c in self.checks)

    @property
    def first_failure(self):
        for c in self.checks:
            if c.status == "fail":
                return c
        return None

    def to_json_dict(self) -> dict:
        return {
            "all_pass": self.ok,
            "checks": [
                {"name": c.name, "status": c.status, "witness": c.witness}
                for c in self.checks
            ],
        }

    def to_text(self) -> str:
        lines = []
        for c in self.checks:
            lines.append(f"[{c.status.upper():4s}] {c.name} {c.witness}")
        verdict = "all checks passed" if self.ok else "FAILURES present"
        lines.append(f"result: {verdict} ({self.elapsed:.1f}s)")
        return "\n".join(lines) + "\n"


def _is_boundary_set(mesh: TriMesh, D) -> bool:
    return bool(np.any(np.isin(mesh.bface_elem, D)))


def run_property_suite(config) -> SuiteReport:
    """Structural invariants of every stage, on the configured problem.

    Runs mesh bookkeeping, hull and cover checks, operator identities on a
    nested subdomain pair, kernel characterization, partition-of-unity
    checks, harmonicity of one local basis, the interior-energy bound, dense
    positivity checks, and a dense coercivity probe on a mesh-family
    representative.  Returns a deterministic, JSON-serializable report.
    """
    checks = []
    t0 = time.time()
    mesh = build_structured_mesh(config.mesh_n)
    coef = coefficient_field(mesh, config.coefficient, seed=config.seed)
    gamma0 = config.gamma0
    asm = DGAssembler(mesh, coef, gamma0)

    def record(name, ok, witness, skip=False):
        status = "skip" if skip else ("pass" if ok else "fail")
        clean = {k: float(v) if isinstance(v, (float, np.floating)) else v
                 for k, v in witness.items()}
        checks.append(CheckResult(name=name, status=status, witness=clean))

    # mesh bookkeeping
    nE = mesh.n_elements
    nV = mesh.n_vertices
    nI = mesh.n_interior_faces
    nB = mesh.n_boundary_faces
    euler = nV - (nI + nB) + (nE + 1)
    area = float(mesh.areas.sum())
    record("mesh.euler_formula", euler == 2, {"V-E+F": euler})
    record("mesh.face_identity", 2 * nI + nB == 3 * nE,
           {"interior": nI, "boundary": nB, "elements": nE})
    record("mesh.unit_area", abs(area - 1.0) <= 1e-12, {"area": area})

    # decomposition hulls and cover
    decomp = build_decomposition(mesh, config.grid_m, config.overlap_layers,
                                 config.oversampling_layers)
    sample = square_block(mesh, 1, min(3, mesh.structured_n),
                          1, min(3, mesh.structured_n))
    dm = d_minus(mesh, sample)
    dp = d_plus(mesh, sample)
    hulls_ok = (np.all(np.isin(dm, sample)) and np.all(np.isin(sample, dp))
                and np.all(np.isin(dm, d_minus(mesh, dp))))
    record("decomposition.hulls", hulls_ok, {"sample_size": int(sample.size)})
    covered = np.zeros(nE, dtype=bool)
    for j in range(decomp.n_subdomains):
        covered[d_minus(mesh, decomp.omega(j))] = True
        if not np.all(np.isin(decomp.omega(j), decomp.omega_star(j))):
            record("decomposition.nesting", False, {"subdomain": j})
            break
    else:
        record("decomposition.nesting", True, {})
    record("decomposition.shrunk_cover", bool(covered.all()),
           {"uncovered": int((~covered).sum())})

    # operator identities on a nested pair
    j_mid = decomp.n_subdomains // 2
    D = decomp.omega(j_mid)
    D_star = decomp.omega_star(j_mid)
    H_D = asm.matrix(D, "H")
    H_Ds = asm.matrix(D_star, "H")
    free = h0_dofs(mesh, D)
    rng = np.random.Generator(np.random.PCG64(config.seed + 1))
    iso_err = 0.0
    loc_err = 0.0
    re_ok = True
    nonexp_ok = True
    for _ in range(20):
        v = np.zeros(3 * D.size)
        v[free] = rng.standard_normal(free.size)
        ev = extend_by_zero(mesh, v, D, D_star)
        n1 = float(v @ (H_D @ v))
        n2 = float(ev @ (H_Ds @ ev))
        iso_err = max(iso_err, abs(n1 - n2) / n1)
        re_ok = re_ok and np.array_equal(restrict(ev, D_star, D), v)
        u = rng.standard_normal(3 * D_star.size)
        ur = restrict(u, D_star, D)
        nonexp_ok = nonexp_ok and float(ur @ (H_D @ ur)) <= float(u @ (H_Ds @ u)) * (1 + 1e-12)
        a, b = locality_check(mesh, coef, gamma0, u, v, D, D_star)
        scale = max(abs(a), abs(b), np.sqrt(float(u @ (H_Ds @ u)) * n1))
        loc_err = max(loc_err, abs(a - b) / scale)
    record("space_ops.extension_isometry", iso_err <= 1e-12, {"max_rel_err": iso_err})
    record("space_ops.restrict_extend_identity", re_ok, {})
    record("space_ops.restriction_nonexpansive", nonexp_ok, {})
    record("space_ops.locality_identity", loc_err <= 1e-12, {"max_rel_err": loc_err})

    # kernel characterization per oversampling domain
    kernel_ok = True
    witness = {}
    for j in range(decomp.n_subdomains):
        Ds = decomp.omega_star(j)
        Bp = asm.matrix(Ds, "Bplus")
        ones = np.ones(3 * Ds.size)
        if _is_boundary_set(mesh, Ds):
            ok = float(ones @ (Bp @ ones)) > 0.0
        else:
            ok = float(np.abs(Bp @ ones).max()) <= 1e-12 * coef.nu_max
        if not ok:
            kernel_ok = False
            witness = {"subdomain": j}
            break
    record("dg_forms.kernel_characterization", kernel_ok, witness)

    # partition of unity
    pou = build_pou(mesh, decomp)
    sums = pou.values.sum(axis=0)
    record("space_ops.pou_sum_to_one", float(np.abs(sums - 1.0).max()) <= 1e-14,
           {"max_dev": float(np.abs(sums - 1.0).max())})
    rng2 = np.random.Generator(np.random.PCG64(config.seed + 2))
    blend_ok = True
    for _ in range(5):
        u = rng2.standard_normal(3 * nE)
        locals_ = [u[subdomain_dofs(decomp.omega(j))]
                   for j in range(decomp.n_subdomains)]
        w = pou_blend(mesh, decomp, pou, locals_)
        blend_ok = blend_ok and float(np.abs(w - u).max()) <= 1e-12 * float(np.abs(u).max())
    record("space_ops.blend_reproduction", blend_ok, {})
    support_ok = True
    for j in range(decomp.n_subdomains):
        inner = d_minus(mesh, decomp.omega(j))
        outside = np.setdiff1d(np.arange(nE, dtype=np.int64), inner, assume_unique=True)
        if outside.size and float(np.abs(pou.values[j][np.unique(mesh.elements[outside])]).max()) != 0.0:
            support_ok = False
            break
    record("space_ops.pou_support", support_ok, {})
    in_range = bool(np.all(pou.values >= 0.0) and np.all(pou.values <= 1.0 + 1e-15))
    record("space_ops.pou_range", in_range, {})

    # harmonicity of one local basis
    Ds = decomp.omega_star(j_mid)
    basis = harmonic_basis(mesh, coef, Ds, gamma0)
    if basis.shape[1]:
        A = asm.matrix(Ds, "B")
        H_s = asm.matrix(Ds, "H")
        freeS = h0_dofs(mesh, Ds)
        resid = np.abs((A @ basis)[freeS, :]).max(axis=0)
        norms = np.sqrt(np.einsum("if,if->f", basis, H_s @ basis))
        ok = bool(np.all(resid <= 1e-10 * norms))
        record("local.harmonicity", ok, {"max_resid": float((resid / norms).max())})
    else:
        record("local.harmonicity", True, {}, skip=True)

    # interior-energy bound for harmonic samples
    n = mesh.structured_n
    if n >= 16:
        s_out = n // 2
        lo = (n - s_out) // 2
        ring = 5 * max(n // 32, 1)
        s_in = s_out - 2 * ring
        if s_in >= 2:
            om = square_block(mesh, lo + ring, lo + s_out - ring,
                              lo + ring, lo + s_out - ring)
            oms = square_block(mesh, lo, lo + s_out, lo, lo + s_out)
            ratios, delta = caccioppoli_ratios(mesh, coef, gamma0, om, oms,
                                               20, config.seed + 3)
            record("local.interior_energy_bound",
                   bool(np.all(np.isfinite(ratios))),
                   {"max_ratio": float(ratios.max()), "delta": delta})
        else:
            record("local.interior_energy_bound", True, {}, skip=True)
    else:
        record("local.interior_energy_bound", True, {}, skip=True)

    # dense positivity of the positive form and the inner product
    small = square_block(mesh, 0, min(4, n), 0, min(4, n))
    Bp_small = asm.matrix(small, "Bplus").toarray()
    H_small = asm.matrix(small, "H").toarray()
    ev_bp = float(la.eigvalsh(Bp_small)[0])
    ev_h = float(la.eigvalsh(H_small)[0])
    record("dg_forms.bplus_psd", ev_bp >= -1e-12 * coef.nu_max, {"min_eig": ev_bp})
    record("dg_forms.h_positive", ev_h > 0.0, {"min_eig": ev_h})

    # coercivity probe on a mesh-family representative
    n_probe = min(n, 12)
    mesh_p = build_structured_mesh(n_probe)
    try:
        coef_p = coefficient_field(mesh_p, config.coefficient, seed=config.seed)
    except ValueError:
        coef_p = coefficient_field(mesh_p, "constant:1")
    B_p = DGAssembler(mesh_p, coef_p, gamma0).matrix(None, "B").toarray()
    min_eig = float(la.eigvalsh(0.5 * (B_p + B_p.T))[0])
    record("dg_forms.coercivity", min_eig > 0.0,
           {"min_eig": min_eig, "probe_mesh": n_probe})

    report = SuiteReport(checks=checks)
    report.elapsed = time.time() - t0
    return report
