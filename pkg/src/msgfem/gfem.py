"""Global multiscale approximation: blended coarse space and coarse solve.

The local spectral data of all subdomains is blended through the partition
of unity into global vectors: the particular parts sum into one source
approximation, and each selected local mode becomes one coarse basis column.
The coarse correction is the Galerkin solution of the full form on that
column span against the source residual.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .decomposition import Decomposition
from .dg_forms import DGAssembler, subdomain_dofs
from .errors import CoercivityError, SolverError
from .local_problems import select_coarse
from .mesh import TriMesh
from .space_ops import PartitionOfUnity, interpolate_product, pou_blend, restrict

__all__ = [
    "CoarseSpace",
    "MSGFEMSolution",
    "ErrorReport",
    "assemble_coarse",
    "solve_coarse",
    "error_report",
    "max_sqrt_lambda_next",
    "solve_msgfem",
]

_RANK_DROP_RTOL = 1e-10


@dataclass
class CoarseSpace:
    """Global coarse basis in fine dofs, one column per kept local mode."""

    basis: sp.csc_matrix
    offsets: list                 # per column: (subdomain j, local mode k)
    n_j: np.ndarray               # selected modes per subdomain (before drops)
    dropped: list = field(default_factory=list)

    @property
    def n_total(self) -> int:
        return self.basis.shape[1]


@dataclass
class MSGFEMSolution:
    """Particular part, coarse correction and their sum, plus diagnostics."""

    u_p: np.ndarray
    u_s: np.ndarray
    coarse: CoarseSpace
    max_sqrt_lambda_next: float

    @property
    def u_G(self) -> np.ndarray:
        return self.u_p + self.u_s


def _blend_column(mesh, pou, j, omega, vec):
    col = interpolate_product(mesh, pou.values[j], vec, omega)
    rows = subdomain_dofs(omega)
    keep = col != 0.0
    return rows[keep], col[keep]


def assemble_coarse(mesh: TriMesh, decomp: Decomposition, pou: PartitionOfUnity,
                    locals_: list, rule, H_global=None):
    """Blend the particular parts and the selected modes into global vectors.

    Returns the coarse space and the global particular vector.  Columns that
    are numerically dependent on earlier ones (in the global inner product,
    when given) are dropped and recorded; this only triggers when eigenvalue
    clusters concentrate on overlaps.
    """
    ndof = 3 * mesh.n_elements
    u_p = pou_blend(mesh, decomp, pou, [d.particular for d in locals_])

    rows_all, cols_all, data_all, offsets, n_sel = [], [], [], [], []
    col = 0
    for data in locals_:
        omega = decomp.omega(data.j)
        omega_star = decomp.omega_star(data.j)
        n_j = select_coarse(data, rule)
        n_sel.append(n_j)
        for k in range(n_j):
            phi_star = data.harmonic_basis @ data.eigenvectors[:, k]
            phi = restrict(phi_star, omega_star, omega)
            r, v = _blend_column(mesh, pou, data.j, omega, phi)
            rows_all.append(r)
            cols_all.append(np.full(r.size, col, dtype=np.int64))
            data_all.append(v)
            offsets.append((data.j, k))
            col += 1
    if col:
        basis = sp.coo_matrix(
            (np.concatenate(data_all),
             (np.concatenate(rows_all), np.concatenate(cols_all))),
            shape=(ndof, col)).tocsc()
    else:
        basis = sp.csc_matrix((ndof, 0))

    coarse = CoarseSpace(basis=basis, offsets=offsets,
                         n_j=np.array(n_sel, dtype=np.int64))
    if H_global is not None and col:
        _drop_dependent_columns(coarse, H_global)
    return coarse, u_p


def _drop_dependent_columns(coarse: CoarseSpace, H) -> None:
    """Gram-Schmidt rank filter in the given inner product; warns on drops."""
    C = coarse.basis.toarray()
    HC = H @ C
    G = C.T @ HC
    n = G.shape[0]
    norms0 = np.sqrt(np.maximum(np.diag(G), 0.0))
    keep = []
    # cholesky-style elimination on the gram matrix; residual diagonal tracks
    # the orthogonal-component norms
    R = G.copy()
    for i in range(n):
        d = R[i, i]
        if d <= (_RANK_DROP_RTOL * norms0[i]) ** 2 or norms0[i] == 0.0:
            coarse.dropped.append(coarse.offsets[i])
            continue
        keep.append(i)
        r = R[i, i + 1:] / d
        R[i + 1:, i + 1:] -= np.outer(R[i, i + 1:], r)
    if coarse.dropped:
        warnings.warn(f"dropped {len(coarse.dropped)} dependent coarse "
                      "columns", stacklevel=3)
        keep = np.array(keep, dtype=np.int64)
        coarse.basis = coarse.basis[:, keep]
        coarse.offsets = [coarse.offsets[i] for i in keep]


def solve_coarse(B, F: np.ndarray, coarse: CoarseSpace, u_p: np.ndarray) -> np.ndarray:
    """Galerkin correction on the coarse span against the source residual."""
    if coarse.n_total == 0:
        return np.zeros_like(u_p)
    C = coarse.basis
    resid = F - B @ u_p
    G = (C.T @ (B @ C)).toarray() if sp.issparse(C) else C.T @ (B @ C)
    G = np.asarray(G)
    G = 0.5 * (G + G.T)
    rhs = C.T @ resid
    try:
        cf = la.cho_factor(G)
    except la.LinAlgError as exc:
        raise CoercivityError(
            "reduced coarse system is not positive definite; the penalty "
            "parameter is too small for this mesh") from exc
    y = la.cho_solve(cf, rhs)
    rn = np.linalg.norm(rhs)
    if rn > 0:
        res = np.linalg.norm(G @ y - rhs) / rn
        if res > 1e-10:
            raise SolverError(f"coarse solve residual {res:.3e} exceeds tolerance")
    return np.asarray(C @ y).ravel()


@dataclass
class ErrorReport:
    bplus_error: float
    l2_error: float
    rel_bplus_error: float
    rel_l2_error: float
    max_sqrt_lambda_next: float


def error_report(asm: DGAssembler, u_G: np.ndarray, u_fine: np.ndarray,
                 max_sqrt_lambda_next: float = float("nan")) -> ErrorReport:
    """Jump-energy and volume errors of the multiscale solution vs the fine one."""
    Bp = asm.matrix(None, "Bplus")
    Mv = asm.matrix(None, "mass")
    diff = u_G - u_fine

    def norm(mat, v):
        return float(np.sqrt(max(float(v @ (mat @ v)), 0.0)))

    eb = norm(Bp, diff)
    el = norm(Mv, diff)
    rb = norm(Bp, u_fine)
    rl = norm(Mv, u_fine)
    return ErrorReport(
        bplus_error=eb, l2_error=el,
        rel_bplus_error=eb / rb if rb > 0 else eb,
        rel_l2_error=el / rl if rl > 0 else el,
        max_sqrt_lambda_next=max_sqrt_lambda_next,
    )


def max_sqrt_lambda_next(locals_: list, coarse: CoarseSpace) -> float:
    """Largest next-eigenvalue root over the subdomains, the error surrogate."""
    worst = 0.0
    for data, n_j in zip(locals_, coarse.n_j):
        if n_j < data.n_modes:
            lam = data.eigenvalues[n_j]
            worst = max(worst, float(np.sqrt(lam)) if np.isfinite(lam) else np.inf)
    return worst


def solve_msgfem(mesh: TriMesh, coefficient, f, decomp: Decomposition,
                 pou: PartitionOfUnity, gamma0: float, locals_: list,
                 rule) -> MSGFEMSolution:
    """Assemble and solve the global coarse problem for one selection rule."""
    asm = DGAssembler(mesh, coefficient, gamma0)
    B = asm.matrix(None, "B")
    F = asm.load(f)
    H = asm.matrix(None, "H")
    coarse, u_p = assemble_coarse(mesh, decomp, pou, locals_, rule, H_global=H)
    u_s = solve_coarse(B, F, coarse, u_p)
    return MSGFEMSolution(u_p=u_p, u_s=u_s, coarse=coarse,
                          max_sqrt_lambda_next=max_sqrt_lambda_next(locals_, coarse))
