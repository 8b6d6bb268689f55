"""Per-subdomain solves: source problem, harmonic basis, spectral coarse modes.

Everything here happens on one oversampling domain at a time and is
independent across subdomains, so the driver can fan the work out to a
thread pool without changing any result.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse.linalg as spla

from .decomposition import Decomposition
from .dg_forms import DGAssembler, nested_dofs
from .errors import SolverError
from .mesh import TriMesh
from .space_ops import PartitionOfUnity, h0_dofs, restrict

__all__ = [
    "LocalSpectralData",
    "particular_solution",
    "harmonic_basis",
    "eigenproblem",
    "select_coarse",
    "compute_local_data",
    "export_eigenvalues",
]

_RESIDUAL_TOL = 1e-10


@dataclass
class LocalSpectralData:
    """Everything the global stage needs from one subdomain.

    ``eigenvalues`` are sorted descending with kernel modes reported as
    ``inf`` and listed first; ``eigenvectors`` holds one coefficient column
    per mode against ``harmonic_basis``.
    """

    j: int
    particular: np.ndarray      # dof vector on omega_j
    harmonic_basis: np.ndarray  # (ndof(omega_star_j), n_layer_dofs)
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray    # (n_layer_dofs, n_modes)

    @property
    def n_modes(self) -> int:
        return self.eigenvalues.size

    @property
    def n_kernel(self) -> int:
        return int(np.sum(np.isinf(self.eigenvalues)))


def scaled_residual(A, x, b) -> float:
    """Backward-error style residual ``|Ax-b| / (|b| + |A| |x|)``.

    Relative to the right-hand side alone the double-precision floor grows
    with the condition number, which high-contrast coefficients reach; the
    scaled form stays near machine precision for any healthy solve.
    """
    bn = np.linalg.norm(b)
    if bn == 0.0 and np.linalg.norm(x) == 0.0:
        return 0.0
    a_inf = float(np.abs(A).sum(axis=1).max())
    return float(np.linalg.norm(A @ x - b) / (bn + a_inf * np.linalg.norm(x)))


def lu_solve_refined(lu, A, b, max_refine: int = 3):
    """LU solve with iterative refinement; handles matrix right-hand sides.

    High-contrast coefficients push plain sparse LU residuals above the
    solver contract, and one or two refinement sweeps fix that.
    """
    x = lu.solve(b)
    bn = np.linalg.norm(b)
    if bn == 0.0:
        return np.zeros_like(b)
    for _ in range(max_refine):
        r = b - A @ x
        if np.linalg.norm(r) <= 1e-14 * bn:
            break
        x = x + lu.solve(r)
    return x


def _masked_solve(A, b, free):
    """Solve the form restricted to the free dofs, zero elsewhere."""
    Aff = A[np.ix_(free, free)].tocsc()
    try:
        lu = spla.splu(Aff)
    except RuntimeError as exc:
        raise SolverError(
            "local system is singular; check the face convention or the "
            "penalty parameter") from exc
    x = np.zeros(A.shape[0])
    x[free] = lu_solve_refined(lu, Aff, b[free])
    res = scaled_residual(Aff, x[free], b[free])
    if res > _RESIDUAL_TOL:
        raise SolverError(f"local solve residual {res:.3e} exceeds tolerance")
    return x, lu


def particular_solution(mesh: TriMesh, coefficient, f, omega, omega_star,
                        gamma0: float, asm: DGAssembler | None = None) -> np.ndarray:
    """Local source solution on the oversampling domain, restricted back.

    The form on the oversampling domain is solved on its masked subspace
    (which imposes the zero contact-layer values and the weak outer-boundary
    condition) and the solution is then cut down to the overlap subdomain.
    """
    if asm is None:
        asm = DGAssembler(mesh, coefficient, gamma0)
    A = asm.matrix(omega_star, "B")
    b = asm.load(f, omega_star)
    free = h0_dofs(mesh, omega_star)
    psi, _ = _masked_solve(A, b, free)
    return restrict(psi, omega_star, omega)


def harmonic_basis(mesh: TriMesh, coefficient, omega_star, gamma0: float,
                   asm: DGAssembler | None = None) -> np.ndarray:
    """Column basis of the locally harmonic space of an oversampling domain.

    One column per layer dof (a dof of an element in the contact layer): the
    column carries a canonical unit value there and the discrete harmonic
    extension onto the masked interior, obtained from an interior block solve
    with the coupling column as right-hand side.  The span is exactly the
    space of vectors whose form residual vanishes against every masked dof.
    """
    omega_star = np.asarray(omega_star, dtype=np.int64)
    ndof = 3 * omega_star.size
    free = h0_dofs(mesh, omega_star)
    layer = np.setdiff1d(np.arange(ndof), free, assume_unique=True)
    basis = np.zeros((ndof, layer.size))
    if layer.size == 0:
        return basis
    if asm is None:
        asm = DGAssembler(mesh, coefficient, gamma0)
    A = asm.matrix(omega_star, "B").tocsc()
    Aff = A[np.ix_(free, free)].tocsc()
    Afl = A[np.ix_(free, layer)]
    try:
        lu = spla.splu(Aff)
    except RuntimeError as exc:
        raise SolverError("interior block of the local form is singular") from exc
    basis[layer, np.arange(layer.size)] = 1.0
    basis[free, :] = lu_solve_refined(lu, Aff, -Afl.toarray())
    return basis


def _deflated_pencil(A: np.ndarray, M: np.ndarray, kernel_rtol: float = 1e-10):
    """Eigenpairs of a symmetric PSD pencil whose right matrix may be singular.

    The kernel of ``M`` is split off first (those directions are the
    infinite modes); the finite spectrum is computed on the complement that
    is orthogonal to the kernel in the ``A`` inner product, which makes the
    raw residual ``A x - lambda M x`` vanish and reproduces the true pencil
    eigenvalues.
    """
    n = A.shape[0]
    if n == 0:
        return np.empty(0), np.empty((0, 0))
    s, Q = la.eigh(M)
    scale = max(float(s[-1]), 0.0)
    kern = s <= kernel_rtol * scale if scale > 0 else np.ones_like(s, dtype=bool)
    K = Q[:, kern]
    P = Q[:, ~kern]
    sp = s[~kern]
    n_inf = K.shape[1]
    if P.shape[1] == 0:
        return np.full(n_inf, np.inf), K
    if n_inf:
        AK = A @ K
        G = K.T @ AK
        W = P - K @ la.solve(G, AK.T @ P, assume_a="pos")
    else:
        W = P
    Ar = W.T @ A @ W
    Ar = 0.5 * (Ar + Ar.T)
    Mr = W.T @ M @ W
    Mr = 0.5 * (Mr + Mr.T)
    lam, Y = la.eigh(Ar, Mr)
    lam = lam[::-1]
    vecs = (W @ Y)[:, ::-1]
    values = np.concatenate([np.full(n_inf, np.inf), lam])
    vectors = np.concatenate([K, vecs], axis=1)
    return values, vectors


def eigenproblem(mesh: TriMesh, coefficient, pou: PartitionOfUnity, j: int,
                 omega, omega_star, gamma0: float,
                 basis: np.ndarray | None = None,
                 asm: DGAssembler | None = None):
    """Spectral problem selecting the locally optimal coarse directions.

    Left form: energy of the weight-interpolated restriction to the overlap
    subdomain.  Right form: energy on the oversampling domain.  Both are
    congruence images of the positive form, hence symmetric PSD; kernel
    directions of the right form (the constants, on interior subdomains)
    come out as leading infinite eigenvalues.
    """
    if asm is None:
        asm = DGAssembler(mesh, coefficient, gamma0)
    if basis is None:
        basis = harmonic_basis(mesh, coefficient, omega_star, gamma0, asm=asm)
    idx = nested_dofs(omega, omega_star)
    chi_dof = pou.values[j][mesh.elements[np.asarray(omega, dtype=np.int64)]].ravel()
    W = basis[idx, :] * chi_dof[:, None]
    Bp_omega = asm.matrix(omega, "Bplus")
    Bp_star = asm.matrix(omega_star, "Bplus")
    A = W.T @ (Bp_omega @ W)
    A = 0.5 * (A + A.T)
    M = basis.T @ (Bp_star @ basis)
    M = 0.5 * (M + M.T)
    values, vectors = _deflated_pencil(A, M)
    finite = np.isfinite(values)
    if np.any(values[finite] < -_RESIDUAL_TOL):
        raise SolverError("negative eigenvalue beyond tolerance; assembly bug")
    if finite.any():
        # roundoff guard: the pencil is PSD so tiny negatives are noise
        v = values.copy()
        v[finite] = np.maximum(values[finite], 0.0)
        values = v
    return values, vectors


def select_coarse(data: LocalSpectralData, rule) -> int:
    """Number of leading modes chosen by a ``("fixed", n)`` or ``("threshold", tau)`` rule.

    Kernel modes always count first; a fixed count beyond the available modes
    is an error.
    """
    kind, value = rule
    if kind == "fixed":
        n = int(value)
        if n < 0 or n > data.n_modes:
            raise ValueError(f"requested {n} modes, only {data.n_modes} available")
        return max(n, 0)
    if kind == "threshold":
        tau = float(value)
        finite = data.eigenvalues[np.isfinite(data.eigenvalues)]
        return data.n_kernel + int(np.sum(np.sqrt(np.maximum(finite, 0.0)) >= tau))
    raise ValueError(f"unknown coarse selection rule {kind!r}")


def compute_local_data(mesh: TriMesh, coefficient, f, decomp: Decomposition,
                       pou: PartitionOfUnity, gamma0: float,
                       threads: int = 1) -> list:
    """Run all per-subdomain stages; results are ordered by subdomain index."""

    asm = DGAssembler(mesh, coefficient, gamma0)

    def one(j: int) -> LocalSpectralData:
        omega = decomp.omega(j)
        omega_star = decomp.omega_star(j)
        up = particular_solution(mesh, coefficient, f, omega, omega_star,
                                 gamma0, asm=asm)
        basis = harmonic_basis(mesh, coefficient, omega_star, gamma0, asm=asm)
        values, vectors = eigenproblem(mesh, coefficient, pou, j, omega,
                                       omega_star, gamma0, basis=basis, asm=asm)
        return LocalSpectralData(j=j, particular=up, harmonic_basis=basis,
                                 eigenvalues=values, eigenvectors=vectors)

    if threads <= 1:
        return [one(j) for j in range(decomp.n_subdomains)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, range(decomp.n_subdomains)))


def export_eigenvalues(locals_: list) -> str:
    """CSV rows ``j,k,lambda,is_infinite`` over all subdomains and modes."""
    lines = ["j,k,lambda,is_infinite"]
    for data in locals_:
        for k, lam in enumerate(data.eigenvalues):
            if np.isinf(lam):
                lines.append(f"{data.j},{k},inf,1")
            else:
                lines.append(f"{data.j},{k},{float(lam)!r},0")
    return "\n".join(lines) + "\n"
