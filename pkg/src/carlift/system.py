"""Global block linear systems over whole lifted trajectories.

Stacking the per-step quantized updates Y_i = (I + A_i) Y_{i-1} + b_i
for i = 1..M together with the initial condition gives one sparse
system M Y = beta whose solution is the entire lifted trajectory.  The
matrix is block lower triangular with unit diagonal (elementwise lower
triangular, since every coupling block sits strictly below its row's
diagonal block), which the solvers and the smallest-singular-value
estimator exploit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .carleman import Qcm, UnipcQcmSet
from .errors import StructureError

__all__ = [
    "BlockLinearSystem",
    "SparsityStats",
    "ConditionReport",
    "assemble_global_dpm",
    "assemble_global_unipc",
    "sparsity_stats",
    "condition_number",
    "export_matrix",
    "import_matrix",
]

DENSE_SVD_MAX_DIM = 2000


@dataclass
class BlockLinearSystem:
    """Sparse block system mat @ y = rhs over n_blocks trajectory nodes."""

    mat: sp.csr_matrix
    rhs: np.ndarray
    n_blocks: int
    block_dim: int
    scheme: str

    @property
    def dim(self) -> int:
        return self.mat.shape[0]


def assemble_global_dpm(qcms: list[Qcm], y0: np.ndarray) -> BlockLinearSystem:
    """Block bidiagonal system for a derivative-scheme trajectory.

    Row block 0 pins Y_0 = y0; row block i couples node i to node i-1
    through -(I + A_i).
    """
    y0 = np.asarray(y0, dtype=float)
    D = len(y0)
    M = len(qcms)
    grid: list[list] = [[None] * (M + 1) for _ in range(M + 1)]
    eye = sp.identity(D, format="csr")
    grid[0][0] = eye
    rhs = [y0]
    for row, q in enumerate(qcms, start=1):
        if q.A.shape != (D, D):
            raise ValueError("step matrix dimension does not match the initial state")
        grid[row][row] = eye
        grid[row][row - 1] = -(eye + q.A)
        rhs.append(q.b)
    mat = sp.bmat(grid, format="csr", dtype=float)
    mat.eliminate_zeros()
    return BlockLinearSystem(
        mat=mat, rhs=np.concatenate(rhs), n_blocks=M + 1, block_dim=D, scheme="dpm",
    )


def assemble_global_unipc(
    warmup: list[Qcm],
    steps: list[UnipcQcmSet],
    y0: np.ndarray,
    which: str = "corrector",
) -> BlockLinearSystem:
    """Block banded system for a unified predictor/corrector trajectory.

    ``which`` selects the scheme whose trajectory the solution follows:
    "predictor" uses the predictor update rows; "corrector" folds the
    predictor map into each corrector row (the corrected chain is the
    canonical one, so the system closes over corrected states only).
    Bandwidth is at most p + 1 block diagonals.  With p = 1 and
    "predictor" the matrix coincides with :func:`assemble_global_dpm`
    of the order-1 scheme.
    """
    if which not in ("predictor", "corrector"):
        raise ValueError("which must be 'predictor' or 'corrector'")
    y0 = np.asarray(y0, dtype=float)
    D = len(y0)
    M = len(warmup) + len(steps)
    grid: list[list] = [[None] * (M + 1) for _ in range(M + 1)]
    eye = sp.identity(D, format="csr")
    grid[0][0] = eye
    rhs = [y0]
    for row, q in enumerate(warmup, start=1):
        grid[row][row] = eye
        grid[row][row - 1] = -(eye + q.A)
        rhs.append(q.b)
    for qset in steps:
        row = qset.i
        grid[row][row] = eye
        if which == "predictor":
            for mm, mat in enumerate(qset.pred_mats):
                grid[row][qset.anchor + mm] = -mat
            rhs.append(qset.pred_b)
        else:
            for mm in range(qset.p):
                folded = qset.corr_mats[mm] + qset.corr_target @ qset.pred_mats[mm]
                grid[row][qset.anchor + mm] = -folded
            rhs.append(qset.corr_b + qset.corr_target @ qset.pred_b)
    mat = sp.bmat(grid, format="csr", dtype=float)
    mat.eliminate_zeros()
    return BlockLinearSystem(
        mat=mat, rhs=np.concatenate(rhs), n_blocks=M + 1, block_dim=D,
        scheme=f"unipc_{which}",
    )


@dataclass
class SparsityStats:
    s_row: int
    s_col: int
    nnz: int
    fill: float


def sparsity_stats(mat) -> SparsityStats:
    """Max nonzeros per row/column and overall fill of a sparse matrix."""
    m = mat.mat if isinstance(mat, BlockLinearSystem) else mat
    csr = sp.csr_matrix(m)
    csr.eliminate_zeros()
    row_counts = np.diff(csr.indptr)
    col_counts = np.bincount(csr.indices, minlength=csr.shape[1]) if csr.nnz else np.zeros(csr.shape[1], int)
    return SparsityStats(
        s_row=int(row_counts.max(initial=0)),
        s_col=int(col_counts.max(initial=0)),
        nnz=int(csr.nnz),
        fill=float(csr.nnz / (csr.shape[0] * csr.shape[1])),
    )


@dataclass
class ConditionReport:
    """2-norm condition estimate with how it was obtained."""

    kappa: float
    method: str
    dim: int
    iterations: int
    rtol: float
    residual: float
    converged: bool
    sigma_max: float
    sigma_min: float
    s_row: int
    s_col: int
    nnz: int


def _power_sigma(mat: sp.csr_matrix, rtol: float, max_iter: int, rng, inverse: bool):
    """Largest (or, with ``inverse``, smallest) singular value of mat.

    Power iteration on M^T M, or on its inverse applied through
    triangular solves.  The residual ||B v - theta v|| <= rtol * theta
    certifies |theta - lambda| <= rtol * theta for the symmetric
    operator B, so singular values inherit half that relative error.
    """
    from .solve import _solve_lower_csr, _solve_upper_csc

    n = mat.shape[0]
    matT = mat.T.tocsr()
    if inverse:
        mat_csc = mat.tocsc()

        def apply(v):
            # (M^T M)^{-1} v = M^{-1} M^{-T} v
            w = _solve_upper_csc(mat_csc, v)  # M^{-T} v via M^T w = v
            return _solve_lower_csr(mat, w)
    else:

        def apply(v):
            return matT @ (mat @ v)

    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    theta = 0.0
    res = np.inf
    for it in range(1, max_iter + 1):
        w = apply(v)
        # Rayleigh quotient with an explicit ||v||^2: the iterate is only
        # unit-norm up to rounding, and eigenvectors of B (the identity
        # being the extreme case) should come out bit-exact
        vv = float(v @ v)
        theta = float(v @ w) / vv
        res = float(np.linalg.norm(w - theta * v) / np.sqrt(vv))
        nw = np.linalg.norm(w)
        if nw == 0.0:
            raise StructureError("matrix appears to be singular (zero power iterate)")
        v = w / nw
        if res <= rtol * abs(theta) and it >= 3:
            sing = 1.0 / np.sqrt(theta) if inverse else np.sqrt(theta)
            return sing, it, res, True
    sing = 1.0 / np.sqrt(theta) if inverse else np.sqrt(theta)
    return sing, max_iter, res, False


def condition_number(
    system,
    method: str = "auto",
    rtol: float = 1e-3,
    max_iter: int = 10000,
    seed: int = 0,
) -> ConditionReport:
    """2-norm condition number of the system matrix.

    "dense_svd" computes all singular values and is restricted to
    dimensions <= 2000; "power" estimates the extreme singular values
    with power iteration (largest on M^T M, smallest through the
    triangular inverse) and works at any size but requires the lower
    triangular structure the global assemblies produce.  "auto" picks
    dense below the size cutoff.  Non-convergence of the power method
    is reported through ``converged`` rather than raised.
    """
    mat = system.mat if isinstance(system, BlockLinearSystem) else sp.csr_matrix(system)
    stats = sparsity_stats(mat)
    n = mat.shape[0]
    if method == "auto":
        method = "dense_svd" if n <= DENSE_SVD_MAX_DIM else "power"
    if method == "dense_svd":
        if n > DENSE_SVD_MAX_DIM:
            raise ValueError(f"dense SVD limited to dim <= {DENSE_SVD_MAX_DIM}, got {n}")
        svals = np.linalg.svd(mat.toarray(), compute_uv=False)
        if svals[-1] == 0.0:
            raise StructureError("matrix is numerically singular")
        return ConditionReport(
            kappa=float(svals[0] / svals[-1]), method="dense_svd", dim=n,
            iterations=0, rtol=0.0, residual=0.0, converged=True,
            sigma_max=float(svals[0]), sigma_min=float(svals[-1]),
            s_row=stats.s_row, s_col=stats.s_col, nnz=stats.nnz,
        )
    if method != "power":
        raise ValueError(f"unknown method {method!r}")
    if sp.triu(mat, k=1).nnz != 0:
        raise StructureError("power-iteration path requires a lower triangular matrix")
    rng = np.random.default_rng(seed)
    smax, it1, res1, ok1 = _power_sigma(mat, rtol, max_iter, rng, inverse=False)
    smin, it2, res2, ok2 = _power_sigma(mat, rtol, max_iter, rng, inverse=True)
    return ConditionReport(
        kappa=float(smax / smin), method="power", dim=n,
        iterations=it1 + it2, rtol=rtol, residual=float(max(res1, res2)),
        converged=bool(ok1 and ok2),
        sigma_max=float(smax), sigma_min=float(smin),
        s_row=stats.s_row, s_col=stats.s_col, nnz=stats.nnz,
    )


def export_matrix(mat, path) -> None:
    """Write a sparse matrix as text: 'rows cols nnz' then triplets.

    Values are printed with 17 significant digits, which round-trips
    IEEE doubles exactly.
    """
    csr = sp.csr_matrix(mat.mat if isinstance(mat, BlockLinearSystem) else mat)
    csr.eliminate_zeros()
    coo = csr.tocoo()
    with open(path, "w") as fh:
        fh.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {v:.17g}\n")


def import_matrix(path) -> sp.csr_matrix:
    """Read a matrix written by :func:`export_matrix`."""
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise ValueError("matrix header must be 'rows cols nnz'")
        rows, cols, nnz = (int(x) for x in header)
        r = np.empty(nnz, dtype=int)
        c = np.empty(nnz, dtype=int)
        v = np.empty(nnz, dtype=float)
        for k in range(nnz):
            parts = fh.readline().split()
            if len(parts) != 3:
                raise ValueError(f"bad triplet on line {k + 2}")
            r[k], c[k], v[k] = int(parts[0]), int(parts[1]), float(parts[2])
    return sp.coo_matrix((v, (r, c)), shape=(rows, cols)).tocsr()
