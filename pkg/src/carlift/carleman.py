"""Carleman lifting of polynomial sampler steps.

A polynomial step map x -> P(x) = sum_q B_q x^{(q)} (with x^{(q)} the
q-fold Kronecker power) becomes linear on the truncated lifted state

    Y = (x, x^{(2)}, ..., x^{(N)}),

because block j of the lifted image is the degree-truncated j-th
Kronecker power of P.  Each sampler step then takes the quantized
update form

    Y_i = (I + A_i) Y_{i-1} + b_i,

and a whole trajectory becomes one block lower-triangular linear
system.  Terms of degree above N are dropped (hard truncation); block 1
of a single step is exact whenever the step polynomial fits within N.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import CapacityError
from .model import PolyNoiseModel, coeff_matrices, total_derivative_poly
from .reference import uni_coeffs
from .schedule import NoiseSchedule, TimeGrid, taylor_integral

__all__ = [
    "CarlemanBasis",
    "LiftedState",
    "Qcm",
    "UnipcQcmSet",
    "lift",
    "compose_poly_power",
    "step_polynomial_dpm",
    "assemble_dpm_qcm",
    "assemble_unipc_qcms",
    "step_lifted",
    "run_lifted",
]

MAX_DIM_TOTAL = 400_000


@dataclass(frozen=True)
class CarlemanBasis:
    """Index bookkeeping for the truncated Kronecker-power basis.

    Blocks j = 1..N hold the plain (unsymmetrised) Kronecker powers
    x^{(j)}; within block j the flat offset of the monomial
    (i_1, ..., i_j) is its base-d value, which orders monomials by
    degree first and lexicographically inside a degree.
    """

    N: int
    d: int
    mode: str = "scalar"
    offsets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.N < 1:
            raise ValueError("need truncation order N >= 1")
        if self.mode not in ("scalar", "kron"):
            raise ValueError("basis mode must be 'scalar' or 'kron'")
        if self.mode == "scalar" and self.d != 1:
            raise ValueError("scalar basis requires d = 1")
        sizes = [self.d**j for j in range(1, self.N + 1)]
        if sum(sizes) > MAX_DIM_TOTAL:
            raise CapacityError(f"lifted dimension {sum(sizes)} exceeds {MAX_DIM_TOTAL}")
        off = np.concatenate([[0], np.cumsum(sizes)])
        off.flags.writeable = False
        object.__setattr__(self, "offsets", off)

    @property
    def dim_total(self) -> int:
        return int(self.offsets[-1])

    def block_slice(self, j: int) -> slice:
        if not (1 <= j <= self.N):
            raise ValueError(f"block {j} outside 1..{self.N}")
        return slice(int(self.offsets[j - 1]), int(self.offsets[j]))

    def index_of(self, indices: tuple[int, ...]) -> int:
        j = len(indices)
        if not (1 <= j <= self.N):
            raise ValueError(f"monomial degree {j} outside 1..{self.N}")
        flat = 0
        for i in indices:
            if not (0 <= i < self.d):
                raise ValueError(f"coordinate index {i} outside 0..{self.d - 1}")
            flat = flat * self.d + i
        return int(self.offsets[j - 1]) + flat

    def monomial_of(self, flat: int) -> tuple[int, ...]:
        if not (0 <= flat < self.dim_total):
            raise ValueError(f"flat index {flat} outside basis")
        j = int(np.searchsorted(self.offsets, flat, side="right"))
        rem = flat - int(self.offsets[j - 1])
        digits = []
        for _ in range(j):
            digits.append(rem % self.d)
            rem //= self.d
        return tuple(reversed(digits))


@dataclass
class LiftedState:
    """Truncated Kronecker-power vector with its basis."""

    basis: CarlemanBasis
    y: np.ndarray

    def block(self, j: int) -> np.ndarray:
        return self.y[self.basis.block_slice(j)]

    def consistency_defect(self) -> float:
        """|| y_2 - y_1 (x) y_1 ||, zero on exactly lifted states."""
        if self.basis.N < 2:
            return 0.0
        y1 = self.block(1)
        return float(np.linalg.norm(self.block(2) - np.kron(y1, y1)))


def lift(x, basis: CarlemanBasis) -> LiftedState:
    """Exact lifting of a state into Kronecker powers 1..N."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (basis.d,):
        raise ValueError(f"state must have shape ({basis.d},)")
    parts = []
    power = x
    for j in range(1, basis.N + 1):
        parts.append(power)
        if j < basis.N:
            power = np.kron(power, x)
    return LiftedState(basis=basis, y=np.concatenate(parts))


def compose_poly_power(P: dict[int, np.ndarray], m: int, basis: CarlemanBasis) -> dict[int, np.ndarray]:
    """Coefficients of the m-th Kronecker power of a polynomial map.

    P maps degree q to the (d, d^q) coefficient matrix B_q; the result
    maps degree q to the (d^m, d^q) coefficient of x^{(q)} in
    P(x)^{(m)}, with degrees above the basis truncation dropped.
    """
    if m < 0:
        raise ValueError("need m >= 0")
    d, N = basis.d, basis.N
    for q, B in P.items():
        if np.shape(B) != (d, d**q):
            raise ValueError(f"degree-{q} coefficient must have shape ({d}, {d**q})")
    out: dict[int, np.ndarray] = {0: np.ones((1, 1))}
    for _ in range(m):
        new: dict[int, np.ndarray] = {}
        for q1, R in out.items():
            for q2, B in P.items():
                qt = q1 + q2
                if qt > N:
                    continue
                term = np.kron(R, B)
                if qt in new:
                    new[qt] += term
                else:
                    new[qt] = term
        out = new
    return out


def _poly_to_update(P: dict[int, np.ndarray], basis: CarlemanBasis):
    """Lift a step polynomial into the update matrix U and offset b.

    Block row j of U holds the degree-truncated coefficients of
    P(x)^{(j)}; degree-0 parts land in b.  Returns (U csr, b).
    """
    N = basis.N
    grid: list[list] = [[None] * N for _ in range(N)]
    b = np.zeros(basis.dim_total)
    Ptrunc = {q: B for q, B in P.items() if q <= N and np.any(B)}
    for j in range(1, N + 1):
        rows = compose_poly_power(Ptrunc, j, basis)
        for q, mat in rows.items():
            if q == 0:
                b[basis.block_slice(j)] = mat[:, 0]
            elif np.any(mat):
                grid[j - 1][q - 1] = sp.csr_matrix(mat)
    for j in range(N):
        if all(g is None for g in grid[j]):
            grid[j][j] = sp.csr_matrix((basis.d ** (j + 1), basis.d ** (j + 1)))
    U = sp.bmat(grid, format="csr", dtype=float)
    U.eliminate_zeros()
    return U, b


@dataclass
class Qcm:
    """One lifted step in delta form: Y_i = (I + A) Y_{i-1} + b."""

    A: sp.csr_matrix
    b: np.ndarray
    i: int
    scheme: str
    order: int
    node: int | None = None


def step_polynomial_dpm(
    s: NoiseSchedule,
    m: PolyNoiseModel,
    i: int,
    grid: TimeGrid,
    k: int,
) -> dict[int, np.ndarray]:
    """Coefficient matrices of the order-k step map from node i-1 to i."""
    lam_s, lam_t = float(grid.lam[i - 1]), float(grid.lam[i])
    d = m.d
    ratio = float(s.alpha_from_lam(lam_t) / s.alpha_from_lam(lam_s))
    alpha_t = float(s.alpha_from_lam(lam_t))
    P: dict[int, np.ndarray] = {1: ratio * np.eye(d)}
    for n in range(k):
        mn = total_derivative_poly(s, m, n, lam_center=lam_s)
        w = alpha_t * taylor_integral(n, lam_s, lam_t)
        for q, mat in coeff_matrices(mn, lam_s).items():
            P[q] = P.get(q, np.zeros((d, d**q))) - w * mat
    return P


def assemble_dpm_qcm(
    s: NoiseSchedule,
    m: PolyNoiseModel,
    i: int,
    grid: TimeGrid,
    k: int,
    basis: CarlemanBasis,
) -> Qcm:
    """Lift the order-k step into quantized update form.

    Step-polynomial degrees above the basis truncation N are dropped;
    block 1 (and every block j with j * deg(P) <= N) is otherwise an
    exact image of the sequential step.
    """
    _check_model_basis(m, basis)
    P = step_polynomial_dpm(s, m, i, grid, k)
    U, b = _poly_to_update(P, basis)
    A = (U - sp.identity(basis.dim_total, format="csr")).tocsr()
    A.eliminate_zeros()
    return Qcm(A=A, b=b, i=i, scheme="dpm", order=k)


def _check_model_basis(m: PolyNoiseModel, basis: CarlemanBasis) -> None:
    if m.d != basis.d:
        raise ValueError(f"model dimension {m.d} != basis dimension {basis.d}")
    if m.mode == "separable" and m.d > 1:
        raise ValueError("separable models with d > 1 cannot be lifted; use kron mode")


@dataclass
class UnipcQcmSet:
    """Lifted update matrices for one predictor(/corrector) step.

    Update form (anchor node a = i - p):

        Y_i^pred = sum_{m=0}^{p-1} pred_mats[m] Y_{a+m} + pred_b
        Y_i^corr = sum_{m=0}^{p-1} corr_mats[m] Y_{a+m}
                   + corr_target Y_i^pred + corr_b

    Block row 1 of every matrix is exact; higher block rows are carried
    by the anchor matrices (index 0) as truncated Kronecker powers of
    the anchor step polynomial, with the interior-node state dependence
    of those rows dropped.  ``A(m)`` exposes the delta form, where the
    identity is referenced at the previous node m = p-1.
    """

    i: int
    p: int
    anchor: int
    variant: str
    basis: CarlemanBasis
    pred_mats: list
    pred_b: np.ndarray
    corr_mats: list
    corr_target: sp.csr_matrix
    corr_b: np.ndarray
    scheme: str = "unipc"

    def A(self, m: int, corrector: bool = False) -> sp.csr_matrix:
        mats = self.corr_mats if corrector else self.pred_mats
        out = mats[m].copy()
        if m == self.p - 1 and not corrector:
            out = (out - sp.identity(self.basis.dim_total, format="csr")).tocsr()
        return out

    @property
    def b(self) -> np.ndarray:
        return self.pred_b


def _node_block1(E: dict[int, np.ndarray], w: float, basis: CarlemanBasis) -> sp.csr_matrix:
    """Block-row-1 matrix -w * E_q placed against column blocks q >= 1."""
    grid: list[list] = [[None] * basis.N for _ in range(basis.N)]
    any_block = False
    for q, mat in E.items():
        if 1 <= q <= basis.N and np.any(mat):
            grid[0][q - 1] = sp.csr_matrix(-w * mat)
            any_block = True
    if not any_block:
        return sp.csr_matrix((basis.dim_total, basis.dim_total))
    for j in range(basis.N):
        if all(g is None for g in grid[j]):
            grid[j][j] = sp.csr_matrix((basis.d ** (j + 1), basis.d ** (j + 1)))
    out = sp.bmat(grid, format="csr", dtype=float)
    out.eliminate_zeros()
    return out


def assemble_unipc_qcms(
    s: NoiseSchedule,
    m: PolyNoiseModel,
    i: int,
    grid: TimeGrid,
    p: int,
    basis: CarlemanBasis,
    variant: str = "bh2",
) -> UnipcQcmSet:
    """Lift the order-p predictor and corrector step targeting node i.

    The step anchors at grid node i-p and its interior nodes are the
    grid nodes in between, so every matrix acts on an already-computed
    lifted state.  At p = 1 the predictor degenerates to the order-1
    lifted step of :func:`assemble_dpm_qcm` exactly.
    """
    _check_model_basis(m, basis)
    anchor = i - p
    if anchor < 0:
        raise ValueError(f"step to node {i} at order {p} lacks node history")
    lam_nodes = np.asarray(grid.lam[anchor : i + 1], dtype=float)
    H = float(lam_nodes[-1] - lam_nodes[0])
    r = (lam_nodes[1:] - lam_nodes[0]) / H
    lam_a, lam_i = float(lam_nodes[0]), float(lam_nodes[-1])
    d = m.d
    ratio = float(s.alpha_from_lam(lam_i) / s.alpha_from_lam(lam_a))
    sig_i = float(s.sigma_from_lam(lam_i))
    # eps_0 coefficient written through the shared moment so the p = 1
    # predictor matches the order-1 lifted step bit for bit
    c1 = float(s.alpha_from_lam(lam_i)) * taylor_integral(0, lam_a, lam_i)

    E_nodes = [coeff_matrices(m, float(lam_nodes[mm])) for mm in range(p + 1)]

    def anchor_poly(weights: np.ndarray) -> dict[int, np.ndarray]:
        coef0 = -c1 + float(weights.sum()) if len(weights) else -c1
        P: dict[int, np.ndarray] = {1: ratio * np.eye(d)}
        for q, mat in E_nodes[0].items():
            P[q] = P.get(q, np.zeros((d, d**q))) + coef0 * mat
        for mm, w in enumerate(weights, start=1):
            const = E_nodes[mm].get(0)
            if const is not None:
                P[0] = P.get(0, np.zeros((d, 1))) - w * const
        return P

    a_pred, Bh = uni_coeffs(p, r, H, variant=variant, corrector=False)
    w_pred = sig_i * Bh * (a_pred / r[: len(a_pred)]) if len(a_pred) else np.zeros(0)
    U0, pred_b = _poly_to_update(anchor_poly(w_pred), basis)
    pred_mats = [U0]
    for mm in range(1, p):
        pred_mats.append(_node_block1(E_nodes[mm], float(w_pred[mm - 1]), basis))

    a_corr, Bh_c = uni_coeffs(p, r, H, variant=variant, corrector=True)
    w_corr = sig_i * Bh_c * (a_corr / r)
    C0, corr_b = _poly_to_update(anchor_poly(w_corr), basis)
    corr_mats = [C0]
    for mm in range(1, p):
        corr_mats.append(_node_block1(E_nodes[mm], float(w_corr[mm - 1]), basis))
    corr_target = _node_block1(E_nodes[p], float(w_corr[p - 1]), basis)

    return UnipcQcmSet(
        i=i, p=p, anchor=anchor, variant=variant, basis=basis,
        pred_mats=pred_mats, pred_b=pred_b,
        corr_mats=corr_mats, corr_target=corr_target, corr_b=corr_b,
    )


def step_lifted(q, states, corrector: bool = False) -> np.ndarray:
    """Advance lifted state(s) through one quantized step.

    For a :class:`Qcm`, ``states`` is the single lifted vector at the
    previous node.  For a :class:`UnipcQcmSet`, ``states`` is the list
    of p lifted vectors at nodes anchor..anchor+p-1; with
    ``corrector=True`` the predictor output is formed internally and
    the corrected state returned.
    """
    if isinstance(q, Qcm):
        y = states.y if isinstance(states, LiftedState) else np.asarray(states)
        return y + q.A @ y + q.b
    if isinstance(q, UnipcQcmSet):
        ys = [st.y if isinstance(st, LiftedState) else np.asarray(st) for st in states]
        if len(ys) != q.p:
            raise ValueError(f"need {q.p} history states, got {len(ys)}")
        y_pred = q.pred_b.copy()
        for mat, y in zip(q.pred_mats, ys):
            y_pred += mat @ y
        if not corrector:
            return y_pred
        y_corr = q.corr_b + q.corr_target @ y_pred
        for mat, y in zip(q.corr_mats, ys):
            y_corr += mat @ y
        return y_corr
    raise TypeError(f"unsupported step object {type(q)!r}")


def run_lifted(
    s: NoiseSchedule,
    m: PolyNoiseModel,
    x_T,
    grid: TimeGrid,
    basis: CarlemanBasis,
    scheme: str = "dpm",
    order: int = 1,
    variant: str = "bh2",
    corrector: bool = False,
):
    """Drive a whole lifted trajectory; returns (states, step objects).

    ``scheme`` is "dpm" or "unipc"; ``order`` is k or p.  The unipc
    path warms up with order-p lifted steps of the derivative scheme,
    matching the sequential sampler, and feeds corrected states back
    into the history when ``corrector`` is set.
    """
    Y0 = lift(x_T, basis)
    states = [Y0.y]
    qcms: list = []
    if scheme == "dpm":
        for i in range(1, grid.M + 1):
            qcm = assemble_dpm_qcm(s, m, i, grid, order, basis)
            states.append(step_lifted(qcm, states[-1]))
            qcms.append(qcm)
    elif scheme == "unipc":
        p = order
        for i in range(1, min(p - 1, grid.M) + 1):
            qcm = assemble_dpm_qcm(s, m, i, grid, p, basis)
            states.append(step_lifted(qcm, states[-1]))
            qcms.append(qcm)
        for i in range(p, grid.M + 1):
            qset = assemble_unipc_qcms(s, m, i, grid, p, basis, variant=variant)
            states.append(step_lifted(qset, states[i - p : i], corrector=corrector))
            qcms.append(qset)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    return [LiftedState(basis=basis, y=y) for y in states], qcms
