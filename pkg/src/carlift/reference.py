"""Classical reference samplers: RK4 oracle and exponential integrators.

The exponential integrators advance the exact variation-of-constants
solution

    x_t / alpha_t = x_s / alpha_s - int_{lam_s}^{lam_t} e^{-lam} eps dlam

by replacing eps along the step either with its Taylor expansion in lam
(single-step, derivative-based) or with a polynomial interpolant through
finite differences of stored eps evaluations (predictor / corrector).
All weights reduce to the moments I_n computed by
:func:`carlift.schedule.taylor_integral`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import PolyNoiseModel, eval_eps, total_derivative_poly
from .schedule import NoiseSchedule, TimeGrid, phi_moment, taylor_integral

__all__ = [
    "TrajectoryPoint",
    "SolverRun",
    "UniStepContext",
    "rk4_oracle",
    "dpm_step",
    "uni_coeffs",
    "make_uni_context",
    "unip_step",
    "unic_step",
    "run_dpm",
    "run_unipc",
]


@dataclass(frozen=True)
class TrajectoryPoint:
    t: float
    lam: float
    x: np.ndarray


@dataclass
class SolverRun:
    """A sampled trajectory plus bookkeeping.

    nfe counts evaluations of the noise model and its lambda-derivatives;
    each derivative evaluation costs one unit, matching how a wrapped
    network would be charged.
    """

    grid: TimeGrid
    states: list[TrajectoryPoint]
    nfe: int
    scheme: str
    order: int

    def state_matrix(self) -> np.ndarray:
        return np.stack([p.x for p in self.states])

    @property
    def endpoint(self) -> np.ndarray:
        return self.states[-1].x


def _rhs(s: NoiseSchedule, m: PolyNoiseModel, t: float, x: np.ndarray) -> np.ndarray:
    sig = float(s.sigma(t))
    return float(s.f(t)) * x + float(s.g2(t)) / (2.0 * sig) * eval_eps(m, x, float(s.lam(t)))


def rk4_oracle(
    s: NoiseSchedule,
    m: PolyNoiseModel,
    x_T,
    substeps: int = 2000,
    t_start: float | None = None,
    t_end: float | None = None,
    times: np.ndarray | None = None,
) -> SolverRun:
    """Classic fixed-step RK4 integration of the sampling ODE in t.

    With ``times`` given (strictly decreasing, the record nodes),
    ``substeps`` applies per interval; otherwise the span
    [t_start, t_end] (defaults [T, t_floor]) is integrated with
    ``substeps`` total steps and only the endpoints are recorded.
    """
    if substeps < 1:
        raise ValueError("need substeps >= 1")
    if times is None:
        a = s.T if t_start is None else t_start
        b = s.t_floor if t_end is None else t_end
        times = np.array([a, b])
        per = [substeps]
    else:
        times = np.asarray(times, dtype=float)
        per = [substeps] * (len(times) - 1)

    x = np.atleast_1d(np.asarray(x_T, dtype=float)).copy()
    pts = [TrajectoryPoint(float(times[0]), float(s.lam(times[0])), x.copy())]
    nfe = 0
    for (ta, tb), n in zip(zip(times[:-1], times[1:]), per):
        ht = (tb - ta) / n
        t = ta
        for _ in range(n):
            k1 = _rhs(s, m, t, x)
            k2 = _rhs(s, m, t + 0.5 * ht, x + 0.5 * ht * k1)
            k3 = _rhs(s, m, t + 0.5 * ht, x + 0.5 * ht * k2)
            k4 = _rhs(s, m, t + ht, x + ht * k3)
            x = x + (ht / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            t += ht
            nfe += 4
        pts.append(TrajectoryPoint(float(tb), float(s.lam(tb)), x.copy()))
    grid = TimeGrid(t=times, lam=np.asarray(s.lam(times), dtype=float))
    return SolverRun(grid=grid, states=pts, nfe=nfe, scheme="rk4", order=4)


def dpm_step(
    s: NoiseSchedule,
    m: PolyNoiseModel,
    x,
    i: int,
    grid: TimeGrid,
    k: int,
) -> np.ndarray:
    """Order-k single step from grid node i-1 to node i.

    Implements the truncated Taylor update

        x_i = (alpha_i/alpha_{i-1}) x
              - alpha_i sum_{n<k} eps^{(n)}(x, lam_{i-1}) I_n,

    with eps^{(n)} the symbolic total lambda-derivatives expanded around
    lam_{i-1} and I_n the exponential moments over the step.
    """
    if k not in (1, 2, 3):
        raise ValueError("supported orders are k in {1, 2, 3}")
    if not (1 <= i <= grid.M):
        raise ValueError(f"step index {i} outside 1..{grid.M}")
    lam_s, lam_t = float(grid.lam[i - 1]), float(grid.lam[i])
    x = np.atleast_1d(np.asarray(x, dtype=float))
    ratio = float(s.alpha_from_lam(lam_t) / s.alpha_from_lam(lam_s))
    alpha_t = float(s.alpha_from_lam(lam_t))
    out = ratio * x
    for n in range(k):
        mn = total_derivative_poly(s, m, n, lam_center=lam_s)
        out = out - alpha_t * taylor_integral(n, lam_s, lam_t) * eval_eps(mn, x, lam_s)
    return out


def uni_coeffs(
    p: int,
    r: np.ndarray,
    h: float,
    variant: str = "bh2",
    corrector: bool = False,
) -> tuple[np.ndarray, float]:
    """Interpolation weights a and normaliser B(h) for a unified step.

    The weights solve the Vandermonde order conditions

        sum_m a_m r_m^{n-1} = n! * h * phi_{n+1}(h) / B(h),

    over n = 1..p-1 in the p-1 free weights for the predictor, or
    n = 1..p in p weights for the corrector.  B(h) is h for variant
    "bh1" and e^h - 1 for "bh2".  The predictor at p = 1 has no free
    weights and returns an empty array.
    """
    r = np.asarray(r, dtype=float)
    if r.shape != (p,):
        raise ValueError(f"need {p} node fractions, got shape {r.shape}")
    if np.any(r <= 0.0) or np.any(r > 1.0):
        raise ValueError("node fractions must lie in (0, 1]")
    if np.any(np.diff(r) <= 0.0):
        raise ValueError("node fractions must be strictly increasing (duplicates are singular)")
    if abs(r[-1] - 1.0) > 1e-12:
        raise ValueError("final node fraction must be 1")
    if h <= 0.0:
        raise ValueError("need h > 0")
    if variant == "bh1":
        Bh = h
    elif variant == "bh2":
        Bh = float(np.expm1(h))
    else:
        raise ValueError(f"unknown variant {variant!r}")

    n_w = p if corrector else p - 1
    if n_w == 0:
        return np.zeros(0), Bh
    g = np.array([phi_moment(n, h) / Bh for n in range(1, n_w + 1)])
    V = np.vander(r[:n_w], N=n_w, increasing=True).T  # V[n-1, m] = r_m^{n-1}
    a = np.linalg.solve(V, g)
    return a, Bh


@dataclass(frozen=True)
class UniStepContext:
    """Geometry and weights for one unified predictor/corrector step.

    The step runs from anchor log-SNR s_lam[0] to target s_lam[-1] with
    interior nodes at fractions r of the span h.  D[m-1] holds the
    finite difference eps(x_{s_m}, s_m) - eps(x_{s_0}, s_0); for a
    corrector context the last difference is taken at the predictor
    output.
    """

    p: int
    r: np.ndarray
    s_lam: np.ndarray
    h: float
    a: np.ndarray
    Bh: float
    D: np.ndarray
    eps0: np.ndarray
    variant: str
    corrector: bool
    anchor: int = -1


def make_uni_context(
    s: NoiseSchedule,
    m: PolyNoiseModel,
    i: int,
    grid: TimeGrid,
    p: int,
    states: np.ndarray,
    variant: str = "bh2",
    corrector: bool = False,
    lam_nodes: np.ndarray | None = None,
) -> UniStepContext:
    """Build the step context for the step targeting grid node i.

    In the default multistep layout the anchor is grid node i-p and the
    interior nodes are the grid nodes between anchor and target, so all
    differences D_m reuse previously computed states.  ``states`` holds
    the states at nodes s_0..s_{p-1} (predictor) or s_0..s_p with the
    predictor output last (corrector).  ``lam_nodes`` overrides the node
    log-SNRs for single-step layouts.
    """
    if lam_nodes is None:
        anchor = i - p
        if anchor < 0:
            raise ValueError(f"step to node {i} at order {p} lacks node history")
        lam_nodes = np.asarray(grid.lam[anchor : i + 1], dtype=float)
    else:
        anchor = -1
        lam_nodes = np.asarray(lam_nodes, dtype=float)
    if len(lam_nodes) != p + 1:
        raise ValueError("need p+1 node log-SNRs")
    h = float(lam_nodes[-1] - lam_nodes[0])
    r = (lam_nodes[1:] - lam_nodes[0]) / h
    a, Bh = uni_coeffs(p, r, h, variant=variant, corrector=corrector)

    states = np.atleast_2d(np.asarray(states, dtype=float))
    n_nodes = p + 1 if corrector else p
    if states.shape[0] != n_nodes:
        raise ValueError(f"expected {n_nodes} states, got {states.shape[0]}")
    eps0 = eval_eps(m, states[0], float(lam_nodes[0]))
    n_d = p if corrector else p - 1
    D = np.zeros((n_d, states.shape[1]))
    for mm in range(1, n_d + 1):
        D[mm - 1] = eval_eps(m, states[mm], float(lam_nodes[mm])) - eps0
    return UniStepContext(
        p=p, r=r, s_lam=lam_nodes, h=h, a=a, Bh=Bh, D=D, eps0=eps0,
        variant=variant, corrector=corrector, anchor=anchor,
    )


def _uni_update(s: NoiseSchedule, ctx: UniStepContext, x0: np.ndarray) -> np.ndarray:
    lam0, lamp = float(ctx.s_lam[0]), float(ctx.s_lam[-1])
    ratio = float(s.alpha_from_lam(lamp) / s.alpha_from_lam(lam0))
    sig_p = float(s.sigma_from_lam(lamp))
    out = ratio * x0 - sig_p * float(np.expm1(ctx.h)) * ctx.eps0
    if len(ctx.a):
        weights = ctx.a / ctx.r[: len(ctx.a)]
        out = out - sig_p * ctx.Bh * (weights[:, None] * ctx.D).sum(axis=0)
    return out


def unip_step(
    s: NoiseSchedule,
    m: PolyNoiseModel,
    ctx: UniStepContext,
    states: np.ndarray,
    i: int,
    grid: TimeGrid,
) -> np.ndarray:
    """Predictor step to node i using the p states recorded in ctx."""
    if ctx.corrector:
        raise ValueError("context was built for a corrector step")
    states = np.atleast_2d(np.asarray(states, dtype=float))
    return _uni_update(s, ctx, states[0])


def unic_step(
    s: NoiseSchedule,
    m: PolyNoiseModel,
    ctx: UniStepContext,
    xc_s0,
    states: np.ndarray,
    i: int,
    grid: TimeGrid,
) -> np.ndarray:
    """Corrector step to node i.

    ``states`` carries the evaluation chain (anchor..interior nodes plus
    the predictor output at the target); ``xc_s0`` is the corrected state
    the update is anchored on.  In a canonical corrected run the two
    coincide at the anchor node; they are kept separate so diverged
    chains can be corrected too.
    """
    if not ctx.corrector:
        raise ValueError("context was built for a predictor step")
    xc_s0 = np.atleast_1d(np.asarray(xc_s0, dtype=float))
    return _uni_update(s, ctx, xc_s0)


def run_dpm(
    s: NoiseSchedule,
    m: PolyNoiseModel,
    x_T,
    grid: TimeGrid,
    k: int,
) -> SolverRun:
    """Run the order-k derivative-based sampler over the grid."""
    x = np.atleast_1d(np.asarray(x_T, dtype=float)).copy()
    pts = [TrajectoryPoint(float(grid.t[0]), float(grid.lam[0]), x.copy())]
    for i in range(1, grid.M + 1):
        x = dpm_step(s, m, x, i, grid, k)
        pts.append(TrajectoryPoint(float(grid.t[i]), float(grid.lam[i]), x.copy()))
    return SolverRun(grid=grid, states=pts, nfe=k * grid.M, scheme=f"dpm{k}", order=k)


def run_unipc(
    s: NoiseSchedule,
    m: PolyNoiseModel,
    x_T,
    grid: TimeGrid,
    p: int,
    variant: str = "bh2",
    corrector: bool = False,
    singlestep: bool = False,
) -> SolverRun:
    """Run the unified predictor(/corrector) sampler over the grid.

    Multistep (default): the step to node i anchors at node i-p and
    reuses the p-1 grid nodes in between, after a warm-up of p-1 steps
    at matching single-step order.  Single-step: each step spawns fresh
    interior nodes inside [lam_{i-1}, lam_i] (debugging layout; p
    evaluations per step).
    """
    if p < 1 or (not singlestep and p > 3):
        raise ValueError("supported orders are p in {1, 2, 3}")
    x = np.atleast_1d(np.asarray(x_T, dtype=float)).copy()
    pts = [TrajectoryPoint(float(grid.t[0]), float(grid.lam[0]), x.copy())]
    nfe = 0
    scheme = ("unic" if corrector else "unip") + str(p)

    if singlestep:
        for i in range(1, grid.M + 1):
            lam0, lam1 = float(grid.lam[i - 1]), float(grid.lam[i])
            nodes = [pts[-1].x]
            lams = lam0 + (lam1 - lam0) * np.arange(p + 1) / p
            for mm in range(1, p + 1):
                ctx = make_uni_context(
                    s, m, i, grid, mm, np.stack(nodes), variant=variant,
                    corrector=False, lam_nodes=lams[: mm + 1],
                )
                nodes.append(unip_step(s, m, ctx, np.stack(nodes[:mm]), i, grid))
            nfe += p
            xi = nodes[-1]
            if corrector and p > 1:
                ctxc = make_uni_context(
                    s, m, i, grid, p, np.stack(nodes), variant=variant,
                    corrector=True, lam_nodes=lams,
                )
                xi = unic_step(s, m, ctxc, nodes[0], np.stack(nodes), i, grid)
                nfe += 1
            pts.append(TrajectoryPoint(float(grid.t[i]), lam1, xi))
        return SolverRun(grid=grid, states=pts, nfe=nfe, scheme=scheme + "s", order=p)

    for i in range(1, min(p - 1, grid.M) + 1):
        x = dpm_step(s, m, pts[-1].x, i, grid, k=p)
        nfe += p
        pts.append(TrajectoryPoint(float(grid.t[i]), float(grid.lam[i]), x))
    for i in range(p, grid.M + 1):
        hist = np.stack([pt.x for pt in pts[i - p : i]])
        ctx = make_uni_context(s, m, i, grid, p, hist, variant=variant, corrector=False)
        x_pred = unip_step(s, m, ctx, hist, i, grid)
        nfe += 1  # the anchor/history evaluations are cached from earlier steps
        xi = x_pred
        if corrector:
            chain = np.vstack([hist, x_pred[None, :]])
            ctxc = make_uni_context(s, m, i, grid, p, chain, variant=variant, corrector=True)
            xi = unic_step(s, m, ctxc, hist[0], chain, i, grid)
            nfe += 1
        pts.append(TrajectoryPoint(float(grid.t[i]), float(grid.lam[i]), xi))
    return SolverRun(grid=grid, states=pts, nfe=nfe, scheme=scheme, order=p)
