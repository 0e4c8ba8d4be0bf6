"""Log-barrier interior-point solver for smooth convex programs.

Programs are described by vectorized constraint families: each family
evaluates many rows at once and reports which variables every row touches,
so the Newton system assembles into a sparse matrix in a few numpy calls.
Families whose rows couple many variables (budget and average-power rows)
are flagged low-rank: their barrier outer products are applied through a
Woodbury update instead of densifying the factorization.

Centering uses damped Newton steps with backtracking; any trial point that
leaves the strict interior or produces non-finite values is rejected by the
line search rather than extrapolated.  The barrier weight grows by a fixed
factor per stage, and identical inputs reproduce bitwise-identical iterates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

ARMIJO = 0.01
BACKTRACK = 0.5
MAX_HALVINGS = 60


@dataclass
class ConstraintBlock:
    """Family of smooth convex rows g(x) <= 0 sharing one vectorized evaluator.

    fn(xs, want_derivs) takes the touched variables xs (m, p) and returns
    (g (m,), grad (m, p) | None, hess | None) where hess is either a dense
    (m, p, p) array or, when `hess_pattern` = (hi, hj) is set, the values
    (m, len(hi)) of a fixed sparse local pattern.
    """

    name: str
    idx: np.ndarray
    fn: Callable
    lowrank: bool = False
    hess_pattern: tuple[np.ndarray, np.ndarray] | None = None


@dataclass
class ConvexProgram:
    """Smooth convex program: objective, inequality families, affine equalities, box."""

    num_vars: int
    objective: Callable  # fn(x, want_derivs) -> (f, grad | None, hess_diag | None)
    blocks: list[ConstraintBlock] = field(default_factory=list)
    a_eq: sp.spmatrix | None = None
    b_eq: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    var_scale: np.ndarray | None = None


@dataclass
class SolveResult:
    x: np.ndarray
    status: str  # optimal | infeasible | max_iter
    objective: float
    barrier_trace: list[float]
    newton_iters: int
    stationarity: float
    message: str = ""


def _box_block(prog: ConvexProgram) -> ConstraintBlock | None:
    rows = []
    if prog.lower is not None:
        for i in np.flatnonzero(np.isfinite(prog.lower)):
            rows.append((i, -1.0, prog.lower[i]))
    if prog.upper is not None:
        for i in np.flatnonzero(np.isfinite(prog.upper)):
            rows.append((i, 1.0, prog.upper[i]))
    if not rows:
        return None
    idx = np.array([[r[0]] for r in rows], dtype=np.int64)
    sign = np.array([r[1] for r in rows])
    bound = np.array([r[2] for r in rows])

    def fn(xs, want_derivs):
        g = sign * (xs[:, 0] - bound)
        if not want_derivs:
            return g, None, None
        return g, sign[:, None].copy(), None

    return ConstraintBlock(name="box", idx=idx, fn=fn)


class _Assembler:
    """Precomputed scatter indices for the barrier Hessian of one program."""

    def __init__(self, prog: ConvexProgram):
        self.prog = prog
        n = prog.num_vars
        self.scale = prog.var_scale if prog.var_scale is not None else np.ones(n)
        self.blocks = list(prog.blocks)
        box = _box_block(prog)
        if box is not None:
            self.blocks.append(box)
        ii, jj, sizes = [], [], []
        self.col_scale = []
        for b in self.blocks:
            idx = b.idx
            m, p = idx.shape
            self.col_scale.append(self.scale[idx])
            if not b.lowrank:
                ii.append(np.broadcast_to(idx[:, :, None], (m, p, p)).ravel())
                jj.append(np.broadcast_to(idx[:, None, :], (m, p, p)).ravel())
                sizes.append(m * p * p)
            else:
                sizes.append(0)
            if b.hess_pattern is not None:
                hi, hj = b.hess_pattern
                ii.append(idx[:, hi].ravel())
                jj.append(idx[:, hj].ravel())
        diag = np.arange(n, dtype=np.int64)
        ii.append(diag)
        jj.append(diag)
        self.rows = np.concatenate(ii)
        self.cols = np.concatenate(jj)
        self.n = n
        if prog.a_eq is not None:
            self.a_scaled = sp.csr_matrix(prog.a_eq) @ sp.diags(self.scale)
        else:
            self.a_scaled = None

    def eval_g(self, x):
        """Constraint values only (line-search path); None if any non-finite."""
        out = []
        for b in self.blocks:
            g, _, _ = b.fn(x[b.idx], False)
            if not np.all(np.isfinite(g)):
                return None
            out.append(np.asarray(g, dtype=float))
        return out

    def barrier_value(self, gs) -> float:
        return -sum(float(np.log(-g).sum()) for g in gs)

    def newton_pieces(self, x, t_bar):
        """Scaled gradient, sparse Hessian values, low-rank columns, barrier value."""
        n = self.n
        s = self.scale
        f, gobj, hobj = self.prog.objective(x, True)
        grad = t_bar * gobj * s
        hvals = []
        lowrank_cols = []
        phi = 0.0
        for b, cs in zip(self.blocks, self.col_scale):
            g, G, H = b.fn(x[b.idx], True)
            if np.any(g >= 0) or not np.all(np.isfinite(g)):
                return None
            inv = -1.0 / g
            phi += float(np.log(inv).sum())
            Gs = G * cs
            grad += np.bincount(
                b.idx.ravel(), weights=(inv[:, None] * Gs).ravel(), minlength=n
            )
            if b.lowrank:
                m = len(g)
                cols_t = np.zeros((m, n))
                np.put_along_axis(cols_t, b.idx, Gs * inv[:, None], axis=1)
                lowrank_cols.append(cols_t.T)
            else:
                outer = Gs[:, :, None] * Gs[:, None, :] * (inv * inv)[:, None, None]
                if H is not None and b.hess_pattern is None:
                    outer = outer + H * inv[:, None, None] * (cs[:, :, None] * cs[:, None, :])
                hvals.append(outer.ravel())
            if b.hess_pattern is not None:
                hi, hj = b.hess_pattern
                hv = H * inv[:, None] * (cs[:, hi] * cs[:, hj])
                hvals.append(hv.ravel())
        diag = t_bar * hobj * s * s if hobj is not None else np.zeros(n)
        hvals.append(diag)
        vals = np.concatenate(hvals)
        merit = t_bar * f + phi
        U = np.concatenate(lowrank_cols, axis=1) if lowrank_cols else None
        return f, merit, grad, vals, U


def _merit_at(asm: _Assembler, x, t_bar):
    gs = asm.eval_g(x)
    if gs is None or any(np.any(g >= 0) for g in gs):
        return None, None
    f, _, _ = asm.prog.objective(x, False)
    if not np.isfinite(f):
        return None, None
    return t_bar * f + asm.barrier_value(gs), f


def solve(
    prog: ConvexProgram,
    start: np.ndarray,
    tol: float = 1e-7,
    max_newton: int = 200,
    mu_factor: float = 10.0,
    max_stages: int = 60,
    t0_scale: float = 1.0,
    loose_centering: bool = False,
) -> SolveResult:
    """Minimize the program from a starting point, via phase-I when needed.

    `t0_scale` boosts the initial barrier weight for warm starts near the
    optimum, skipping early homotopy stages.  `loose_centering` accepts the
    classical decrement criterion (lambda^2 of order the row count) at every
    stage, trading a small constant factor in the duality-gap bound for far
    fewer Newton steps.
    """
    x = np.asarray(start, dtype=float).copy() if start is not None else None
    asm = _Assembler(prog)
    if x is None:
        x, status = find_feasible(prog)
        if status != "optimal":
            return SolveResult(np.zeros(prog.num_vars), status, np.inf, [], 0, np.inf,
                               "no strictly feasible point found")
    else:
        with np.errstate(all="ignore"):
            gs = asm.eval_g(x)
        if gs is None or any(np.any(g >= -1e-14) for g in gs):
            x, status = find_feasible(prog, x)
            if status != "optimal":
                f0 = prog.objective(np.asarray(start, dtype=float), False)[0]
                return SolveResult(
                    np.asarray(start, dtype=float), status, f0, [], 0, np.inf,
                    "no strictly feasible point found",
                )
            t0_scale = 1.0
    return _barrier_loop(prog, asm, x, tol, max_newton, mu_factor, max_stages,
                         t0_scale=t0_scale, loose=loose_centering)


def _barrier_loop(prog, asm, x, tol, max_newton, mu_factor, max_stages,
                  sigma_index=None, sigma_stop=None, t0_scale=1.0, loose=False):
    """Outer barrier stages; optionally stop early once x[sigma_index] < sigma_stop."""
    with np.errstate(all="ignore"):
        return _barrier_loop_inner(
            prog, asm, x, tol, max_newton, mu_factor, max_stages, sigma_index, sigma_stop,
            t0_scale, loose
        )


def _barrier_loop_inner(prog, asm, x, tol, max_newton, mu_factor, max_stages, sigma_index, sigma_stop, t0_scale, loose):
    n = prog.num_vars
    m_ineq = sum(len(b.idx) for b in asm.blocks)
    if m_ineq == 0 and prog.a_eq is None:
        f, g, _ = prog.objective(x, True)
        return SolveResult(x, "optimal", f, [f], 0, float(np.linalg.norm(g)), "unconstrained")
    f0, gobj0, _ = prog.objective(x, True)
    t_default = max(1.0, m_ineq / max(1.0, abs(f0)))
    t_bar = t_default
    if t0_scale > 1.0 and gobj0 is not None:
        # warm start: fit the barrier weight so the incumbent is nearly
        # centered, skipping homotopy stages (capped by the caller's trust)
        pieces0 = asm.newton_pieces(x, 1.0)
        if pieces0 is not None:
            gf = gobj0 * asm.scale
            gphi = pieces0[2] - gf
            nf2 = float(gf @ gf)
            if nf2 > 0:
                t_fit = -float(gf @ gphi) / nf2
                if np.isfinite(t_fit):
                    t_final = m_ineq / (tol * (1.0 + abs(f0)))
                    upper = max(t_default, min(t_final, t_default * t0_scale))
                    t_bar = float(np.clip(t_fit, t_default, upper))
    trace: list[float] = []
    total_newton = 0
    status = "optimal"
    for _stage in range(max_stages):
        f_now, _, _ = prog.objective(x, False)
        final_stage = m_ineq / t_bar <= tol * (1.0 + abs(f_now))
        centered = False
        for _it in range(max_newton):
            pieces = asm.newton_pieces(x, t_bar)
            if pieces is None:
                return SolveResult(x, "max_iter", f0, trace, total_newton, np.inf,
                                   "iterate left the interior")
            f, merit, grad, hvals, U = pieces
            lu = None
            for reg in (1e-12, 1e-9, 1e-6, 1e-3):
                H = sp.coo_matrix(
                    (np.concatenate([hvals, np.full(n, reg * (1.0 + np.abs(hvals).max()))]),
                     (np.concatenate([asm.rows, np.arange(n)]),
                      np.concatenate([asm.cols, np.arange(n)]))),
                    shape=(n, n)).tocsc()
                if asm.a_scaled is not None:
                    A = asm.a_scaled
                    K = sp.bmat([[H, A.T], [A, None]], format="csc")
                    r2 = prog.b_eq - prog.a_eq @ x
                    rhs = np.concatenate([-grad, r2])
                else:
                    K = H
                    rhs = -grad
                try:
                    lu = splu(K)
                    break
                except RuntimeError:
                    continue
            if lu is None:
                return SolveResult(x, "max_iter", f, trace, total_newton, np.inf,
                                   "Newton system factorization failed")
            if U is not None:
                Uk = U if asm.a_scaled is None else np.vstack([U, np.zeros((K.shape[0] - n, U.shape[1]))])
                ZU = lu.solve(Uk)
                Mk = np.eye(U.shape[1]) + Uk.T @ ZU
                kkt_apply = lambda v: K @ v + Uk @ (Uk.T @ v)
                kkt_solve = lambda r: (lambda z0: z0 - ZU @ np.linalg.solve(Mk, Uk.T @ z0))(lu.solve(r))
            else:
                kkt_apply = lambda v: K @ v
                kkt_solve = lu.solve
            # iterative refinement recovers direction digits the factorization
            # loses near thin constraint walls
            sol = kkt_solve(rhs)
            for _ in range(2):
                resid = rhs - kkt_apply(sol)
                if not np.all(np.isfinite(resid)):
                    break
                sol = sol + kkt_solve(resid)
            dy = sol[:n]
            gdir = float(grad @ dy)
            lam2 = -gdir
            total_newton += 1
            if (not np.isfinite(lam2)) or lam2 < -1e-9 * (1.0 + abs(merit)):
                # ill-conditioned factorization: fold the low-rank terms in
                # and refactor at higher regularization
                dy = _robust_direction(asm, prog, x, grad, hvals, U, n)
                if dy is None:
                    break
                gdir = float(grad @ dy)
                lam2 = -gdir
                if not np.isfinite(lam2) or lam2 < 0:
                    break
            # light centering keeps intermediate stages on the path cheaply;
            # the final stage is polished unless the caller accepts the
            # classical decrement criterion (both are affine-invariant)
            if loose:
                stage_tol = 1e-8 * (1.0 + abs(merit)) if final_stage else 1e-3
            else:
                stage_tol = 1e-10 * (1.0 + abs(merit)) if final_stage else 1e-3
            if 0.5 * lam2 <= stage_tol:
                centered = True
                break  # centered (tiny negative values are float noise)
            dx = dy * asm.scale
            alpha = 1.0
            accepted = False
            for _h in range(MAX_HALVINGS):
                trial = x + alpha * dx
                m_trial, _f_trial = _merit_at(asm, trial, t_bar)
                if m_trial is not None and m_trial <= merit + ARMIJO * alpha * gdir:
                    x = trial
                    accepted = True
                    break
                alpha *= BACKTRACK
            if not accepted:
                # numerical floor: accept as centered when the decrement is tiny
                centered = 0.5 * lam2 <= 1e-8 * (1.0 + abs(merit))
                break
            if sigma_index is not None and x[sigma_index] < sigma_stop:
                f, _, _ = prog.objective(x, False)
                trace.append(f)
                return SolveResult(x, "optimal", f, trace, total_newton, 0.0, "early feasible exit")
        f, gobj, _ = prog.objective(x, True)
        trace.append(f)
        gap = m_ineq / t_bar
        if gap <= tol * (1.0 + abs(f)):
            if not centered:
                return SolveResult(x, "max_iter", f, trace, total_newton, np.inf,
                                   "could not center at the final barrier stage")
            grad_full = asm.newton_pieces(x, t_bar)
            stat = float(np.linalg.norm(grad_full[2]) / t_bar) if grad_full else np.inf
            return SolveResult(x, status, f, trace, total_newton, stat, "")
        t_bar *= mu_factor
    return SolveResult(x, "max_iter", f, trace, total_newton, np.inf, "stage limit reached")


def _robust_direction(asm, prog, x, grad, hvals, U, n):
    """Fallback Newton direction with the coupling outer products folded in."""
    H = sp.coo_matrix(
        (np.concatenate([hvals, np.full(n, 1e-9 * (1.0 + np.abs(hvals).max()))]),
         (np.concatenate([asm.rows, np.arange(n)]),
          np.concatenate([asm.cols, np.arange(n)]))),
        shape=(n, n)).tocsc()
    if U is not None:
        Us = sp.csc_matrix(U)
        H = (H + Us @ Us.T).tocsc()
    if asm.a_scaled is not None:
        A = asm.a_scaled
        K = sp.bmat([[H, A.T], [A, None]], format="csc")
        rhs = np.concatenate([-grad, prog.b_eq - prog.a_eq @ x])
    else:
        K = H
        rhs = -grad
    try:
        return splu(K).solve(rhs)[:n]
    except RuntimeError:
        return None


def find_feasible(prog: ConvexProgram, start: np.ndarray | None = None,
                  margin: float = 1e-6, tol: float = 1e-9):
    """Phase-I search for a strictly feasible point; returns (x, status).

    Minimizes the worst normalized constraint value with an extra slack
    variable; exits early once the slack is safely negative.
    """
    n = prog.num_vars
    if start is None:
        lo = prog.lower if prog.lower is not None else np.full(n, -np.inf)
        hi = prog.upper if prog.upper is not None else np.full(n, np.inf)
        with np.errstate(all="ignore"):
            start = np.where(
                np.isfinite(lo) & np.isfinite(hi), 0.5 * (lo + hi),
                np.where(np.isfinite(lo), lo + 1.0, np.where(np.isfinite(hi), hi - 1.0, 0.0)),
            )
    x = np.asarray(start, dtype=float).copy()
    x = _push_inside_box(prog, x)
    blocks = list(prog.blocks)
    if not blocks:
        return x, "optimal"

    # normalized row gaps at the start define the relaxation scales
    scales = []
    g0_all = []
    with np.errstate(all="ignore"):
        for b in blocks:
            g, _, _ = b.fn(x[b.idx], False)
            g = np.where(np.isfinite(g), g, 1e30)
            c = 1.0 + np.abs(g)
            scales.append(c)
            g0_all.append(g / c)
    sigma0 = max(float(np.max(g)) for g in g0_all) if g0_all else 0.0
    sigma0 = max(sigma0 * 1.1 + 1e-3, 1e-3)

    wrapped = []
    for b, c in zip(blocks, scales):
        m, p = b.idx.shape
        idx2 = np.column_stack([b.idx, np.full(m, n, dtype=np.int64)])
        wrapped.append(
            ConstraintBlock(
                name=f"{b.name}+relax",
                idx=idx2,
                fn=_wrap_relaxed(b.fn, c),
                lowrank=b.lowrank,
                hess_pattern=b.hess_pattern,
            )
        )

    def objective(z, want):
        if not want:
            return z[n], None, None
        g = np.zeros(n + 1)
        g[n] = 1.0
        return z[n], g, np.zeros(n + 1)

    lower = np.concatenate([prog.lower, [-np.inf]]) if prog.lower is not None else None
    upper = np.concatenate([prog.upper, [np.inf]]) if prog.upper is not None else None
    scale = np.concatenate([prog.var_scale, [1.0]]) if prog.var_scale is not None else None
    a_eq = sp.hstack([prog.a_eq, sp.csr_matrix((prog.a_eq.shape[0], 1))]).tocsr() if prog.a_eq is not None else None
    phase1 = ConvexProgram(
        num_vars=n + 1, objective=objective, blocks=wrapped,
        a_eq=a_eq, b_eq=prog.b_eq, lower=lower, upper=upper, var_scale=scale,
    )
    z0 = np.concatenate([x, [sigma0]])
    asm = _Assembler(phase1)
    res = _barrier_loop(phase1, asm, z0, tol, 200, 10.0, 60,
                        sigma_index=n, sigma_stop=-margin)
    sigma = res.x[n]
    if sigma < -1e-10:
        return res.x[:n], "optimal"
    if res.status == "optimal":
        return res.x[:n], "infeasible"
    return res.x[:n], "max_iter"


def _wrap_relaxed(fn, c):
    def wrapped(xs, want):
        g, G, H = fn(xs[:, :-1], want)
        g2 = g / c - xs[:, -1]
        if not want:
            return g2, None, None
        G2 = np.column_stack([G / c[:, None], -np.ones(len(g))])
        if H is None:
            return g2, G2, None
        if H.ndim == 3:
            m, p, _ = H.shape
            H2 = np.zeros((m, p + 1, p + 1))
            H2[:, :p, :p] = H / c[:, None, None]
            return g2, G2, H2
        return g2, G2, H / c[:, None]
    return wrapped


def _push_inside_box(prog: ConvexProgram, x: np.ndarray) -> np.ndarray:
    out = x.copy()
    if prog.lower is not None or prog.upper is not None:
        lo = prog.lower if prog.lower is not None else np.full(len(x), -np.inf)
        hi = prog.upper if prog.upper is not None else np.full(len(x), np.inf)
        pad_lo = np.where(np.isfinite(lo), 1e-9 * (1.0 + np.abs(lo)), 0.0)
        pad_hi = np.where(np.isfinite(hi), 1e-9 * (1.0 + np.abs(hi)), 0.0)
        both = np.isfinite(lo) & np.isfinite(hi)
        pad_lo = np.where(both, np.minimum(pad_lo, 0.25 * (hi - lo)), pad_lo)
        pad_hi = np.where(both, np.minimum(pad_hi, 0.25 * (hi - lo)), pad_hi)
        out = np.clip(out, lo + pad_lo, hi - pad_hi)
    return out
