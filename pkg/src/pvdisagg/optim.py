"""Convex solvers: operator-splitting QP/LP core, L1 trend filtering, IRLS.

All quadratic problems use the convention  minimize 0.5*x'Hx - f'x , all
linear problems  minimize c'x .  The shared engine solves the box form

    minimize 0.5*x'Px + q'x   subject to  l <= Ax <= u

by ADMM over a quasi-definite KKT factorization, with Ruiz equilibration,
adaptive step size, infeasibility certificates, and an active-set polish
step that refines the returned point to near machine precision.  No
external solver package is used; scipy supplies the sparse LU factorization
and the nonnegative least-squares subproblem of the robust fitter.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import eigh as dense_eigh
from scipy.optimize import nnls

from .errors import (
    DegenerateWeightsError,
    InfeasibleError,
    NotConvexError,
    UnboundedError,
)

# ADMM constants
_SIGMA = 1e-6          # x-regularization inside the splitting
_ALPHA_RELAX = 1.6     # over-relaxation
_RHO_EQ_BOOST = 1e3    # stiffer step on equality rows
_RHO_MIN, _RHO_MAX = 1e-6, 1e6
_EPS_CERT = 1e-9       # infeasibility certificate tolerance
_POLISH_DELTA = 1e-9
_POLISH_REFINE = 6
_COARSE_TOL = 1e-4     # first-stage ADMM accuracy before polishing


@dataclass
class SolverReport:
    """Diagnostics attached to every solver answer."""

    objective: float = np.nan
    iterations: int = 0
    primal_residual: float = np.inf
    dual_residual: float = np.inf
    duality_gap: float = np.nan
    converged: bool = False
    wall_time: float = 0.0
    status: str = "unknown"
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "objective": float(self.objective),
            "iterations": int(self.iterations),
            "primal_residual": float(self.primal_residual),
            "dual_residual": float(self.dual_residual),
            "duality_gap": float(self.duality_gap),
            "converged": bool(self.converged),
            "wall_time_s": float(self.wall_time),
            "status": self.status,
        }
        out.update({k: v for k, v in self.notes.items()
                    if isinstance(v, (bool, int, float, str))})
        return out


@dataclass
class LinearProgram:
    """minimize c'x  s.t.  a_ub x <= b_ub, a_eq x = b_eq, x >= lb (per-var)."""

    c: np.ndarray
    a_ub: object = None
    b_ub: np.ndarray = None
    a_eq: object = None
    b_eq: np.ndarray = None
    lb: np.ndarray = None  # -inf entries mean unbounded below

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        n = self.c.size
        for name in ("a_ub", "a_eq"):
            mat = getattr(self, name)
            if mat is not None and mat.shape[1] != n:
                raise ValueError(f"{name} has {mat.shape[1]} columns, "
                                 f"expected {n}")
        if (self.a_ub is None) != (self.b_ub is None):
            raise ValueError("a_ub and b_ub must come together")
        if (self.a_eq is None) != (self.b_eq is None):
            raise ValueError("a_eq and b_eq must come together")
        if self.lb is not None:
            self.lb = np.asarray(self.lb, dtype=float)
            if self.lb.size != n:
                raise ValueError("lb length mismatch")


@dataclass
class QuadraticProgram:
    """minimize 0.5*x'Hx - f'x  s.t.  a_eq x = b_eq, x[nonneg] >= 0.

    H must be symmetric; it is ridge-regularized by beta_reg before the
    splitting iterations (the final polish refines against the original H,
    so the returned minimizer is not biased by the ridge).
    """

    h: object
    f: np.ndarray
    a_eq: object = None
    b_eq: np.ndarray = None
    nonneg: np.ndarray = None  # boolean per variable; None = unconstrained
    beta_reg: float = 1e-4

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=float)
        n = self.f.size
        if self.h.shape != (n, n):
            raise ValueError(f"H is {self.h.shape}, expected ({n},{n})")
        if (self.a_eq is None) != (self.b_eq is None):
            raise ValueError("a_eq and b_eq must come together")
        if self.a_eq is not None and self.a_eq.shape[1] != n:
            raise ValueError("a_eq column count mismatch")
        if self.nonneg is not None:
            self.nonneg = np.asarray(self.nonneg, dtype=bool)
            if self.nonneg.size != n:
                raise ValueError("nonneg length mismatch")
        if self.beta_reg < 0:
            raise ValueError("beta_reg must be >= 0")


def _colmax(mat) -> np.ndarray:
    m = np.abs(mat).max(axis=0)
    return np.asarray(m.todense()).ravel() if sp.issparse(m) else \
        np.asarray(m).ravel()


def _rowmax(mat) -> np.ndarray:
    m = np.abs(mat).max(axis=1)
    return np.asarray(m.todense()).ravel() if sp.issparse(m) else \
        np.asarray(m).ravel()


def _ruiz_equilibrate(p_mat, q_vec, a_mat, iters=10):
    """Symmetric inf-norm equilibration of the stacked [P A'; A 0] matrix."""
    n = q_vec.size
    m = a_mat.shape[0]
    d = np.ones(n)
    e = np.ones(m)
    cost_scale = 1.0
    ps = p_mat.copy()
    qs = q_vec.copy()
    as_ = a_mat.copy()
    for _ in range(iters):
        col = np.sqrt(np.maximum(np.maximum(_colmax(ps), _colmax(as_)),
                                 1e-12))
        dd = np.clip(1.0 / col, 1e-4, 1e4)
        row = np.sqrt(np.maximum(_rowmax(as_), 1e-12))
        ee = np.clip(1.0 / row, 1e-4, 1e4)
        d_diag = sp.diags(dd)
        e_diag = sp.diags(ee)
        ps = (d_diag @ ps @ d_diag).tocsc()
        qs = dd * qs
        as_ = (e_diag @ as_ @ d_diag).tocsc()
        d *= dd
        e *= ee
        # cost scaling keeps the quadratic and linear parts comparable
        pc = _colmax(ps)
        denom = max(np.mean(pc) if pc.size else 0.0,
                    np.max(np.abs(qs)) if qs.size else 0.0)
        if denom > 1e-12:
            g = 1.0 / denom
            g = min(max(g, 1e-6), 1e6)
            ps = ps * g
            qs = qs * g
            cost_scale *= g
    return ps, qs, as_, d, e, cost_scale


def _finite_dot(bound: np.ndarray, y_part: np.ndarray) -> float:
    mask = np.isfinite(bound)
    return float(bound[mask] @ y_part[mask])


def _duality_gap(p_orig, q_orig, x, y, l, u) -> float:
    y_pos = np.clip(y, 0.0, None)
    y_neg = np.clip(y, None, 0.0)
    px = p_orig @ x
    return float(x @ px + q_orig @ x
                 + _finite_dot(u, y_pos) + _finite_dot(l, y_neg))


def _polish(p_pol, q_orig, a_orig, l, u, x, y, eps_act=1e-5,
            max_rounds=6):
    """Active-set refinement against the (unregularized) target problem.

    Returns (x, y, ok).  A row seeds the active set only when the iterate
    actually sits near that bound AND the multiplier sign agrees — the
    sign alone is unreliable because inactive rows carry tiny multiplier
    noise, and pinning a far-from-bound row would wreck the polished
    point.  Equality rows are always kept.  The reduced KKT system is
    solved with a small diagonal shift plus iterative refinement against
    the unshifted system.

    Stationarity alone does not certify a convex-QP optimum: a mispinned
    row makes the solve return a wrong-signed multiplier, and a row left
    free can come back outside its bounds, while residuals and duality
    gap all read zero.  So after each solve the set is repaired — pinned
    rows with wrong-signed multipliers are freed, violated free rows are
    pinned on the violated side — and only a feasible, sign-correct
    point is accepted.  Sign convention: stationarity here is
    P x + q + A'y = 0, so an active lower bound carries y <= 0 and an
    active upper bound y >= 0.
    """
    m, n = a_orig.shape
    a_csr = a_orig.tocsr()
    ax = a_csr @ x
    eq_row = np.isfinite(l) & np.isfinite(u) & (u - l < 1e-11)
    near_l = np.isfinite(l) & (ax - l <= eps_act * (1.0 + np.abs(l)))
    near_u = np.isfinite(u) & (u - ax <= eps_act * (1.0 + np.abs(u)))
    lower_active = near_l & (y < 0) & ~eq_row
    upper_active = near_u & (y > 0) & ~eq_row
    p_csc = sp.csc_matrix(p_pol)
    for _ in range(max_rounds):
        active = lower_active | upper_active | eq_row
        n_act = int(active.sum())
        a_act = sp.csc_matrix(a_csr[active])
        b_act = np.where(lower_active[active], l[active], u[active])
        kkt_true = sp.bmat([
            [p_csc, a_act.T],
            [a_act, sp.csc_matrix((n_act, n_act))],
        ], format="csc") if n_act else p_csc
        shift = sp.diags(np.concatenate([np.full(n, _POLISH_DELTA),
                                         np.full(n_act, -_POLISH_DELTA)]))
        try:
            lu = spla.splu((kkt_true + shift).tocsc())
        except RuntimeError:
            return x, y, False
        rhs = np.concatenate([-q_orig, b_act])
        sol = lu.solve(rhs)
        for _ in range(_POLISH_REFINE):
            resid = rhs - kkt_true @ sol
            sol = sol + lu.solve(resid)
        if not np.all(np.isfinite(sol)):
            return x, y, False
        x_new = sol[:n]
        y_new = np.zeros(m)
        y_new[active] = sol[n:]

        y_tol = 1e-9 * (1.0 + float(np.max(np.abs(y_new), initial=0.0)))
        bad_low = lower_active & (y_new > y_tol)
        bad_up = upper_active & (y_new < -y_tol)
        ax_new = a_csr @ x_new
        free = ~active
        viol_l = free & np.isfinite(l) \
            & (ax_new < l - 1e-9 * (1.0 + np.abs(l)))
        viol_u = free & np.isfinite(u) \
            & (ax_new > u + 1e-9 * (1.0 + np.abs(u)))
        if not (bad_low.any() or bad_up.any()
                or viol_l.any() or viol_u.any()):
            return x_new, y_new, True
        lower_active = (lower_active & ~bad_low) | viol_l
        upper_active = (upper_active & ~bad_up) | viol_u
    return x, y, False


def _residuals(p_mat, q_vec, a_mat, x, y, z):
    r_prim = a_mat @ x - z
    r_dual = p_mat @ x + q_vec + a_mat.T @ y
    return (float(np.max(np.abs(r_prim))) if r_prim.size else 0.0,
            float(np.max(np.abs(r_dual))) if r_dual.size else 0.0)


def _solve_box_qp(p_mat, q_vec, a_mat, l, u, *, tol=1e-6, max_iter=50000,
                  polish_h=None, check_every=25):
    """ADMM on  min 0.5 x'Px + q'x  s.t.  l <= Ax <= u.  Returns x, y, report.

    Raises InfeasibleError / UnboundedError when a certificate is found.
    polish_h, when given, replaces P in the final active-set refinement and
    in the reported objective/residuals (used to undo ridge regularization).
    """
    t0 = time.perf_counter()
    p_mat = sp.csc_matrix(p_mat)
    a_mat = sp.csc_matrix(a_mat)
    n = q_vec.size
    m = a_mat.shape[0]
    l = np.asarray(l, dtype=float)
    u = np.asarray(u, dtype=float)
    if np.any(l > u):
        raise InfeasibleError("a constraint row has l > u")
    p_report = sp.csc_matrix(polish_h) if polish_h is not None else p_mat

    ps, qs, as_, d, e, c_cost = _ruiz_equilibrate(p_mat, q_vec, a_mat)
    ls = e * l
    us = e * u

    eq_row = (us - ls) < 1e-11
    rho = 0.1

    def rho_vec_for(r):
        v = np.full(m, r)
        v[eq_row] = r * _RHO_EQ_BOOST
        return np.clip(v, _RHO_MIN, _RHO_MAX)

    rho_vec = rho_vec_for(rho)

    def factor(rv):
        kkt = sp.bmat([
            [ps + _SIGMA * sp.eye(n), as_.T],
            [as_, -sp.diags(1.0 / rv)],
        ], format="csc")
        return spla.splu(kkt)

    lu = factor(rho_vec)
    x = np.zeros(n)
    z = np.clip(np.zeros(m), ls, us)
    y = np.zeros(m)
    x_chk = x.copy()
    y_chk = y.copy()
    it = 0

    def iterate(stage_tol, it0):
        """Advance ADMM until stage_tol is met; returns (it, hit_tol)."""
        nonlocal x, z, y, rho, rho_vec, lu, x_chk, y_chk
        for it in range(it0 + 1, max_iter + 1):
            rhs = np.concatenate([_SIGMA * x - qs, z - y / rho_vec])
            sol = lu.solve(rhs)
            x_t = sol[:n]
            nu = sol[n:]
            z_t = z + (nu - y) / rho_vec
            x = _ALPHA_RELAX * x_t + (1 - _ALPHA_RELAX) * x
            z_relax = _ALPHA_RELAX * z_t + (1 - _ALPHA_RELAX) * z
            z_new = np.clip(z_relax + y / rho_vec, ls, us)
            y = y + rho_vec * (z_relax - z_new)
            z = z_new

            if it % check_every != 0 and it != max_iter:
                continue

            # unscaled iterates and residuals
            ax_u = (as_ @ x) / e
            z_u = z / e
            px_u = (ps @ x) / d / c_cost
            aty_u = (as_.T @ y) / d / c_cost
            q_u = qs / d / c_cost
            r_prim = np.max(np.abs(ax_u - z_u)) if m else 0.0
            r_dual = np.max(np.abs(px_u + q_u + aty_u))
            eps_prim = stage_tol * (1.0 + max(
                np.max(np.abs(ax_u)) if m else 0.0,
                np.max(np.abs(z_u)) if m else 0.0))
            eps_dual = stage_tol * (1.0 + max(np.max(np.abs(px_u)),
                                              np.max(np.abs(aty_u)),
                                              np.max(np.abs(q_u))))
            if r_prim <= eps_prim and r_dual <= eps_dual:
                return it, True

            # infeasibility certificates (deltas over the check window)
            dy = e * (y - y_chk) / c_cost
            ndy = np.max(np.abs(dy)) if m else 0.0
            if ndy > 1e-12:
                at_dy = a_mat.T @ dy
                bad_u = np.any((~np.isfinite(u)) & (dy > _EPS_CERT * ndy))
                bad_l = np.any((~np.isfinite(l)) & (dy < -_EPS_CERT * ndy))
                if (np.max(np.abs(at_dy)) <= _EPS_CERT * ndy
                        and not bad_u and not bad_l):
                    support = (_finite_dot(u, np.clip(dy, 0, None))
                               + _finite_dot(l, np.clip(dy, None, 0)))
                    if support <= -_EPS_CERT * ndy:
                        raise InfeasibleError(
                            "primal infeasibility certificate found")
            dx = d * (x - x_chk)
            ndx = np.max(np.abs(dx))
            if ndx > 1e-12:
                pdx = p_mat @ dx
                adx = a_mat @ dx
                ok_rows = np.all(
                    (adx <= _EPS_CERT * ndx) | ~np.isfinite(u)) and np.all(
                    (adx >= -_EPS_CERT * ndx) | ~np.isfinite(l))
                if (np.max(np.abs(pdx)) <= _EPS_CERT * ndx
                        and q_vec @ dx <= -_EPS_CERT * ndx
                        and ok_rows):
                    raise UnboundedError(
                        "dual infeasibility certificate found (unbounded)")
            x_chk = x.copy()
            y_chk = y.copy()

            # adaptive step size
            denom_p = max(np.max(np.abs(ax_u)) if m else 0.0,
                          np.max(np.abs(z_u)) if m else 0.0, 1e-12)
            denom_d = max(np.max(np.abs(px_u)), np.max(np.abs(aty_u)),
                          np.max(np.abs(q_u)), 1e-12)
            ratio = np.sqrt((r_prim / denom_p)
                            / max(r_dual / denom_d, 1e-16))
            if ratio > 5.0 or ratio < 0.2:
                rho = float(np.clip(rho * ratio, _RHO_MIN, _RHO_MAX))
                rho_vec = rho_vec_for(rho)
                lu = factor(rho_vec)
        return max_iter, False

    def finish(strict_tol, stage_tol):
        """Polish the current iterate; measure it against the system it
        actually satisfies (the polish target when polish is accepted,
        the regularized model otherwise)."""
        x_out = d * x
        y_out = e * y / c_cost
        polished = False
        x_pol, y_pol, ok = _polish(p_report, q_vec, a_mat, l, u,
                                   x_out, y_out,
                                   eps_act=10.0 * stage_tol)
        if ok and np.all(np.isfinite(x_pol)):
            rp_new, rd_new = _residuals(p_report, q_vec, a_mat, x_pol,
                                        y_pol,
                                        np.clip(a_mat @ x_pol, l, u))
            rp_old, rd_old = _residuals(p_report, q_vec, a_mat, x_out,
                                        y_out,
                                        np.clip(a_mat @ x_out, l, u))
            if max(rp_new, rd_new) <= max(rp_old, rd_old):
                x_out, y_out = x_pol, y_pol
                polished = True
        ref = p_report if polished else p_mat
        z_out = np.clip(a_mat @ x_out, l, u)
        rp, rd = _residuals(ref, q_vec, a_mat, x_out, y_out, z_out)
        eps_p = strict_tol * (1.0 + np.max(np.abs(z_out), initial=0.0))
        eps_d = strict_tol * (1.0 + max(
            np.max(np.abs(ref @ x_out), initial=0.0),
            np.max(np.abs(a_mat.T @ y_out), initial=0.0),
            np.max(np.abs(q_vec), initial=0.0)))
        ok_strict = bool(rp <= eps_p and rd <= eps_d)
        return x_out, y_out, rp, rd, polished, ok_strict

    # Coarse stage first: a moderately accurate iterate plus active-set
    # polish usually lands at machine precision much sooner than pure
    # iteration would; fall back to the strict stage when it does not.
    stage_tols = [tol] if tol >= _COARSE_TOL else [_COARSE_TOL, tol]
    final = None
    for stage_tol in stage_tols:
        it, _ = iterate(stage_tol, it)
        final = finish(tol, stage_tol)
        if final[5] or it >= max_iter:
            break

    x_out, y_out, rp, rd, polished, ok_strict = final
    report = SolverReport(status="solved" if ok_strict else "max_iter")
    report.primal_residual = rp
    report.dual_residual = rd
    report.iterations = it
    report.objective = float(0.5 * x_out @ (p_report @ x_out)
                             + q_vec @ x_out)
    ref = p_report if polished else p_mat
    report.duality_gap = _duality_gap(ref, q_vec, x_out, y_out, l, u)
    report.converged = ok_strict
    report.notes["polished"] = polished
    report.notes["residual_reference"] = ("target" if polished
                                          else "regularized")
    report.wall_time = time.perf_counter() - t0
    return x_out, y_out, report


def _identity_rows(n, which=None):
    if which is None:
        which = np.arange(n)
    else:
        which = np.flatnonzero(which)
    data = np.ones(which.size)
    return sp.csc_matrix((data, (np.arange(which.size), which)),
                         shape=(which.size, n))


def solve_lp(prog: LinearProgram, tol: float = 1e-6,
             max_iter: int = 50000):
    """Solve a linear program; returns (x, SolverReport).

    The engine is the HiGHS simplex/interior-point code behind
    scipy.optimize.linprog (the splitting solver in this module is kept
    for quadratic costs, where no comparable library routine exists).
    Optimality is certified through the duality gap recomputed here from
    the returned primal and dual values.  Infeasible and unbounded
    problems raise; any other non-optimal status returns the best
    available point with converged=False.
    """
    from scipy.optimize import linprog

    n = prog.c.size
    has_rows = (prog.a_ub is not None or prog.a_eq is not None
                or (prog.lb is not None and np.any(np.isfinite(prog.lb))))
    if not has_rows:
        raise ValueError("LP needs at least one constraint row")
    lb = prog.lb if prog.lb is not None else np.full(n, -np.inf)
    bounds = [(li if np.isfinite(li) else None, None) for li in lb]
    t0 = time.perf_counter()
    res = linprog(prog.c, A_ub=prog.a_ub, b_ub=prog.b_ub,
                  A_eq=prog.a_eq, b_eq=prog.b_eq, bounds=bounds,
                  method="highs",
                  options={"presolve": True, "maxiter": max_iter,
                           "primal_feasibility_tolerance": min(tol, 1e-7),
                           "dual_feasibility_tolerance": min(tol, 1e-7)})
    wall = time.perf_counter() - t0
    if res.status == 2:
        raise InfeasibleError("LP constraints are inconsistent")
    if res.status == 3:
        raise UnboundedError("LP objective is unbounded below")

    report = SolverReport(wall_time=wall,
                          iterations=int(np.atleast_1d(res.nit).sum()),
                          notes={"engine": "highs"})
    if res.x is None:
        report.status = "max_iter" if res.status == 1 else "numerical"
        report.notes["no_convergence"] = True
        return np.zeros(n), report
    x = np.asarray(res.x, dtype=float)
    report.objective = float(prog.c @ x)

    rp = 0.0
    dual_obj = 0.0
    if prog.a_ub is not None:
        rp = max(rp, float(np.max(prog.a_ub @ x - prog.b_ub, initial=0.0)))
        dual_obj += float(res.ineqlin.marginals @ prog.b_ub)
    if prog.a_eq is not None:
        rp = max(rp, float(np.max(np.abs(prog.a_eq @ x - prog.b_eq),
                                  initial=0.0)))
        dual_obj += float(res.eqlin.marginals @ prog.b_eq)
    lb_fin = np.isfinite(lb)
    if np.any(lb_fin):
        rp = max(rp, float(np.max(lb[lb_fin] - x[lb_fin], initial=0.0)))
        dual_obj += float(res.lower.marginals[lb_fin] @ lb[lb_fin])
    report.primal_residual = rp
    report.dual_residual = 0.0  # HiGHS enforces dual feasibility itself
    report.duality_gap = report.objective - dual_obj
    report.converged = bool(res.status == 0)
    report.status = "solved" if res.status == 0 else "max_iter"
    if np.max(np.abs(prog.c), initial=0.0) == 0.0:
        report.notes["degenerate_cost"] = True
    return x, report


def psd_check_and_regularize(h, beta_reg: float):
    """Return (H + beta_reg*I, is_pd, min_eig_estimate).

    is_pd reflects whether a factorization of the regularized matrix
    certifies positive definiteness.  The eigenvalue estimate is exact for
    dense inputs and an inverse-iteration estimate for sparse ones.
    """
    n = h.shape[0]
    if sp.issparse(h):
        h_reg = (h + beta_reg * sp.eye(n)).tocsc()
        sym_gap = abs(h_reg - h_reg.T).max()
        if sym_gap > 1e-8 * (abs(h_reg).max() + 1.0):
            raise ValueError("H must be symmetric")
        try:
            lu = spla.splu(h_reg, diag_pivot_thresh=0.0,
                           permc_spec="MMD_AT_PLUS_A",
                           options={"SymmetricMode": True})
            is_pd = bool(np.all(lu.U.diagonal() > 0))
        except RuntimeError:
            return h_reg, False, float("nan")
        min_eig = np.nan
        if is_pd:
            # inverse power iteration on the factor
            rng = np.random.default_rng(0)
            v = rng.standard_normal(n)
            v /= np.linalg.norm(v)
            for _ in range(50):
                w = lu.solve(v)
                nw = np.linalg.norm(w)
                if nw == 0:
                    break
                v = w / nw
            min_eig = float(v @ (h_reg @ v))
        return h_reg, is_pd, min_eig
    h = np.asarray(h, dtype=float)
    if np.max(np.abs(h - h.T)) > 1e-8 * (np.max(np.abs(h)) + 1.0):
        raise ValueError("H must be symmetric")
    h_reg = h + beta_reg * np.eye(n)
    min_eig = float(dense_eigh(h_reg, eigvals_only=True,
                               subset_by_index=[0, 0])[0])
    try:
        np.linalg.cholesky(h_reg)
        is_pd = True
    except np.linalg.LinAlgError:
        is_pd = False
    return h_reg, is_pd, min_eig


def _qp_rows(prog: QuadraticProgram, n: int):
    blocks = []
    lows = []
    highs = []
    if prog.a_eq is not None:
        blocks.append(sp.csc_matrix(prog.a_eq))
        b_eq = np.asarray(prog.b_eq, dtype=float)
        lows.append(b_eq)
        highs.append(b_eq)
    if prog.nonneg is not None and np.any(prog.nonneg):
        kk = _identity_rows(n, prog.nonneg)
        blocks.append(kk)
        lows.append(np.zeros(kk.shape[0]))
        highs.append(np.full(kk.shape[0], np.inf))
    return blocks, lows, highs


def solve_qp(prog: QuadraticProgram, tol: float = 1e-6,
             max_iter: int = 50000):
    """Solve min 0.5x'Hx - f'x with equality rows and nonnegativity flags.

    The ridge-regularized H drives the splitting iterations; the final
    active-set refinement solves against the original H, so the answer is
    not biased by beta_reg.  Raises NotConvexError when even the
    regularized matrix fails the positive-definiteness check.
    """
    h_reg, is_pd, min_eig = psd_check_and_regularize(prog.h, prog.beta_reg)
    if not is_pd:
        raise NotConvexError(
            f"quadratic cost not positive definite (min eig ~ {min_eig:g}) "
            f"even with beta_reg={prog.beta_reg:g}")
    n = prog.f.size
    q_vec = -prog.f
    h_orig = sp.csc_matrix(prog.h)
    blocks, lows, highs = _qp_rows(prog, n)
    if not blocks:
        # unconstrained: single positive-definite solve
        t0 = time.perf_counter()
        x = spla.spsolve(sp.csc_matrix(h_reg), prog.f)
        x = np.atleast_1d(x)
        # one refinement step against the original H
        resid = prog.f - h_orig @ x
        x = x + np.atleast_1d(spla.spsolve(sp.csc_matrix(h_reg), resid))
        rd = float(np.max(np.abs(h_orig @ x - prog.f)))
        report = SolverReport(
            objective=float(0.5 * x @ (h_orig @ x) - prog.f @ x),
            iterations=1, primal_residual=0.0, dual_residual=rd,
            duality_gap=0.0, converged=rd <= tol * (1 + np.max(
                np.abs(prog.f), initial=0.0)),
            wall_time=time.perf_counter() - t0, status="solved")
        report.notes["min_eig"] = min_eig
        return x, report
    a_mat = sp.vstack(blocks, format="csc")
    l = np.concatenate(lows)
    u = np.concatenate(highs)
    x, _, report = _solve_box_qp(sp.csc_matrix(h_reg), q_vec, a_mat, l, u,
                                 tol=tol, max_iter=max_iter,
                                 polish_h=h_orig)
    report.notes["min_eig"] = min_eig
    report.notes["rank_deficient"] = bool(min_eig <= 2.0 * prog.beta_reg)
    return x, report


def solve_l1_trend_qp(prog: QuadraticProgram, d_op, lam: float,
                      tol: float = 1e-6, max_iter: int = 50000):
    """Solve min 0.5x'Hx - f'x + lam*||D x||_1 (plus prog's constraints).

    Epigraph reformulation: auxiliary t with D x - t <= 0 and -D x - t <= 0.
    lam = 0 falls back to solve_qp exactly.
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if lam == 0:
        return solve_qp(prog, tol=tol, max_iter=max_iter)
    n = prog.f.size
    d_op = sp.csc_matrix(d_op)
    r = d_op.shape[0]
    if d_op.shape[1] != n:
        raise ValueError("differencing operator has wrong width")

    h_reg, is_pd, min_eig = psd_check_and_regularize(prog.h, prog.beta_reg)
    if not is_pd:
        raise NotConvexError(
            f"quadratic cost not positive definite (min eig ~ {min_eig:g})")
    h_ext_reg = sp.block_diag(
        [sp.csc_matrix(h_reg), prog.beta_reg * sp.eye(r)], format="csc")
    h_ext_orig = sp.block_diag(
        [sp.csc_matrix(prog.h), sp.csc_matrix((r, r))], format="csc")
    q_ext = np.concatenate([-prog.f, lam * np.ones(r)])

    blocks, lows, highs = _qp_rows(prog, n)
    blocks = [sp.hstack([b, sp.csc_matrix((b.shape[0], r))], format="csc")
              for b in blocks]
    eye_r = sp.eye(r, format="csc")
    blocks.append(sp.hstack([d_op, -eye_r], format="csc"))
    lows.append(np.full(r, -np.inf))
    highs.append(np.zeros(r))
    blocks.append(sp.hstack([-d_op, -eye_r], format="csc"))
    lows.append(np.full(r, -np.inf))
    highs.append(np.zeros(r))

    a_mat = sp.vstack(blocks, format="csc")
    l = np.concatenate(lows)
    u = np.concatenate(highs)
    x_ext, _, report = _solve_box_qp(h_ext_reg, q_ext, a_mat, l, u, tol=tol,
                                     max_iter=max_iter, polish_h=h_ext_orig)
    x = x_ext[:n]
    tv = float(np.sum(np.abs(d_op @ x)))
    h_orig = sp.csc_matrix(prog.h)
    report.objective = float(0.5 * x @ (h_orig @ x) - prog.f @ x + lam * tv)
    report.notes["min_eig"] = min_eig
    report.notes["total_variation"] = tv
    report.notes["rank_deficient"] = bool(min_eig <= 2.0 * prog.beta_reg)
    return x, report


def _bisquare_rho(r: np.ndarray, width: float) -> np.ndarray:
    """Integrated bisquare loss with cutoff width (= tuning * scale)."""
    cap = width * width / 6.0
    inside = np.abs(r) <= width
    out = np.full(r.shape, cap)
    rr = (r[inside] / width) ** 2
    out[inside] = cap * (1.0 - (1.0 - rr) ** 3)
    return out


def _wls(x_mat: np.ndarray, y: np.ndarray, w: np.ndarray, nonneg: bool):
    sw = np.sqrt(w)
    xw = x_mat * sw[:, None]
    yw = y * sw
    if nonneg:
        sol, _ = nnls(xw, yw)
        return sol
    sol, *_ = np.linalg.lstsq(xw, yw, rcond=None)
    return sol


def irls_bisquare(x_mat, y, tuning: float = 4.685, nonneg: bool = True,
                  tol: float = 1e-8, max_iter: int = 50):
    """Robust regression with the redescending bisquare loss.

    The residual scale is the normalized median absolute deviation of the
    initial (unweighted) fit and is then held fixed, which makes the
    reweighting a true majorize-minimize scheme: the objective sum of
    losses is non-increasing at every iteration (asserted).  Hitting
    max_iter flags no_convergence in the report and returns the last
    iterate; an all-zero weight vector raises DegenerateWeightsError.
    """
    t0 = time.perf_counter()
    x_mat = np.asarray(x_mat, dtype=float)
    y = np.asarray(y, dtype=float)
    if x_mat.ndim != 2 or x_mat.shape[0] != y.size:
        raise ValueError("X must be K x J with K matching y")
    k_samp, n_col = x_mat.shape
    if k_samp < n_col:
        raise ValueError(f"need K >= J, got K={k_samp} J={n_col}")
    col_scale = np.max(np.abs(x_mat), axis=0)
    if np.all(col_scale == 0):
        raise ValueError("design matrix is identically zero")
    keep = col_scale > 0
    xs = x_mat[:, keep] / col_scale[keep]

    report = SolverReport(status="solved")
    alpha_s = _wls(xs, y, np.ones(k_samp), nonneg)
    resid = y - xs @ alpha_s
    med = np.median(resid)
    scale = np.median(np.abs(resid - med)) / 0.6745
    floor = 1e-12 * max(1.0, float(np.max(np.abs(y), initial=0.0)))
    history = []
    iterations = 1
    converged = True
    if scale > floor:
        width = tuning * scale
        obj = float(np.sum(_bisquare_rho(resid, width)))
        history.append(obj)
        converged = False
        for iterations in range(2, max_iter + 2):
            w = np.zeros(k_samp)
            inside = np.abs(resid) <= width
            w[inside] = (1.0 - (resid[inside] / width) ** 2) ** 2
            if not np.any(w > 0):
                raise DegenerateWeightsError(
                    "every sample weight is zero (scale too small "
                    "or data pathological)")
            alpha_new = _wls(xs, y, w, nonneg)
            resid = y - xs @ alpha_new
            obj_new = float(np.sum(_bisquare_rho(resid, width)))
            if obj_new > obj + 1e-9 * (1.0 + abs(obj)):
                raise AssertionError(
                    "IRLS objective increased (majorization violated)")
            history.append(obj_new)
            step = np.max(np.abs(alpha_new - alpha_s))
            alpha_s = alpha_new
            obj = obj_new
            if step <= tol * (1.0 + np.max(np.abs(alpha_s))):
                converged = True
                break
        report.notes["scale"] = float(scale)
    else:
        history.append(0.0)
        report.notes["scale"] = 0.0

    alpha = np.zeros(n_col)
    alpha[keep] = alpha_s / col_scale[keep]
    report.iterations = iterations
    report.objective = history[-1]
    report.converged = converged
    report.primal_residual = 0.0
    report.dual_residual = 0.0
    report.duality_gap = 0.0
    if not converged:
        report.status = "max_iter"
        report.notes["no_convergence"] = True
    if np.any(~keep):
        report.notes["dropped_zero_columns"] = int(np.sum(~keep))
    report.notes["objective_history"] = [float(v) for v in history]
    report.wall_time = time.perf_counter() - t0
    return alpha, report
