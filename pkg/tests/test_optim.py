import numpy as np
import pytest
import scipy.sparse as sp
from scipy.optimize import nnls

from pvdisagg.errors import (DegenerateWeightsError, InfeasibleError,
                             NotConvexError, UnboundedError)
from pvdisagg.optim import (LinearProgram, QuadraticProgram, irls_bisquare,
                            psd_check_and_regularize, solve_l1_trend_qp,
                            solve_lp, solve_qp)


# --- linear programs -------------------------------------------------------

def test_lp_scalar_bound():
    prog = LinearProgram(c=np.array([1.0]), lb=np.array([3.0]))
    x, rep = solve_lp(prog)
    assert abs(x[0] - 3.0) < 1e-9
    assert rep.converged
    assert rep.primal_residual <= 1e-9


def test_lp_l1_fit_ignores_gross_outlier():
    """L1 regression of y = 2u with one wild point stays on slope 2.

    Oracle: scan a dense slope grid and check nothing beats the LP's
    objective; the known best slope on the clean geometry is 2.
    """
    rng = np.random.default_rng(1)
    u = rng.uniform(0.5, 2.0, 40)
    y = 2.0 * u
    y[7] = 50.0  # gross corruption
    # variables: slope s (>= 0), residual bounds t_k  -> min sum t
    n = 1 + u.size
    c = np.concatenate([[0.0], np.ones(u.size)])
    rows = []
    rhs = []
    for k in range(u.size):
        row = np.zeros(n)
        row[0] = u[k]
        row[1 + k] = -1.0
        rows.append(row.copy())     # s*u - t <= y
        rhs.append(y[k])
        row = np.zeros(n)
        row[0] = -u[k]
        row[1 + k] = -1.0
        rows.append(row)            # -s*u - t <= -y
        rhs.append(-y[k])
    prog = LinearProgram(c, a_ub=np.array(rows), b_ub=np.array(rhs),
                         lb=np.zeros(n))
    x, rep = solve_lp(prog)
    slope = x[0]
    assert abs(slope - 2.0) < 1e-6
    # grid oracle: the achieved objective is the best over all slopes
    def l1_cost(s):
        return float(np.sum(np.abs(s * u - y)))
    grid = np.linspace(0.0, 5.0, 2001)
    assert l1_cost(slope) <= min(l1_cost(s) for s in grid) + 1e-9


def test_lp_zero_cost_flagged():
    prog = LinearProgram(c=np.zeros(2), lb=np.array([0.0, 0.0]))
    x, rep = solve_lp(prog)
    assert rep.notes.get("degenerate_cost") is True
    assert rep.converged


def test_lp_iteration_cap_flags_instead_of_raising():
    rng = np.random.default_rng(0)
    m, n = 40, 25
    a = rng.normal(size=(m, n))
    b = rng.uniform(1, 2, m)
    c = rng.uniform(0.1, 1, n)
    prog = LinearProgram(c, a_ub=a, b_ub=b, lb=np.full(n, -10.0))
    x, rep = solve_lp(prog, max_iter=1)
    assert not rep.converged
    assert rep.status == "max_iter"
    assert rep.notes.get("no_convergence") is True
    assert np.all(np.isfinite(x))


def test_lp_infeasible_raises():
    # x <= -1 and x >= 0 cannot hold together
    prog = LinearProgram(c=np.array([1.0]),
                         a_ub=np.array([[1.0]]), b_ub=np.array([-1.0]),
                         lb=np.array([0.0]))
    with pytest.raises(InfeasibleError):
        solve_lp(prog)


def test_lp_unbounded_raises():
    prog = LinearProgram(c=np.array([-1.0]),
                         a_ub=np.array([[-1.0]]), b_ub=np.array([0.0]))
    with pytest.raises(UnboundedError):
        solve_lp(prog)


def test_lp_needs_constraints():
    with pytest.raises(ValueError):
        solve_lp(LinearProgram(c=np.array([1.0])))


def test_lp_duality_gap_certificate():
    rng = np.random.default_rng(2)
    for trial in range(10):
        m, n = 30, 12
        a = rng.normal(size=(m, n))
        b = rng.uniform(0.5, 2.0, m)
        c = rng.uniform(-1.0, 1.0, n)
        prog = LinearProgram(c, a_ub=a, b_ub=b, lb=np.full(n, -5.0))
        x, rep = solve_lp(prog)
        assert rep.converged
        assert abs(rep.duality_gap) <= 1e-6 * (1.0 + abs(rep.objective))


# --- quadratic programs ----------------------------------------------------

def _qp_1d(center):
    # (x - center)^2 = 0.5*(2)x^2 - (2 center)x + const
    return QuadraticProgram(h=sp.eye(1) * 2.0,
                            f=np.array([2.0 * center]),
                            nonneg=np.array([True]))


def test_qp_interior_solution():
    x, rep = solve_qp(_qp_1d(3.0))
    assert abs(x[0] - 3.0) <= 1e-6
    assert rep.converged


def test_qp_active_bound_solution():
    x, rep = solve_qp(_qp_1d(-3.0))
    assert abs(x[0]) <= 1e-8
    assert rep.converged


def test_qp_equality_constrained_matches_kkt_oracle():
    """Random strictly convex 20-var QPs against a dense KKT elimination."""
    rng = np.random.default_rng(3)
    for trial in range(5):
        n, m = 20, 4
        root = rng.normal(size=(n, n))
        h = root @ root.T + n * np.eye(n)
        f = rng.normal(size=n)
        a = rng.normal(size=(m, n))
        b = rng.normal(size=m)
        prog = QuadraticProgram(h=sp.csc_matrix(h), f=f,
                                a_eq=sp.csc_matrix(a), b_eq=b)
        x, rep = solve_qp(prog, tol=1e-8)
        kkt = np.block([[h, a.T], [a, np.zeros((m, m))]])
        sol = np.linalg.solve(kkt, np.concatenate([f, b]))
        assert np.max(np.abs(x - sol[:n])) <= 1e-6
        assert rep.converged


def test_qp_solution_beats_random_feasible_perturbations():
    rng = np.random.default_rng(4)
    n = 8
    root = rng.normal(size=(n, n))
    h = root @ root.T + n * np.eye(n)
    f = rng.normal(size=n)
    prog = QuadraticProgram(h=sp.csc_matrix(h), f=f,
                            nonneg=np.ones(n, dtype=bool))
    x, rep = solve_qp(prog)

    def obj(v):
        return 0.5 * v @ (h @ v) - f @ v

    for _ in range(100):
        v = np.clip(x + rng.normal(scale=0.1, size=n), 0.0, None)
        assert obj(x) <= obj(v) + 1e-9


def test_qp_rejects_indefinite_cost():
    h = np.diag([1.0, -1.0])
    prog = QuadraticProgram(h=sp.csc_matrix(h), f=np.zeros(2),
                            nonneg=np.array([True, True]), beta_reg=1e-4)
    with pytest.raises(NotConvexError):
        solve_qp(prog)


def test_qp_duality_gap_small_on_convergence():
    rng = np.random.default_rng(5)
    n = 12
    root = rng.normal(size=(n, n))
    h = root @ root.T + np.eye(n)
    f = rng.normal(size=n)
    prog = QuadraticProgram(h=sp.csc_matrix(h), f=f,
                            nonneg=np.ones(n, dtype=bool))
    x, rep = solve_qp(prog, tol=1e-8)
    assert rep.converged
    assert abs(rep.duality_gap) <= 1e-6 * (1.0 + abs(rep.objective))


def test_qp_polish_respects_multiplier_signs():
    """Batch check of the projected-gradient fixed point on nonneg QPs.

    The polish step solves a reduced KKT system on a guessed active set; a
    mispinned row used to yield a stationary-but-suboptimal point whose
    primal/dual residuals still read zero.  Guard against that with an
    estimate the solver never sees: at the optimum of min 0.5 x'Hx - f'x
    s.t. x >= 0 (on the flagged coordinates), x must equal the projection
    of x - (Hx - f) onto the feasible set.
    """
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(60):
        n = int(rng.integers(2, 16))
        root = rng.normal(size=(n + 3, n))
        h = root.T @ root + 0.1 * np.eye(n)
        f = rng.normal(scale=2.0, size=n)
        nonneg = rng.random(n) < 0.7
        prog = QuadraticProgram(h=sp.csc_matrix(h), f=f, nonneg=nonneg)
        x, rep = solve_qp(prog, tol=1e-8)
        assert rep.converged
        grad = h @ x - f
        step = x - grad
        proj = np.where(nonneg, np.clip(step, 0.0, None), step)
        gap = np.max(np.abs(x - proj)) / (1.0 + np.max(np.abs(grad)))
        worst = max(worst, gap)
    assert worst <= 1e-6


# --- trend-penalized quadratics --------------------------------------------

def _diff_op(n):
    return sp.diags([np.full(n - 1, -1.0), np.ones(n - 1)], [0, 1],
                    shape=(n - 1, n))


def test_trend_lambda_zero_is_plain_qp():
    rng = np.random.default_rng(6)
    n = 15
    h = sp.eye(n) * 2.0
    f = rng.normal(size=n)
    prog = QuadraticProgram(h=h, f=f)
    x0, _ = solve_qp(prog, tol=1e-9)
    x1, _ = solve_l1_trend_qp(prog, _diff_op(n), lam=0.0, tol=1e-9)
    assert np.array_equal(x0, x1)


def test_trend_large_lambda_flattens():
    """Huge roughness price turns a noisy constant into an exact constant."""
    rng = np.random.default_rng(7)
    n = 40
    y = 5.0 + 0.1 * rng.normal(size=n)
    prog = QuadraticProgram(h=sp.eye(n), f=y)  # 0.5||x||^2 - y'x
    x, rep = solve_l1_trend_qp(prog, _diff_op(n), lam=100.0)
    assert np.max(np.abs(np.diff(x))) <= 1e-8
    assert abs(x.mean() - y.mean()) <= 1e-6


def test_trend_recovers_two_breakpoints():
    n = 50
    y = np.concatenate([np.zeros(17), 4.0 * np.ones(18), 1.0 * np.ones(15)])
    prog = QuadraticProgram(h=sp.eye(n), f=y)
    lam = 0.2
    x, rep = solve_l1_trend_qp(prog, _diff_op(n), lam=lam, tol=1e-9)
    jumps = np.flatnonzero(np.abs(np.diff(x)) > 1e-4)
    assert list(jumps) == [16, 34]

    # oracle: no piecewise-constant candidate with any 2 breakpoints and
    # segment-mean levels does better on the same objective
    def objective(v):
        return float(0.5 * v @ v - y @ v
                     + lam * np.sum(np.abs(np.diff(v))))

    best = np.inf
    for b1 in range(1, n - 1):
        for b2 in range(b1 + 1, n):
            v = np.empty(n)
            v[:b1] = y[:b1].mean()
            v[b1:b2] = y[b1:b2].mean()
            v[b2:] = y[b2:].mean()
            best = min(best, objective(v))
    assert objective(x) <= best + 1e-6


def test_trend_tv_monotone_in_lambda():
    rng = np.random.default_rng(8)
    n = 30
    y = np.cumsum(rng.normal(size=n))
    tv = []
    for lam in (0.0, 0.1, 0.5, 2.0, 10.0):
        prog = QuadraticProgram(h=sp.eye(n), f=y)
        x, _ = solve_l1_trend_qp(prog, _diff_op(n), lam=lam, tol=1e-9)
        tv.append(np.sum(np.abs(np.diff(x))))
    for a, b in zip(tv, tv[1:]):
        assert b <= a + 1e-6


def test_trend_negative_lambda_rejected():
    prog = QuadraticProgram(h=sp.eye(3), f=np.zeros(3))
    with pytest.raises(ValueError):
        solve_l1_trend_qp(prog, _diff_op(3), lam=-1.0)


# --- positive-definiteness gate --------------------------------------------

def test_psd_identity_gains_the_ridge():
    h_reg, is_pd, min_eig = psd_check_and_regularize(np.eye(4), 1e-4)
    assert is_pd
    assert np.array_equal(h_reg, (1.0 + 1e-4) * np.eye(4))
    assert abs(min_eig - (1.0 + 1e-4)) < 1e-12


def test_psd_gram_matrices_pass():
    rng = np.random.default_rng(9)
    for trial in range(20):
        k = int(rng.integers(5, 60))
        j = int(rng.integers(2, 20))
        s = rng.normal(size=(k, j))
        h_reg, is_pd, min_eig = psd_check_and_regularize(s.T @ s, 1e-4)
        assert is_pd
        assert min_eig >= 1e-4 * 0.99


def test_psd_slightly_indefinite_is_rescued():
    """Eigenvalue -1e-6 plus ridge 1e-4 lands near 9.9e-5, and passes."""
    rng = np.random.default_rng(10)
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    h = q @ np.diag([-1e-6, 1.0, 2.0]) @ q.T
    h = 0.5 * (h + h.T)
    h_reg, is_pd, min_eig = psd_check_and_regularize(h, 1e-4)
    assert is_pd
    assert abs(min_eig - 9.9e-5) < 1e-9


def test_psd_sparse_path_matches_dense():
    rng = np.random.default_rng(11)
    s = rng.normal(size=(30, 8))
    h = s.T @ s
    dense = psd_check_and_regularize(h, 1e-4)
    sparse = psd_check_and_regularize(sp.csc_matrix(h), 1e-4)
    assert dense[1] == sparse[1] is True
    assert np.allclose(dense[0], sparse[0].toarray())


def test_psd_rejects_asymmetric():
    h = np.array([[1.0, 2.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        psd_check_and_regularize(h, 1e-4)


# --- robust regression -----------------------------------------------------

def test_irls_exact_data_one_pass():
    rng = np.random.default_rng(12)
    x = rng.uniform(0.0, 1.0, size=(60, 3))
    alpha0 = np.array([1.5, 0.0, 2.0])
    y = x @ alpha0
    alpha, rep = irls_bisquare(x, y)
    assert np.max(np.abs(alpha - alpha0)) <= 1e-8
    assert rep.iterations == 1  # zero residual scale: nothing to reweight
    assert rep.converged


def test_irls_shrugs_off_outliers_where_ols_cannot():
    rng = np.random.default_rng(13)
    k = 200
    x = rng.uniform(0.2, 1.0, size=(k, 2))
    alpha0 = np.array([2.0, 1.0])
    y = x @ alpha0 + 0.01 * rng.normal(size=k)
    bad = rng.choice(k, size=k // 20, replace=False)  # 5% corrupted
    y[bad] += 10.0 * np.abs(y[bad])

    alpha, rep = irls_bisquare(x, y)
    rel = np.linalg.norm(alpha - alpha0) / np.linalg.norm(alpha0)
    assert rel <= 0.05

    ols, *_ = np.linalg.lstsq(x, y, rcond=None)
    rel_ols = np.linalg.norm(ols - alpha0) / np.linalg.norm(alpha0)
    assert rel_ols > 3.0 * rel


def test_irls_huge_tuning_is_nnls():
    rng = np.random.default_rng(14)
    x = rng.uniform(0.0, 1.0, size=(80, 4))
    y = x @ np.array([1.0, 0.0, 3.0, 0.5]) + 0.05 * rng.normal(size=80)
    alpha, _ = irls_bisquare(x, y, tuning=1e9)
    ref, _ = nnls(x, y)
    assert np.max(np.abs(alpha - ref)) <= 1e-8


def test_irls_objective_never_increases():
    rng = np.random.default_rng(15)
    x = rng.uniform(0.0, 1.0, size=(120, 3))
    y = x @ np.array([1.0, 2.0, 0.5]) + 0.1 * rng.standard_t(df=2, size=120)
    alpha, rep = irls_bisquare(x, y)
    hist = rep.notes["objective_history"]
    assert all(b <= a + 1e-9 * (1 + abs(a)) for a, b in zip(hist, hist[1:]))


def test_irls_iteration_cap_flags():
    rng = np.random.default_rng(16)
    x = rng.uniform(0.0, 1.0, size=(100, 2))
    y = x @ np.array([1.0, 2.0]) + rng.standard_t(df=1, size=100)
    alpha, rep = irls_bisquare(x, y, max_iter=1, tol=0.0)
    assert not rep.converged
    assert rep.notes.get("no_convergence") is True
    assert np.all(np.isfinite(alpha))


def test_irls_degenerate_weights_raise():
    x = np.ones((2, 1))
    y = np.array([0.0, 1.0])
    with pytest.raises(DegenerateWeightsError):
        irls_bisquare(x, y, tuning=0.01)


def test_irls_rejects_underdetermined():
    with pytest.raises(ValueError):
        irls_bisquare(np.ones((2, 3)), np.ones(2))
