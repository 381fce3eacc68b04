import numpy as np
import pytest
from hypothesis import given, strategies as st

from cassiclust.errors import ValidationError
from cassiclust.ssc import (MAX_PIXELS, SRSSCProblem, build_affinity, default_lambda,
                            mean_filter_3d, objective, prox_l1_affine, solve_srssc)
from cassiclust.synth import synth_cube

cp = pytest.importorskip("cvxpy")


def window_oracle(c, M, N):
    P = M * N
    cube = c.T.reshape(M, N, P)
    out = np.zeros_like(cube)
    for i in range(M):
        for j in range(N):
            for k in range(P):
                block = cube[max(i - 1, 0):i + 2, max(j - 1, 0):j + 2, max(k - 1, 0):k + 2]
                out[i, j, k] = block.sum() / block.size
    return out.reshape(P, P).T


def union_of_subspaces(seed, D, dims, per):
    g = np.random.default_rng(seed)
    cols, labels = [], []
    for c, d in enumerate(dims):
        basis = np.linalg.qr(g.standard_normal((D, d)))[0]
        cols.append(basis @ g.standard_normal((d, per)))
        labels += [c] * per
    return np.hstack(cols), np.array(labels)


# ----- mean filter -----------------------------------------------------------

def test_filter_constant():
    c = np.full((6, 6), 2.5)
    np.testing.assert_allclose(mean_filter_3d(c, 2, 3), c, rtol=1e-15)


def test_filter_interior_impulse():
    # 5x5 grid, P=25: the impulse and all of its neighbours sit away from every border
    M, N, P = 5, 5, 25
    cube = np.zeros((M, N, P))
    cube[2, 2, 12] = 27.0
    out = mean_filter_3d(cube.reshape(P, P).T, M, N).T.reshape(M, N, P)
    np.testing.assert_allclose(out[1:4, 1:4, 11:14], 1.0, rtol=1e-15)
    out[1:4, 1:4, 11:14] = 0
    assert not out.any()


def test_filter_integer_grid_matches_window_oracle_exactly(rng):
    c = rng.integers(-50, 50, size=(9, 9)).astype(float)
    np.testing.assert_array_equal(mean_filter_3d(c, 3, 3), window_oracle(c, 3, 3))


@given(st.integers(0, 2**32), st.sampled_from([(1, 4), (2, 3), (3, 3), (4, 1)]))
def test_filter_random_matches_oracle(seed, shape):
    M, N = shape
    c = np.random.default_rng(seed).standard_normal((M * N, M * N))
    np.testing.assert_allclose(mean_filter_3d(c, M, N), window_oracle(c, M, N),
                               rtol=1e-13, atol=1e-14)


@given(st.integers(0, 2**32), st.floats(-1e3, 1e3))
def test_filter_scaling(seed, kappa):
    c = np.random.default_rng(seed).standard_normal((6, 6))
    np.testing.assert_allclose(mean_filter_3d(kappa * c, 2, 3), kappa * mean_filter_3d(c, 2, 3),
                               rtol=1e-12, atol=1e-12)


def test_filter_dim_mismatch():
    with pytest.raises(ValidationError):
        mean_filter_3d(np.zeros((6, 6)), 2, 2)


# ----- affine l1 prox ---------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_prox_matches_convex_solver(seed):
    g = np.random.default_rng(seed)
    P = 7
    x = g.standard_normal((P, P))
    t = float(g.uniform(0.05, 0.8))
    got = prox_l1_affine(x, t)
    c = cp.Variable((P, P))
    prob = cp.Problem(cp.Minimize(t * cp.sum(cp.abs(c)) + 0.5 * cp.sum_squares(c - x)),
                      [cp.diag(c) == 0, cp.sum(c, axis=0) == 1])
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    np.testing.assert_allclose(got, c.value, atol=1e-6)
    assert not np.diag(got).any()
    np.testing.assert_allclose(got.sum(axis=0), 1.0, atol=1e-11)


@given(st.integers(0, 2**32), st.floats(1e-3, 2.0))
def test_prox_optimality_conditions(seed, t):
    # off the diagonal, c = soft(x - tau_j, t) for one shift per column
    x = np.random.default_rng(seed).standard_normal((6, 6)) * 3
    c = prox_l1_affine(x, t)
    np.testing.assert_allclose(c.sum(axis=0), 1.0, atol=1e-10)
    for j in range(6):
        off = np.arange(6) != j
        v, cj = x[off, j], c[off, j]
        on = cj != 0
        shift = (v - cj - t * np.sign(cj))[on]
        assert np.ptp(shift) < 1e-9
        tau = shift[0]
        assert (np.abs(v[~on] - tau) <= t + 1e-9).all()


# ----- solver -----------------------------------------------------------------

def _feasible(sol, y, tol=1e-4):
    assert not np.diag(sol.c).any()
    assert np.abs(sol.c.sum(axis=0) - 1).max() <= tol
    assert np.linalg.norm(y - y @ sol.c - sol.g) / np.linalg.norm(y) <= tol


def test_duplicated_columns_represent_each_other():
    e1, e2 = np.eye(3)[0], np.eye(3)[1]
    y = np.column_stack([e1, e1, e2, e2])
    sol = solve_srssc(SRSSCProblem(y, 2, 2, alpha=0.0, tol=1e-8, max_iter=10000))
    assert sol.converged
    pairs = {0: 1, 1: 0, 2: 3, 3: 2}
    for j, mate in pairs.items():
        others = [i for i in range(4) if i not in (j, mate)]
        assert abs(sol.c[mate, j]) > 0.99
        assert np.abs(sol.c[others, j]).max() < 1e-6
    w = build_affinity(sol)
    assert np.abs(w[:2, 2:]).max() < 1e-5


def test_synthetic_two_class_scene_is_nearly_subspace_preserving():
    for seed in range(3):
        cube, lab = synth_cube(seed, 10, 10, 16, 2, 0.0)
        y = np.array(cube.signatures())
        y /= np.linalg.norm(y, axis=0)
        sol = solve_srssc(SRSSCProblem(y, 10, 10, alpha=0.0))
        _feasible(sol, y)
        a = np.abs(sol.c)
        cross = lab.labels[:, None] != lab.labels[None, :]
        assert a[cross].sum() < 0.01 * a.sum()


def test_affine_constraint_admits_cross_subspace_terms():
    # Two independent 2-dim subspaces of R^6, 10 unit points each. With 1'c = 1
    # the exact optimum uses null-space combinations of the other subspace to
    # meet the sum constraint, so it is not subspace preserving; dropping the
    # constraint restores it. The solver tracks the constrained optimum.
    y, lab = union_of_subspaces(0, 6, (2, 2), 10)
    y /= np.linalg.norm(y, axis=0)
    cross = lab[:, None] != lab[None, :]
    sol = solve_srssc(SRSSCProblem(y, 4, 5, alpha=0.0, tol=1e-6, max_iter=20000))
    opt = {}
    for affine in (True, False):
        c = cp.Variable((20, 20))
        cons = [cp.diag(c) == 0] + ([cp.sum(c, axis=0) == 1] if affine else [])
        f = cp.sum(cp.abs(c)) + sol.lam / 2 * cp.sum_squares(y - y @ c)
        opt[affine] = cp.Problem(cp.Minimize(f), cons)
        opt[affine].solve(solver=cp.CLARABEL)
        opt[affine] = (opt[affine].value, np.abs(c.value)[cross].max())
    assert opt[True][1] > 1e-3
    assert opt[False][1] < 1e-6
    assert sol.objective() == pytest.approx(opt[True][0], rel=5e-3)


def test_objective_matches_convex_solver():
    g = np.random.default_rng(3)
    y = g.random((4, 9))
    y /= np.linalg.norm(y, axis=0)
    for alpha in (0.0, 5.0):
        p = SRSSCProblem(y, 3, 3, lam=20.0, alpha=alpha, rho=200.0, tol=1e-10, max_iter=200000,
                         outer_iters=1)
        sol = solve_srssc(p)
        c = cp.Variable((9, 9))
        f = (cp.sum(cp.abs(c)) + 10.0 * cp.sum_squares(y - y @ c)
             + 0.5 * alpha * cp.sum_squares(c))
        ref = cp.Problem(cp.Minimize(f), [cp.diag(c) == 0, cp.sum(c, axis=0) == 1])
        ref.solve(solver=cp.CLARABEL)
        assert sol.objective() == pytest.approx(ref.value, rel=1e-5)
        if alpha > 0:
            # strictly convex, so the minimizer itself must agree
            np.testing.assert_allclose(sol.c, c.value, atol=1e-4)


def test_not_worse_than_least_squares_affine_solution():
    cube, _ = synth_cube(2, 5, 5, 10, 2, 0.05)
    y = np.array(cube.signatures())
    p = SRSSCProblem(y, 5, 5, alpha=0.0)
    sol = solve_srssc(p)
    P = y.shape[1]
    c_ls = np.zeros((P, P))
    for j in range(P):
        idx = [i for i in range(P) if i != j]
        a = np.vstack([y[:, idx], np.ones(P - 1)])
        b = np.append(y[:, j], 1.0)
        c_ls[idx, j] = np.linalg.lstsq(a, b, rcond=None)[0]
    base = objective(c_ls, y - y @ c_ls, np.zeros_like(c_ls), sol.lam, 0.0)
    assert sol.objective() <= base


def test_large_alpha_limit_is_minimum_norm_feasible_point():
    cube, _ = synth_cube(1, 6, 6, 12, 2, 0.05)
    y = np.array(cube.signatures())
    y /= np.linalg.norm(y, axis=0)
    P = 36
    plain = solve_srssc(SRSSCProblem(y, 6, 6, alpha=0.0))
    heavy = solve_srssc(SRSSCProblem(y, 6, 6, alpha=1e6, rho=1e6, outer_iters=1))
    assert heavy.converged
    np.testing.assert_allclose(heavy.c, (1 - np.eye(P)) / (P - 1), atol=1e-5)
    assert np.linalg.norm(heavy.c) == pytest.approx(np.sqrt(P / (P - 1)), rel=1e-4)
    assert np.linalg.norm(heavy.c) < np.linalg.norm(plain.c)


@pytest.mark.parametrize("alpha", [0.0, 200.0])
@pytest.mark.parametrize("seed", [0, 1])
def test_feasibility_and_merit(seed, alpha):
    cube, _ = synth_cube(seed, 10, 10, 16, 4, 0.2)
    y = np.array(cube.signatures())
    y /= np.linalg.norm(y, axis=0)
    sol = solve_srssc(SRSSCProblem(y, 10, 10, alpha=alpha))
    assert sol.converged
    _feasible(sol, y)
    last = sol.history[-1][0]
    merit = [h[4] for h in sol.history if h[0] == last][-10:]
    assert all(b <= a * (1 + 1e-9) for a, b in zip(merit, merit[1:]))


def test_column_permutation_equivariance():
    cube, _ = synth_cube(4, 6, 6, 12, 3, 0.1)
    y = np.array(cube.signatures())
    y /= np.linalg.norm(y, axis=0)
    perm = np.random.default_rng(0).permutation(36)
    a = solve_srssc(SRSSCProblem(y, 6, 6, alpha=0.0))
    b = solve_srssc(SRSSCProblem(y[:, perm], 6, 6, alpha=0.0))
    assert np.abs(b.c - a.c[np.ix_(perm, perm)]).max() <= 2e-4
    assert abs(a.residual_affine - b.residual_affine) <= 2e-4


def test_nonconvergence_is_flagged_not_raised():
    cube, _ = synth_cube(0, 6, 6, 12, 2, 0.2)
    y = np.array(cube.signatures())
    sol = solve_srssc(SRSSCProblem(y, 6, 6, alpha=0.0, max_iter=2))
    assert not sol.converged
    assert not np.diag(sol.c).any()


def test_spatial_term_uses_neighbour_mean():
    cube, _ = synth_cube(0, 6, 6, 12, 2, 0.2)
    y = np.array(cube.signatures())
    y /= np.linalg.norm(y, axis=0)
    sol = solve_srssc(SRSSCProblem(y, 6, 6, alpha=50.0, outer_iters=2))
    assert sol.c_bar.any()
    assert {h[0] for h in sol.history} == {0, 1}


def test_default_lambda():
    y = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]])
    # |y_j . y_i| maxima per column: 1, 1, 1
    assert default_lambda(y) == pytest.approx(10.0)
    p = SRSSCProblem(y, 1, 3)
    assert p.resolved_rho() == pytest.approx(100.0)


@pytest.mark.parametrize("y,M,N", [
    (np.array([[1.0, 0.0, 1.0]]), 1, 3),       # zero column
    (np.ones((2, 4)), 1, 3),                    # P != M*N
    (np.array([[1.0, np.nan]]), 1, 2),          # non-finite
])
def test_problem_validation(y, M, N):
    with pytest.raises(ValidationError):
        SRSSCProblem(y, M, N)


def test_dense_size_cap():
    with pytest.raises(ValidationError):
        SRSSCProblem(np.ones((1, MAX_PIXELS + 1)), 1, MAX_PIXELS + 1)


@pytest.mark.parametrize("kw", [{"lam": 0.0}, {"rho": -1.0}, {"alpha": -1.0}, {"tol": 0.0}])
def test_parameter_validation(kw):
    with pytest.raises(ValidationError):
        SRSSCProblem(np.eye(2), 1, 2, **kw)


# ----- affinity ---------------------------------------------------------------

def test_affinity_zero():
    assert not build_affinity(np.zeros((4, 4))).any()


def test_affinity_single_entry():
    c = np.zeros((4, 4))
    c[1, 2] = -0.5
    w = build_affinity(c)
    assert w[1, 2] == 1.0 and w[2, 1] == 1.0
    w[1, 2] = w[2, 1] = 0
    assert not w.any()


@given(st.integers(0, 2**32))
def test_affinity_properties(seed):
    g = np.random.default_rng(seed)
    c = g.standard_normal((6, 6)) * (g.random((6, 6)) < 0.5)
    c[:3, 3:] = 0
    c[3:, :3] = 0
    np.fill_diagonal(c, 0)
    w = build_affinity(c)
    np.testing.assert_array_equal(w, w.T)
    assert (w >= 0).all() and not np.diag(w).any()
    assert not w[:3, 3:].any()
    np.testing.assert_array_equal(w > 0, (np.abs(c) + np.abs(c).T) > 0)
