import numpy as np
import pytest
import scipy.sparse as sp

from uavirs.solver import ConstraintBlock, ConvexProgram, find_feasible, solve

LN2 = float(np.log(2.0))


def quad_objective(weights, lin=None):
    w = np.asarray(weights, dtype=float)
    c = np.zeros_like(w) if lin is None else np.asarray(lin, dtype=float)

    def fn(x, want):
        f = float(w @ (x**2) + c @ x)
        if not want:
            return f, None, None
        return f, 2 * w * x + c, 2 * w

    return fn


def linear_objective(c):
    c = np.asarray(c, dtype=float)

    def fn(x, want):
        f = float(c @ x)
        if not want:
            return f, None, None
        return f, c.copy(), np.zeros_like(c)

    return fn


def test_active_bound_quadratic():
    prog = ConvexProgram(
        num_vars=1,
        objective=quad_objective([1.0]),
        lower=np.array([1.0]),
        upper=np.array([np.inf]),
    )
    res = solve(prog, np.array([3.0]), tol=1e-8)
    assert res.status == "optimal"
    assert res.x[0] == pytest.approx(1.0, abs=1e-5)


def test_single_slot_rate_constraint_closed_form():
    # minimize power subject to log2(1 + c*p) >= target
    c = 50.0
    target = 4.0

    def rate_block(xs, want):
        g = target - np.log1p(c * xs[:, 0]) / LN2
        if not want:
            return g, None, None
        grad = (-c / (LN2 * (1 + c * xs[:, 0])))[:, None]
        hess = (c**2 / (LN2 * (1 + c * xs[:, 0]) ** 2))[:, None, None]
        return g, grad, hess

    prog = ConvexProgram(
        num_vars=1,
        objective=linear_objective([1.0]),
        blocks=[ConstraintBlock("rate", np.array([[0]]), rate_block)],
        lower=np.array([0.0]),
        upper=np.array([1e3]),
    )
    res = solve(prog, np.array([2.0]), tol=1e-9)
    assert res.status == "optimal"
    assert res.x[0] == pytest.approx((2.0**target - 1) / c, rel=1e-6)


def test_equality_constrained_quadratic():
    prog = ConvexProgram(
        num_vars=2,
        objective=quad_objective([1.0, 1.0]),
        a_eq=sp.csr_matrix(np.array([[1.0, 1.0]])),
        b_eq=np.array([2.0]),
        lower=np.array([-10.0, -10.0]),
        upper=np.array([10.0, 10.0]),
    )
    res = solve(prog, np.array([1.5, 0.5]), tol=1e-9)
    assert res.status == "optimal"
    np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-5)


def test_lowrank_coupling_row():
    # minimize sum(x) with sum(x) >= 1, x >= 0 (coupling row flagged low-rank)
    n = 40

    def coupling(xs, want):
        g = 1.0 - xs.sum(axis=1)
        if not want:
            return g, None, None
        return g, -np.ones_like(xs), None

    prog = ConvexProgram(
        num_vars=n,
        objective=linear_objective(np.ones(n)),
        blocks=[ConstraintBlock("sum", np.arange(n, dtype=np.int64)[None, :], coupling, lowrank=True)],
        lower=np.zeros(n),
        upper=np.full(n, 10.0),
    )
    res = solve(prog, np.full(n, 0.5), tol=1e-8)
    assert res.status == "optimal"
    assert res.objective == pytest.approx(1.0, abs=1e-5)


def test_determinism_bitwise():
    prog_fn = lambda: ConvexProgram(
        num_vars=3,
        objective=quad_objective([1.0, 2.0, 0.5], lin=[0.3, -0.2, 0.1]),
        lower=np.array([-1.0, -1.0, -1.0]),
        upper=np.array([2.0, 2.0, 2.0]),
    )
    r1 = solve(prog_fn(), np.zeros(3), tol=1e-8)
    r2 = solve(prog_fn(), np.zeros(3), tol=1e-8)
    assert np.array_equal(r1.x, r2.x)
    assert r1.barrier_trace == r2.barrier_trace


def test_barrier_trace_monotone():
    rng = np.random.default_rng(0)
    n = 8
    prog = ConvexProgram(
        num_vars=n,
        objective=quad_objective(rng.uniform(0.5, 2, n), lin=rng.uniform(-1, 1, n)),
        lower=np.full(n, -0.3),
        upper=np.full(n, 0.7),
    )
    res = solve(prog, np.zeros(n), tol=1e-9)
    assert res.status == "optimal"
    trace = np.array(res.barrier_trace)
    assert np.all(np.diff(trace) <= 1e-9 * (1 + np.abs(trace[:-1])))


def test_optimum_below_random_feasible_points():
    rng = np.random.default_rng(1)
    n = 6
    w = rng.uniform(0.5, 3, n)
    c = rng.uniform(-1, 1, n)
    prog = ConvexProgram(
        num_vars=n,
        objective=quad_objective(w, lin=c),
        lower=np.zeros(n),
        upper=np.ones(n),
    )
    res = solve(prog, np.full(n, 0.5), tol=1e-9)
    assert res.status == "optimal"
    for _ in range(100):
        pt = rng.uniform(0, 1, n)
        assert res.objective <= w @ pt**2 + c @ pt + 1e-7


def test_find_feasible_box_only_center():
    prog = ConvexProgram(
        num_vars=2,
        objective=linear_objective([0.0, 0.0]),
        lower=np.array([0.0, 2.0]),
        upper=np.array([4.0, 10.0]),
    )
    x, status = find_feasible(prog)
    assert status == "optimal"
    np.testing.assert_allclose(x, [2.0, 6.0])


def test_find_feasible_nonlinear_and_infeasible():
    # feasible: unit-disc interior intersected with x0 >= 0.2
    def disc(xs, want):
        g = xs[:, 0] ** 2 + xs[:, 1] ** 2 - 1.0
        if not want:
            return g[None][0] * np.ones(1), None, None
        return g, 2 * xs, 2 * np.broadcast_to(np.eye(2), (1, 2, 2)).copy()

    prog = ConvexProgram(
        num_vars=2,
        objective=linear_objective([0.0, 0.0]),
        blocks=[ConstraintBlock("disc", np.array([[0, 1]]), disc)],
        lower=np.array([0.2, -5.0]),
        upper=np.array([5.0, 5.0]),
    )
    x, status = find_feasible(prog, np.array([2.0, 2.0]))
    assert status == "optimal"
    assert x[0] ** 2 + x[1] ** 2 < 1.0
    assert x[0] >= 0.2

    # infeasible: disc interior demanded but box floors x0 at 2
    prog_bad = ConvexProgram(
        num_vars=2,
        objective=linear_objective([0.0, 0.0]),
        blocks=[ConstraintBlock("disc", np.array([[0, 1]]), disc)],
        lower=np.array([2.0, -5.0]),
        upper=np.array([5.0, 5.0]),
    )
    x, status = find_feasible(prog_bad, np.array([3.0, 0.0]))
    assert status == "infeasible"


def test_rate_capacity_ceiling_infeasible():
    # demand more secure bits than the capacity at peak power allows
    c = 50.0
    p_max = 10.0
    ceiling = np.log1p(c * p_max) / LN2

    def rate_block(xs, want):
        g = (ceiling + 1.0) - np.log1p(c * xs[:, 0]) / LN2
        if not want:
            return g, None, None
        grad = (-c / (LN2 * (1 + c * xs[:, 0])))[:, None]
        hess = (c**2 / (LN2 * (1 + c * xs[:, 0]) ** 2))[:, None, None]
        return g, grad, hess

    prog = ConvexProgram(
        num_vars=1,
        objective=linear_objective([1.0]),
        blocks=[ConstraintBlock("rate", np.array([[0]]), rate_block)],
        lower=np.array([0.0]),
        upper=np.array([p_max]),
    )
    res = solve(prog, np.array([5.0]), tol=1e-8)
    assert res.status == "infeasible"
