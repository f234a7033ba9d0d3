import json

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from problems import rule, sampled, segment_spec, solve, square_spec
from tugwar import expr as ex
from tugwar.dpp import ValueField
from tugwar.geometry import DomainSpec, Rectangle, discretize
from tugwar.verify import (
    PreconditionViolated,
    QuadraticDistanceFn,
    TooCloseToBoundary,
    check_comparison,
    comparison_sweep,
    grad_and_infinity_laplacian_fd,
    interpolate,
    relative_boundary,
    report_json,
    residual_report,
)

X = ex.parse("x")


def box(lo, hi):
    return DomainSpec(Rectangle(lo, hi), (rule("1", "dirichlet"),))


def worst_lap(u, delta, F=X):
    """Largest |infinity laplacian| over interior nodes farther than delta from the boundary."""
    return residual_report(u, F, delta, gradient_floor=1e-12).interior_linf_residual


# ---------------------------------------------------------------- interpolation


def test_interpolation_reproduces_bilinear_functions():
    g = discretize(box((0, 0), (1, 1)), 0.1)
    f = lambda p: 1 + 2 * p[:, 0] - p[:, 1] + 3 * p[:, 0] * p[:, 1]
    u = sampled(g, f, 0.2)
    pts = np.random.default_rng(0).uniform(0, 1, (200, 2))
    assert np.allclose(interpolate(u, pts), f(pts), atol=1e-12)


# ---------------------------------------------------------------- infinity laplacian


def test_affine_field_has_no_curvature():
    g = discretize(box((0, 0), (1, 1)), 0.1)
    u = sampled(g, lambda p: 2 * p[:, 0] - 3 * p[:, 1] + 1, 0.2)
    for delta in (0.1, 0.15, 0.2):
        assert worst_lap(u, delta) <= 1e-9


def test_cone_curvature_vanishes_with_delta():
    z = np.array([-0.5, 0.5])
    worst = []
    for delta in (0.1, 0.05):
        g = discretize(box((0, 0), (1, 1)), delta**2)
        u = sampled(g, lambda p: np.linalg.norm(p - z, axis=1), 0.2)
        nodes = [g.node_at((x, y)) for x in (0.2, 0.5, 0.8) for y in (0.2, 0.5, 0.8)]
        lap = [grad_and_infinity_laplacian_fd(u, n, delta).lap_inf for n in nodes]
        worst.append(np.max(np.abs(lap)))
        assert worst[-1] <= 2 * delta
    assert worst[1] < worst[0]


def test_aronsson_function_against_symbolic_oracle():
    x, y = sp.symbols("x y", positive=True)
    f = x ** sp.Rational(4, 3) - y ** sp.Rational(4, 3)
    grad = sp.Matrix([f.diff(x), f.diff(y)])
    hess = sp.hessian(f, (x, y))
    assert sp.simplify((grad.T * hess * grad)[0]) == 0

    lap = sp.lambdify((x, y), (grad.T * hess * grad)[0] / (grad.T * grad)[0], "numpy")
    fn = sp.lambdify((x, y), f, "numpy")
    worst = []
    for delta in (1 / 16, 1 / 32):
        g = discretize(box((1, 1), (2, 2)), 4 * delta**2)
        u = sampled(g, lambda p: fn(p[:, 0], p[:, 1]), 0.25)
        worst.append(worst_lap(u, delta, ex.parse("x^(4/3) - y^(4/3)")))
        # the oracle is zero everywhere in the patch
        assert abs(lap(1.5, 1.25)) <= 1e-12
    assert worst[1] < worst[0] / 1.8


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_quadratics_recover_directional_curvature(seed):
    rng = np.random.default_rng(seed)
    A = rng.uniform(-2, 2, (2, 2))
    M = (A + A.T) / 2
    p = rng.normal(size=2)
    p *= 1000 / np.linalg.norm(p)
    h, delta = 0.01, 0.05
    g = discretize(box((0, 0), (1, 1)), h)
    u = sampled(g, lambda q: 0.5 * np.einsum("ni,ij,nj->n", q, M, q) + q @ p, 0.2)
    node = g.node_at((0.5, 0.5))
    res = grad_and_infinity_laplacian_fd(u, node, delta)
    gtrue = M @ g.points[node] + p
    assert np.allclose(res.gradient, gtrue, rtol=1e-9)
    ghat = gtrue / np.linalg.norm(gtrue)
    # bilinear interpolation error of a quadratic is at most (|M11| + |M22|) h^2 / 8
    bound = 2 * (abs(M[0, 0]) + abs(M[1, 1])) * h**2 / 8 / delta**2 + 1e-9
    assert abs(res.lap_inf - ghat @ M @ ghat) <= bound
    phat = p / np.linalg.norm(p)
    assert abs(res.lap_inf - phat @ M @ phat) <= bound + 8 * np.abs(M).max() ** 2 / 1000


def test_degenerate_gradient_branch():
    g = discretize(box((0, 0), (1, 1)), 0.125)
    bowl = sampled(g, lambda p: ((p - 0.5) ** 2).sum(axis=1), 0.25)
    saddle = sampled(g, lambda p: (p[:, 0] - 0.5) ** 2 - (p[:, 1] - 0.5) ** 2, 0.25)
    c = g.node_at((0.5, 0.5))
    r = grad_and_infinity_laplacian_fd(bowl, c, 0.125)
    assert r.degenerate and r.lap_inf == pytest.approx(2) and r.spread == pytest.approx(0, abs=1e-9)
    r = grad_and_infinity_laplacian_fd(saddle, c, 0.125)
    assert r.degenerate and r.lap_inf == pytest.approx(0, abs=1e-9) and r.spread == pytest.approx(4)


def test_fd_preconditions():
    g = discretize(box((0, 0), (1, 1)), 0.125)
    u = sampled(g, lambda p: p[:, 0], 0.25)
    with pytest.raises(TooCloseToBoundary):
        grad_and_infinity_laplacian_fd(u, g.node_at((0.125, 0.5)), 0.125)
    with pytest.raises(TooCloseToBoundary):
        grad_and_infinity_laplacian_fd(u, g.node_at((0.0, 0.5)), 0.125)
    with pytest.raises(ValueError):
        grad_and_infinity_laplacian_fd(u, g.node_at((0.5, 0.5)), 0.05)


# ---------------------------------------------------------------- residual report


def test_exact_linear_solution_report():
    g = discretize(square_spec(), 1 / 16)
    u = sampled(g, lambda p: p[:, 0], 0.25)
    rep = residual_report(u, X)
    assert rep.interior_linf_residual <= 1e-9
    assert rep.neumann_linf_residual <= 1e-9
    assert rep.dirichlet_linf_error == 0.0
    n_int = g.ids(0).size
    assert rep.interior_nodes_checked + rep.skipped_small_gradient + rep.skipped_near_boundary == n_int
    assert rep.gradient_floor == pytest.approx(1e-6)


def test_constant_solution_report():
    u = solve(segment_spec(neumann_left=True), 0.125, 0.25, "1")
    rep = residual_report(u, ex.parse("1"))
    assert rep.interior_linf_residual == 0 and rep.neumann_linf_residual == 0 and rep.dirichlet_linf_error == 0


def test_bump_is_localized():
    g = discretize(square_spec(), 1 / 16)
    u = sampled(g, lambda p: p[:, 0], 0.25)
    bump = g.node_at((0.5, 0.5))
    u.values[bump] += 0.01
    delta = g.h
    rep = residual_report(u, X, delta)
    # gradient at the bump is still e1, so the second difference there is -2 * 0.01 / delta^2
    assert rep.interior_linf_residual == pytest.approx(0.02 / delta**2, rel=1e-9)
    assert rep.interior_linf_residual >= 0.01 / delta**2
    assert rep.worst_interior_node == bump


def test_dirichlet_error_is_measured():
    g = discretize(square_spec(), 0.25)
    u = sampled(g, lambda p: p[:, 0], 0.25)
    u.values[g.dirichlet[0]] += 0.5
    assert residual_report(u, X).dirichlet_linf_error == 0.5


def test_report_json_is_sorted_and_strict():
    g = discretize(square_spec(), 0.25)
    u = sampled(g, lambda p: p[:, 0], 0.25)
    text = report_json(residual_report(u, X), comparison_sweep(u, 10))
    doc = json.loads(text)
    assert list(doc) == sorted(doc)
    assert set(doc["comparison"]) == {"trials", "passes", "precondition_rejects", "failures"}


# ---------------------------------------------------------------- comparison


def test_star_monotonicity():
    pts = np.array([[0.5, 0.5], [0.6, 0.5]])
    assert QuadraticDistanceFn((0.0, 0.5), 0.0, 2.0, 0.0).star_increasing_on(pts)
    assert not QuadraticDistanceFn((0.0, 0.5), 0.0, 0.0, 1.0).star_increasing_on(pts)
    # slope 2 a r + b changes sign inside the set
    assert not QuadraticDistanceFn((0.0, 0.5), -5.0, 5.5, 0.0).star_increasing_on(pts)
    inside = QuadraticDistanceFn((0.5, 0.5), 1.0, 0.0, 0.0)
    assert inside.star_increasing_on(pts)
    assert not QuadraticDistanceFn((0.5, 0.5), 1.0, 0.1, 0.0).star_increasing_on(pts)
    assert QuadraticDistanceFn((0.0, 0.5), 0.0, -1.0, 0.0).star_decreasing_on(pts)


def _disk_V(g, center, radius):
    free = g.free
    return free[np.linalg.norm(g.points[free] - center, axis=1) <= radius]


def test_affine_field_below_a_cone():
    g = discretize(square_spec(), 1 / 16)
    u = sampled(g, lambda p: p[:, 0], 0.25)
    V = _disk_V(g, (0.5, 0.5), 0.2)
    bd = relative_boundary(g, V)
    base = QuadraticDistanceFn((0.0, 0.5), 0.0, 2.0, 0.0)
    c = float(np.max(u.values[bd] - base(g.points[bd])))
    phi = QuadraticDistanceFn((0.0, 0.5), 0.0, 2.0, c)
    res = check_comparison(u, "above", V, phi)
    gap = phi(g.points[V]) - u.values[V]
    assert res.passes and res.witness is None
    assert res.margin == gap.min()
    assert abs(np.min(gap[np.isin(V, bd)])) <= 1e-12


def test_flat_phi_is_a_precondition_failure():
    g = discretize(square_spec(), 1 / 16)
    u = sampled(g, lambda p: p[:, 0], 0.25)
    V = _disk_V(g, (0.5, 0.5), 0.2)
    top = float(u.values[relative_boundary(g, V)].max())
    with pytest.raises(PreconditionViolated):
        check_comparison(u, "above", V, QuadraticDistanceFn((0.0, 0.5), 0.0, 0.0, top))


@pytest.mark.parametrize(
    "side, phi, V_fn",
    [
        ("above", QuadraticDistanceFn((0.0, 0.5), 0.5, 2.0, 5.0), None),  # a > 0
        ("below", QuadraticDistanceFn((0.0, 0.5), -0.5, -2.0, -5.0), None),  # a < 0
        ("above", QuadraticDistanceFn((0.0, 0.5), 0.0, 2.0, -5.0), None),  # no domination
        ("above", QuadraticDistanceFn((0.0, 0.5), 0.0, 2.0, 5.0), "dirichlet"),
        ("above", QuadraticDistanceFn((0.0, 0.5), 0.0, 2.0, 5.0), "empty"),
    ],
)
def test_other_precondition_failures(side, phi, V_fn):
    g = discretize(square_spec(), 1 / 16)
    u = sampled(g, lambda p: p[:, 0], 0.25)
    V = _disk_V(g, (0.5, 0.5), 0.2)
    if V_fn == "dirichlet":
        V = np.append(V, g.dirichlet[0])
    elif V_fn == "empty":
        V = []
    with pytest.raises(PreconditionViolated):
        check_comparison(u, side, V, phi)


def _parabola(sign):
    g = discretize(segment_spec(), 0.1)
    u = sampled(g, lambda p: sign * p[:, 0] ** 2, 0.2)
    V = [g.node_at((k / 10,)) for k in range(2, 9)]
    return g, u, V


def test_convex_field_breaks_comparison_from_below():
    g, u, V = _parabola(1.0)
    assert sorted(relative_boundary(g, V)) == [g.node_at((0.2,)), g.node_at((0.8,))]
    # z = 1, r = 1 - x, phi = -(1 - x) + c touches x^2 at both 0.2 and 0.8 for c = 0.84
    phi = QuadraticDistanceFn((1.0,), 0.0, -1.0, 0.84)
    res = check_comparison(u, "below", V, phi)
    assert not res.passes
    assert res.witness == g.node_at((0.3,))
    assert res.margin == pytest.approx(-0.09, abs=1e-12)


def test_concave_field_breaks_comparison_from_above():
    g, u, V = _parabola(-1.0)
    res = check_comparison(u, "above", V, QuadraticDistanceFn((1.0,), 0.0, 1.0, -0.84))
    assert not res.passes and res.witness == g.node_at((0.3,))


def test_convex_field_passes_comparison_from_above():
    # a convex function sits below every affine function that dominates it at the ends
    g, u, V = _parabola(1.0)
    res = check_comparison(u, "above", V, QuadraticDistanceFn((0.0,), 0.0, 1.0, -0.16))
    assert res.passes and res.margin == pytest.approx(0.0, abs=1e-12)


_g_sym = discretize(square_spec(), 1 / 8)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=80, deadline=None)
def test_above_on_u_is_below_on_minus_u(seed):
    rng = np.random.default_rng(seed)
    g = _g_sym
    vals = np.where(g.cls != 3, rng.uniform(-1, 1, g.n_nodes), np.nan)
    u, neg = ValueField(g, vals, 0.25), ValueField(g, -vals, 0.25)
    V = _disk_V(g, g.points[g.free[rng.integers(g.free.size)]], rng.uniform(0.2, 0.4))
    z = tuple(rng.uniform(0, 1, 2))
    base = QuadraticDistanceFn(z, -rng.uniform(0, 1), rng.uniform(0, 2), 0.0)
    bd = relative_boundary(g, V)
    if bd.size == 0:
        return
    c = float(np.max(vals[bd] - base(g.points[bd]))) + rng.choice([0.0, 0.1, -0.1])
    phi = QuadraticDistanceFn(z, base.a, base.b, c)

    def outcome(field, side, f):
        try:
            return check_comparison(field, side, V, f)
        except PreconditionViolated:
            return "precondition"

    assert outcome(u, "above", phi) == outcome(neg, "below", phi.negated())


def test_relative_boundary_of_a_block():
    g = discretize(square_spec(), 0.125)
    V = [g.node_at((i / 8, j / 8)) for i in range(2, 6) for j in range(2, 6)]
    inner = {g.node_at((i / 8, j / 8)) for i in (3, 4) for j in (3, 4)}
    assert set(relative_boundary(g, V).tolist()) == set(V) - inner


def test_sweep_on_constant_field():
    u = solve(segment_spec(neumann_left=True), 0.125, 0.25, "1")
    out = comparison_sweep(u, 200, seed=4)
    assert out.failures == [] and out.trials == 200


def test_sweep_on_exact_fixed_point():
    u = solve(square_spec(), 0.25, 0.25, "x")
    out = comparison_sweep(u, 300, seed=11)
    assert out.failures == []
    assert out.passes + out.precondition_rejects == out.trials


def test_sweep_catches_a_corrupted_node():
    g = discretize(square_spec(), 1 / 16)
    u = sampled(g, lambda p: p[:, 0], 0.25)
    assert comparison_sweep(u, 500, seed=2, side="above").failures == []
    bad = g.node_at((0.5, 0.5))
    u.values[bad] += 0.1
    out = comparison_sweep(u, 500, seed=2, side="above")
    assert out.failures
    near = [f for f in out.failures if np.linalg.norm(np.subtract(f["witness_point"], (0.5, 0.5))) <= g.h * np.sqrt(2) + 1e-12]
    assert near


def test_sweep_is_reproducible():
    u = solve(square_spec(), 1 / 16, 0.25, "x")
    assert comparison_sweep(u, 100, seed=3).to_dict() == comparison_sweep(u, 100, seed=3).to_dict()
