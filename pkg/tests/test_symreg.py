import itertools
import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from netlaw.dynamics import DynamicsSpec, builtin_rhs
from netlaw.symreg import (DiscoveredModel, DomainError, Expression, FunctionLibrary, FunctionQuery, ParseError,
                           RankDeficiencyError, SamplingConfig, SamplingError, SearchBackend, SearchConfig,
                           SparseBackend, UnboundVariableError, assemble_rhs, eval_expression, evaluate,
                           fit_constants, kmeans_sample, parse_infix, parse_prefix, refit_on_data,
                           regress_decoupler, search_regress, select_on_data, sparse_regress, stlsq, to_infix, to_prefix,
                           to_sympy)
from netlaw.symreg.expression import ARITY, BINARY, UNARY, simplify
from netlaw.symreg.search import expression_error, pareto_front, Candidate
from netlaw.topology import Topology, gen_er

X1, X2 = Expression.var("x1"), Expression.var("x2")


# ---------------------------------------------------------------------------- expressions

def test_prefix_example_both_directions():
    tokens = ["+", "cos", "*", 2, "x1", "*", 3, "x2"]
    expr = parse_prefix(tokens)
    assert expr == Expression.apply("cos", 2 * X1) + 3 * X2
    assert parse_prefix(to_prefix(expr)) == expr
    assert eval_expression(expr, {"x1": 0.0, "x2": 1.0}) == 4.0


def test_prefix_identity_and_errors():
    assert parse_prefix(["x1"]) == X1
    with pytest.raises(ParseError) as info:
        parse_prefix(["+", "x1"])
    assert info.value.index == 2
    with pytest.raises(ParseError) as info:
        parse_prefix(["x1", "x2"])
    assert info.value.index == 1


def test_prefix_accepts_symbol_aliases():
    assert parse_prefix(["×", "x1", "−", "x2", 1]) == X1 * (X2 - 1)


def test_domain_and_binding_errors():
    with pytest.raises(DomainError):
        eval_expression(X1 / X2, {"x1": 1.0, "x2": 0.0})
    with pytest.raises(DomainError) as info:
        eval_expression(X1 + Expression.apply("log", X2), {"x1": 1.0, "x2": -1.0})
    assert info.value.path == (1,)
    with pytest.raises(UnboundVariableError):
        eval_expression(X1 + X2, {"x1": 1.0})
    with pytest.raises(DomainError):
        evaluate(Expression.apply("sqrt", X1), {"x1": np.array([1.0, -1.0])})


def test_gene_hill_term_at_one():
    assert eval_expression(parse_infix("x**2/(1+x**2)"), {"x": 1.0}) == 0.5


def test_infix_round_trip_and_sympy():
    for text in ["0.5*x_i - x_i**2", "x_j*(1 - x_i)", "-(x1 + 2)/sin(x2)", "exp(-x1)*cos(x2**3)"]:
        e = parse_infix(text)
        assert sp.simplify(to_sympy(parse_infix(to_infix(e))) - to_sympy(e)) == 0


def test_constant_slots_skip_integer_exponents():
    e = parse_infix("2.5*x**2 + 1")
    assert e.constants() == [2.5, 1.0]
    assert to_infix(e.with_constants([3.0, 0.0])) == to_infix(parse_infix("3*x**2 + 0"))


def random_tree(rng, depth):
    if depth == 0 or rng.random() < 0.3:
        if rng.random() < 0.5:
            return Expression.var(f"x{rng.integers(1, 4)}")
        return Expression.const(float(np.round(rng.normal(), 3)))
    op = str(rng.choice(BINARY + UNARY))
    return Expression.apply(op, *(random_tree(rng, depth - 1) for _ in range(ARITY[op])))


def test_prefix_round_trip_fuzz():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        tree = random_tree(rng, int(rng.integers(0, 6)))
        assert parse_prefix(to_prefix(tree)) == tree


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_prefix_round_trip_property(seed):
    tree = random_tree(np.random.default_rng(seed), 5)
    assert parse_prefix(to_prefix(tree)) == tree
    assert parse_prefix([str(t) for t in to_prefix(tree)]) == tree


def test_simplify_preserves_values():
    rng = np.random.default_rng(5)
    env = {f"x{k}": rng.uniform(0.5, 1.5, 20) for k in (1, 2, 3)}
    for _ in range(300):
        tree = random_tree(rng, 4)
        try:
            a = evaluate(tree, env)
        except DomainError:
            continue
        b = evaluate(simplify(tree), env)
        assert np.allclose(np.broadcast_to(a, (20,)), np.broadcast_to(b, (20,)), rtol=1e-9, atol=1e-12,
                           equal_nan=True)


# ---------------------------------------------------------------------------- sampling

def test_kmeans_all_points_when_k_equals_distinct():
    pts = np.array([[0.0], [1.0], [5.0], [1.0]])
    out = kmeans_sample(pts, 3, 0)
    assert sorted(out[:, 0].tolist()) == [0.0, 1.0, 5.0]
    with pytest.raises(SamplingError):
        kmeans_sample(pts, 4, 0)


def test_kmeans_two_blobs_against_brute_force():
    rng = np.random.default_rng(0)
    pts = np.r_[rng.normal(0, 1, 50), rng.normal(100, 1, 50)][:, None]
    reps = kmeans_sample(pts, 2, 7)[:, 0]
    # brute-force optimal 2-clustering of sorted 1-D data: best split point
    v = np.sort(pts[:, 0])
    cost = [np.var(v[:s]) * s + np.var(v[s:]) * (v.size - s) for s in range(1, v.size)]
    split = v[int(np.argmin(cost))]
    assert (reps <= split).sum() == 1 and (reps > split).sum() == 1


def test_kmeans_deterministic():
    pts = np.random.default_rng(1).uniform(size=(300, 2))
    assert np.array_equal(kmeans_sample(pts, 20, 3), kmeans_sample(pts, 20, 3))


# ---------------------------------------------------------------------------- sparse regression

def test_stlsq_examples():
    x = np.linspace(-1, 1, 50)
    lib = FunctionLibrary(("1", "x", "x**2"))
    xi = sparse_regress({"x": x}, 2 * x, lib, 0.05)
    assert np.allclose(xi, [0, 2, 0], atol=1e-8)
    assert np.all(sparse_regress({"x": x}, np.zeros_like(x), lib, 0.05) == 0)


def test_stlsq_lv_self_dynamics():
    x = np.linspace(0, 5, 200)
    y = builtin_rhs(DynamicsSpec("LV"), Topology(np.zeros((200, 200))), x[:, None])[:, 0]
    xi = sparse_regress({"x": x}, y, FunctionLibrary(("1", "x", "x**2", "x**3")), 0.05)
    assert np.allclose(xi, [0, 0.5, -1.0, 0], atol=1e-9)


def test_rank_deficiency_reported():
    x = np.linspace(0, 1, 20)
    with pytest.raises(RankDeficiencyError):
        sparse_regress({"x": x}, x, FunctionLibrary(("x", "2*x")), 0.1)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_threshold_zero_equals_normal_equations(seed):
    rng = np.random.default_rng(seed)
    theta = rng.normal(size=(5, 5))
    y = rng.normal(size=5)
    oracle = np.linalg.solve(theta.T @ theta, theta.T @ y)
    # normal equations lose accuracy with the squared condition number
    tol = 1e-13 * np.linalg.cond(theta) ** 2
    got = stlsq(theta, y, 0.0).coef
    assert np.linalg.norm(got - oracle) <= max(tol, 1e-10) * max(1.0, np.linalg.norm(oracle))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), thr=st.floats(0.01, 1.0))
def test_stlsq_survivors_exceed_threshold(seed, thr):
    rng = np.random.default_rng(seed)
    theta = rng.normal(size=(40, 6))
    y = theta @ rng.normal(size=6) * rng.integers(0, 2, 6).astype(float).mean()
    coef = stlsq(theta, y, thr).coef
    assert np.all((coef == 0) | (np.abs(coef) >= thr))


def test_library_file_round_trip(tmp_path):
    lib = FunctionLibrary(("1", "x_i", "x_j**2/(1 + x_j**2)"))
    lib.save(tmp_path / "lib.txt")
    assert FunctionLibrary.from_file(tmp_path / "lib.txt").terms == lib.terms


# ---------------------------------------------------------------------------- search and constants

def test_fit_constants_examples():
    x = np.linspace(0, 5, 60)
    c = fit_constants(Expression.const(1.0) * Expression.var("x"), {"x": x}, 3 * x)
    assert c.constants()[0] == pytest.approx(3.0, abs=1e-6)
    plain = Expression.var("x") * Expression.var("x")
    assert fit_constants(plain, {"x": x}, x) == plain
    e = fit_constants(parse_infix("2.0/(0.3 + x)"), {"x": x}, 1 / (1 + x))
    assert np.allclose(e.constants(), [1.0, 1.0], atol=1e-4)


@settings(max_examples=15, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(0.2, 3), seed=st.integers(0, 100))
def test_fit_constants_never_worse(a, b, seed):
    x = np.linspace(0, 2, 30)
    y = np.exp(-x) * 2 + 0.3
    expr = parse_infix(f"{a}*exp(-{b}*x) + 0.1")
    before = expression_error(expr, {"x": x}, y)
    after = expression_error(fit_constants(expr, {"x": x}, y, seed=seed), {"x": x}, y)
    assert after <= before + 1e-12


def _exhaustive_min_error(x, y, depth):
    leaves = [Expression.var("x"), Expression.const(1.0)]
    levels = [leaves]
    for _ in range(depth - 1):
        prev = [e for lvl in levels for e in lvl]
        new = [Expression.apply(op, a, b) for op in ("+", "-", "*") for a in prev for b in prev]
        levels.append(new)
    best = math.inf
    for lvl in levels:
        for e in lvl:
            best = min(best, expression_error(e, {"x": x}, y))
    return best


def test_search_finds_square_against_exhaustive_oracle():
    x = np.linspace(-2, 2, 41)
    y = x ** 2
    oracle = _exhaustive_min_error(x, y, 3)
    front = search_regress({"x": x}, y, SearchConfig(operators=("+", "-", "*"), max_depth=3))
    assert oracle < 1e-10
    assert front[0].error <= oracle + 1e-10
    assert sp.expand(to_sympy(front[0].expr) - sp.Symbol("x", real=True) ** 2) == 0


def test_search_on_zeros_returns_constant_zero():
    front = search_regress({"x": np.linspace(0, 1, 20)}, np.zeros(20))
    assert front[0].expr.is_const and front[0].expr.value == 0.0


def test_search_recovers_epidemic_interaction():
    g = np.linspace(0, 1, 21)
    xi, xj = (a.ravel() for a in np.meshgrid(g, g))
    front = search_regress({"x_i": xi, "x_j": xj}, xj * (1 - xi))
    best = front[0]
    assert best.error < 1e-8
    xs, ys = sp.symbols("x_i x_j", real=True)
    diff = sp.expand(to_sympy(best.expr) - (ys - xs * ys))
    assert all(abs(float(c)) < 1e-8 for c in sp.Poly(diff, xs, ys).coeffs()) if diff != 0 else True


def test_reported_errors_agree_with_pointwise_evaluation():
    rng = np.random.default_rng(0)
    x = rng.uniform(0.5, 2, 40)
    y = np.sin(x) + 0.5 * x
    for cand in search_regress({"x": x}, y, SearchConfig(iters=2)):
        pred = np.array([eval_expression(cand.expr, {"x": v}) for v in x])
        direct = math.sqrt(np.mean((pred - y) ** 2) / np.var(y))
        assert abs(direct - cand.error) <= 1e-12


def test_pareto_front_is_non_dominated():
    mk = lambda e, s: Candidate(Expression.const(e * 100 + s), e, s, e)
    front = pareto_front([mk(0.5, 1), mk(0.1, 5), mk(0.2, 5), mk(0.05, 9), mk(0.5, 3)])
    assert [(c.error, c.size) for c in front] == [(0.05, 9), (0.1, 5), (0.5, 1)]


# ---------------------------------------------------------------------------- decoupler regression

def epi_query():
    return FunctionQuery(1, [lambda X: -X], [lambda P: (P[:, 1] * (1 - P[:, 0]))[:, None]])


def epi_states():
    rng = np.random.default_rng(0)
    return rng.uniform(0, 1, (50, 20, 1))


def test_sparse_backend_recovers_epidemic_terms():
    top = gen_er(20, 0.2, 0)
    lib = FunctionLibrary(("1", "x_i", "x_j", "x_i*x_j"))
    dm = regress_decoupler(epi_query(), epi_states(), top, SamplingConfig(n_raw=2000, k=128),
                           SparseBackend(lib, 0.05), seed=0)
    xi, xj = sp.symbols("x_i x_j", real=True)
    assert abs(float(sp.expand(to_sympy(dm.self_expr())).coeff(xi)) + 1.0) < 1e-12
    assert sp.expand(to_sympy(dm.self_expr())).free_symbols == {xi}
    assert sp.expand(to_sympy(dm.inter_expr()) - (xj - xi * xj)).equals(0) or \
        abs(float(sp.expand(to_sympy(dm.inter_expr()) - (xj - xi * xj)).subs({xi: 0.3, xj: 0.7}))) < 1e-9


def test_sparse_backend_seed_invariance():
    top = gen_er(20, 0.2, 0)
    lib = FunctionLibrary(("1", "x_i", "x_i**2", "x_j", "x_i*x_j"))
    runs = [regress_decoupler(epi_query(), epi_states(), top, SamplingConfig(n_raw=2000, k=128),
                              SparseBackend(lib, 0.05), seed=s) for s in (0, 1)]
    env = {"x_i": np.linspace(0, 1, 7), "x_j": np.linspace(1, 0, 7)}
    for pick in (lambda d: d.self_expr(), lambda d: d.inter_expr()):
        va, vb = (np.broadcast_to(evaluate(pick(d), env), (7,)) for d in runs)
        assert np.allclose(va, vb, atol=1e-6)


def test_zero_decoupler_gives_constant_expressions():
    from netlaw.decoupler import DecouplerModel
    model = DecouplerModel.init(1, zero=True)
    lib = FunctionLibrary(("1", "x_i", "x_j", "x_i*x_j"))
    dm = regress_decoupler(model, epi_states(), gen_er(20, 0.2, 0), SamplingConfig(n_raw=500, k=32),
                           SparseBackend(lib, 0.05))
    assert dm.self_expr().is_const and dm.inter_expr().is_const


def test_assemble_matches_builtin_epidemic():
    top = gen_er(15, 0.3, 2)
    dm = DiscoveredModel.from_exprs(1, [["-x_i"]], [["x_j*(1 - x_i)"]])
    rhs = assemble_rhs(dm, top)
    x = np.random.default_rng(0).uniform(size=(15, 1))
    assert np.allclose(rhs(0.0, x), builtin_rhs(DynamicsSpec("Epi"), top, x), rtol=0, atol=1e-12)
    self_only = assemble_rhs(DiscoveredModel.from_exprs(1, [["-x_i"]], [["0"]]), top)
    assert np.array_equal(self_only(0.0, x), -x)


def test_assemble_rejects_unknown_variables():
    dm = DiscoveredModel.from_exprs(1, [["y + x_i"]], [["x_j"]])
    with pytest.raises(UnboundVariableError):
        assemble_rhs(dm, gen_er(5, 0.5, 0))


def test_refit_on_data_recovers_split_from_mixed_terms():
    top = gen_er(25, 0.2, 1)
    rng = np.random.default_rng(3)
    X = rng.uniform(0, 3, (40, 25, 1))
    spec = DynamicsSpec("LV")
    Y = np.stack([builtin_rhs(spec, top, x) for x in X])
    # deliberately wrong coefficients, right terms
    dm = DiscoveredModel.from_exprs(1, [["0.3*x_i - 0.8*x_i**2 + 0.1"]], [["-1.2*x_i*x_j"]])
    fixed = refit_on_data(dm, X, Y, top, threshold=0.01)
    env = {"x_i": np.linspace(0, 3, 9), "x_j": np.linspace(3, 0, 9)}
    assert np.allclose(evaluate(fixed.self_expr(), env), 0.5 * env["x_i"] - env["x_i"] ** 2, atol=1e-9)
    assert np.allclose(evaluate(fixed.inter_expr(), env), -env["x_i"] * env["x_j"], atol=1e-9)


def lv_data():
    top = gen_er(25, 0.2, 1)
    X = np.random.default_rng(3).uniform(0, 3, (40, 25, 1))
    Y = np.stack([builtin_rhs(DynamicsSpec("LV"), top, x) for x in X])
    return top, X, Y


def test_select_on_data_prefers_correct_alternative():
    top, X, Y = lv_data()
    alts = {"self[0][0]": [{"infix": "x_i**3/(x_i + 1.0) + sin(x_i)"}, {"infix": "0.4*x_i - 0.9*x_i**2"}],
            "inter[0][0]": [{"infix": "sin(x_i*x_j)"}]}
    dm = DiscoveredModel.from_exprs(1, [["x_i**3/(x_i + 1.0) + sin(x_i)"]], [["-1.1*x_i*x_j"]],
                                    {"alternatives": alts})
    fixed = select_on_data(dm, X, Y, top, threshold=0.01)
    env = {"x_i": np.linspace(0, 3, 9), "x_j": np.linspace(3, 0, 9)}
    assert np.allclose(evaluate(fixed.self_expr(), env), 0.5 * env["x_i"] - env["x_i"] ** 2, atol=1e-9)
    assert np.allclose(evaluate(fixed.inter_expr(), env), -env["x_i"] * env["x_j"], atol=1e-9)
    # the first alternative duplicates the reported expression and is dropped
    assert fixed.provenance["select_on_data"]["choices"]["0"] == {"self[0]": 1, "inter[0]": 0}


def test_select_on_data_library_option_restores_dropped_term():
    top, X, Y = lv_data()
    lib = FunctionLibrary(("1", "x_i", "x_i**2", "x_j", "x_i*x_j"))
    dm = DiscoveredModel.from_exprs(1, [["0.5*x_i - x_i**2"]], [["0.3"]])
    without = select_on_data(dm, X, Y, top, 0.01)
    with_lib = select_on_data(dm, X, Y, top, 0.01, library=lib)
    env = {"x_i": np.linspace(0, 3, 9), "x_j": np.linspace(3, 0, 9)}
    assert not np.allclose(evaluate(without.inter_expr(), env), -env["x_i"] * env["x_j"])
    assert np.allclose(evaluate(with_lib.inter_expr(), env), -env["x_i"] * env["x_j"], atol=1e-9)


def test_select_without_alternatives_equals_plain_refit():
    top, X, Y = lv_data()
    dm = DiscoveredModel.from_exprs(1, [["0.3*x_i - 0.8*x_i**2"]], [["-1.2*x_i*x_j"]])
    a, b = select_on_data(dm, X, Y, top, 0.01), refit_on_data(dm, X, Y, top, 0.01)
    assert a.self_expr() == b.self_expr() and a.inter_expr() == b.inter_expr()


def test_discovered_model_json_round_trip(tmp_path):
    dm = DiscoveredModel.from_exprs(3, [["x_i2 - x_i1", "x_i1*x_i3", "0.2 + x_i3*(x_i1 - 5.7)"]],
                                    [["x_j1 - x_i1", "0", "0"]], {"backend": "sparse"})
    dm.save(tmp_path / "dm.json")
    back = DiscoveredModel.load(tmp_path / "dm.json")
    assert back.self_exprs == dm.self_exprs and back.inter_exprs == dm.inter_exprs
