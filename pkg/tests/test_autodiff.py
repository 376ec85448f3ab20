import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from framepick.autodiff import Graph, ParameterStore, grad_check
from framepick.errors import ContractError, DomainError, EvaluationError, ShapeError

finite_floats = st.floats(min_value=-20, max_value=20, allow_nan=False)


def scalar(graph, node):
    return float(graph.value(node))


class TestForward:
    def test_cosine_identical(self):
        g = Graph()
        n = g.apply("cosine-similarity", g.constant([1.0, 0.0]), g.constant([1.0, 0.0]))
        assert scalar(g, n) == 1.0

    def test_cosine_hand_value(self):
        g = Graph()
        n = g.apply("cosine-similarity", g.constant([1.0, 1.0]), g.constant([1.0, 0.0]))
        assert scalar(g, n) == 0.7071067811865475

    def test_softmax_symmetry(self):
        g = Graph()
        n = g.apply("softmax-with-temperature", g.constant([1.0, 1.0, 1.0, 1.0]), tau=0.7)
        np.testing.assert_allclose(g.value(n), 0.25, rtol=0, atol=1e-15)

    def test_cross_entropy_uniform_logits(self):
        g = Graph()
        n = g.apply("cross-entropy-with-logits", g.constant([0.0] * 5), target=2)
        assert scalar(g, n) == pytest.approx(math.log(5), abs=1e-15)

    def test_l2_normalize_guards_small_norm(self):
        g = Graph()
        n = g.apply("l2-normalize", g.constant([0.0, 0.0]))
        assert np.all(np.isfinite(g.value(n)))

    def test_matrix_ops(self):
        g = Graph()
        a = g.constant([[1.0, 2.0], [3.0, 4.0]])
        x = g.constant([1.0, 1.0])
        np.testing.assert_array_equal(g.value(g.apply("matrix-vector-product", a, x)), [3.0, 7.0])
        b = g.constant([[1.0, 0.0], [0.0, 1.0]])
        np.testing.assert_array_equal(
            g.value(g.apply("matrix-matrix-product", a, b)), [[1.0, 2.0], [3.0, 4.0]]
        )

    def test_concat_mixes_scalars_and_vectors(self):
        g = Graph()
        n = g.apply("concat", g.constant(1.0), g.constant([2.0, 3.0]), g.constant(4.0))
        np.testing.assert_array_equal(g.value(n), [1.0, 2.0, 3.0, 4.0])

    def test_scalar_multiply(self):
        g = Graph()
        n = g.apply("scalar-multiply", g.constant(2.0), g.constant([1.0, -3.0]))
        np.testing.assert_array_equal(g.value(n), [2.0, -6.0])


class TestErrors:
    def test_shape_mismatch_names_operation_and_shapes(self):
        g = Graph()
        with pytest.raises(ShapeError, match=r"add.*\(2,\).*\(3,\)"):
            g.apply("add", g.constant([1.0, 2.0]), g.constant([1.0, 2.0, 3.0]))

    def test_matvec_shape_error(self):
        g = Graph()
        with pytest.raises(ShapeError, match="matrix-vector-product"):
            g.apply("matrix-vector-product", g.constant([[1.0, 2.0]]), g.constant([1.0, 2.0, 3.0]))

    def test_softmax_requires_positive_tau(self):
        g = Graph()
        with pytest.raises(DomainError, match="tau"):
            g.apply("softmax-with-temperature", g.constant([1.0, 2.0]), tau=0.0)

    def test_log_domain(self):
        g = Graph()
        with pytest.raises(DomainError, match="log"):
            g.apply("log", g.constant([1.0, -1.0]))

    def test_exp_overflow(self):
        g = Graph()
        with pytest.raises(DomainError, match="exp"):
            g.apply("exp", g.constant([1000.0]))

    def test_unknown_kind(self):
        g = Graph()
        with pytest.raises(ContractError, match="unknown primitive"):
            g.apply("transmogrify", g.constant(1.0))

    def test_cross_entropy_target_out_of_range(self):
        g = Graph()
        with pytest.raises(ContractError, match="target"):
            g.apply("cross-entropy-with-logits", g.constant([0.0, 0.0]), target=5)

    def test_backward_requires_scalar_root(self):
        g = Graph()
        vec = g.constant([1.0, 2.0])
        with pytest.raises(ContractError, match="scalar"):
            g.backward(vec)

    def test_constant_rejects_non_finite(self):
        g = Graph()
        with pytest.raises(DomainError):
            g.constant([np.nan])


@settings(max_examples=60)
@given(st.lists(finite_floats, min_size=1, max_size=8), st.floats(min_value=0.1, max_value=5))
def test_softmax_normalization_property(values, tau):
    # tau >= 0.1 keeps the tempered range under ~400, away from exp underflow
    g = Graph()
    p = g.value(g.apply("softmax-with-temperature", g.constant(values), tau=tau))
    assert abs(p.sum() - 1.0) <= 1e-12
    assert np.all(p > 0) and np.all(p < 1 + 1e-15)


@settings(max_examples=60)
@given(
    st.lists(finite_floats, min_size=2, max_size=8),
    st.floats(min_value=-30, max_value=30),
    st.floats(min_value=0.05, max_value=5),
)
def test_softmax_shift_invariance(values, shift, tau):
    g = Graph()
    base = g.value(g.apply("softmax-with-temperature", g.constant(values), tau=tau))
    shifted = g.value(
        g.apply("softmax-with-temperature", g.constant(np.array(values) + shift), tau=tau)
    )
    np.testing.assert_allclose(base, shifted, rtol=0, atol=1e-12)


@settings(max_examples=60)
@given(st.lists(st.floats(min_value=-50, max_value=50), min_size=1, max_size=6))
def test_l2_normalize_unit_norm(values):
    vec = np.array(values)
    if np.linalg.norm(vec) <= 1e-6:
        vec = vec + 1.0
    g = Graph()
    out = g.value(g.apply("l2-normalize", g.constant(vec)))
    assert abs(np.linalg.norm(out) - 1.0) <= 1e-9


def test_topological_ids():
    g = Graph()
    a = g.constant([1.0, 2.0])
    b = g.apply("tanh", a)
    c = g.apply("dot", a, b)
    for nid, node in enumerate(g.nodes):
        assert all(i < nid for i in node.inputs)
    assert c == len(g.nodes) - 1


class TestBackward:
    def test_linear_form_gradient(self):
        store = ParameterStore()
        store.add("p", [1.0, 2.0])
        g = Graph()
        root = g.apply("dot", g.parameter(store, "p"), g.constant([3.0, 4.0]))
        g.backward(root)
        np.testing.assert_array_equal(store.grad("p"), [3.0, 4.0])

    def test_softmax_sum_has_zero_gradient(self):
        store = ParameterStore()
        store.add("x", [0.3, -1.2, 2.0])
        g = Graph()
        sm = g.apply("softmax-with-temperature", g.parameter(store, "x"), tau=0.8)
        g.backward(g.apply("sum", sm))
        np.testing.assert_allclose(store.grad("x"), 0.0, atol=1e-14)

    def test_cosine_gradient_matches_finite_differences(self):
        store = ParameterStore()
        store.add("p", [1.0, 2.0])
        c = np.array([3.0, 4.0])

        def build():
            g = Graph()
            return g, g.apply("cosine-similarity", g.parameter(store, "p"), g.constant(c))

        report = grad_check(build, store, step=1e-6, tolerance=1e-6)
        assert report.passed, report

    def test_backward_accumulates_additively(self):
        store = ParameterStore()
        store.add("p", [1.0, -1.0])
        g = Graph()
        root = g.apply("dot", g.parameter(store, "p"), g.constant([2.0, 5.0]))
        g.backward(root)
        once = store.grad("p").copy()
        g.backward(root)
        np.testing.assert_array_equal(store.grad("p"), 2 * once)

    def test_adjoint_map_covers_parameter_paths_only(self):
        store = ParameterStore()
        store.add("p", [1.0, 1.0])
        g = Graph()
        c = g.constant([2.0, 3.0])
        p = g.parameter(store, "p")
        root = g.apply("dot", p, c)
        adj = g.backward(root)
        np.testing.assert_array_equal(adj[p], [2.0, 3.0])
        # constant-only subgraphs are not differentiated
        assert c not in adj
        np.testing.assert_array_equal(store.grad("p"), [2.0, 3.0])


class TestGradCheck:
    def test_quadratic_norm(self):
        store = ParameterStore()
        store.add("p", [3.0, 4.0])

        def build():
            g = Graph()
            n = g.apply("l2-norm", g.parameter(store, "p"))
            return g, g.apply("elementwise-multiply", n, n)

        store.zero_grads()
        g, root = build()
        g.backward(root)
        np.testing.assert_allclose(store.grad("p"), [6.0, 8.0], atol=1e-12)
        report = grad_check(build, store, step=1e-6, tolerance=1e-8)
        assert report.passed

    def test_rejects_nonpositive_step(self):
        store = ParameterStore()
        store.add("p", [1.0])
        with pytest.raises(DomainError):
            grad_check(lambda: (Graph(), 0), store, step=0.0)

    def test_reports_non_finite_perturbation(self):
        store = ParameterStore()
        store.add("p", [1e-300])

        def build():
            g = Graph()
            return g, g.apply("sum", g.apply("log", g.parameter(store, "p")))

        with pytest.raises((EvaluationError, DomainError)):
            grad_check(build, store, step=1e-6)


# one composite per primitive family so every vjp is exercised against
# central differences
def _zoo(name, store):
    rng = np.random.default_rng(11)
    if name == "normalize-dot":
        store.add("p", rng.standard_normal(3) + 2.0)
        c = rng.standard_normal(3)

        def build():
            g = Graph()
            p = g.parameter(store, "p")
            unit = g.apply("l2-normalize", p)
            return g, g.apply("add", g.apply("dot", unit, g.constant(c)), g.apply("l2-norm", p))

    elif name == "affine-tanh-sum":
        store.add("a", rng.standard_normal((2, 3)) / 2)
        store.add("x", rng.standard_normal(3))

        def build():
            g = Graph()
            h = g.apply("matrix-vector-product", g.parameter(store, "a"), g.parameter(store, "x"))
            return g, g.apply("sum", g.apply("tanh", h))

    elif name == "matmul-sigmoid-mean":
        store.add("a", rng.standard_normal((2, 2)))
        store.add("b", rng.standard_normal((2, 2)))

        def build():
            g = Graph()
            prod = g.apply(
                "matrix-matrix-product", g.parameter(store, "a"), g.parameter(store, "b")
            )
            return g, g.apply("mean", g.apply("sigmoid", prod))

    elif name == "scaled-cross-entropy":
        store.add("s", 1.3)
        store.add("p", rng.standard_normal(4))

        def build():
            g = Graph()
            scaled = g.apply("scalar-multiply", g.parameter(store, "s"), g.parameter(store, "p"))
            return g, g.apply("cross-entropy-with-logits", scaled, target=1)

    elif name == "exp-log-product":
        store.add("p", rng.standard_normal(3))
        store.add("q", rng.standard_normal(3))

        def build():
            g = Graph()
            prod = g.apply("elementwise-multiply", g.parameter(store, "p"), g.parameter(store, "q"))
            return g, g.apply("sum", g.apply("log", g.apply("exp", prod)))

    elif name == "concat-subtract-cosine":
        store.add("a", rng.standard_normal(2))
        store.add("b", 0.7)
        store.add("c", rng.standard_normal(3))

        def build():
            g = Graph()
            left = g.apply("concat", g.parameter(store, "a"), g.parameter(store, "b"))
            right = g.apply("subtract", g.parameter(store, "c"), g.constant(np.ones(3)))
            return g, g.apply("cosine-similarity", left, right)

    elif name == "softmax-dot":
        store.add("p", rng.standard_normal(4))
        c = rng.standard_normal(4)

        def build():
            g = Graph()
            sm = g.apply("softmax-with-temperature", g.parameter(store, "p"), tau=0.7)
            return g, g.apply("dot", sm, g.constant(c))

    else:
        raise AssertionError(name)
    return build


@pytest.mark.parametrize(
    "name",
    [
        "normalize-dot",
        "affine-tanh-sum",
        "matmul-sigmoid-mean",
        "scaled-cross-entropy",
        "exp-log-product",
        "concat-subtract-cosine",
        "softmax-dot",
    ],
)
def test_gradients_match_finite_differences(name):
    store = ParameterStore()
    build = _zoo(name, store)
    report = grad_check(build, store, step=1e-6, tolerance=1e-4)
    assert report.passed, (name, report.max_relative_error, report.worst_parameter)


class TestParameterStore:
    def test_duplicate_name_rejected(self):
        store = ParameterStore()
        store.add("p", [1.0])
        with pytest.raises(ContractError):
            store.add("p", [2.0])

    def test_sgd_step_and_zero(self):
        store = ParameterStore()
        store.add("p", [1.0, 1.0])
        store.accumulate("p", np.array([0.5, -0.5]))
        store.sgd_step(0.1)
        np.testing.assert_allclose(store.value("p"), [0.95, 1.05])
        store.zero_grads()
        np.testing.assert_array_equal(store.grad("p"), [0.0, 0.0])

    def test_zero_learning_rate_is_bitwise_noop(self):
        store = ParameterStore()
        store.add("p", [0.1, -0.2])
        before = store.value("p").tobytes()
        store.accumulate("p", np.array([1.0, 1.0]))
        store.sgd_step(0.0)
        assert store.value("p").tobytes() == before

    def test_set_value_shape_guard(self):
        store = ParameterStore()
        store.add("p", [1.0, 2.0])
        with pytest.raises(ShapeError):
            store.set_value("p", [1.0, 2.0, 3.0])
