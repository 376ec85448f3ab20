import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from framepick.autodiff import Graph, ParameterStore, grad_check
from framepick.errors import ContractError, DomainError
from framepick.sampler import (
    SamplerConfig,
    SelectionResult,
    efraimidis_indices,
    gumbel_keys,
    hard_topk,
    relaxed_topk,
    selection_probabilities,
    wrs_indices,
)


class TestSelectionProbabilities:
    def test_symmetry(self):
        np.testing.assert_allclose(selection_probabilities([1.0, 1.0], 0.3), [0.5, 0.5])

    def test_reference_value(self):
        p = selection_probabilities([2.0, 0.0], 1.0)
        assert p[0] == 0.8807970779778823
        assert p[1] == 0.11920292202211755

    def test_shift_invariance_exact_case(self):
        np.testing.assert_array_equal(
            selection_probabilities([3.0, 1.0], 1.0), selection_probabilities([2.0, 0.0], 1.0)
        )

    def test_rejects_bad_tau_and_scores(self):
        with pytest.raises(DomainError):
            selection_probabilities([1.0, 2.0], 0.0)
        with pytest.raises(DomainError):
            selection_probabilities([1.0, np.inf], 1.0)


@settings(max_examples=80)
@given(
    st.lists(st.floats(min_value=-15, max_value=15), min_size=2, max_size=10),
    st.floats(min_value=-20, max_value=20),
    st.floats(min_value=0.05, max_value=3),
)
def test_probability_shift_invariance_property(scores, shift, tau):
    scores = np.array(scores)
    base = selection_probabilities(scores, tau)
    moved = selection_probabilities(scores + shift, tau)
    assert abs(base.sum() - 1.0) <= 1e-12
    np.testing.assert_allclose(base, moved, rtol=0, atol=1e-12)


class TestWrs:
    def test_k_equals_m_returns_everything(self):
        out = wrs_indices([0.5, -2.0, 3.0], 3, 0.1, np.random.default_rng(0))
        np.testing.assert_array_equal(out, [0, 1, 2])

    def test_dominant_weight_always_selected(self):
        scores = np.array([0.0, 1e6, 0.0, 0.0])
        rng = np.random.default_rng(42)
        assert all(wrs_indices(scores, 1, 0.1, rng)[0] == 1 for _ in range(2000))

    def test_k_exceeding_m_is_contract_error(self):
        with pytest.raises(ContractError, match="exceeds frame count"):
            wrs_indices([1.0, 2.0], 3, 0.1, np.random.default_rng(0))

    def test_monte_carlo_matches_softmax(self):
        scores = np.array([2.0, 0.0, 1.0])
        probs = selection_probabilities(scores, 1.0)
        rng = np.random.default_rng(7)
        n = 20_000
        keys = gumbel_keys(scores, 1.0, rng.random((n, 3)))
        freq = np.bincount(np.argmax(keys, axis=1), minlength=3) / n
        sd = np.sqrt(probs * (1 - probs) / n)
        assert np.all(np.abs(freq - probs) <= 3 * sd)

    def test_vectorized_keys_agree_with_wrs_calls(self):
        scores = np.random.default_rng(3).standard_normal(6)
        for trial in range(50):
            rng = np.random.default_rng(100 + trial)
            u = rng.random(6)
            direct = wrs_indices(scores, 2, 0.4, np.random.default_rng(100 + trial))
            keys = gumbel_keys(scores, 0.4, u)
            expected = np.sort(np.argsort(-keys, kind="stable")[:2])
            np.testing.assert_array_equal(direct, expected)


class TestEfraimidis:
    def test_equal_weights_follow_uniforms(self):
        out = efraimidis_indices([1.0, 1.0, 1.0], 1, np.array([0.9, 0.1, 0.5]))
        np.testing.assert_array_equal(out, [0])

    def test_k_equals_m(self):
        out = efraimidis_indices([1.0, 2.0, 3.0], 3, np.array([0.3, 0.6, 0.2]))
        np.testing.assert_array_equal(out, [0, 1, 2])

    def test_rejects_nonpositive_weights(self):
        with pytest.raises(DomainError):
            efraimidis_indices([1.0, 0.0], 1, np.array([0.5, 0.5]))

    def test_rejects_uniforms_outside_open_interval(self):
        with pytest.raises(DomainError):
            efraimidis_indices([1.0, 1.0], 1, np.array([0.0, 0.5]))

    def test_ranking_equivalence_with_gumbel_keys(self):
        for trial in range(300):
            rng = np.random.default_rng(trial)
            m = int(rng.integers(2, 9))
            scores = rng.standard_normal(m) * 2
            tau = float(rng.uniform(0.3, 2.0))
            u = rng.random(m)
            keys = gumbel_keys(scores, tau, u)
            for k in range(1, m + 1):
                np.testing.assert_array_equal(
                    efraimidis_indices(np.exp(scores / tau), k, u),
                    np.sort(np.argsort(-keys, kind="stable")[:k]),
                )


class TestRelaxedTopK:
    def test_low_temperature_limit_example(self):
        g = Graph()
        sel = relaxed_topk(
            g.constant([5.0, 1.0, 3.0]),
            SamplerConfig(k=2, tau=0.001, stochastic=False),
            None,
            g,
        )
        np.testing.assert_array_equal(sel.indices, [0, 2])
        np.testing.assert_allclose(sel.relaxed_weights, [1.0, 0.0, 1.0], atol=1e-3)

    @pytest.mark.parametrize("stochastic", [False, True])
    @pytest.mark.parametrize("k", [1, 3, 6])
    def test_weights_sum_to_k(self, stochastic, k):
        rng = np.random.default_rng(5)
        scores = rng.standard_normal(6) * 2
        g = Graph()
        sel = relaxed_topk(
            g.constant(scores),
            SamplerConfig(k=k, tau=0.2, stochastic=stochastic),
            np.random.default_rng(9),
            g,
        )
        assert abs(sel.relaxed_weights.sum() - k) <= 1e-6
        assert np.all(sel.relaxed_weights >= 0)

    def test_indices_strictly_ascending(self):
        for trial in range(40):
            rng = np.random.default_rng(trial)
            scores = rng.standard_normal(10)
            g = Graph()
            sel = relaxed_topk(
                g.constant(scores),
                SamplerConfig(k=4, tau=0.3, stochastic=True),
                rng,
                g,
            )
            assert np.all(np.diff(sel.indices) > 0)

    def test_deterministic_tau_sweep_converges_monotonically(self):
        scores = np.array([1.8, 0.0, 0.9, 2.7, -0.9])
        hard = hard_topk(scores, 2)
        prev = None
        for tau in (1.0, 0.1, 0.01, 0.001):
            g = Graph()
            sel = relaxed_topk(
                g.constant(scores), SamplerConfig(k=2, tau=tau, stochastic=False), None, g
            )
            np.testing.assert_array_equal(sel.indices, hard.indices)
            dev = np.max(np.abs(sel.relaxed_weights - hard.relaxed_weights))
            if prev is not None:
                assert dev <= prev
            prev = dev
        assert prev < 1e-3

    def test_seeded_run_is_bitwise_reproducible(self):
        scores = np.random.default_rng(1).standard_normal(8)
        results = []
        for _ in range(2):
            g = Graph()
            sel = relaxed_topk(
                g.constant(scores),
                SamplerConfig(k=3, tau=0.1, stochastic=True),
                np.random.default_rng(123),
                g,
                seed=123,
            )
            results.append(sel)
        assert results[0].indices.tobytes() == results[1].indices.tobytes()
        assert results[0].relaxed_weights.tobytes() == results[1].relaxed_weights.tobytes()
        assert results[0].seed == 123

    def test_discrete_sample_matches_wrs_under_shared_rng(self):
        for trial in range(100):
            scores = np.random.default_rng(trial).standard_normal(12) * 1.5
            for tau in (1.0, 0.1):
                expected = wrs_indices(scores, 4, tau, np.random.default_rng(900 + trial))
                g = Graph()
                sel = relaxed_topk(
                    g.constant(scores),
                    SamplerConfig(k=4, tau=tau, stochastic=True),
                    np.random.default_rng(900 + trial),
                    g,
                )
                np.testing.assert_array_equal(sel.indices, expected)

    def test_shift_invariance_of_selected_indices(self):
        scores = np.random.default_rng(2).standard_normal(7)
        base = wrs_indices(scores, 3, 0.5, np.random.default_rng(4))
        moved = wrs_indices(scores + 11.0, 3, 0.5, np.random.default_rng(4))
        np.testing.assert_array_equal(base, moved)

    def test_gradient_flows_to_scores(self):
        store = ParameterStore()
        rng = np.random.default_rng(0)
        store.add("scores", rng.standard_normal(5))
        coeffs = rng.standard_normal(5)

        def build():
            g = Graph()
            sel = relaxed_topk(
                g.parameter(store, "scores"),
                SamplerConfig(k=2, tau=0.8, stochastic=True),
                np.random.default_rng(42),
                g,
            )
            return g, g.apply("dot", sel.weights_node, g.constant(coeffs))

        report = grad_check(build, store, step=1e-6, tolerance=1e-4)
        assert report.passed
        store.zero_grads()
        g, root = build()
        g.backward(root)
        assert np.linalg.norm(store.grad("scores")) > 1e-6

    def test_stochastic_mode_requires_rng(self):
        g = Graph()
        with pytest.raises(ContractError, match="rng"):
            relaxed_topk(g.constant([1.0, 2.0]), SamplerConfig(k=1, tau=0.1), None, g)

    def test_k_exceeding_m(self):
        g = Graph()
        with pytest.raises(ContractError, match="exceeds frame count"):
            relaxed_topk(
                g.constant([1.0, 2.0]), SamplerConfig(k=3, tau=0.1, stochastic=False), None, g
            )


class TestHardTopK:
    def test_basic_example(self):
        sel = hard_topk([0.1, 0.9, 0.5, 0.7], 2)
        np.testing.assert_array_equal(sel.indices, [1, 3])
        np.testing.assert_array_equal(sel.relaxed_weights, [0.0, 1.0, 0.0, 1.0])
        assert sel.mode == "inference"

    def test_ties_break_toward_earlier_frames(self):
        sel = hard_topk([1.0, 1.0, 1.0, 1.0], 2)
        np.testing.assert_array_equal(sel.indices, [0, 1])

    def test_k_equals_m_identity(self):
        sel = hard_topk([1.0, 2.0, 3.0], 3)
        np.testing.assert_array_equal(sel.indices, [0, 1, 2])

    def test_contract_error(self):
        with pytest.raises(ContractError):
            hard_topk([1.0], 2)


class TestSamplerConfigAndResult:
    def test_config_validation(self):
        with pytest.raises(DomainError):
            SamplerConfig(k=1, tau=0.0)
        with pytest.raises(ContractError):
            SamplerConfig(k=0, tau=0.1)

    def test_result_validation(self):
        with pytest.raises(ContractError, match="ascending"):
            SelectionResult(
                indices=np.array([2, 1]),
                relaxed_weights=np.array([0.0, 1.0, 1.0]),
                mode="inference",
                tau=0.0,
            )
        with pytest.raises(ContractError, match="sum"):
            SelectionResult(
                indices=np.array([0, 1]),
                relaxed_weights=np.array([0.3, 0.3, 0.0]),
                mode="inference",
                tau=0.0,
            )
