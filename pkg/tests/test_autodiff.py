import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spencer import autodiff as ad
from spencer.errors import ContractError, DegenerateVectorError, DimensionError, ParameterError
from spencer.optim import OptimizerState, optimizer_step

from oracles import op_cases, op_inputs, stable_seed


def const(*arrays):
    g = ad.Graph(record=False)
    return [g.constant(a) for a in arrays]


def test_matmul_identity():
    (a, i) = const([[1.0, 2.0], [3.0, 4.0]], np.eye(2))
    np.testing.assert_array_equal(ad.matmul(a, i).value, [[1, 2], [3, 4]])


def test_matmul_hand_computed():
    a, b = const([[1.0, 2.0]], [[3.0], [4.0]])
    assert ad.matmul(a, b).value.tolist() == [[11.0]]


def test_matmul_shape_mismatch_names_both_shapes():
    a, b = const(np.ones((2, 3)), np.ones((4, 5)))
    with pytest.raises(DimensionError, match=r"\[2, 3\].*\[4, 5\]"):
        ad.matmul(a, b)


def test_elementwise_identities():
    x = np.random.default_rng(0).normal(size=(3, 4))
    (xn, z) = const(x, np.zeros_like(x))
    np.testing.assert_array_equal(ad.add(xn, z).value, x)
    np.testing.assert_array_equal(ad.scale(xn, 1.0).value, x)
    (zero,) = const(np.zeros(1))
    assert ad.tanh(zero).value[0] == 0.0


def test_add_broadcasts_only_bias_rows():
    a, row, col = const(np.ones((3, 2)), np.arange(2.0), np.ones((3, 1)))
    np.testing.assert_array_equal(ad.add(a, row).value, [[1, 2]] * 3)
    with pytest.raises(DimensionError):
        ad.add(a, col)


def test_dropout_rate_zero_and_determinism():
    x = np.random.default_rng(1).normal(size=(5, 7))
    (xn,) = const(x)
    np.testing.assert_array_equal(ad.dropout(xn, 0.0, 3).value, x)
    np.testing.assert_array_equal(ad.dropout(xn, 0.3, 3).value, ad.dropout(xn, 0.3, 3).value)
    assert not np.array_equal(ad.dropout(xn, 0.3, 3).value, ad.dropout(xn, 0.3, 4).value)
    np.testing.assert_array_equal(ad.dropout(xn, 0.3, None).value, x)


def test_dropout_rejects_rate_one():
    (xn,) = const(np.ones(3))
    with pytest.raises(ParameterError):
        ad.dropout(xn, 1.0, 0)


def test_dropout_preserves_expectation():
    (ones,) = const(np.ones(100_000))
    assert abs(ad.dropout(ones, 0.2, 12345).value.mean() - 1.0) <= 0.01


def test_dropout_mask_depends_only_on_seed_and_index():
    small = ad.dropout_mask((10,), 0.5, 9)
    large = ad.dropout_mask((40,), 0.5, 9)
    np.testing.assert_array_equal(small, large[:10])


def test_cosine_values():
    u = np.array([0.3, -1.2, 2.0])
    assert ad.cosine(u, u) == 1.0
    assert ad.cosine([1.0, 0.0], [0.0, 1.0]) == 0.0
    assert abs(ad.cosine([1.0, 1.0], [1.0, 0.0]) - 0.70710678) <= 1e-8
    assert abs(ad.cosine([1.0, 1.0], [1.0, 0.0]) - 1 / math.sqrt(2)) <= 1e-12


def test_cosine_zero_vector():
    with pytest.raises(DegenerateVectorError):
        ad.cosine([0.0, 0.0], [1.0, 0.0])


def test_backward_tanh_at_zero():
    g = ad.Graph()
    x = g.param(np.zeros(1))
    grads = g.backward(ad.sum_(ad.tanh(x)))
    assert grads[x.id][0] == 1.0


def test_backward_needs_scalar():
    g = ad.Graph()
    x = g.param(np.ones(3))
    with pytest.raises(ContractError):
        g.backward(ad.tanh(x))


def test_unused_parameter_gets_zero_gradient():
    g = ad.Graph()
    x, unused = g.param(np.ones(3)), g.param(np.ones((2, 2)))
    grads = g.backward(ad.sum_(ad.tanh(x)))
    np.testing.assert_array_equal(grads[unused.id], np.zeros((2, 2)))


def test_cosine_against_detached_copy_matches_finite_differences():
    u0 = np.random.default_rng(5).normal(size=6)

    def fn(g, nodes):
        return ad.sum_(ad.cosine_rows(nodes[0], g.constant(u0)))

    assert ad.gradcheck(fn, [u0 + 0.1]) <= 1e-4


# one gradient check per differentiable op, each over many seeded instances
@pytest.mark.parametrize("fn", op_cases(), ids=lambda f: f.__name__)
def test_op_gradients_match_finite_differences(fn):
    rng = np.random.default_rng(stable_seed(fn.__name__))
    for _ in range(100):
        assert ad.gradcheck(fn, op_inputs(rng)) <= 1e-4


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31))
def test_matmul_associativity(m, k, j, n, seed):
    rng = np.random.default_rng(seed)
    a, b, c = const(rng.normal(size=(m, k)), rng.normal(size=(k, j)), rng.normal(size=(j, n)))
    left = ad.matmul(ad.matmul(a, b), c).value
    right = ad.matmul(a, ad.matmul(b, c)).value
    assert np.linalg.norm(left - right) <= 1e-9 * max(1.0, np.linalg.norm(left))


def test_non_finite_outputs_are_rejected():
    (x,) = const(np.array([1e308]))
    with pytest.raises(FloatingPointError), np.errstate(over="ignore"):
        ad.scale(x, 10.0)


# ------------------------------------------------------------------ AdamW


def test_adamw_zero_gradient_no_decay_is_noop():
    p = {"w": np.array([1.0, -2.0])}
    out, state = optimizer_step(p, {"w": np.zeros(2)}, OptimizerState(lr=0.1, weight_decay=0.0))
    np.testing.assert_array_equal(out["w"], p["w"])
    assert state.step == 1


def test_adamw_single_step_by_hand():
    # m = 0.1, v = 0.001, m_hat = 1, v_hat = 1 -> p = 1 - 0.1 * 1 / (1 + 1e-8)
    expected = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8)
    out, _ = optimizer_step({"p": np.array(1.0)}, {"p": np.array(1.0)},
                            OptimizerState(lr=0.1, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8))
    assert abs(float(out["p"]) - expected) <= 1e-15
    assert abs(float(out["p"]) - 0.9000000009999999) <= 1e-15


def test_adamw_weight_decay_is_decoupled():
    out, _ = optimizer_step({"p": np.array(2.0)}, {"p": np.array(0.0)},
                            OptimizerState(lr=0.1, weight_decay=0.5))
    assert float(out["p"]) == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)


def test_adamw_is_deterministic_and_counts_steps():
    rng = np.random.default_rng(3)
    p = {"a": rng.normal(size=(3, 3))}
    g = {"a": rng.normal(size=(3, 3))}
    s = OptimizerState(lr=0.01)
    o1, s1 = optimizer_step(p, g, s)
    o2, s2 = optimizer_step(p, g, s)
    assert o1["a"].tobytes() == o2["a"].tobytes()
    _, s3 = optimizer_step(o1, g, s1)
    assert (s1.step, s3.step) == (1, 2)
    assert s3.m["a"].shape == p["a"].shape


def test_adamw_shape_mismatch():
    with pytest.raises(DimensionError):
        optimizer_step({"a": np.ones(3)}, {"a": np.ones(2)}, OptimizerState())
