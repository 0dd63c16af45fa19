import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from diffgreenhouse import autodiff as ad

finite = st.floats(-3.0, 3.0, allow_nan=False)
vectors = arrays(np.float64, 4, elements=finite)

UNARY = {
    "exp": ad.exp,
    "sigmoid": ad.sigmoid,
    "softplus": ad.softplus,
    "square": lambda x: x * x,
    "log1p": lambda x: ad.log(1.0 + x * x),
    "sqrt": lambda x: ad.sqrt(2.0 + ad.sigmoid(x)),
    "power": lambda x: ad.power(1.5 + ad.sigmoid(x), 3),
    "neg_div": lambda x: -1.0 / (2.0 + x * x),
}


@pytest.mark.parametrize("name", sorted(UNARY))
@settings(max_examples=25, deadline=None)
@given(x=vectors)
def test_elementwise_gradients(name, x):
    f = UNARY[name]
    w = np.arange(1.0, 5.0)
    prog = lambda v: ad.sum(f(v) * w)
    _, g = ad.run_with_gradient(prog, x)
    fd = ad.finite_difference_gradient(prog, x, step=1e-6)
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-6)


@settings(max_examples=25, deadline=None)
@given(a=arrays(np.float64, (2, 3), elements=finite), b=arrays(np.float64, (3, 2), elements=finite))
def test_matmul_and_broadcasting_gradients(a, b):
    def prog(v):
        A = ad.reshape(v[:6], (2, 3))
        B = ad.reshape(v[6:], (3, 2))
        return ad.sum((A @ B) * 2.0 + ad.sum(A, axis=0)[None, :2] / 3.0)

    x = np.concatenate([a.ravel(), b.ravel()])
    _, g = ad.run_with_gradient(prog, x)
    fd = ad.finite_difference_gradient(prog, x, step=1e-6)
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-6)


def test_indexing_stack_assemble_embed_gradients(rng):
    x = rng.standard_normal(5)

    def prog(v):
        m = ad.assemble((2, 2), {(0, 0): v[0], (1, 0): v[1] * v[2], (1, 1): 3.0})
        e = ad.embed(m, (3, 3), (1, 1))
        s = ad.stack([v[3], v[4], v[0]], axis=0)
        picked = v[np.array([0, 0, 4])]
        return ad.sum(ad.matvec(e, s)) + ad.sum(picked * picked) + ad.mean(e.T * e)

    _, g = ad.run_with_gradient(prog, x)
    fd = ad.finite_difference_gradient(prog, x, step=1e-6)
    np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-8)


def test_max_min_send_gradient_to_selected_operand_and_ties_to_first():
    x = np.array([1.0, 2.0, 3.0])
    other = np.array([2.0, 2.0, 2.0])
    _, g = ad.run_with_gradient(lambda v: ad.sum(ad.maximum(v, other)), x)
    np.testing.assert_array_equal(g, [0.0, 1.0, 1.0])
    _, g = ad.run_with_gradient(lambda v: ad.sum(ad.minimum(v, other)), x)
    np.testing.assert_array_equal(g, [1.0, 1.0, 0.0])
    _, g = ad.run_with_gradient(lambda v: ad.sum(ad.maximum(other, v)), x)
    np.testing.assert_array_equal(g, [0.0, 0.0, 1.0])


def test_reused_variable_accumulates():
    _, g = ad.run_with_gradient(lambda v: ad.sum(v * v + v), np.array([3.0]))
    assert g[0] == 7.0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_value_names_operation():
    with pytest.raises(ad.NumericError, match="log"):
        ad.run_with_gradient(lambda v: ad.sum(ad.log(v - 1.0)), np.array([0.5]))
    with pytest.raises(ad.NumericError, match="div"):
        ad.run_with_gradient(lambda v: ad.sum(1.0 / (v - v)), np.array([0.5]))


def test_backward_misuse():
    tape = ad.Tape()
    with pytest.raises(ad.TapeError, match="empty"):
        tape.backward(tape.leaf(1.0))
    x = tape.leaf(np.ones(2))
    y = x * 2.0
    with pytest.raises(ad.TapeError, match="scalar"):
        tape.backward(y)
    other = ad.Tape()
    z = other.leaf(1.0) * 1.0
    with pytest.raises(ad.TapeError, match="belong"):
        tape.backward(z)
    with pytest.raises(ad.TapeError, match="different tapes"):
        x + other.leaf(1.0)


def test_program_without_dependence_has_zero_gradient():
    loss, g = ad.run_with_gradient(lambda v: 4.0, np.ones(3))
    assert loss == 4.0
    np.testing.assert_array_equal(g, 0.0)


def test_plain_arrays_pass_through_untracked():
    out = ad.exp(np.array([0.0])) + ad.sum(np.ones(3))
    assert isinstance(out, np.ndarray) and out[0] == 4.0


def test_finite_difference_rejects_nonpositive_step():
    with pytest.raises(ValueError):
        ad.finite_difference_gradient(lambda v: 0.0, np.ones(1), step=0.0)
