import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edmseg.autodiff import Tape, grad_check
from edmseg.errors import NotScalarLoss, NumericFault, ShapeMismatch


def total(tape, t):
    return tape.weighted_sum(t, np.ones(t.shape))


def test_identity_matmul():
    tape = Tape()
    a = tape.leaf(np.arange(6.0).reshape(2, 3))
    out = tape.matmul(a, tape.const(np.eye(3)))
    assert np.array_equal(out.value, a.value)


def test_softmax_examples():
    tape = Tape()
    assert tape.softmax_rows(tape.leaf([[0.0, 0.0]])).value.tolist() == [[0.5, 0.5]]
    x = np.random.default_rng(0).normal(scale=30, size=(50, 9))
    y = tape.softmax_rows(tape.leaf(x)).value
    assert np.abs(y.sum(axis=1) - 1).max() < 1e-12
    assert ((y >= 0) & (y <= 1)).all()


def test_layer_norm_example_and_moments():
    tape = Tape()
    y = tape.layer_norm_rows(tape.leaf([[1.0, 3.0]])).value
    assert y[0] == pytest.approx([-1.0, 1.0], abs=1e-5)
    x = np.random.default_rng(1).normal(3, 50, size=(20, 16))
    z = tape.layer_norm_rows(tape.leaf(x)).value
    assert np.abs(z.mean(axis=1)).max() < 1e-9
    assert np.abs(z.var(axis=1) - 1).max() < 1e-6


def test_square_gradient():
    tape = Tape()
    w = tape.leaf([[3.0]], name="w")
    loss = tape.matmul(w, w)
    assert tape.backward(loss)["w"].tolist() == [[6.0]]


def test_sum_of_softmax_has_zero_gradient():
    tape = Tape()
    x = tape.leaf(np.random.default_rng(2).normal(size=(4, 5)), name="x")
    g = tape.backward(total(tape, tape.softmax_rows(x)))["x"]
    assert np.abs(g).max() < 1e-15


def test_unused_leaf_gets_zero_gradient():
    tape = Tape()
    x = tape.leaf([[1.0, 2.0]], name="x")
    tape.leaf([[5.0]], name="u")
    g = tape.backward(total(tape, tape.gelu(x)))
    assert g["u"].tolist() == [[0.0]]


def test_errors():
    tape = Tape()
    a = tape.leaf(np.ones((2, 3)), name="a")
    with pytest.raises(ShapeMismatch):
        tape.matmul(a, a)
    with pytest.raises(NotScalarLoss):
        tape.backward(tape.gelu(a))
    with pytest.raises(NumericFault):
        tape.scale(a, float("inf"))
    with pytest.raises(NumericFault):
        tape.leaf([[np.nan]])


def linear_build(tape, L):
    y = tape.add(tape.matmul(L["x"], L["W"]), L["b"])
    return total(tape, y)


def small_params(seed):
    rng = np.random.default_rng(seed)
    return {"x": rng.normal(size=(3, 4)), "W": rng.normal(size=(4, 2)), "b": rng.normal(size=(2,))}


def test_linear_layer_is_exact():
    report = grad_check(linear_build, small_params(0))
    assert report["max"] < 1e-7 and not report["failures"]


def test_gelu_over_layer_norm():
    def build(tape, L):
        h = tape.layer_norm_rows(L["x"], L["g"], L["b"])
        return tape.weighted_sum(tape.gelu(h), np.arange(10.0).reshape(2, 5))

    rng = np.random.default_rng(3)
    params = {"x": rng.normal(size=(2, 5)), "g": rng.normal(size=(5,)), "b": rng.normal(size=(5,))}
    assert grad_check(build, params)["max"] < 1e-4


def test_corrupted_gradient_is_caught():
    params = small_params(4)
    tape = Tape()
    leaves = {k: tape.leaf(v, name=k) for k, v in params.items()}
    good = tape.backward(linear_build(tape, leaves))
    bad = dict(good, W=good["W"] * 2)
    report = grad_check(linear_build, params, analytic=bad)
    assert report["errors"]["W"] == pytest.approx(1.0, abs=1e-6)
    assert report["failures"] == ["W"]


def composite(tape, L):
    """Three stacked layers touching every primitive."""
    x = L["x"]
    h = tape.gelu(tape.add(tape.matmul(x, L["w1"]), L["b1"]))
    h = tape.layer_norm_rows(h, L["g"], L["beta"])
    s = tape.softmax_rows(tape.matmul(h, h, transpose_b=True))
    h2 = tape.matmul(s, h)
    both = tape.concat_cols([tape.slice_cols(h2, 0, 2), tape.scale(tape.slice_cols(h2, 2, 4), -0.7)])
    both = tape.add(both, tape.embedding_slice(L["table"], 1, 4))
    z = tape.matmul(both, L["w2"])
    lp = tape.log_softmax_rows(z)
    sp = tape.softplus(tape.mask(z, np.array([[1.0, 0.0, 2.0]] * 3)))
    return tape.add(tape.weighted_sum(lp, np.arange(9.0).reshape(3, 3) / 9),
                    tape.weighted_sum(sp, np.full((3, 3), 0.25)))


def composite_params(seed):
    rng = np.random.default_rng(seed)
    return {"x": rng.normal(size=(3, 5)), "w1": rng.normal(size=(5, 4)), "b1": rng.normal(size=(4,)),
            "g": rng.normal(size=(4,)), "beta": rng.normal(size=(4,)), "table": rng.normal(size=(6, 4)),
            "w2": rng.normal(size=(4, 3))}


@pytest.mark.parametrize("seed", range(5))
def test_random_composition_matches_finite_differences(seed):
    report = grad_check(composite, composite_params(seed))
    assert report["max"] < 1e-4, report["errors"]


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 1000))
@settings(max_examples=25, deadline=None)
def test_gradient_linearity(a, b, seed):
    params = composite_params(seed)

    def grads(fa, fb):
        tape = Tape()
        L = {k: tape.leaf(v, name=k) for k, v in params.items()}
        f = composite(tape, L)
        g = linear_build(tape, {"x": L["x"], "W": L["w1"], "b": L["b1"]})
        parts = []
        if fa:
            parts.append(tape.scale(f, fa))
        if fb:
            parts.append(tape.scale(g, fb))
        loss = parts[0] if len(parts) == 1 else tape.add(*parts)
        return tape.backward(loss)

    both = grads(a or 1.0, b or 1.0)
    ga, gb = grads(a or 1.0, 0), grads(0, b or 1.0)
    for k in params:
        assert np.allclose(both[k], ga[k] + gb[k], rtol=1e-10, atol=1e-10)


def test_backward_is_bit_deterministic():
    def run():
        tape = Tape()
        L = {k: tape.leaf(v, name=k) for k, v in composite_params(9).items()}
        return tape.backward(composite(tape, L))

    one, two = run(), run()
    assert all(np.array_equal(one[k], two[k]) for k in one)
