"""Tape, primitives, and gradient checks against central finite differences."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from earlyrisk import autodiff as ad
from earlyrisk.autodiff import Tape, Tensor
from earlyrisk.errors import ShapeError


def t(values):
    return Tensor(np.array(values, dtype=float))


def rand_tensor(rng, rows, cols, scale=1.0):
    return Tensor(scale * rng.standard_normal((rows, cols)))


class TestPrimitiveValues:
    def test_affine_identity(self):
        out = ad.affine(t(np.eye(2)), t(np.eye(2)), t(np.zeros((1, 2))))
        assert np.array_equal(out.data, np.eye(2))

    def test_affine_hand_value(self):
        out = ad.affine(t([[1.0, 2.0]]), t([[1.0], [1.0]]), t([[3.0]]))
        assert out.data == pytest.approx(np.array([[6.0]]))

    def test_affine_shape_error_reports_both_shapes(self):
        with pytest.raises(ShapeError) as excinfo:
            ad.affine(t(np.zeros((1, 3))), t(np.zeros((2, 1))), t(np.zeros((1, 1))))
        assert "(1, 3)" in str(excinfo.value) and "(2, 1)" in str(excinfo.value)

    def test_conv_k1_equals_affine(self):
        rng = np.random.default_rng(0)
        X = rand_tensor(rng, 7, 3)
        W = rand_tensor(rng, 3, 2)
        b = rand_tensor(rng, 1, 2)
        conv = ad.causal_conv1d(X, [W], b)
        aff = ad.affine(X, W, b)
        assert np.array_equal(conv.data, aff.data)

    def test_conv_k2_hand_recurrence(self):
        # lag-0 weight w1, lag-1 weight w0: y = (w1*x1, w1*x2 + w0*x1)
        w1, w0 = 2.0, 5.0
        x1, x2 = 3.0, 7.0
        out = ad.causal_conv1d(
            t([[x1], [x2]]), [t([[w1]]), t([[w0]])], t([[0.0]])
        )
        assert out.data == pytest.approx(np.array([[w1 * x1], [w1 * x2 + w0 * x1]]))

    def test_conv_zero_weights(self):
        X = t(np.ones((4, 3)))
        zeros = [t(np.zeros((3, 2))) for _ in range(2)]
        out = ad.causal_conv1d(X, zeros, t(np.zeros((1, 2))))
        assert np.array_equal(out.data, np.zeros((4, 2)))

    def test_conv_kernel_longer_than_sequence(self):
        rng = np.random.default_rng(1)
        X = rand_tensor(rng, 2, 1)
        kernel = [rand_tensor(rng, 1, 1) for _ in range(5)]
        out = ad.causal_conv1d(X, kernel, t([[0.0]]))
        expected0 = X.data[0, 0] * kernel[0].data[0, 0]
        assert out.data[0, 0] == pytest.approx(expected0)

    def test_conv_empty_kernel_rejected(self):
        with pytest.raises(ShapeError):
            ad.causal_conv1d(t([[1.0]]), [], t([[0.0]]))

    def test_activations_at_zero(self):
        assert ad.sigmoid(t([[0.0]])).data[0, 0] == 0.5
        assert ad.tanh(t([[0.0]])).data[0, 0] == 0.0

    def test_sigmoid_closed_form(self):
        assert ad.sigmoid(t([[np.log(3.0)]])).data[0, 0] == pytest.approx(
            0.75, abs=1e-14
        )

    def test_elementwise(self):
        a = t([[2.0, 3.0]])
        assert np.array_equal(ad.mul(a, t([[1.0, 1.0]])).data, a.data)
        assert np.array_equal(ad.add(a, t([[0.0, 0.0]])).data, a.data)
        assert ad.mul(a, t([[4.0, 5.0]])).data == pytest.approx(np.array([[8.0, 15.0]]))
        with pytest.raises(ShapeError):
            ad.add(a, t([[1.0]]))

    def test_masked_softmax_uniform(self):
        w = ad.masked_softmax(t([[1.0]] * 4), [True] * 4)
        assert w.data == pytest.approx(np.full((4, 1), 0.25))

    def test_masked_softmax_single_unmasked(self):
        w = ad.masked_softmax(t([[5.0], [1.0], [2.0]]), [False, True, False])
        assert w.data == pytest.approx(np.array([[0.0], [1.0], [0.0]]))

    def test_masked_softmax_closed_form(self):
        w = ad.masked_softmax(t([[0.0], [np.log(3.0)]]), [True, True])
        assert w.data == pytest.approx(np.array([[0.25], [0.75]]), abs=1e-14)

    def test_masked_softmax_all_masked(self):
        w = ad.masked_softmax(t([[1.0], [2.0]]), [False, False])
        assert np.array_equal(w.data, np.zeros((2, 1)))

    def test_slices_and_concat_roundtrip(self):
        rng = np.random.default_rng(2)
        x = rand_tensor(rng, 4, 6)
        back = ad.concat_rows([ad.slice_rows(x, 0, 2), ad.slice_rows(x, 2, 4)])
        assert np.array_equal(back.data, x.data)
        back = ad.concat_cols([ad.slice_cols(x, 0, 1), ad.slice_cols(x, 1, 6)])
        assert np.array_equal(back.data, x.data)


@given(
    scores=st.lists(st.floats(-30, 30), min_size=1, max_size=8),
    data=st.data(),
)
@settings(max_examples=80, deadline=None)
def test_masked_softmax_sums_to_one(scores, data):
    mask = data.draw(
        st.lists(st.booleans(), min_size=len(scores), max_size=len(scores))
    )
    w = ad.masked_softmax(t([[s] for s in scores]), mask)
    assert np.all(w.data >= 0)
    assert np.all(w.data[[not m for m in mask]] == 0.0)
    if any(mask):
        assert abs(w.data.sum() - 1.0) < 1e-12
    else:
        assert w.data.sum() == 0.0


@given(seed=st.integers(0, 10_000), T=st.integers(2, 9), k=st.integers(1, 4))
@settings(max_examples=60, deadline=None)
def test_conv_causality(seed, T, k):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((T, 3))
    kernel = [Tensor(rng.standard_normal((3, 2))) for _ in range(k)]
    b = Tensor(rng.standard_normal((1, 2)))
    base = ad.causal_conv1d(Tensor(X), kernel, b).data
    cut = rng.integers(1, T)
    perturbed = X.copy()
    perturbed[cut:] += rng.standard_normal((T - cut, 3))
    out = ad.causal_conv1d(Tensor(perturbed), kernel, b).data
    assert np.array_equal(base[:cut], out[:cut])


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = t([[1.0, -2.0], [3.0, 4.0]])
        with Tape() as tape:
            loss = ad.sum_all(x)
        grads = ad.backward(tape, loss)
        assert np.array_equal(grads.of(x), np.ones((2, 2)))

    def test_square_gradient(self):
        x = t([[3.0]])
        with Tape() as tape:
            loss = ad.sum_all(ad.mul(x, x))
        grads = ad.backward(tape, loss)
        assert grads.of(x) == pytest.approx(np.array([[6.0]]))

    def test_unreferenced_parameter_gets_zero(self):
        x, unused = t([[2.0]]), t([[9.0]])
        with Tape() as tape:
            loss = ad.sum_all(x)
        grads = ad.backward(tape, loss)
        assert np.array_equal(grads.of(unused), np.zeros((1, 1)))

    def test_loss_not_on_tape_rejected(self):
        x = t([[1.0]])
        with Tape() as tape:
            ad.sum_all(x)
        stray = t([[1.0]])
        with pytest.raises(ValueError, match="not an output"):
            ad.backward(tape, stray)

    def test_non_scalar_loss_rejected(self):
        x = t([[1.0, 2.0]])
        with Tape() as tape:
            y = ad.add(x, x)
        with pytest.raises(ShapeError):
            ad.backward(tape, y)

    def test_determinism_bitwise(self):
        def run():
            rng = np.random.default_rng(7)
            x = Tensor(rng.standard_normal((3, 4)))
            w = Tensor(rng.standard_normal((4, 2)))
            b = Tensor(rng.standard_normal((1, 2)))
            with Tape() as tape:
                loss = ad.sum_all(ad.sigmoid(ad.affine(x, w, b)))
            grads = ad.backward(tape, loss)
            return loss.data.copy(), grads.of(w).copy()

        (l1, g1), (l2, g2) = run(), run()
        assert np.array_equal(l1, l2)
        assert np.array_equal(g1, g2)


class TestGradCheck:
    def test_linear_map_near_exact(self):
        rng = np.random.default_rng(3)
        x = rand_tensor(rng, 2, 3)
        w = rand_tensor(rng, 3, 1)

        def fn(x_, w_):
            return ad.sum_all(ad.matmul(x_, w_))

        assert ad.grad_check(fn, [x, w]) < 1e-8

    def test_constant_function_zero_error(self):
        x = t([[1.0, 2.0]])
        c = t([[5.0]])

        def fn(x_):
            return ad.sum_all(ad.mul(c, c))

        # both analytic and numeric gradients are identically zero
        with Tape() as tape:
            out = fn(x)
        assert np.array_equal(ad.backward(tape, out).of(x), np.zeros((1, 2)))

    def test_sigmoid_chain(self):
        rng = np.random.default_rng(4)
        x = rand_tensor(rng, 2, 2)

        def fn(x_):
            return ad.sum_all(ad.sigmoid(ad.mul(x_, x_)))

        assert ad.grad_check(fn, [x]) < 1e-4

    def test_non_scalar_function_rejected(self):
        x = t([[1.0, 2.0]])
        with pytest.raises(ShapeError):
            ad.grad_check(lambda x_: ad.add(x_, x_), [x])


def _primitive_cases(rng):
    """(name, function, inputs) triples covering every primitive."""
    X = rand_tensor(rng, 5, 3)
    W = rand_tensor(rng, 3, 2)
    b = rand_tensor(rng, 1, 2)
    K = [rand_tensor(rng, 3, 2) for _ in range(3)]
    A = rand_tensor(rng, 4, 4)
    B = rand_tensor(rng, 4, 4)
    S = rand_tensor(rng, 5, 1)
    mask = [True, False, True, True, False]
    row = rand_tensor(rng, 1, 4)
    P = Tensor(rng.uniform(0.05, 0.95, size=(4, 2)))

    def wrap(expr):
        return lambda *args: ad.sum_all(ad.sigmoid(expr(*args)))

    return [
        ("matmul", wrap(ad.matmul), [X, W]),
        ("affine", wrap(ad.affine), [X, W, b]),
        ("causal_conv1d", wrap(lambda x, k0, k1, k2, b_:
                               ad.causal_conv1d(x, [k0, k1, k2], b_)),
         [X, *K, b]),
        ("sigmoid", wrap(ad.sigmoid), [A]),
        ("tanh", wrap(ad.tanh), [A]),
        ("add", wrap(ad.add), [A, B]),
        ("mul", wrap(ad.mul), [A, B]),
        ("masked_softmax", wrap(lambda s: ad.masked_softmax(s, mask)), [S]),
        ("add_rowvec", wrap(ad.add_rowvec), [A, row]),
        ("scale_shift", wrap(lambda x: ad.scale_shift(x, -1.7, 0.4)), [A]),
        ("mul_const", wrap(lambda x: ad.mul_const(x, 2.5)), [A]),
        ("log", wrap(ad.log), [P]),
        ("clamp", wrap(lambda x: ad.clamp(x, 0.1, 0.9)), [P]),
        ("sum_all", lambda x: ad.sum_all(x), [A]),
        ("concat_rows", wrap(lambda a, b_: ad.concat_rows([a, b_])), [A, B]),
        ("concat_cols", wrap(lambda a, b_: ad.concat_cols([a, b_])), [A, B]),
        ("slice_rows", wrap(lambda x: ad.slice_rows(x, 1, 4)), [X]),
        ("slice_cols", wrap(lambda x: ad.slice_cols(x, 0, 2)), [X]),
        ("transpose", wrap(ad.transpose), [X]),
    ]


@pytest.mark.parametrize("point", range(10))
def test_every_primitive_matches_finite_differences(point):
    rng = np.random.default_rng(1000 + point)
    for name, fn, inputs in _primitive_cases(rng):
        err = ad.grad_check(fn, inputs, h=1e-5)
        assert err < 1e-4, f"{name}: relative error {err}"
