import numpy as np
import pytest
from gradutil import assert_grads_match, away_from_kinks, rel_err

from great.tensor import (
    NumericalError,
    ShapeError,
    Tensor,
    add,
    backward,
    concat,
    cross_entropy,
    finite_diff_grad,
    gelu,
    layer_norm,
    matmul,
    mul,
    psum,
    relu,
    reshape,
    scale,
    slice_axis,
    softmax,
    sub,
    tmean,
    transpose,
    tsum,
)


class TestMatmul:
    def test_identity(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = matmul(a, Tensor(np.eye(2)))
        np.testing.assert_array_equal(out.data, a.data)

    def test_known_product(self):
        out = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0, 6.0], [7.0, 8.0]]))
        np.testing.assert_array_equal(out.data, [[19.0, 22.0], [43.0, 50.0]])

    def test_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_records_tape_only_when_needed(self):
        a = Tensor(np.ones((2, 2)), requires_grad=True)
        b = Tensor(np.ones((2, 2)))
        assert matmul(a, b).node is not None
        assert matmul(b, b.detach()).node is None


class TestBackwardExamples:
    def test_sum_of_squares(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        backward(tsum(mul(x, x)))
        np.testing.assert_allclose(x.grad, [2.0, 4.0])

    def test_matmul_rule(self):
        rng = np.random.default_rng(3)
        a = Tensor(rng.uniform(-1, 1, (3, 4)), requires_grad=True)
        b = Tensor(rng.uniform(-1, 1, (4, 2)))
        backward(tsum(matmul(a, b)))
        expected = np.ones((3, 2)) @ b.data.T
        np.testing.assert_allclose(a.grad, expected, rtol=1e-12)

    def test_non_scalar_rejected(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(ShapeError):
            backward(add(x, x))

    def test_off_tape_rejected(self):
        with pytest.raises(ValueError):
            backward(Tensor(1.0, requires_grad=True))

    def test_accumulation_deterministic(self):
        def run():
            rng = np.random.default_rng(11)
            x = Tensor(rng.uniform(-1, 1, (4, 4)), requires_grad=True)
            y = add(matmul(x, x), mul(x, x))
            backward(tsum(matmul(y, x)))
            return x.grad

        np.testing.assert_array_equal(run(), run())


class TestFiniteDiff:
    def test_quadratic(self):
        x = Tensor([1.0, 2.0])
        g = finite_diff_grad(lambda t: float((t.data**2).sum()), x)
        np.testing.assert_allclose(g, [2.0, 4.0], atol=1e-8)

    def test_linear(self):
        x = Tensor(np.random.default_rng(0).uniform(-1, 1, (2, 3)))
        g = finite_diff_grad(lambda t: float(t.data.sum()), x)
        np.testing.assert_allclose(g, np.ones((2, 3)), atol=1e-10)

    def test_matmul_chain_agreement(self):
        rng = np.random.default_rng(7)
        a = Tensor(rng.uniform(-1, 1, (3, 3)), requires_grad=True)
        b = Tensor(rng.uniform(-1, 1, (3, 3)))
        c = Tensor(rng.uniform(-1, 1, (3, 3)))
        backward(tsum(matmul(matmul(a, b), c)))
        analytic = a.grad.copy()
        a.requires_grad = False
        fd = finite_diff_grad(
            lambda t: float(((t.data @ b.data) @ c.data).sum()), a
        )
        assert rel_err(analytic, fd).max() < 1e-6

    def test_nonfinite_reports_index(self):
        x = Tensor([1.0, 1e-6])
        with pytest.raises(NumericalError, match=r"\(1,\)"):
            with np.errstate(invalid="ignore"):
                finite_diff_grad(lambda t: float(np.log(t.data).sum()), x)

    def test_bad_eps(self):
        with pytest.raises(ValueError):
            finite_diff_grad(lambda t: 0.0, Tensor([1.0]), eps=0.0)


class TestSoftmax:
    def test_symmetry(self):
        np.testing.assert_allclose(softmax(Tensor([0.0, 0.0]), axis=0).data, [0.5, 0.5])

    def test_stability(self):
        out = softmax(Tensor([1000.0, 1000.0]), axis=0).data
        assert np.isfinite(out).all()
        np.testing.assert_allclose(out, [0.5, 0.5])

    def test_hand_value(self):
        out = softmax(Tensor([0.0, np.log(3.0)]), axis=0).data
        np.testing.assert_allclose(out, [0.25, 0.75], atol=1e-15)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(5)
        for seed in range(10):
            x = Tensor(np.random.default_rng(seed).uniform(-50, 50, (4, 7)))
            s = softmax(x, axis=1).data
            np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-12)

    def test_constant_shift_invariance(self):
        rng = np.random.default_rng(9)
        x = rng.uniform(-2, 2, (3, 5))
        a = softmax(Tensor(x), axis=1).data
        b = softmax(Tensor(x + 1000.0), axis=1).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_bad_axis(self):
        with pytest.raises(ShapeError):
            softmax(Tensor(np.zeros((2, 2))), axis=5)


class TestLayerNorm:
    def test_constant_input(self):
        out = layer_norm(Tensor([5.0, 5.0, 5.0]), Tensor(np.ones(3)), Tensor(np.zeros(3)))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 0.0])

    def test_hand_value(self):
        out = layer_norm(
            Tensor([1.0, 2.0, 3.0]), Tensor(np.ones(3)), Tensor(np.zeros(3)), eps=1e-12
        )
        expected = (np.array([1.0, 2.0, 3.0]) - 2.0) / np.sqrt(2.0 / 3.0 + 1e-12)
        np.testing.assert_allclose(out.data, expected, atol=1e-4)
        np.testing.assert_allclose(out.data, [-1.2247, 0.0, 1.2247], atol=1e-4)

    def test_zero_gamma_shift(self):
        out = layer_norm(
            Tensor([3.0, -1.0, 9.0]), Tensor(np.zeros(3)), Tensor(np.full(3, 7.0))
        )
        np.testing.assert_array_equal(out.data, [7.0, 7.0, 7.0])

    def test_normalization_moments(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.uniform(-10, 10, (6, 5, 32)))
        out = layer_norm(x, Tensor(np.ones(32)), Tensor(np.zeros(32))).data
        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-9)
        np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            layer_norm(Tensor(np.zeros((2, 4))), Tensor(np.ones(3)), Tensor(np.zeros(4)))

    def test_bad_eps(self):
        with pytest.raises(ValueError):
            layer_norm(Tensor(np.zeros(3)), Tensor(np.ones(3)), Tensor(np.zeros(3)), eps=0.0)


class TestCrossEntropy:
    def test_uniform_logits(self):
        logits = Tensor(np.zeros((4, 3)))
        loss = cross_entropy(logits, np.zeros(4, dtype=int))
        np.testing.assert_allclose(loss.item(), np.log(3.0), rtol=1e-12)

    def test_target_validation(self):
        with pytest.raises(ValueError):
            cross_entropy(Tensor(np.zeros((2, 3))), np.array([0, 3]))
        with pytest.raises(ShapeError):
            cross_entropy(Tensor(np.zeros((2, 3))), np.zeros((3,), dtype=int))

    def test_stable_at_large_logits(self):
        logits = Tensor(np.array([[1000.0, 0.0], [0.0, 1000.0]]))
        loss = cross_entropy(logits, np.array([0, 1]))
        assert np.isfinite(loss.item())


class TestGradientsAgainstFiniteDifferences:
    """Every differentiable op, 20 seeds, inputs in [-1, 1], rtol 1e-4."""

    @pytest.mark.parametrize("seed", range(20))
    def test_composite_all_ops(self, seed):
        rng = np.random.default_rng(seed)
        x = Tensor(away_from_kinks(rng.uniform(-1, 1, (4, 6))), requires_grad=True)
        w = Tensor(rng.uniform(-1, 1, (6, 6)), requires_grad=True)
        gamma = Tensor(rng.uniform(0.5, 1.5, 6), requires_grad=True)
        beta = Tensor(rng.uniform(-0.5, 0.5, 6), requires_grad=True)
        cot = Tensor(rng.uniform(-1, 1, (4, 6)))

        def make_loss():
            h = matmul(x, w)
            h = layer_norm(h, gamma, beta)
            h = add(gelu(h), relu(slice_axis(concat([h, h], axis=1), 1, 3, 9)))
            h = mul(softmax(h, axis=1), cot)
            h = sub(h, scale(transpose(transpose(h)), 0.5))
            return add(tsum(reshape(h, (2, 12))), tmean(h))

        assert_grads_match(make_loss, {"x": x, "w": w, "gamma": gamma, "beta": beta})

    @pytest.mark.parametrize("seed", range(5))
    def test_batched_matmul_and_psum(self, seed):
        rng = np.random.default_rng(seed)
        a = Tensor(rng.uniform(-1, 1, (5, 3, 4)), requires_grad=True)
        b = Tensor(rng.uniform(-1, 1, (5, 4, 2)), requires_grad=True)
        c = Tensor(rng.uniform(-1, 1, (2, 6)), requires_grad=True)
        cot = Tensor(rng.uniform(-1, 1, (3, 6)))

        def make_loss():
            prod = matmul(a, b)  # (5, 3, 2)
            folded = psum(prod, axis=0)  # (3, 2)
            return tsum(mul(matmul(folded, c), cot))

        assert_grads_match(make_loss, {"a": a, "b": b, "c": c})

    @pytest.mark.parametrize("seed", range(5))
    def test_cross_entropy_grad(self, seed):
        rng = np.random.default_rng(seed)
        logits = Tensor(rng.uniform(-1, 1, (6, 4)), requires_grad=True)
        target = rng.integers(0, 4, 6)
        assert_grads_match(lambda: cross_entropy(logits, target), {"logits": logits})


class TestPsum:
    def test_matches_plain_sum(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-1, 1, (7, 3, 2))
        np.testing.assert_allclose(psum(Tensor(x), axis=0).data, x.sum(axis=0), rtol=1e-12)

    def test_permutation_invariant_bits(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(-1, 1, (32, 5, 4))
        base = psum(Tensor(x), axis=0).data
        for seed in range(10):
            pi = np.random.default_rng(seed).permutation(32)
            out = psum(Tensor(x[pi]), axis=0).data
            assert (out == base).all()


class TestPurity:
    def test_bit_identical_repeats(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.uniform(-1, 1, (5, 8)))
        g = Tensor(np.ones(8))
        b = Tensor(np.zeros(8))
        for op in (
            lambda: gelu(x).data,
            lambda: softmax(x, axis=1).data,
            lambda: layer_norm(x, g, b).data,
            lambda: matmul(x, transpose(x)).data,
        ):
            np.testing.assert_array_equal(op(), op())

    def test_inputs_not_mutated(self):
        x = Tensor(np.array([1.0, -2.0, 3.0]))
        snapshot = x.data.copy()
        gelu(x), relu(x), softmax(x, axis=0)
        layer_norm(x, Tensor(np.ones(3)), Tensor(np.zeros(3)))
        np.testing.assert_array_equal(x.data, snapshot)

    def test_finite_outputs_on_finite_inputs(self):
        rng = np.random.default_rng(6)
        x = Tensor(rng.uniform(-100, 100, (4, 16)))
        for out in (
            softmax(x, axis=1).data,
            gelu(x).data,
            layer_norm(x, Tensor(np.ones(16)), Tensor(np.zeros(16))).data,
        ):
            assert np.isfinite(out).all()
