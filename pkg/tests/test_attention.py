import numpy as np
import pytest
from gradutil import assert_grads_match

from great.attention import (
    AttentionHead,
    MhaWeights,
    attention_state_size,
    init_mha,
    mha_forward,
)
from great.patching import TokenGrid
from great.tensor import ShapeError, Tensor, mul, tsum


def grid(tokens, l=1):
    arr = np.asarray(tokens, dtype=np.float64)
    n, l2, _ = arr.shape
    return TokenGrid(Tensor(arr), l, n * l2 // l, l)


def dense_attention_oracle(x, w):
    """Plain numpy reimplementation used as the expected-value source."""
    t, c = x.shape
    outs = []
    for head in w.heads:
        q = x @ head.wq.data / np.sqrt(head.wq.data.shape[1])
        k = x @ head.wk.data
        v = x @ head.wv.data
        scores = q @ k.T
        e = np.exp(scores - scores.max(axis=1, keepdims=True))
        p = e / e.sum(axis=1, keepdims=True)
        outs.append(p @ v)
    return np.concatenate(outs, axis=1) @ w.out.data


class TestMhaForward:
    def test_single_token(self):
        rng = np.random.default_rng(0)
        x = grid(rng.uniform(-1, 1, (1, 1, 4)))
        w = init_mha(rng, 4, 2)
        out = mha_forward(x, w).tokens.data.reshape(1, 4)
        seq = x.tokens.data.reshape(1, 4)
        merged = np.concatenate([seq @ h.wv.data for h in w.heads], axis=1)
        np.testing.assert_allclose(out, merged @ w.out.data, rtol=1e-12)

    def test_zero_query_uniform_attention(self):
        rng = np.random.default_rng(1)
        x = grid(rng.uniform(-1, 1, (2, 4, 6)))
        w = init_mha(rng, 6, 1)
        w.heads[0].wq.data = np.zeros_like(w.heads[0].wq.data)
        out = mha_forward(x, w).tokens.data.reshape(8, 6)
        seq = x.tokens.data.reshape(8, 6)
        v = seq @ w.heads[0].wv.data
        expected = np.tile(v.mean(axis=0), (8, 1)) @ w.out.data
        np.testing.assert_allclose(out, expected, rtol=1e-10)

    def test_two_token_hand_example(self):
        # projected per-token scalars q=[1,2], k=[1,0], v=[10,20]; the second
        # head is zeroed and the output map passes head 1 through channel 0
        x = grid(np.array([[[1.0, 0.0]], [[0.0, 1.0]]]))
        head1 = AttentionHead(
            wq=Tensor([[1.0], [2.0]]), wk=Tensor([[1.0], [0.0]]), wv=Tensor([[10.0], [20.0]])
        )
        head2 = AttentionHead(
            wq=Tensor([[0.0], [0.0]]), wk=Tensor([[0.0], [0.0]]), wv=Tensor([[0.0], [0.0]])
        )
        w = MhaWeights(heads=[head1, head2], out=Tensor([[1.0, 0.0], [0.0, 0.0]]))
        out = mha_forward(x, w).tokens.data.reshape(2, 2)

        # oracle: row softmax of [[1,0],[2,0]] applied to [10,20]
        e1 = np.exp([1.0, 0.0])
        e2 = np.exp([2.0, 0.0])
        expected = np.array(
            [
                (e1 / e1.sum()) @ np.array([10.0, 20.0]),
                (e2 / e2.sum()) @ np.array([10.0, 20.0]),
            ]
        )
        np.testing.assert_allclose(out[:, 0], expected, rtol=1e-12)
        np.testing.assert_allclose(out[:, 1], 0.0, atol=1e-15)

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(2)
        x = grid(rng.uniform(-1, 1, (4, 4, 8)))
        w = init_mha(rng, 8, 2)
        out = mha_forward(x, w).tokens.data.reshape(16, 8)
        np.testing.assert_allclose(out, dense_attention_oracle(x.tokens.data.reshape(16, 8), w), rtol=1e-12)

    def test_attention_rows_sum_to_one(self):
        rng = np.random.default_rng(3)
        x = grid(rng.uniform(-1, 1, (4, 4, 8)))
        w = init_mha(rng, 8, 2)
        seen = []
        mha_forward(x, w, probe=lambda name, buf: seen.append(buf.copy()))
        assert len(seen) == 2
        for scores in seen:
            e = np.exp(scores - scores.max(axis=1, keepdims=True))
            p = e / e.sum(axis=1, keepdims=True)
            np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)

    def test_token_permutation_equivariance(self):
        rng = np.random.default_rng(4)
        n, l2, c = 6, 1, 8
        x = rng.uniform(-1, 1, (n, l2, c))
        w = init_mha(rng, c, 2)
        base = mha_forward(grid(x), w).tokens.data
        for seed in range(5):
            pi = np.random.default_rng(seed).permutation(n)
            out = mha_forward(grid(x[pi]), w).tokens.data
            np.testing.assert_allclose(out, base[pi], rtol=1e-12, atol=1e-14)

    @pytest.mark.parametrize("seed", range(3))
    def test_gradients_match_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        n, l2, c = 2, 4, 4
        x = Tensor(rng.uniform(-1, 1, (n, l2, c)), requires_grad=True)
        w = init_mha(rng, c, 2)
        cot = Tensor(rng.uniform(-1, 1, (n, l2, c)))
        leaves = {"x": x, "out": w.out}
        for h, head in enumerate(w.heads):
            leaves[f"h{h}.wq"] = head.wq
            leaves[f"h{h}.wk"] = head.wk
            leaves[f"h{h}.wv"] = head.wv

        def make_loss():
            return tsum(mul(mha_forward(TokenGrid(x, 2, 4, 2), w).tokens, cot))

        assert_grads_match(make_loss, leaves)

    def test_channel_mismatch(self):
        rng = np.random.default_rng(5)
        x = grid(rng.uniform(-1, 1, (2, 2, 6)))
        with pytest.raises(ShapeError):
            mha_forward(x, init_mha(rng, 4, 2))

    def test_head_divisibility(self):
        rng = np.random.default_rng(6)
        with pytest.raises(ShapeError):
            init_mha(rng, 6, 4)


class TestStateSize:
    def test_trivial(self):
        assert attention_state_size(1) == 1

    def test_closed_form(self):
        assert attention_state_size(1024) == 1_048_576

    def test_ratio_against_graph_state(self):
        m = 16
        assert attention_state_size(1024) // (m * m) == 4096

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            attention_state_size(0)
