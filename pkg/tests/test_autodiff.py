"""Oracle and gradient tests for the autodiff core.

Forward ops are checked against naive loop oracles on random small shapes;
backward passes are checked against central finite differences.
"""

import math

import numpy as np
import pytest

from slukit import autodiff as ad
from slukit.params import AdamState, Parameters, adam_update


def rand(rng, *shape):
    return rng.normal(0.0, 1.0, size=shape)


# ---------------------------------------------------------------------------
# forward oracles
# ---------------------------------------------------------------------------


class TestForwardOracles:
    def test_matmul_matches_three_loop_oracle(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            n, k, m = rng.integers(1, 6, size=3)
            a, b = rand(rng, n, k), rand(rng, k, m)
            out = ad.matmul(ad.Tensor(a), ad.Tensor(b)).values
            expect = np.zeros((n, m))
            for i in range(n):
                for j in range(m):
                    for p in range(k):
                        expect[i, j] += a[i, p] * b[p, j]
            np.testing.assert_allclose(out, expect, atol=1e-12)

    def test_matmul_shape_error_names_shapes(self):
        with pytest.raises(ValueError, match=r"\(2, 3\).*\(2, 2\)"):
            ad.matmul(ad.Tensor(np.zeros((2, 3))), ad.Tensor(np.zeros((2, 2))))

    @pytest.mark.parametrize("op,fn", [("add", np.add), ("sub", np.subtract), ("mul", np.multiply)])
    def test_elementwise_with_broadcast(self, op, fn):
        rng = np.random.default_rng(0)
        a, b = rand(rng, 3, 4), rand(rng, 1, 4)
        out = ad.forward_op(op, [ad.Tensor(a), ad.Tensor(b)]).values
        np.testing.assert_allclose(out, fn(a, b), atol=1e-15)

    def test_softmax_trivial_symmetry(self):
        out = ad.softmax_lastdim(ad.Tensor([0.0, 0.0])).values
        np.testing.assert_allclose(out, [[0.5, 0.5]], atol=0)

    def test_softmax_rows_on_simplex(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            x = rand(rng, 4, 5) * 10
            out = ad.softmax_lastdim(ad.Tensor(x)).values
            assert np.all(out >= 0)
            np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)

    def test_sigmoid_of_zero(self):
        assert ad.sigmoid(ad.Tensor([[0.0]])).item() == 0.5

    def test_relu_affine_equals_composed_ops(self):
        rng = np.random.default_rng(1)
        x, w, b = rand(rng, 3, 4), rand(rng, 4, 2), rand(rng, 1, 2)
        fused = ad.relu_affine(ad.Tensor(x), ad.Tensor(w), ad.Tensor(b)).values
        np.testing.assert_allclose(fused, np.maximum(0, x @ w + b), atol=1e-15)

    def test_layer_norm_matches_loop_oracle(self):
        rng = np.random.default_rng(2)
        x, gain, bias = rand(rng, 3, 5), rand(rng, 1, 5), rand(rng, 1, 5)
        out = ad.layer_norm(ad.Tensor(x), ad.Tensor(gain), ad.Tensor(bias)).values
        for i in range(3):
            row = x[i]
            mu = sum(row) / 5
            var = sum((v - mu) ** 2 for v in row) / 5
            for j in range(5):
                expect = (row[j] - mu) / math.sqrt(var + 1e-5) * gain[0, j] + bias[0, j]
                assert abs(out[i, j] - expect) < 1e-12

    def test_concat_slice_roundtrip(self):
        rng = np.random.default_rng(3)
        a, b = rand(rng, 2, 3), rand(rng, 2, 2)
        cat = ad.concat([ad.Tensor(a), ad.Tensor(b)], axis=1)
        np.testing.assert_array_equal(ad.slice_cols(cat, 0, 3).values, a)
        np.testing.assert_array_equal(ad.slice_cols(cat, 3, 5).values, b)

    def test_repeat_and_block_sum_are_duals(self):
        rng = np.random.default_rng(4)
        x = rand(rng, 3, 4)
        rep = ad.repeat_rows(ad.Tensor(x), 5)
        assert rep.shape == (15, 4)
        back = ad.sum_row_blocks(rep, 5).values
        np.testing.assert_allclose(back, 5 * x, atol=1e-15)

    def test_embedding_gathers_rows(self):
        rng = np.random.default_rng(5)
        table = rand(rng, 7, 3)
        out = ad.embedding(ad.Tensor(table), [2, 0, 2]).values
        np.testing.assert_array_equal(out, table[[2, 0, 2]])

    def test_attention_matches_per_head_loop_oracle(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            n, heads, hd = 3, 2, 2
            ha = heads * hd
            q, k, v = rand(rng, n, ha), rand(rng, n, ha), rand(rng, n, ha)
            scale = 1.0 / math.sqrt(hd)
            out = ad.multihead_attention(
                ad.Tensor(q), ad.Tensor(k), ad.Tensor(v), heads, scale, mask=ad.causal_mask(n)
            ).values
            expect = np.zeros((n, ha))
            for h in range(heads):
                cols = slice(h * hd, (h + 1) * hd)
                for i in range(n):
                    logits = [q[i, cols] @ k[j, cols] * scale for j in range(i + 1)]
                    mx = max(logits)
                    ws = [math.exp(l - mx) for l in logits]
                    z = sum(ws)
                    for j in range(i + 1):
                        expect[i, cols] += (ws[j] / z) * v[j, cols]
            np.testing.assert_allclose(out, expect, atol=1e-12)

    def test_attention_single_position_returns_value(self):
        rng = np.random.default_rng(6)
        q, k, v = rand(rng, 1, 4), rand(rng, 1, 4), rand(rng, 1, 4)
        out = ad.multihead_attention(ad.Tensor(q), ad.Tensor(k), ad.Tensor(v), 2, 0.5).values
        np.testing.assert_allclose(out, v, atol=1e-15)

    def test_attention_causal_mask_blocks_future(self):
        rng = np.random.default_rng(7)
        q, k, v = rand(rng, 3, 4), rand(rng, 3, 4), rand(rng, 3, 4)
        base = ad.multihead_attention(
            ad.Tensor(q), ad.Tensor(k), ad.Tensor(v), 2, 1.0, mask=ad.causal_mask(3)
        ).values
        k2, v2 = k.copy(), v.copy()
        k2[1:] = 1e6
        v2[1:] = -1e6
        poked = ad.multihead_attention(
            ad.Tensor(q), ad.Tensor(k2), ad.Tensor(v2), 2, 1.0, mask=ad.causal_mask(3)
        ).values
        np.testing.assert_array_equal(base[0], poked[0])

    def test_attention_mask_length_mismatch_rejected(self):
        rng = np.random.default_rng(8)
        q = ad.Tensor(rand(rng, 3, 4))
        with pytest.raises(ValueError, match="mask"):
            ad.multihead_attention(q, q, q, 2, 1.0, mask=np.ones((2, 2), dtype=bool))

    def test_lstm_single_step_matches_cell_equations(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            d, hidden = 3, 2
            x = rand(rng, 1, d)
            h0 = rand(rng, 1, hidden)
            w_x, w_h, b = rand(rng, d, 4 * hidden), rand(rng, hidden, 4 * hidden), rand(rng, 1, 4 * hidden)
            out = ad.lstm_sequence(ad.Tensor(x), ad.Tensor(h0), ad.Tensor(w_x), ad.Tensor(w_h), ad.Tensor(b)).values
            z = x[0] @ w_x + h0[0] @ w_h + b[0]
            sig = lambda v: 1.0 / (1.0 + math.exp(-v))
            expect = np.zeros(hidden)
            for j in range(hidden):
                i = sig(z[j])
                f = sig(z[hidden + j])
                g = math.tanh(z[2 * hidden + j])
                o = sig(z[3 * hidden + j])
                c = i * g  # initial cell state is zero
                expect[j] = o * math.tanh(c)
            np.testing.assert_allclose(out[0], expect, atol=1e-12)

    def test_lstm_reverse_processes_rows_backwards(self):
        rng = np.random.default_rng(9)
        d, hidden = 2, 3
        x = rand(rng, 4, d)
        h0 = np.zeros((1, hidden))
        w_x, w_h, b = rand(rng, d, 4 * hidden), rand(rng, hidden, 4 * hidden), rand(rng, 1, 4 * hidden)
        fwd_on_flipped = ad.lstm_sequence(
            ad.Tensor(x[::-1].copy()), ad.Tensor(h0), ad.Tensor(w_x), ad.Tensor(w_h), ad.Tensor(b)
        ).values
        rev = ad.lstm_sequence(
            ad.Tensor(x), ad.Tensor(h0), ad.Tensor(w_x), ad.Tensor(w_h), ad.Tensor(b), reverse=True
        ).values
        np.testing.assert_allclose(rev, fwd_on_flipped[::-1], atol=1e-14)

    def test_lstm_hidden_state_bounded(self):
        rng = np.random.default_rng(10)
        d, hidden = 3, 4
        x = rand(rng, 6, d) * 50
        out = ad.lstm_sequence(
            ad.Tensor(x),
            ad.Tensor(np.zeros((1, hidden))),
            ad.Tensor(rand(rng, d, 4 * hidden) * 10),
            ad.Tensor(rand(rng, hidden, 4 * hidden) * 10),
            ad.Tensor(rand(rng, 1, 4 * hidden)),
        ).values
        assert np.all(out > -1) and np.all(out < 1)

    def test_bce_saturated_correct_is_tiny(self):
        logits = ad.Tensor([[20.0, -20.0]])
        loss = ad.bce_with_logits(logits, [[1.0, 0.0]]).item()
        assert loss < 1e-6

    def test_ce_uniform_logits_is_log_k(self):
        k = 7
        loss = ad.ce_with_logits(ad.Tensor(np.zeros((3, k))), [0, 3, 6]).item()
        assert abs(loss - math.log(k)) < 1e-12

    def test_ce_matches_scalar_loop_oracle(self):
        rng = np.random.default_rng(11)
        z = rand(rng, 4, 5)
        ids = [1, 0, 4, 2]
        loss = ad.ce_with_logits(ad.Tensor(z), ids).item()
        total = 0.0
        for i, cls in enumerate(ids):
            denom = sum(math.exp(z[i, j]) for j in range(5))
            total += -math.log(math.exp(z[i, cls]) / denom)
        assert abs(loss - total / 4) < 1e-12

    def test_bce_matches_scalar_loop_oracle(self):
        rng = np.random.default_rng(12)
        z = rand(rng, 3, 4)
        y = (rand(rng, 3, 4) > 0).astype(float)
        loss = ad.bce_with_logits(ad.Tensor(z), y).item()
        total = 0.0
        for i in range(3):
            row = 0.0
            for j in range(4):
                p = 1.0 / (1.0 + math.exp(-z[i, j]))
                row += -(y[i, j] * math.log(p) + (1 - y[i, j]) * math.log(1 - p))
            total += row / 4
        assert abs(loss - total) < 1e-10

    def test_forward_op_rejects_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown op kind"):
            ad.forward_op("conv2d", [ad.Tensor([[1.0]])])

    @pytest.mark.parametrize("seed", range(10))
    def test_every_elementary_op_matches_loop_oracle(self, seed):
        """Sweep each forward op against a plain-Python reference on small shapes."""
        rng = np.random.default_rng(seed)
        n, d = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        a, b = rand(rng, n, d), rand(rng, n, d)
        row = rand(rng, 1, d)
        col = rand(rng, n, 1)

        def loop(fn):
            return np.array([[fn(a[i, j], b[i, j]) for j in range(d)] for i in range(n)])

        np.testing.assert_allclose(ad.add(ad.Tensor(a), ad.Tensor(b)).values, loop(lambda x, y: x + y), atol=1e-12)
        np.testing.assert_allclose(ad.sub(ad.Tensor(a), ad.Tensor(b)).values, loop(lambda x, y: x - y), atol=1e-12)
        np.testing.assert_allclose(ad.mul(ad.Tensor(a), ad.Tensor(b)).values, loop(lambda x, y: x * y), atol=1e-12)
        np.testing.assert_allclose(
            ad.add(ad.Tensor(a), ad.Tensor(row)).values,
            np.array([[a[i, j] + row[0, j] for j in range(d)] for i in range(n)]),
            atol=1e-12,
        )
        np.testing.assert_allclose(
            ad.mul(ad.Tensor(a), ad.Tensor(col)).values,
            np.array([[a[i, j] * col[i, 0] for j in range(d)] for i in range(n)]),
            atol=1e-12,
        )
        np.testing.assert_allclose(ad.scale(ad.Tensor(a), 2.5).values, loop(lambda x, y: 2.5 * x), atol=1e-12)
        np.testing.assert_allclose(
            ad.sigmoid(ad.Tensor(a)).values, loop(lambda x, y: 1 / (1 + math.exp(-x))), atol=1e-12
        )
        np.testing.assert_allclose(ad.tanh(ad.Tensor(a)).values, loop(lambda x, y: math.tanh(x)), atol=1e-12)
        np.testing.assert_allclose(ad.relu(ad.Tensor(a)).values, loop(lambda x, y: max(0.0, x)), atol=1e-12)
        assert ad.sum_all(ad.Tensor(a)).item() == pytest.approx(sum(a[i, j] for i in range(n) for j in range(d)), abs=1e-12)
        np.testing.assert_allclose(
            ad.row_sums(ad.Tensor(a)).values, np.array([[sum(a[i, j] for j in range(d))] for i in range(n)]), atol=1e-12
        )
        np.testing.assert_array_equal(ad.reshape(ad.Tensor(a), n * d, 1).values.reshape(n, d), a)
        np.testing.assert_array_equal(ad.slice_rows(ad.Tensor(a), 0, n).values, a)
        cat = ad.concat([ad.Tensor(a), ad.Tensor(b)], axis=0)
        np.testing.assert_array_equal(cat.values, np.vstack([a, b]))

    def test_determinism_same_inputs_bitwise_identical(self):
        rng = np.random.default_rng(13)
        a, b = rand(rng, 4, 4), rand(rng, 4, 4)
        r1 = ad.multihead_attention(ad.Tensor(a), ad.Tensor(b), ad.Tensor(a), 2, 0.5).values
        r2 = ad.multihead_attention(ad.Tensor(a), ad.Tensor(b), ad.Tensor(a), 2, 0.5).values
        assert np.array_equal(r1, r2)


# ---------------------------------------------------------------------------
# backward: analytic cases and finite differences
# ---------------------------------------------------------------------------


class TestBackward:
    def test_sum_of_squares_gradient(self):
        x = ad.Tensor([[1.0, 2.0]], requires_grad=True)
        loss = ad.sum_all(ad.mul(x, x))
        ad.backward(loss)
        np.testing.assert_allclose(x.grad, [[2.0, 4.0]], atol=0)

    def test_sigmoid_dot_gradient_at_zero(self):
        x_vals = np.array([[1.0, -2.0, 0.5]])
        w = ad.Tensor(np.zeros((3, 1)), requires_grad=True)
        loss = ad.sigmoid(ad.matmul(ad.Tensor(x_vals), w))
        ad.backward(loss)
        np.testing.assert_allclose(w.grad, 0.25 * x_vals.T, atol=1e-15)

    def test_backward_rejects_nonscalar(self):
        x = ad.Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            ad.backward(ad.mul(x, x))

    def test_grad_check_exact_on_quadratic(self):
        err = ad.grad_check(lambda t: ad.sum_all(ad.mul(t, t)), np.array([[3.0]]), eps=1e-5)
        assert err < 1e-8

    def test_grad_check_reports_nonfinite_coordinate(self):
        def bad(t):
            vals = t.values.copy()
            out = ad.Tensor([[float("nan")]]) if vals[0, 0] > 1.0 else ad.sum_all(t)
            return out

        with pytest.raises(ValueError, match="coordinate"):
            ad.grad_check(bad, np.array([[1.0 - 1e-6]]), eps=1e-5)

    @pytest.mark.parametrize("seed", range(5))
    def test_composite_graph_finite_differences(self, seed):
        """Random composite of matmul/tanh/softmax/layer_norm/concat ops."""
        rng = np.random.default_rng(seed)
        w2 = rng.normal(size=(6, 3))
        gain = rng.normal(size=(1, 6))
        bias = rng.normal(size=(1, 6))

        def f(t):
            a = ad.slice_cols(t, 0, 3)
            b = ad.slice_cols(t, 3, 6)
            x = ad.concat([ad.tanh(a), ad.sigmoid(b)], axis=1)
            x = ad.layer_norm(x, ad.Tensor(gain), ad.Tensor(bias))
            x = ad.softmax_lastdim(ad.matmul(x, ad.Tensor(w2)))
            return ad.sum_all(ad.mul(x, x))

        err = ad.grad_check(f, rng.normal(size=(4, 6)), eps=1e-5)
        assert err < 1e-4

    @pytest.mark.parametrize("seed", range(3))
    def test_attention_block_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        n, ha, heads = 3, 4, 2
        mask = ad.causal_mask(n)

        def f(t):
            q = ad.slice_rows(t, 0, n)
            k = ad.slice_rows(t, n, 2 * n)
            v = ad.slice_rows(t, 2 * n, 3 * n)
            out = ad.multihead_attention(q, k, v, heads, 1.0 / math.sqrt(ha // heads), mask=mask)
            return ad.sum_all(ad.mul(out, out))

        err = ad.grad_check(f, rng.normal(size=(3 * n, ha)), eps=1e-5)
        assert err < 1e-4

    @pytest.mark.parametrize("reverse", [False, True])
    def test_lstm_finite_differences_all_inputs(self, reverse):
        rng = np.random.default_rng(0)
        t_len, d, hidden = 3, 2, 2
        sizes = [t_len * d, hidden, d * 4 * hidden, hidden * 4 * hidden, 4 * hidden]

        def f(t):
            flat = t
            lo = 0
            parts = []
            for size in sizes:
                parts.append(ad.slice_cols(flat, lo, lo + size))
                lo += size
            x = parts[0]
            # reshape via row slices of a (1, n) vector is awkward; rebuild with concat
            rows = [ad.slice_cols(x, i * d, (i + 1) * d) for i in range(t_len)]
            x_mat = ad.concat(rows, axis=0)
            h0 = parts[1]
            w_x = ad.concat([ad.slice_cols(parts[2], i * 4 * hidden, (i + 1) * 4 * hidden) for i in range(d)], axis=0)
            w_h = ad.concat(
                [ad.slice_cols(parts[3], i * 4 * hidden, (i + 1) * 4 * hidden) for i in range(hidden)], axis=0
            )
            b = parts[4]
            out = ad.lstm_sequence(x_mat, h0, w_x, w_h, b, reverse=reverse)
            return ad.sum_all(ad.mul(out, out))

        err = ad.grad_check(f, np.random.default_rng(1).normal(size=(1, sum(sizes))), eps=1e-5)
        assert err < 1e-4

    def test_loss_ops_finite_differences(self):
        rng = np.random.default_rng(2)
        targets = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 0.0]])
        err = ad.grad_check(lambda t: ad.bce_with_logits(t, targets), rng.normal(size=(2, 3)), eps=1e-5)
        assert err < 1e-4
        err = ad.grad_check(lambda t: ad.ce_with_logits(t, [2, 0]), rng.normal(size=(2, 4)), eps=1e-5)
        assert err < 1e-4

    def test_embedding_gradient_scatter_adds(self):
        table = ad.Tensor(np.ones((4, 2)), requires_grad=True)
        out = ad.embedding(table, [1, 1, 3])
        ad.backward(ad.sum_all(out))
        expect = np.zeros((4, 2))
        expect[1] = 2.0
        expect[3] = 1.0
        np.testing.assert_array_equal(table.grad, expect)

    def test_grad_accumulates_across_reuse(self):
        x = ad.Tensor([[2.0]], requires_grad=True)
        loss = ad.add(ad.mul(x, x), ad.mul(x, x))
        ad.backward(loss)
        np.testing.assert_allclose(x.grad, [[8.0]], atol=0)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


class TestAdam:
    def make(self, values):
        p = Parameters()
        p.add("w", np.array(values))
        return p

    def test_first_step_moves_by_lr_sign(self):
        p = self.make([[1.0, -1.0]])
        g = np.array([[0.5, -2.0]])
        before = p["w"].values.copy()
        adam_update(p, {"w": g}, AdamState(), lr=0.1)
        step = p["w"].values - before
        np.testing.assert_allclose(step, -0.1 * np.sign(g), atol=1e-6)

    def test_zero_gradient_leaves_params(self):
        p = self.make([[3.0]])
        state = AdamState()
        adam_update(p, {"w": np.zeros((1, 1))}, state, lr=0.1)
        assert p["w"].values[0, 0] == 3.0
        assert state.step_count == 1

    def test_nan_gradient_refused_with_name(self):
        p = self.make([[1.0]])
        with pytest.raises(ValueError, match="'w'"):
            adam_update(p, {"w": np.array([[float("nan")]])}, AdamState(), lr=0.1)

    def test_converges_on_scalar_quadratic(self):
        p = self.make([[0.0]])
        state = AdamState()
        for _ in range(100):
            w = p["w"].values[0, 0]
            adam_update(p, {"w": np.array([[2 * (w - 3.0)]])}, state, lr=0.1)
        assert abs(p["w"].values[0, 0] - 3.0) < 0.1
        assert state.step_count == 100
