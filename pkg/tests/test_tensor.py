"""Gradient fidelity and forward contracts of the tensor kernel.

Every primitive is checked against central finite differences on dozens of
random instances; forward values are pinned with analytic cases.
"""

import numpy as np
import pytest

import lscqa.tensor as T
from helpers_fd import check_op_gradients, max_rel_err, numeric_grad

RNG = np.random.default_rng(20240811)
N_INSTANCES = 50
TOL = 1e-6


def random_shape(rng, lo=1, hi=6):
    return (int(rng.integers(lo, hi)), int(rng.integers(lo, hi)))


class TestForwardValues:
    def test_matmul_identity(self):
        a = T.Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = T.matmul(a, T.Tensor(np.eye(2)))
        np.testing.assert_array_equal(out.values, [[1.0, 2.0], [3.0, 4.0]])

    def test_matmul_transpose_b(self):
        a = RNG.standard_normal((3, 4))
        b = RNG.standard_normal((5, 4))
        out = T.matmul(T.Tensor(a), T.Tensor(b), transpose_b=True)
        np.testing.assert_allclose(out.values, a @ b.T)

    def test_softmax_symmetry(self):
        out = T.softmax_rows(T.Tensor([0.0, 0.0]))
        np.testing.assert_allclose(out.values, [0.5, 0.5])

    def test_softmax_rows_sum_to_one(self):
        x = RNG.standard_normal((6, 9)) * 10
        out = T.softmax_rows(T.Tensor(x))
        np.testing.assert_allclose(out.values.sum(axis=1), 1.0, atol=1e-12)

    def test_cross_entropy_uniform_logits(self):
        logits = T.Tensor(np.zeros((3, 7)))
        out = T.cross_entropy_with_logits(logits, [0, 3, 6])
        assert out.values == pytest.approx(np.log(7), abs=1e-12)

    def test_layernorm_standardizes(self):
        x = RNG.standard_normal((5, 16)) * 3 + 2
        gain = T.Tensor(np.ones(16))
        bias = T.Tensor(np.zeros(16))
        out = T.layernorm_rows(T.Tensor(x), gain, bias).values
        assert np.abs(out.mean(axis=1)).max() < 1e-12
        assert np.abs(out.var(axis=1) - 1.0).max() < 1e-9

    def test_gelu_known_points(self):
        out = T.gelu(T.Tensor([0.0, 100.0, -100.0]))
        np.testing.assert_allclose(out.values, [0.0, 100.0, 0.0], atol=1e-10)

    def test_determinism_bit_identical(self):
        x = RNG.standard_normal((4, 8))
        a = T.softmax_rows(T.gelu(T.Tensor(x))).values
        b = T.softmax_rows(T.gelu(T.Tensor(x))).values
        assert np.array_equal(a, b)


class TestShapeErrors:
    def test_matmul_mismatch(self):
        with pytest.raises(T.TensorError, match="matmul"):
            T.matmul(T.Tensor(np.zeros((2, 3))), T.Tensor(np.zeros((2, 3))))

    def test_add_mismatch(self):
        with pytest.raises(T.TensorError, match="add"):
            T.add(T.Tensor(np.zeros((2, 3))), T.Tensor(np.zeros((3, 2))))

    def test_cross_entropy_empty_batch(self):
        with pytest.raises(T.TensorError, match="empty"):
            T.cross_entropy_with_logits(T.Tensor(np.zeros((0, 4))), [])

    def test_gather_out_of_range(self):
        with pytest.raises(T.TensorError, match="gather"):
            T.gather_rows(T.Tensor(np.zeros((2, 3))), [5])


class TestBackwardMechanics:
    def test_square_derivative(self):
        x = T.Tensor([[3.0]], requires_grad=True)
        y = T.matmul(x, x)
        T.backward(T.mean(y))
        assert x.grad[0, 0] == pytest.approx(6.0)

    def test_backward_twice_errors(self):
        x = T.Tensor([[1.0]], requires_grad=True)
        loss = T.mean(T.scale(x, 2.0))
        T.backward(loss)
        with pytest.raises(T.TensorError, match="reset"):
            T.backward(loss)
        T.reset_backward(loss)
        T.backward(loss)
        assert x.grad[0, 0] == pytest.approx(2.0)

    def test_backward_needs_scalar(self):
        x = T.Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(T.TensorError, match="scalar"):
            T.backward(T.scale(x, 1.0))

    def test_grad_accumulates_over_reuse(self):
        x = T.Tensor([[2.0]], requires_grad=True)
        y = T.add(x, x)
        T.backward(T.mean(y))
        assert x.grad[0, 0] == pytest.approx(2.0)


class TestGradientChecks:
    """Central-difference fidelity for every primitive, many random instances."""

    def test_matmul(self):
        for _ in range(N_INSTANCES):
            n, k, m = (int(RNG.integers(1, 6)) for _ in range(3))
            err = check_op_gradients(
                lambda a, b: T.matmul(a, b),
                [RNG.standard_normal((n, k)), RNG.standard_normal((k, m))],
                RNG,
            )
            assert err < TOL

    def test_matmul_transposed(self):
        for _ in range(N_INSTANCES):
            n, k, m = (int(RNG.integers(1, 6)) for _ in range(3))
            err = check_op_gradients(
                lambda a, b: T.matmul(a, b, transpose_b=True),
                [RNG.standard_normal((n, k)), RNG.standard_normal((m, k))],
                RNG,
            )
            assert err < TOL

    def test_add(self):
        for _ in range(N_INSTANCES):
            shape = random_shape(RNG)
            err = check_op_gradients(
                T.add, [RNG.standard_normal(shape), RNG.standard_normal(shape)], RNG
            )
            assert err < TOL

    def test_add_row_broadcast(self):
        for _ in range(N_INSTANCES):
            shape = random_shape(RNG)
            err = check_op_gradients(
                T.add, [RNG.standard_normal(shape), RNG.standard_normal(shape[1])], RNG
            )
            assert err < TOL

    def test_scale(self):
        for _ in range(N_INSTANCES):
            c = float(RNG.standard_normal())
            err = check_op_gradients(
                lambda a: T.scale(a, c), [RNG.standard_normal(random_shape(RNG))], RNG
            )
            assert err < TOL

    def test_concat_rows(self):
        for _ in range(N_INSTANCES):
            width = int(RNG.integers(1, 5))
            parts = [RNG.standard_normal((int(RNG.integers(1, 4)), width)) for _ in range(3)]
            err = check_op_gradients(lambda *p: T.concat_rows(list(p)), parts, RNG)
            assert err < TOL

    def test_concat_cols(self):
        for _ in range(N_INSTANCES):
            height = int(RNG.integers(1, 5))
            parts = [RNG.standard_normal((height, int(RNG.integers(1, 4)))) for _ in range(3)]
            err = check_op_gradients(lambda *p: T.concat_cols(list(p)), parts, RNG)
            assert err < TOL

    def test_slice_cols(self):
        for _ in range(N_INSTANCES):
            n, m = int(RNG.integers(1, 5)), int(RNG.integers(2, 7))
            lo = int(RNG.integers(0, m - 1))
            hi = int(RNG.integers(lo + 1, m + 1))
            err = check_op_gradients(
                lambda a: T.slice_cols(a, lo, hi), [RNG.standard_normal((n, m))], RNG
            )
            assert err < TOL

    def test_gather_rows(self):
        for _ in range(N_INSTANCES):
            rows, width = int(RNG.integers(2, 6)), int(RNG.integers(1, 5))
            idx = [int(i) for i in RNG.integers(0, rows, size=int(RNG.integers(1, 6)))]
            err = check_op_gradients(
                lambda t: T.gather_rows(t, idx), [RNG.standard_normal((rows, width))], RNG
            )
            assert err < TOL

    def test_softmax_rows(self):
        for _ in range(N_INSTANCES):
            err = check_op_gradients(
                T.softmax_rows, [RNG.standard_normal(random_shape(RNG)) * 3], RNG
            )
            assert err < TOL

    def test_layernorm_rows(self):
        # the pinned case: h=1e-5 on a random 4x8 input
        err = check_op_gradients(
            T.layernorm_rows,
            [RNG.standard_normal((4, 8)), RNG.standard_normal(8), RNG.standard_normal(8)],
            RNG,
            h=1e-5,
        )
        assert err < TOL
        for _ in range(N_INSTANCES):
            n, m = int(RNG.integers(1, 5)), int(RNG.integers(2, 8))
            err = check_op_gradients(
                T.layernorm_rows,
                [RNG.standard_normal((n, m)) * 2, RNG.standard_normal(m), RNG.standard_normal(m)],
                RNG,
            )
            assert err < TOL

    def test_gelu(self):
        for _ in range(N_INSTANCES):
            err = check_op_gradients(T.gelu, [RNG.standard_normal(random_shape(RNG)) * 2], RNG)
            assert err < TOL

    def test_mean(self):
        for _ in range(N_INSTANCES):
            err = check_op_gradients(T.mean, [RNG.standard_normal(random_shape(RNG))], RNG)
            assert err < TOL

    def test_cross_entropy_with_logits(self):
        for _ in range(N_INSTANCES):
            n, c = int(RNG.integers(1, 5)), int(RNG.integers(2, 7))
            targets = [int(t) for t in RNG.integers(0, c, size=n)]
            err = check_op_gradients(
                lambda lg: T.cross_entropy_with_logits(lg, targets),
                [RNG.standard_normal((n, c)) * 2],
                RNG,
            )
            assert err < TOL

    def test_multihead_attention(self):
        for _ in range(12):
            t_len, heads, d_head = int(RNG.integers(2, 6)), 2, int(RNG.integers(1, 4))
            d_model = heads * d_head
            arrays = [RNG.standard_normal((t_len, d_model))] + [
                RNG.standard_normal((d_model, d_model)) * 0.5 for _ in range(4)
            ]
            err = check_op_gradients(
                lambda x, wq, wk, wv, wo: T.multihead_attention(x, wq, wk, wv, wo, heads),
                arrays,
                RNG,
            )
            assert err < TOL

    def test_multihead_attention_blocked(self):
        for _ in range(8):
            heads, d_head = 2, 3
            d_model = heads * d_head
            sizes = [int(RNG.integers(1, 4)) for _ in range(3)]
            total = sum(sizes)
            blocks, lo = [], 0
            for s in sizes:
                blocks.append((lo, lo + s))
                lo += s
            arrays = [RNG.standard_normal((total, d_model))] + [
                RNG.standard_normal((d_model, d_model)) * 0.5 for _ in range(4)
            ]
            err = check_op_gradients(
                lambda x, wq, wk, wv, wo: T.multihead_attention(x, wq, wk, wv, wo, heads, blocks=blocks),
                arrays,
                RNG,
            )
            assert err < TOL

    def test_blocked_attention_matches_per_block(self):
        heads, d_model = 2, 8
        sizes = [3, 2, 4]
        total = sum(sizes)
        x = RNG.standard_normal((total, d_model))
        ws = [RNG.standard_normal((d_model, d_model)) * 0.5 for _ in range(4)]
        blocks, lo = [], 0
        for s in sizes:
            blocks.append((lo, lo + s))
            lo += s
        full = T.multihead_attention(T.Tensor(x), *[T.Tensor(w) for w in ws], heads, blocks=blocks)
        for blo, bhi in blocks:
            single = T.multihead_attention(
                T.Tensor(x[blo:bhi]), *[T.Tensor(w) for w in ws], heads
            )
            np.testing.assert_array_equal(full.values[blo:bhi], single.values)


class TestCheckpointArrays:
    def test_save_load_roundtrip(self, tmp_path):
        named = {
            "weights": T.Tensor(RNG.standard_normal((3, 4))),
            "bias": T.Tensor(RNG.standard_normal(4)),
        }
        path = tmp_path / "ckpt.npz"
        T.save_arrays(path, named)
        loaded = T.load_arrays(path)
        assert set(loaded) == {"weights", "bias"}
        np.testing.assert_array_equal(loaded["weights"], named["weights"].values)
