import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unimixer import tensor_ops as T
from unimixer.errors import DimensionError


class TestMatmul:
    def test_identity(self):
        a = np.arange(6.0).reshape(2, 3)
        assert np.array_equal(T.matmul(np.eye(2), a), a)

    def test_hand_example(self):
        out = T.matmul([[1.0, 2.0], [3.0, 4.0]], [[5.0], [6.0]])
        assert np.array_equal(out, [[17.0], [39.0]])

    def test_triple_loop_oracle(self, rng):
        a, b = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
        expect = np.zeros((4, 4))
        for i in range(4):
            for j in range(4):
                for k in range(4):
                    expect[i, j] += a[i, k] * b[k, j]
        got = T.matmul(a, b)
        assert np.abs(got - expect).max() / np.abs(expect).max() < 1e-14

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(np.ones((2, 3)), np.ones((2, 3)))


class TestFlattenReshape:
    def test_row_major_order(self):
        x = np.arange(1.0, 13.0).reshape(2, 6)
        assert np.array_equal(T.flatten_row_major(x), np.arange(1.0, 13.0))

    def test_1x1(self):
        assert np.array_equal(T.flatten_row_major([[7.5]]), [7.5])

    def test_round_trip_bit_identical(self, rng):
        x = rng.normal(size=(3, 5))
        assert np.array_equal(T.reshape(T.flatten_row_major(x), 3, 5), x)

    def test_appendix_vector_to_matrix(self):
        v = np.arange(1.0, 13.0)
        assert np.array_equal(T.reshape(v, 2, 6), v.reshape(2, 6))

    def test_reshape_length_mismatch(self):
        with pytest.raises(DimensionError):
            T.reshape(np.ones(5), 2, 3)


class TestSplitEven:
    def test_blocks_of_three(self):
        v = np.arange(1.0, 13.0)
        parts = T.split_even(v, 4)
        assert [list(p) for p in parts] == [
            [1, 2, 3], [4, 5, 6], [7, 8, 9], [10, 11, 12]]

    def test_single_part(self, rng):
        v = rng.normal(size=6)
        (part,) = T.split_even(v, 1)
        assert np.array_equal(part, v)

    @pytest.mark.parametrize("k", [2, 3, 6])
    def test_concat_round_trip(self, rng, k):
        v = rng.normal(size=12)
        assert np.array_equal(np.concatenate(T.split_even(v, k)), v)

    def test_non_divisible(self):
        with pytest.raises(DimensionError):
            T.split_even(np.ones(10), 4)


class TestKron:
    def test_identity_times_identity(self):
        assert np.array_equal(T.kron(np.eye(2), np.eye(3)), np.eye(6))

    def test_block_expansion_oracle(self, rng):
        a, b = rng.normal(size=(2, 2)), rng.normal(size=(3, 3))
        expect = np.zeros((6, 6))
        for i in range(2):
            for j in range(2):
                expect[i * 3:(i + 1) * 3, j * 3:(j + 1) * 3] = a[i, j] * b
        assert np.array_equal(T.kron(a, b), expect)


class TestGeneralizedKron:
    def test_identical_blocks_reduce_to_kron(self, rng):
        g = rng.normal(size=(3, 3))
        z = rng.normal(size=(2, 2))
        got = T.generalized_kron(g, [z, z, z])
        assert np.array_equal(got, T.kron(g, z))

    def test_column_indexed_layout(self, rng):
        g = rng.normal(size=(2, 2))
        w1, w2 = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
        got = T.generalized_kron(g, [w1, w2])
        expect = np.block([
            [g[0, 0] * w1, g[0, 1] * w2],
            [g[1, 0] * w1, g[1, 1] * w2],
        ])
        assert np.array_equal(got, expect)

    def test_per_entry_expansion_oracle(self, rng):
        g = rng.normal(size=(3, 3))
        blocks = [rng.normal(size=(2, 2)) for _ in range(3)]
        got = T.generalized_kron(g, blocks)
        for i in range(3):
            for j in range(3):
                for p in range(2):
                    for q in range(2):
                        assert got[2 * i + p, 2 * j + q] == g[i, j] * blocks[j][p, q]

    def test_ragged_blocks_rejected(self, rng):
        with pytest.raises(DimensionError):
            T.generalized_kron(np.eye(2), [np.eye(2), np.eye(3)])


class TestActivations:
    def test_softmax_constant_row_uniform(self):
        out = T.softmax_rows(np.full((2, 5), 3.7))
        assert np.abs(out - 0.2).max() < 1e-15

    def test_softmax_rows_sum_to_one(self, rng):
        out = T.softmax_rows(rng.normal(size=(4, 7)) * 5)
        assert np.abs(out.sum(axis=1) - 1.0).max() < 1e-12
        assert (out > 0).all() and (out < 1).all()

    def test_softmax_stable_for_large_logits(self, rng):
        out = T.softmax_rows(rng.normal(size=(4, 7)) * 300)
        assert np.isfinite(out).all()
        assert np.abs(out.sum(axis=1) - 1.0).max() < 1e-12

    def test_softmax_empty_rejected(self):
        with pytest.raises(DimensionError):
            T.softmax_rows(np.empty((0, 0)))

    def test_rms_norm_unit_rms_vector(self):
        v = np.array([1.0, -1.0, 1.0, -1.0])  # RMS exactly 1
        out = T.rms_norm(v)
        assert np.abs(out - v).max() <= 1e-6  # eps-sized shrink only

    def test_rms_norm_zero_vector(self):
        assert np.array_equal(T.rms_norm(np.zeros(8)), np.zeros(8))

    def test_rms_norm_formula(self, rng):
        v = rng.normal(size=9)
        expect = v / np.sqrt(np.mean(v**2) + 1e-6)
        assert np.array_equal(T.rms_norm(v), expect)

    def test_swish_scalar_oracle(self):
        for x in (-2.0, 0.0, 3.0):
            expect = x / (1.0 + np.exp(-x))
            assert abs(T.swish(np.array([x]))[0] - expect) < 1e-15

    def test_swish_limits(self):
        assert T.swish(np.array([0.0]))[0] == 0.0
        big = T.swish(np.array([40.0]))[0]
        assert abs(big - 40.0) < 1e-12


def test_kernels_deterministic(rng):
    a = rng.normal(size=(5, 5))
    b = rng.normal(size=(5, 5))
    assert np.array_equal(T.matmul(a, b), T.matmul(a, b))
    assert np.array_equal(T.softmax_rows(a), T.softmax_rows(a))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_flatten_reshape_inverse_property(rows, cols, seed):
    x = np.random.default_rng(seed).normal(size=(rows, cols))
    assert np.array_equal(T.reshape(T.flatten_row_major(x), rows, cols), x)
