import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unimixer.errors import DimensionError, PreconditionError, RangeError
from unimixer.sinkhorn import (ConstraintConfig, sinkhorn_knopp, sparsity_stats,
                               symmetrize)


class TestSymmetrize:
    def test_symmetric_fixed_point(self, rng):
        w = rng.normal(size=(4, 4))
        s = w + w.T
        assert np.array_equal(symmetrize(s), s)

    def test_hand_example(self):
        out = symmetrize([[0.0, 2.0], [0.0, 0.0]])
        assert np.array_equal(out, [[0.0, 1.0], [1.0, 0.0]])

    def test_idempotent(self, rng):
        w = rng.normal(size=(5, 5))
        once = symmetrize(w)
        assert np.array_equal(symmetrize(once), once)

    def test_non_square_rejected(self):
        with pytest.raises(DimensionError):
            symmetrize(np.ones((2, 3)))


def _longrun_oracle(w, tau):
    """Independent long-run Sinkhorn: plain loop, 10^4 iterations."""
    a = np.exp(np.asarray(w, dtype=np.float64) / tau)
    for _ in range(10_000):
        a = a / a.sum(axis=1, keepdims=True)
        a = a / a.sum(axis=0, keepdims=True)
    return a


class TestSinkhornKnopp:
    def test_constant_matrix_uniform(self):
        out = sinkhorn_knopp(np.full((5, 5), 2.3), ConstraintConfig(tau=0.7))
        assert np.abs(out - 0.2).max() < 1e-12

    def test_one_by_one(self):
        out = sinkhorn_knopp(np.array([[123.4]]), ConstraintConfig(tau=2.0))
        assert np.array_equal(out, [[1.0]])

    def test_random_4x4_converges_and_matches_longrun(self, rng):
        w = rng.normal(size=(4, 4))
        cfg = ConstraintConfig(tau=1.0, max_iters=100, tol=1e-8)
        out, info = sinkhorn_knopp(w, cfg, return_info=True)
        assert info.converged
        assert np.abs(out.sum(axis=1) - 1.0).max() <= 1e-8
        assert np.abs(out.sum(axis=0) - 1.0).max() <= 1e-8
        oracle = _longrun_oracle(w, 1.0)
        assert np.abs(out - oracle).max() < 1e-6

    def test_entries_strictly_positive(self, rng):
        out = sinkhorn_knopp(rng.normal(size=(6, 6)), ConstraintConfig())
        assert (out > 0).all()

    def test_symmetric_input_symmetric_output_exact(self, rng):
        w = symmetrize(rng.normal(size=(8, 8)))
        out = sinkhorn_knopp(w, ConstraintConfig(tau=0.5))
        assert np.abs(out - out.T).max() == 0.0

    def test_scale_shift_invariance(self, rng):
        w = rng.normal(size=(5, 5))
        cfg = ConstraintConfig(tau=1.0, max_iters=60, tol=1e-300)
        base = sinkhorn_knopp(w, cfg)
        shifted = sinkhorn_knopp(w + 3.7, cfg)
        assert np.abs(base - shifted).max() < 1e-12

    def test_overflow_raises_range_error(self):
        w = np.array([[800.0, 0.0], [0.0, 1.0]])
        with pytest.raises(RangeError, match="rescal"):
            sinkhorn_knopp(w, ConstraintConfig(tau=1.0))

    def test_non_convergence_flagged_not_raised(self, rng):
        w = rng.normal(size=(16, 16))
        out, info = sinkhorn_knopp(w, ConstraintConfig(tau=0.02, max_iters=3),
                                   return_info=True)
        assert not info.converged and info.iterations == 3
        assert np.isfinite(out).all()

    def test_non_square_rejected(self):
        with pytest.raises(DimensionError):
            sinkhorn_knopp(np.ones((2, 3)), ConstraintConfig())


class TestSparsityStats:
    def test_identity_matrix(self):
        s = sparsity_stats(np.eye(4))
        assert s.row_entropy_mean == 0.0 and s.top1_mass_mean == 1.0

    def test_uniform_matrix(self):
        n = 6
        s = sparsity_stats(np.full((n, n), 1.0 / n))
        assert abs(s.row_entropy_mean - np.log(n)) < 1e-12
        assert abs(s.top1_mass_mean - 1.0 / n) < 1e-12

    def test_lower_temperature_sharper(self):
        rng = np.random.default_rng(7)
        w = rng.normal(0.0, 0.1, (8, 8))
        hot = sparsity_stats(sinkhorn_knopp(w, ConstraintConfig(tau=1.0)))
        cold = sparsity_stats(sinkhorn_knopp(w, ConstraintConfig(tau=0.05,
                                                                 max_iters=500)))
        assert cold.row_entropy_mean < hot.row_entropy_mean

    def test_top1_mass_monotone_over_temperature_grid(self):
        rng = np.random.default_rng(3)
        w = rng.normal(0.0, 0.1, (8, 8))
        masses = []
        for tau in (1.0, 0.5, 0.1, 0.05):
            out = sinkhorn_knopp(w, ConstraintConfig(tau=tau, max_iters=2000))
            masses.append(sparsity_stats(out).top1_mass_mean)
        assert all(b >= a - 1e-12 for a, b in zip(masses, masses[1:]))

    def test_unnormalized_rows_rejected(self):
        with pytest.raises(PreconditionError):
            sparsity_stats(np.ones((3, 3)))


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 8), st.floats(0.5, 3.0), st.integers(0, 2**32 - 1))
def test_row_col_sums_property(n, tau, seed):
    w = np.random.default_rng(seed).normal(size=(n, n))
    cfg = ConstraintConfig(tau=tau, max_iters=500, tol=1e-9)
    out, info = sinkhorn_knopp(w, cfg, return_info=True)
    # columns are normalized last, so their sums always land on 1
    assert np.abs(out.sum(axis=0) - 1.0).max() <= 1e-12
    assert info.converged
    assert np.abs(out.sum(axis=1) - 1.0).max() <= 1e-9 + 1e-12
