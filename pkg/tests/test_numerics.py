import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chest.numerics import (
    RngStream,
    cholesky_sample,
    ensure_all_finite,
    psd_factor,
    sample_standard_complex_gaussian,
    svd,
    to_complex,
    to_real_channels,
)


class TestRngStream:
    def test_same_stream_is_bit_identical(self):
        rng = RngStream(42, 7)
        a = sample_standard_complex_gaussian(3, 5, rng)
        b = sample_standard_complex_gaussian(3, 5, rng)
        assert np.array_equal(a, b)

    def test_distinct_streams_differ(self):
        a = sample_standard_complex_gaussian(3, 5, RngStream(42, 0))
        b = sample_standard_complex_gaussian(3, 5, RngStream(42, 1))
        c = sample_standard_complex_gaussian(3, 5, RngStream(43, 0))
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_derive_is_stable_and_tag_sensitive(self):
        rng = RngStream(1)
        assert rng.derive("x", 3) == rng.derive("x", 3)
        assert rng.derive("x", 3) != rng.derive("x", 4)
        assert rng.derive("x") != rng.derive("y")
        assert rng.derive("a", "b") != rng.derive("ab")

    @given(seed=st.integers(-(2**63), 2**63 - 1), sid=st.integers(0, 2**64 - 1))
    @settings(max_examples=25, deadline=None)
    def test_generator_reproducible_for_any_ids(self, seed, sid):
        g1 = RngStream(seed, sid).generator()
        g2 = RngStream(seed, sid).generator()
        assert np.array_equal(g1.standard_normal(4), g2.standard_normal(4))


class TestComplexGaussian:
    def test_moments(self):
        draws = sample_standard_complex_gaussian(100_000, 1, RngStream(0))
        assert abs(np.mean(draws)) < 0.02
        assert abs(np.mean(np.abs(draws) ** 2) - 1.0) < 0.02
        # variance splits evenly between real and imaginary parts
        assert abs(np.var(draws.real) - 0.5) < 0.01
        assert abs(np.var(draws.imag) - 0.5) < 0.01

    def test_rejects_empty_dims(self):
        with pytest.raises(ValueError):
            sample_standard_complex_gaussian(0, 3, RngStream(0))


class TestSvd:
    def test_identity(self):
        U, s, V = svd(np.eye(4, dtype=complex))
        assert np.allclose(s, 1.0)

    def test_rank_deficiency(self):
        P = sample_standard_complex_gaussian(6, 4, RngStream(3))
        P[:, 2] = 0.0
        _, s, _ = svd(P)
        assert s[-1] <= 1e-12

    def test_qpsk_reconstruction_and_orthonormality(self):
        gen = RngStream(5).generator()
        P = ((2.0 * gen.integers(0, 2, (8, 4)) - 1.0)
             + 1j * (2.0 * gen.integers(0, 2, (8, 4)) - 1.0)) / np.sqrt(2.0)
        U, s, V = svd(P)
        rec = U @ np.diag(s) @ V.conj().T
        assert np.linalg.norm(rec - P) / np.linalg.norm(P) <= 1e-10
        assert np.abs(U.conj().T @ U - np.eye(U.shape[1])).max() <= 1e-10
        assert np.abs(V.conj().T @ V - np.eye(V.shape[1])).max() <= 1e-10
        assert np.all(np.diff(s) <= 0) and np.all(s >= 0)

    def test_zero_matrix_rejected(self):
        with pytest.raises(ValueError, match="zero"):
            svd(np.zeros((3, 3), dtype=complex))


class TestCholeskySample:
    def test_identity_reduces_to_standard_draws(self):
        draws = cholesky_sample(np.eye(2, dtype=complex), RngStream(1), size=100_000)
        assert abs(np.mean(np.abs(draws) ** 2) - 1.0) < 0.02

    def test_diagonal_variances(self):
        C = np.diag([4.0, 1.0]).astype(complex)
        draws = cholesky_sample(C, RngStream(2), size=100_000)
        var = np.mean(np.abs(draws) ** 2, axis=0)
        assert abs(var[0] - 4.0) / 4.0 < 0.05
        assert abs(var[1] - 1.0) < 0.05

    def test_rank_one_support(self):
        v = np.array([1.0, 1j, -1.0]) / np.sqrt(3.0)
        C = np.outer(v, v.conj())
        draws = cholesky_sample(C, RngStream(3), size=500)
        # residual after projecting onto the single eigenvector
        coeff = draws @ v.conj()
        residual = draws - np.outer(coeff, v)
        assert np.abs(residual).max() <= 1e-8

    def test_covariance_recovery(self):
        C = np.array([[2.0, 0.5 + 0.5j], [0.5 - 0.5j, 1.0]])
        draws = cholesky_sample(C, RngStream(4), size=200_000)
        emp = draws.T @ draws.conj() / draws.shape[0]
        assert np.abs(emp - C).max() < 0.05

    def test_non_psd_rejected(self):
        C = np.array([[1.0, 0.0], [0.0, -1e-6]], dtype=complex)
        with pytest.raises(ValueError, match="positive semidefinite"):
            cholesky_sample(C, RngStream(0))

    def test_non_hermitian_rejected(self):
        C = np.array([[1.0, 1.0], [0.0, 1.0]], dtype=complex)
        with pytest.raises(ValueError, match="Hermitian"):
            psd_factor(C)


class TestRealComplexBridge:
    def test_round_trip(self):
        H = sample_standard_complex_gaussian(3, 4, RngStream(9))
        assert np.array_equal(to_complex(to_real_channels(H)), H)

    def test_finite_check(self):
        with pytest.raises(ValueError, match="non-finite"):
            ensure_all_finite(np.array([1.0, np.nan]))
