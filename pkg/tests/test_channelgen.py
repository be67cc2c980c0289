import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chest.channelgen import (
    ChannelModelSpec,
    MeasurementSetup,
    angular_transform,
    dft_matrix,
    exponential_correlation,
    generate_dataset,
    load_dataset,
    make_pilots,
    nmse,
    nmse_db,
    save_dataset,
    simulate_measurement,
    snr_to_noise_var,
)
from chest.numerics import RngStream, sample_standard_complex_gaussian


def corr_spec(r=0.9, nr=4, nt=16):
    return ChannelModelSpec(kind="correlated-gaussian", nr=nr, nt=nt, r=r)


class TestSpecValidation:
    @pytest.mark.parametrize(
        "spec",
        [
            ChannelModelSpec(kind="correlated-gaussian", nr=2, nt=4, r=1.0),
            ChannelModelSpec(kind="clustered-multipath", nr=2, nt=4, clusters=2,
                             rays_per_cluster=3, angle_spread=0.1, los_factor=-1.0),
            ChannelModelSpec(kind="sparse-angular", nr=2, nt=4, active_taps=5),
            ChannelModelSpec(kind="analytic-gaussian", nr=2, nt=4,
                             covariance=np.eye(3)),
            ChannelModelSpec(kind="nonsense", nr=2, nt=4),
        ],
    )
    def test_invalid_specs_rejected(self, spec):
        with pytest.raises(ValueError):
            spec.validate()

    def test_json_round_trip_with_covariance(self):
        C = exponential_correlation(4, 0.5) + 0.1j * (np.eye(4, k=1) - np.eye(4, k=-1))
        spec = ChannelModelSpec(kind="analytic-gaussian", nr=2, nt=4, covariance=C)
        again = ChannelModelSpec.from_json_dict(spec.to_json_dict())
        assert np.allclose(again.covariance, C)
        assert again.kind == spec.kind

    def test_unknown_json_fields_rejected(self):
        with pytest.raises(ValueError, match="unknown"):
            ChannelModelSpec.from_json_dict(
                {"kind": "correlated-gaussian", "nr": 2, "nt": 4, "r": 0.5, "bogus": 1}
            )


class TestGenerateDataset:
    def test_normalization_is_exact(self):
        spec = ChannelModelSpec(
            kind="analytic-gaussian", nr=2, nt=4, covariance=np.eye(4, dtype=complex)
        )
        ds = generate_dataset(spec, 10_000, RngStream(0))
        assert abs(np.mean(np.abs(ds.samples) ** 2) - 1.0) <= 1e-6

    def test_sparse_angular_support(self):
        spec = ChannelModelSpec(kind="sparse-angular", nr=4, nt=16, active_taps=2)
        ds = generate_dataset(spec, 50, RngStream(1))
        Fr, Ft = dft_matrix(4), dft_matrix(16)
        for H in ds.samples[:10]:
            X = angular_transform(H, Fr, Ft)
            energy = np.sum(np.abs(X) ** 2, axis=0)
            active = energy > 1e-8 * energy.sum()
            assert active.sum() == 2

    def test_transmit_correlation_recovered(self):
        ds = generate_dataset(corr_spec(r=0.9), 10_000, RngStream(2))
        rows = ds.samples.reshape(-1, 16)
        emp = rows.T @ rows.conj() / rows.shape[0]
        power = np.mean(np.diag(emp).real)
        lag1 = np.mean(np.diag(emp, k=1)).real / power
        assert abs(lag1 - 0.9) < 0.02

    def test_row_covariance_within_monte_carlo_error(self):
        C = exponential_correlation(4, 0.6)
        spec = ChannelModelSpec(kind="analytic-gaussian", nr=4, nt=4, covariance=C)
        n = 10_000
        ds = generate_dataset(spec, n, RngStream(3))
        rows = ds.samples.reshape(-1, 4)
        emp = rows.T @ rows.conj() / rows.shape[0]
        se = np.sqrt(np.outer(np.diag(C).real, np.diag(C).real) / rows.shape[0])
        assert np.all(np.abs(emp - C) <= 3.0 * se + 1e-12)

    def test_clustered_multipath_unit_power_and_los(self):
        spec = ChannelModelSpec(kind="clustered-multipath", nr=4, nt=8, clusters=3,
                                rays_per_cluster=8, angle_spread=0.1, los_factor=5.0)
        ds = generate_dataset(spec, 500, RngStream(4))
        assert abs(np.mean(np.abs(ds.samples) ** 2) - 1.0) <= 1e-6

    def test_determinism(self):
        a = generate_dataset(corr_spec(), 32, RngStream(5))
        b = generate_dataset(corr_spec(), 32, RngStream(5))
        assert np.array_equal(a.samples, b.samples)

    def test_sample_count_validated(self):
        with pytest.raises(ValueError):
            generate_dataset(corr_spec(), 0, RngStream(0))


class TestPilots:
    def test_unit_modulus_exactly(self):
        P = make_pilots(16, 8, RngStream(6))
        assert np.abs(np.abs(P) - 1.0).max() <= 1e-12

    def test_pilot_density(self):
        P = make_pilots(64, 32, RngStream(7))
        setup = MeasurementSetup(P, noise_var=1.0)
        assert setup.pilot_density == 0.5

    def test_determinism(self):
        assert np.array_equal(make_pilots(8, 4, RngStream(8)),
                              make_pilots(8, 4, RngStream(8)))

    def test_all_four_symbols_appear(self):
        P = make_pilots(32, 32, RngStream(9))
        symbols = set(np.round(P.flatten() * np.sqrt(2)).astype(complex).tolist())
        assert len(symbols) == 4


class TestMeasurement:
    def test_noiseless_limit(self):
        H = sample_standard_complex_gaussian(2, 8, RngStream(10))
        setup = MeasurementSetup(make_pilots(8, 4, RngStream(11)), noise_var=1e-30)
        Y = simulate_measurement(H, setup, RngStream(12))
        assert np.allclose(Y, H @ setup.pilots, atol=1e-12)

    def test_pure_noise_power(self):
        setup = MeasurementSetup(make_pilots(8, 64, RngStream(13)), noise_var=0.25)
        H = np.zeros((64, 2, 8), dtype=complex)
        Y = simulate_measurement(H, setup, RngStream(14))
        assert abs(np.mean(np.abs(Y) ** 2) - 0.25) < 0.01

    def test_snr_convention(self):
        assert snr_to_noise_var(16, 10.0) == pytest.approx(1.6)

    def test_dim_mismatch_rejected(self):
        setup = MeasurementSetup(make_pilots(8, 4, RngStream(15)), noise_var=1.0)
        with pytest.raises(ValueError, match="transmit antennas"):
            simulate_measurement(np.zeros((2, 7), dtype=complex), setup, RngStream(0))

    def test_setup_invariants(self):
        with pytest.raises(ValueError, match="unit modulus"):
            MeasurementSetup(np.eye(4, dtype=complex), noise_var=1.0)
        with pytest.raises(ValueError, match="noise_var"):
            MeasurementSetup(make_pilots(4, 2, RngStream(16)), noise_var=0.0)


class TestNmse:
    def test_trivial_cases(self):
        H = sample_standard_complex_gaussian(3, 4, RngStream(17))
        assert nmse(H, H) == 0.0
        assert nmse(H, np.zeros_like(H)) == pytest.approx(1.0)
        assert nmse_db(H, np.zeros_like(H)) == pytest.approx(0.0)
        assert nmse(H, 2.0 * H) == pytest.approx(1.0)

    def test_batch_is_mean_of_ratios(self):
        H = sample_standard_complex_gaussian(4, 6, RngStream(18))
        batch_true = np.stack([H, H])
        batch_est = np.stack([H, np.zeros_like(H)])
        assert nmse(batch_true, batch_est) == pytest.approx(0.5)
        assert nmse([H, H], [H, np.zeros_like(H)]) == pytest.approx(0.5)

    def test_zero_reference_rejected(self):
        with pytest.raises(ValueError, match="zero reference"):
            nmse(np.zeros((2, 2), dtype=complex), np.ones((2, 2), dtype=complex))

    @given(scale=st.floats(0.1, 10.0))
    @settings(max_examples=20, deadline=None)
    def test_scale_invariance_of_reference(self, scale):
        H = sample_standard_complex_gaussian(2, 3, RngStream(19))
        E = sample_standard_complex_gaussian(2, 3, RngStream(20))
        assert nmse(scale * H, scale * (H + E)) == pytest.approx(nmse(H, H + E))


class TestDatasetFiles:
    def test_round_trip_f64(self, tmp_path):
        ds = generate_dataset(corr_spec(nr=2, nt=4), 16, RngStream(21))
        path = tmp_path / "d.chds"
        save_dataset(path, ds)
        back = load_dataset(path)
        assert np.array_equal(back.samples, ds.samples)
        assert back.spec.r == ds.spec.r
        assert back.seed == ds.seed

    def test_round_trip_f32_is_lossy_but_close(self, tmp_path):
        ds = generate_dataset(corr_spec(nr=2, nt=4), 8, RngStream(22))
        path = tmp_path / "d32.chds"
        save_dataset(path, ds, dtype="f32")
        back = load_dataset(path)
        assert np.allclose(back.samples, ds.samples, atol=1e-6)

    def test_covariance_spec_round_trip(self, tmp_path):
        C = exponential_correlation(4, 0.5)
        spec = ChannelModelSpec(kind="analytic-gaussian", nr=2, nt=4, covariance=C)
        ds = generate_dataset(spec, 4, RngStream(23))
        path = tmp_path / "cov.chds"
        save_dataset(path, ds)
        assert np.allclose(load_dataset(path).spec.covariance, C)

    def test_bad_magic_rejected(self, tmp_path):
        ds = generate_dataset(corr_spec(nr=2, nt=4), 4, RngStream(24))
        path = tmp_path / "bad.chds"
        save_dataset(path, ds)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(raw)
        with pytest.raises(ValueError, match="magic"):
            load_dataset(path)

    def test_unknown_version_rejected(self, tmp_path):
        ds = generate_dataset(corr_spec(nr=2, nt=4), 4, RngStream(25))
        path = tmp_path / "v9.chds"
        save_dataset(path, ds)
        raw = bytearray(path.read_bytes())
        raw[4:8] = (9).to_bytes(4, "little")
        path.write_bytes(raw)
        with pytest.raises(ValueError, match="version"):
            load_dataset(path)
