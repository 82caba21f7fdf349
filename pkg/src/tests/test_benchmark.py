import numpy as np
import pytest

from lfr_augment.benchmark import (
    MsdParams,
    MultisineSpec,
    SystemConfig,
    default_bins,
    generate_dataset,
    generate_multisine,
    make_baseline_2dof,
    measured_snr_db,
    simulate_msd,
)
from lfr_augment.data import Dataset
from lfr_augment.errors import SpecError
from shared.config import GenerateConfig, MultisineConfig


def _small(variant: str = "a", seed: int = 3) -> GenerateConfig:
    return GenerateConfig(
        variant=variant, seed=seed, multisine=MultisineConfig(period=300, bin_step=3)
    )


class TestMultisine:
    def test_rms_and_excited_bins(self) -> None:
        bins = default_bins(300, 3)
        signal = generate_multisine(MultisineSpec(period=300, bins=bins, rms=10.0, seed=5))
        assert signal.shape == (300,)
        assert np.sqrt(np.mean(signal**2)) == pytest.approx(10.0)
        spectrum = np.abs(np.fft.rfft(signal))
        excited = spectrum > 1e-9 * spectrum.max()
        assert set(np.nonzero(excited)[0]) == set(bins.tolist())

    def test_bins_stay_below_nyquist(self) -> None:
        bins = default_bins(300, 3)
        assert bins[0] == 3 and 2 * bins[-1] < 300

    @pytest.mark.parametrize("bins", [[0, 3], [150], [3, 3]])
    def test_invalid_bins(self, bins: list[int]) -> None:
        with pytest.raises(SpecError):
            MultisineSpec(period=300, bins=np.array(bins), rms=1.0, seed=0)


class TestSystem:
    def test_rest_stays_at_rest(self) -> None:
        states = simulate_msd(MsdParams(), np.zeros(50), 0.02)
        assert not states.any()

    def test_free_response_decays(self) -> None:
        x0 = np.array([0.05, 0.0, 0.0, 0.0, 0.0, 0.0])
        states = simulate_msd(MsdParams(), np.zeros(3000), 0.02, x0=x0)
        assert np.abs(states[-500:]).max() < 0.1 * np.abs(states[:500]).max()

    def test_invalid_physics(self) -> None:
        with pytest.raises(SpecError):
            MsdParams(masses=(0.5, 0.0, 0.1))

    def test_saturation_only_in_variant_b(self) -> None:
        u = np.array([-100.0, 0.0, 5.0, 100.0])
        np.testing.assert_array_equal(SystemConfig("a").saturate(u), u)
        saturated = SystemConfig("b").saturate(u)
        assert np.abs(saturated).max() < 30.0
        assert saturated[2] == pytest.approx(5.0, rel=0.02)

    def test_output_filter_settles_on_constants(self) -> None:
        filtered = SystemConfig("c").filter_output(np.ones(500))
        assert filtered[0] < 1.0
        assert filtered[-1] == pytest.approx(1.0)


class TestGeneration:
    def test_same_seed_same_data(self) -> None:
        first = generate_dataset(_small())
        second = generate_dataset(_small())
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a.u, b.u)
            np.testing.assert_array_equal(a.y, b.y)

    def test_splits_use_different_excitations(
        self, small_splits: tuple[Dataset, Dataset, Dataset]
    ) -> None:
        est, val, test = small_splits
        assert (est.N, val.N, test.N) == (600, 300, 300)
        assert not np.allclose(est.u[:300], val.u)
        assert not np.allclose(val.u, test.u)

    def test_measured_snr_matches_the_target(
        self, small_splits: tuple[Dataset, Dataset, Dataset]
    ) -> None:
        for split in small_splits:
            assert measured_snr_db(split) == pytest.approx(30.0, abs=1.0)

    def test_variant_metadata(self) -> None:
        est_b = generate_dataset(_small("b"))[0]
        assert est_b.metadata["saturation"] == "30tanh(u/30)"
        est_c = generate_dataset(_small("c"))[0]
        assert est_c.metadata["lpf_cutoff_hz"] == 5.0
        assert est_c.metadata["variant"] == "c"


class TestBaseline:
    def test_matrices_follow_the_rk4_polynomial(self) -> None:
        ts = 0.02
        baseline = make_baseline_2dof("ideal", ts)
        m1, m2, k1, k2, c1, c2 = baseline.theta
        a_c = np.array(
            [
                [0.0, 1.0, 0.0, 0.0],
                [-(k1 + k2) / m1, -(c1 + c2) / m1, k2 / m1, c2 / m1],
                [0.0, 0.0, 0.0, 1.0],
                [k2 / m2, c2 / m2, -k2 / m2, -c2 / m2],
            ]
        )
        ha = ts * a_c
        powers = [np.linalg.matrix_power(ha, k) for k in range(5)]
        factorials = [1.0, 1.0, 2.0, 6.0, 24.0]
        expected_a = sum(p / f for p, f in zip(powers, factorials))
        phi = sum(p / (f * (k + 1)) for k, (p, f) in enumerate(zip(powers[:4], factorials[:4])))
        expected_b = ts * phi @ np.array([[0.0], [1.0 / m1], [0.0], [0.0]])

        a_d, b_d, c, d = baseline.discrete_matrices(baseline.theta)
        np.testing.assert_allclose(a_d, expected_a, atol=1e-12)
        np.testing.assert_allclose(b_d, expected_b, atol=1e-12)
        np.testing.assert_array_equal(c, [[0.0, 0.0, 1.0, 0.0]])
        assert not d.any()

    def test_discretization_is_stable(self) -> None:
        baseline = make_baseline_2dof("approx")
        a_d = baseline.discrete_matrices(baseline.theta)[0]
        assert np.abs(np.linalg.eigvals(a_d)).max() < 1.0

    def test_identifier_and_sizes(self) -> None:
        baseline = make_baseline_2dof("approx")
        assert baseline.identifier == "msd-2dof-approx"
        assert (baseline.n_x, baseline.n_u, baseline.n_y) == (4, 1, 1)
