import numpy as np
import pytest

from mcpt.imaging import ImagePair, NoiseParams, SceneSpec, synth_pair, to_grayscale
from mcpt.mdc import (
    DegenerateReferenceError,
    DiscrepancyCurve,
    RingMask,
    band_energies,
    band_schedule,
    build_mdc_masks,
    compute_mdc,
    discrepancy_ratios,
    mean_curve,
    power_spectrum,
    radial_frequency,
    read_curves_csv,
    write_curves_csv,
)

from oracles import naive_dft2


def test_b25_gives_25_masks():
    masks = build_mdc_masks(25, 64, 64)
    assert len(masks) == 25
    assert all(m.grid.shape == (64, 64) for m in masks)


def test_b4_centers():
    mu, _ = band_schedule(4)
    assert np.allclose(mu, [0.03125, 0.125, 0.28125, 0.5], atol=0, rtol=1e-15)


def test_mask_peaks_at_center():
    # on a 16x16 grid the axis bins sit at multiples of 1/16; B=4 gives mu_2 = 0.125 = 2/16
    masks = build_mdc_masks(4, 16, 16)
    d = radial_frequency(16, 16).numpy()
    hit = np.isclose(d, masks[1].mu)
    assert hit.any()
    assert np.all(masks[1].grid[hit] == 1.0)


def test_schedule_is_monotone():
    mu, sigma = band_schedule(25)
    assert np.all(np.diff(mu) > 0)
    assert np.all(np.diff(sigma) >= 0)
    assert np.all(np.diff(np.diff(mu)) >= -1e-15)
    assert sigma.min() >= 0.5 / 100


@pytest.mark.parametrize("args", [(1, 8, 8), (4, 3, 8)])
def test_mask_builder_rejects_bad_args(args):
    with pytest.raises(ValueError):
        build_mdc_masks(*args)


def test_power_spectrum_constant():
    spec = power_spectrum(np.full((4, 4), 0.5))
    expected = np.zeros((4, 4))
    expected[2, 2] = (16 * 0.5) ** 2
    assert np.allclose(spec, expected, atol=1e-12)


def test_power_spectrum_impulse_is_flat():
    x = np.zeros((6, 6))
    x[2, 3] = 1.0
    assert np.allclose(power_spectrum(x), 1.0, atol=1e-12)


def test_power_spectrum_matches_oracle():
    x = np.random.default_rng(0).standard_normal((8, 8))
    oracle = np.fft.fftshift(np.abs(naive_dft2(x)) ** 2)
    assert np.max(np.abs(power_spectrum(x) - oracle)) < 1e-9


def test_identical_modalities_give_zero_curve():
    pair = synth_pair(SceneSpec(0, "grid", seed=1), NoiseParams(0.0, 0.0, 1.0), size=64)
    curve = compute_mdc(pair, build_mdc_masks(25, 64, 64))
    assert np.all(curve.ratios < 1e-12)


def test_constant_offset_lands_in_lowest_band():
    rng = np.random.default_rng(0)
    eo = rng.uniform(0.0, 0.8, size=(32, 32, 3))
    pair = ImagePair(eo, to_grayscale(eo) + 0.1)
    curve = compute_mdc(pair, build_mdc_masks(25, 32, 32))
    assert curve.ratios[0] == curve.ratios.max()
    assert np.all(curve.ratios[curve.centers >= 0.1] < 1e-6)


def test_speckle_discrepancy_is_high_frequency():
    pair = synth_pair(SceneSpec(3, "blob", seed=2), NoiseParams(0.3, 1.0, 1.2), seed=0)
    r = compute_mdc(pair, build_mdc_masks(25, 64, 64)).ratios
    third = int(np.ceil(25 / 3))
    assert r[-third:].mean() > r[:third].mean()


def test_all_zero_reference_raises():
    pair = ImagePair(np.zeros((8, 8, 3)), np.full((8, 8, 1), 0.3))
    with pytest.raises(DegenerateReferenceError):
        compute_mdc(pair, build_mdc_masks(4, 8, 8))


def test_residual_scale_covariance():
    rng = np.random.default_rng(1)
    ref = rng.uniform(size=(16, 16))
    res = rng.standard_normal((16, 16))
    masks = build_mdc_masks(6, 16, 16)
    base = discrepancy_ratios(res, ref, masks)
    scaled = discrepancy_ratios(3.0 * res, ref, masks)
    assert np.max(np.abs(scaled / base - 9.0) / 9.0) < 1e-9


def test_permuted_masks_permute_curve():
    pair = synth_pair(SceneSpec(1, "wedge", seed=3), NoiseParams(), size=32)
    masks = build_mdc_masks(8, 32, 32)
    perm = np.random.default_rng(2).permutation(8)
    a = compute_mdc(pair, masks)
    b = compute_mdc(pair, [masks[i] for i in perm])
    assert np.array_equal(a.centers, b.centers)
    assert np.allclose(a.ratios, b.ratios, rtol=1e-12, atol=0)
    raw = discrepancy_ratios(pair.sar[..., 0] - to_grayscale(pair.eo)[..., 0], to_grayscale(pair.eo)[..., 0],
                             [masks[i] for i in perm])
    assert np.allclose(raw, a.ratios[perm], rtol=1e-12, atol=0)


def test_all_ones_mask_gives_parseval_energy():
    x = np.random.default_rng(3).standard_normal((8, 8))
    ones = RingMask(0.0, 1.0, np.ones((8, 8)))
    e = band_energies(power_spectrum(x), [ones])[0]
    assert e == pytest.approx(64 * (x**2).sum(), rel=1e-12)


def test_curve_validation():
    with pytest.raises(ValueError):
        DiscrepancyCurve(np.array([0.1, 0.1]), np.array([1.0, 1.0]))
    with pytest.raises(ValueError):
        DiscrepancyCurve(np.array([0.1, 0.2]), np.array([1.0, -1.0]))


def test_csv_round_trip_and_mean(tmp_path):
    a = DiscrepancyCurve(np.array([0.1, 0.2, 0.4]), np.array([1.0, 0.5, 0.25]))
    b = DiscrepancyCurve(np.array([0.1, 0.2, 0.4]), np.array([3.0, 0.5, 0.75]))
    write_curves_csv(tmp_path / "c.csv", [("p0", a), ("p1", b)])
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == "pair_id,band_index,mu,ratio"
    back = read_curves_csv(tmp_path / "c.csv")
    assert np.array_equal(back["p1"].ratios, b.ratios)
    assert np.array_equal(mean_curve([a, b]).ratios, [2.0, 0.5, 0.5])
