"""Code-multiplexed per-element calibration tests.

The projection oracle expands the on/off code product algebraically:
c_n * c_m = (1 + w_n)(1 + w_m)/4 = (1 + w_n + w_m + w_{n xor m})/4, so each
of the four bipolar components must project out with coefficient +1/4.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from sda_twin.comet import (
    ArrayUnderTest,
    CodeSet,
    CometError,
    Interpolator,
    calibrate,
    export_gain_table,
    extract_correlations,
    gen_codes,
    quadrature_masks,
    run_campaign,
    simulate_detector,
    solve_elements,
    sweep_phase_settings,
    walsh_row,
)


def align_to(reference: np.ndarray, estimate: np.ndarray) -> np.ndarray:
    """Remove the one global phase the extraction cannot observe."""
    ratio = estimate / np.where(reference == 0, 1.0, reference)
    alive = np.abs(reference) > 0
    gauge = ratio[alive][0]
    return estimate * np.conj(gauge) / abs(gauge)


class TestWalshBasis:
    def test_rows_are_plus_minus_one_and_orthogonal(self):
        rows = np.stack([walsh_row(i, 8) for i in range(8)])
        assert set(np.unique(rows)) == {-1, 1}
        assert np.array_equal(rows @ rows.T, 8 * np.eye(8))

    def test_row_product_is_xor_row(self):
        for a in (1, 3, 5):
            for b in (2, 6, 7):
                got = walsh_row(a, 8) * walsh_row(b, 8)
                assert np.array_equal(got, walsh_row(a ^ b, 8))


class TestGenCodes:
    def test_two_elements_fit_in_length_4(self):
        codes = gen_codes(2)
        assert codes.length == 4
        on_counts = codes.codes().sum(axis=1)
        assert list(on_counts) == [2, 2]
        assert codes.assignment[0] != codes.assignment[1]

    def test_sixteen_elements_need_length_256(self):
        codes = gen_codes(16)
        assert codes.length == 256
        assert codes.n_elements == 16

    def test_length_32_cannot_hold_16_elements(self):
        # 16 singles + 120 pairwise products > 31 nonzero bins
        with pytest.raises(CometError):
            gen_codes(16, length=32)

    def test_product_projects_onto_four_components_at_quarter(self):
        codes = gen_codes(2)
        a, b = codes.assignment
        product = codes.codes()[0] * codes.codes()[1]
        for idx in (0, a, b, a ^ b):
            assert codes.projection(product.astype(float), idx) == pytest.approx(0.25)

    def test_all_pairwise_product_bins_distinct(self):
        codes = gen_codes(8)
        bins = list(codes.assignment)
        for i in range(8):
            for j in range(i + 1, 8):
                bins.append(codes.assignment[i] ^ codes.assignment[j])
        assert len(bins) == len(set(bins))
        assert 0 not in bins

    def test_colliding_assignment_rejected(self):
        # 1^2 == 3: the pair product lands on element 3's own bin
        with pytest.raises(CometError):
            CodeSet(assignment=(1, 2, 3), length=8)

    def test_capacity_error(self):
        with pytest.raises(CometError):
            gen_codes(200, length=256)


class TestDetector:
    def test_single_element_trace(self):
        codes = gen_codes(4)
        z = np.array([0.0, 0.7 + 0.2j, 0.0, 0.0])
        trace = simulate_detector(z, codes)
        on = codes.codes()[1].astype(bool)
        assert np.allclose(trace[on], abs(z[1]) ** 2)
        assert np.allclose(trace[~on], 0.0)

    def test_two_inphase_elements_double_amplitude(self):
        codes = gen_codes(2)
        z = np.array([0.5 + 0.5j, 0.5 + 0.5j])
        trace = simulate_detector(z, codes)
        both_on = codes.codes().prod(axis=0).astype(bool)
        assert np.allclose(trace[both_on], abs(2 * z[0]) ** 2)

    def test_antiphase_elements_cancel(self):
        codes = gen_codes(2)
        z = np.array([0.8 + 0j, -0.8 + 0j])
        trace = simulate_detector(z, codes)
        both_on = codes.codes().prod(axis=0).astype(bool)
        assert np.allclose(trace[both_on], 0.0)

    def test_trace_never_negative_even_with_noise(self):
        codes = gen_codes(16)
        rng = np.random.default_rng(1)
        z = rng.standard_normal(16) + 1j * rng.standard_normal(16)
        trace = simulate_detector(z, codes, noise_sigma=0.5, seed=3)
        assert np.all(trace >= 0)

    def test_size_mismatch_rejected(self):
        with pytest.raises(CometError):
            simulate_detector(np.ones(3, complex), gen_codes(2))


class TestExtraction:
    def test_forward_inverse_roundtrip_1e9(self):
        codes = gen_codes(16)
        rng = np.random.default_rng(7)
        z = rng.uniform(0.5, 1.5, 16) * np.exp(2j * np.pi * rng.uniform(size=16))
        corr = extract_correlations(run_campaign(z, codes), codes)
        want = np.outer(z, np.conj(z))
        assert np.max(np.abs(corr - want)) < 1e-9

    def test_zero_gains_zero_correlations(self):
        codes = gen_codes(4)
        corr = extract_correlations(run_campaign(np.zeros(4, complex), codes), codes)
        assert np.allclose(corr, 0.0)

    def test_hermitian_structure(self):
        codes = gen_codes(8)
        rng = np.random.default_rng(8)
        z = rng.standard_normal(8) + 1j * rng.standard_normal(8)
        corr = extract_correlations(run_campaign(z, codes), codes)
        assert np.allclose(corr, corr.conj().T, atol=1e-12)
        assert np.all(np.diag(corr).real >= 0)
        assert np.allclose(np.diag(corr).imag, 0.0, atol=1e-12)

    def test_noise_error_scales_linearly(self):
        codes = gen_codes(16)
        rng = np.random.default_rng(9)
        z = rng.uniform(0.8, 1.2, 16) * np.exp(2j * np.pi * rng.uniform(size=16))
        want = np.outer(z, np.conj(z))

        def mean_err(sigma: float) -> float:
            errs = []
            for seed in range(12):
                traces = run_campaign(z, codes, noise_sigma=sigma, seed=seed)
                corr = extract_correlations(traces, codes)
                errs.append(np.mean(np.abs(corr - want)))
            return float(np.mean(errs))

        e1 = mean_err(0.01)
        e2 = mean_err(0.04)
        assert e2 / e1 == pytest.approx(4.0, rel=0.35)

    def test_quadrature_masks_split_every_pair(self):
        masks = quadrature_masks(16)
        assert len(masks) == 4
        for i in range(16):
            for j in range(i + 1, 16):
                assert any(((m >> i) ^ (m >> j)) & 1 for m in masks)


class TestSolver:
    def test_roundtrip_accuracy(self):
        codes = gen_codes(16)
        rng = np.random.default_rng(10)
        for _ in range(20):
            z = rng.uniform(0.5, 1.5, 16) * np.exp(2j * np.pi * rng.uniform(size=16))
            est = calibrate(z, codes)
            got = align_to(z, est.gains)
            mag_err = np.abs(20 * np.log10(np.abs(got) / np.abs(z)))
            ph_err = np.degrees(np.abs(np.angle(got / z)))
            assert mag_err.max() < 1e-6
            assert ph_err.max() < 1e-4

    def test_identical_elements_are_symmetric(self):
        codes = gen_codes(8)
        z = np.full(8, 0.9 + 0.0j)
        est = calibrate(z, codes)
        assert np.allclose(np.abs(est.gains), 0.9, atol=1e-9)
        # Phases report in [0, 360), so a -epsilon angle wraps to ~360.
        wrapped = np.minimum(est.phases_deg, 360.0 - est.phases_deg)
        assert np.allclose(wrapped, 0.0, atol=1e-7)

    def test_dead_element_reported_with_zero_magnitude(self):
        codes = gen_codes(16)
        rng = np.random.default_rng(11)
        z = rng.uniform(0.8, 1.2, 16) * np.exp(2j * np.pi * rng.uniform(size=16))
        z[7] = 0.0
        est = calibrate(z, codes)
        assert est.gains[7] == 0
        got = align_to(z, est.gains)
        alive = np.arange(16) != 7
        assert np.max(np.abs(got[alive] - z[alive])) < 1e-6
        assert any("dead" in n for n in est.notes)

    def test_dead_reference_falls_back_to_strongest(self):
        codes = gen_codes(4)
        z = np.array([0.0, 0.5, 1.5, 1.0], dtype=complex)
        est = calibrate(z, codes)
        assert est.reference == 2
        assert any("reference" in n for n in est.notes)

    def test_global_phase_gauge_invariance(self):
        codes = gen_codes(8)
        rng = np.random.default_rng(12)
        z = rng.uniform(0.5, 1.5, 8) * np.exp(2j * np.pi * rng.uniform(size=8))
        a = calibrate(z, codes)
        b = calibrate(z * np.exp(1.1j), codes)
        assert np.allclose(np.abs(a.gains), np.abs(b.gains), atol=1e-9)
        da = np.angle(a.gains[1:] / a.gains[:-1])
        db = np.angle(b.gains[1:] / b.gains[:-1])
        assert np.allclose(da, db, atol=1e-9)

    def test_non_square_correlations_rejected(self):
        with pytest.raises(CometError):
            solve_elements(np.ones((3, 4)))


class TestInterpolator:
    def test_ideal_is_exact_unit_circle(self):
        ideal = Interpolator(ideal=True)
        for deg in (0, 33.5, 90, 181, 270):
            w = ideal.realized(math.radians(deg))
            assert abs(w) == pytest.approx(1.0, abs=1e-12)
            assert math.degrees(math.atan2(w.imag, w.real)) % 360 == pytest.approx(
                deg % 360, abs=1e-9
            )

    def test_quantized_axes_tie_exactly(self):
        interp = Interpolator()
        mags = [abs(interp.realized(math.radians(d))) for d in (0, 90, 180, 270)]
        assert max(mags) - min(mags) < 1e-12

    def test_compression_dips_diagonals(self):
        interp = Interpolator()
        axis = abs(interp.realized(0.0))
        diag = abs(interp.realized(math.radians(45.0)))
        assert 20 * math.log10(axis / diag) > 1.0

    def test_axis_mismatch_tilts_axes(self):
        interp = Interpolator(axis_mismatch_db=1.0, compression_db=0.0)
        i_mag = abs(interp.realized(0.0))
        q_mag = abs(interp.realized(math.pi / 2))
        assert 20 * math.log10(i_mag / q_mag) == pytest.approx(1.0, abs=0.05)


@pytest.fixture(scope="module")
def quantized_table():
    array = ArrayUnderTest.perturbed(16, spread_db=4.5, seed=0)
    return sweep_phase_settings(array)


class TestPhaseSweep:
    def test_ideal_interpolator_is_flat(self):
        array = ArrayUnderTest.perturbed(
            16, spread_db=4.5, seed=0, interpolator=Interpolator(ideal=True)
        )
        rows = sweep_phase_settings(array)
        gains: dict[int, list[float]] = {}
        for r in rows:
            gains.setdefault(r.element_id, []).append(r.extracted_gain_db)
        for vals in gains.values():
            assert max(vals) - min(vals) < 1e-6

    def test_quantized_ripple_peaks_near_axes(self, quantized_table):
        gains: dict[int, list[tuple[float, float]]] = {}
        for r in quantized_table:
            gains.setdefault(r.element_id, []).append(
                (r.commanded_phase_deg, r.extracted_gain_db)
            )
        for rows in gains.values():
            phases = np.array([p for p, _ in rows])
            vals = np.array([g for _, g in rows])
            peak = phases[int(np.argmax(vals))]
            dist = min(peak % 90.0, 90.0 - peak % 90.0)
            assert dist <= 5.625

    def test_extracted_spread_matches_injection(self, quantized_table):
        at_zero = [
            r.extracted_gain_db
            for r in quantized_table
            if r.commanded_phase_deg == 0.0
        ]
        assert max(at_zero) - min(at_zero) == pytest.approx(4.5, abs=0.1)

    def test_phase_in_0_360(self, quantized_table):
        for r in quantized_table:
            assert 0.0 <= r.extracted_phase_deg < 360.0

    def test_gain_table_export_format(self, quantized_table):
        text = export_gain_table(quantized_table[:5])
        lines = text.strip().splitlines()
        assert lines[0] == "element_id,commanded_phase_deg,gain_db,phase_deg"
        assert len(lines) == 6
