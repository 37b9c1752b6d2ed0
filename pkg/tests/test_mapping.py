"""Gray-mapped square QAM tests: energy, Gray property, LLR consistency."""

from __future__ import annotations

import numpy as np
import pytest

from sda_twin.modem.mapping import (
    BITS_PER_SYMBOL,
    MappingError,
    constellation,
    demap_llrs,
    hard_demap,
    map_symbols,
    nearest_points,
    parse_modulation,
)

ORDERS = (2, 4, 16, 64)


def all_bit_patterns(q: int) -> np.ndarray:
    n = 1 << q
    return ((np.arange(n)[:, None] >> np.arange(q - 1, -1, -1)) & 1).astype(np.uint8)


class TestConstellation:
    @pytest.mark.parametrize("order", ORDERS)
    def test_unit_mean_energy(self, order):
        pts = constellation(order)
        assert pts.size == order
        assert np.mean(np.abs(pts) ** 2) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("order", ORDERS)
    def test_points_are_distinct(self, order):
        pts = constellation(order)
        d = np.abs(pts[:, None] - pts[None, :]) + np.eye(order)
        assert d.min() > 0.1

    @pytest.mark.parametrize("order", (4, 16, 64))
    def test_square_grid_levels(self, order):
        pts = constellation(order)
        side = int(round(order**0.5))
        assert len(set(np.round(pts.real, 12))) == side
        assert len(set(np.round(pts.imag, 12))) == side


class TestGrayMapping:
    @pytest.mark.parametrize("order", ORDERS)
    def test_roundtrip_every_pattern(self, order):
        q = BITS_PER_SYMBOL[order]
        bits = all_bit_patterns(q).reshape(-1)
        syms = map_symbols(bits, order)
        assert np.array_equal(hard_demap(syms, order), bits)

    @pytest.mark.parametrize("order", (4, 16, 64))
    def test_axis_neighbors_differ_in_one_bit(self, order):
        """The Gray property: adjacent points on an axis flip exactly one bit."""
        q = BITS_PER_SYMBOL[order]
        bits = all_bit_patterns(q)
        syms = map_symbols(bits.reshape(-1), order)
        for row_im in set(np.round(syms.imag, 9)):
            on_row = [
                (s.real, tuple(b)) for s, b in zip(syms, bits)
                if abs(s.imag - row_im) < 1e-9
            ]
            on_row.sort()
            for (_, b1), (_, b2) in zip(on_row, on_row[1:]):
                assert sum(x != y for x, y in zip(b1, b2)) == 1

    def test_first_half_bits_drive_the_real_axis(self):
        # flipping an I bit moves the point horizontally only
        base = map_symbols(np.zeros(6, np.uint8), 64)[0]
        flip_i = map_symbols(np.array([1, 0, 0, 0, 0, 0], np.uint8), 64)[0]
        flip_q = map_symbols(np.array([0, 0, 0, 1, 0, 0], np.uint8), 64)[0]
        assert flip_i.imag == pytest.approx(base.imag)
        assert flip_q.real == pytest.approx(base.real)

    def test_bpsk_is_antipodal_real(self):
        syms = map_symbols(np.array([0, 1], np.uint8), 2)
        assert syms[0] == pytest.approx(1.0 + 0j)
        assert syms[1] == pytest.approx(-1.0 + 0j)


class TestLlrs:
    @pytest.mark.parametrize("order", ORDERS)
    def test_sign_agrees_with_hard_decision(self, order):
        rng = np.random.default_rng(5)
        q = BITS_PER_SYMBOL[order]
        bits = rng.integers(0, 2, 600 * q, dtype=np.uint8)
        syms = map_symbols(bits, order)
        noisy = syms + 0.05 * (rng.standard_normal(600) + 1j * rng.standard_normal(600))
        llrs = demap_llrs(noisy, order, 0.01)
        assert np.array_equal((llrs < 0).astype(np.uint8), hard_demap(noisy, order))

    def test_llrs_scale_inversely_with_noise_variance(self):
        y = np.array([0.3 + 0.7j])
        a = demap_llrs(y, 16, 1.0)
        b = demap_llrs(y, 16, 0.5)
        assert np.allclose(b, 2.0 * a)

    def test_bpsk_llr_closed_form(self):
        y = np.array([0.25 - 0.4j, -1.3 + 0j])
        assert np.allclose(demap_llrs(y, 2, 0.5), 4.0 * y.real / 0.5)

    def test_noise_variance_must_be_positive(self):
        with pytest.raises(MappingError):
            demap_llrs(np.array([1 + 0j]), 4, 0.0)

    @pytest.mark.parametrize("order", ORDERS)
    def test_clean_symbol_llrs_never_ambiguous(self, order):
        # weakest case: 64-QAM inner level, |LLR| = 4/42
        pts = constellation(order)
        llrs = demap_llrs(pts, order, 1.0).reshape(order, -1)
        assert np.abs(llrs).min() >= 4.0 / 42.0 - 1e-12


class TestNearest:
    @pytest.mark.parametrize("order", ORDERS)
    def test_constellation_points_map_to_themselves(self, order):
        pts = constellation(order)
        assert np.allclose(nearest_points(pts, order), pts)

    def test_offgrid_picks_minimum_distance(self):
        got = nearest_points(np.array([10 + 10j]), 4)[0]
        pts = constellation(4)
        want = pts[np.argmax(pts.real + pts.imag)]
        assert got == pytest.approx(want)


class TestParseModulation:
    def test_names_and_numbers(self):
        assert parse_modulation("bpsk") == 2
        assert parse_modulation("QPSK") == 4
        assert parse_modulation("16-QAM") == 16
        assert parse_modulation("64qam") == 64
        assert parse_modulation("16") == 16
        assert parse_modulation(64) == 64

    def test_rejects_unknown(self):
        with pytest.raises(MappingError):
            parse_modulation("8psk")
        with pytest.raises(MappingError):
            parse_modulation(3)
