"""Geometric channel tests: path gains, delays, SNR calibration, determinism."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest

from sda_twin.beamforming import (
    ArrayGeometry,
    SPEED_OF_LIGHT,
    build_codebook,
    make_steering_awv,
)
from sda_twin.channel import (
    ChannelError,
    ChannelModel,
    NodePose,
    Reflector,
    Scenario,
    awgn,
    builtin_scenarios,
    load_scenario,
    node_field,
    save_scenario,
)
from sda_twin.modem import PpduConfig, build_ppdu, demod_decode


def los_scenario(range_m: float = 4.5, **kw) -> Scenario:
    return Scenario(
        name=f"los-{range_m}",
        tx=NodePose(0.0, 0.0, 0.0),
        rx=NodePose(range_m, 0.0, 180.0),
        reflectors=(),
        **kw,
    )


class TestGeometry:
    def test_look_angle_wraps(self):
        pose = NodePose(0.0, 0.0, 90.0)
        assert pose.look_angle_deg(0.0, 1.0) == pytest.approx(0.0)
        assert pose.look_angle_deg(-1.0, 0.0) == pytest.approx(90.0)
        assert pose.look_angle_deg(1.0, 0.0) == pytest.approx(-90.0)

    def test_node_field_zero_behind_the_array(self):
        awv = make_steering_awv(0.0)
        vals = node_field(awv, np.array([-120.0, 95.0, 170.0]), ArrayGeometry())
        assert np.all(vals == 0)

    def test_free_space_spread_matches_fspl(self):
        """|gain| of the direct ray reproduces 1/FSPL for isotropic-ish beams."""
        model = ChannelModel(los_scenario(4.5), seed=0)
        book = model.codebook
        g = model.path_gains(book.beam(11), book.beam(11))[0]
        lam = SPEED_OF_LIGHT / 28e9
        spread_db = -20 * math.log10(4 * math.pi * 4.5 / lam)
        f_tx = abs(node_field(book.beam(11), 0.0, model.geometry)[0])
        want_db = spread_db + 40 * math.log10(f_tx)  # same field both ends
        assert 20 * math.log10(abs(g)) == pytest.approx(want_db, abs=1e-9)

    def test_los_outside_fov_refuses_to_calibrate(self):
        scn = Scenario(
            name="behind",
            tx=NodePose(0.0, 0.0, 180.0),  # facing away from the receiver
            rx=NodePose(4.5, 0.0, 180.0),
            reflectors=(),
        )
        with pytest.raises(ChannelError):
            ChannelModel(scn)


class TestTapsAndDelays:
    def test_los_only_has_one_path(self):
        model = ChannelModel(los_scenario(), seed=0)
        assert len(model.paths) == 1
        assert model.paths[0].delay_samples == 0

    def test_reflector_adds_delayed_tap(self):
        scn = Scenario(
            name="cab",
            tx=NodePose(0.0, 0.0, 0.0),
            rx=NodePose(4.5, 0.0, 180.0),
            reflectors=(Reflector(2.25, -1.1465, 9.0),),
        )
        model = ChannelModel(scn, seed=0)
        assert len(model.paths) == 2
        bounce = model.paths[1]
        extra = 2 * math.hypot(2.25, 1.1465) - 4.5
        want = round(extra / SPEED_OF_LIGHT * model.config.sample_rate_hz)
        assert bounce.delay_samples == want == 3

    def test_reflection_loss_applied_in_amplitude(self):
        base = Scenario(
            name="a",
            tx=NodePose(0.0, 0.0, 0.0),
            rx=NodePose(4.5, 0.0, 180.0),
            reflectors=(Reflector(2.25, -1.1465, 0.0),),
        )
        lossy = Scenario(
            name="b",
            tx=base.tx,
            rx=base.rx,
            reflectors=(Reflector(2.25, -1.1465, 9.0),),
        )
        awv = build_codebook().beam(11)
        g0 = ChannelModel(base, seed=0).path_gains(awv, awv)[1]
        g9 = ChannelModel(lossy, seed=0).path_gains(awv, awv)[1]
        assert 20 * math.log10(abs(g0) / abs(g9)) == pytest.approx(9.0, abs=1e-9)

    def test_ripple_taps_are_weak_and_seeded(self):
        model = ChannelModel(los_scenario(ripple_db=-28.0), seed=5)
        delays, gains = model.taps(
            model.codebook.beam(11), model.codebook.beam(11)
        )
        assert delays.size == 7  # direct ray + 6 diffuse taps
        ripple_power = np.sum(np.abs(gains[1:]) ** 2)
        los_power = abs(gains[0]) ** 2
        assert 10 * math.log10(ripple_power / los_power) < -20
        again = ChannelModel(los_scenario(ripple_db=-28.0), seed=5)
        d2, g2 = again.taps(model.codebook.beam(11), model.codebook.beam(11))
        assert np.array_equal(delays, d2) and np.allclose(gains, g2)


class TestCalibration:
    def test_aligned_expected_snr_hits_target_without_ripple(self):
        model = ChannelModel(los_scenario(target_snr_db=30.0), seed=0)
        assert model.aligned_tx_beam == 11
        assert model.aligned_rx_beam == 11
        got = model.expected_snr_db(11, 11)
        assert got == pytest.approx(30.0, abs=1e-9)

    def test_measured_snr_matches_target(self):
        model = ChannelModel(los_scenario(target_snr_db=30.0), seed=0)
        rng = np.random.default_rng(2)
        bits = rng.integers(0, 2, 1024, dtype=np.uint8)
        buf, _ = build_ppdu(bits, 4)
        awv = model.codebook.beam(11)
        snrs = [
            demod_decode(
                model.propagate(buf, awv, awv, tx_beam=11, rx_beam=11, frame_index=k)
            ).snr_db
            for k in range(5)
        ]
        assert float(np.mean(snrs)) == pytest.approx(30.0, abs=0.5)

    def test_misaligned_beams_lose_snr(self):
        model = ChannelModel(los_scenario(), seed=0)
        assert model.expected_snr_db(1, 1) < model.expected_snr_db(11, 11) - 20

    def test_doubling_range_costs_6db(self):
        near = ChannelModel(los_scenario(4.5), seed=0)
        far = ChannelModel(los_scenario(9.0), seed=0)
        awv = near.codebook.beam(11)
        g_near = abs(near.path_gains(awv, awv)[0])
        g_far = abs(far.path_gains(awv, awv)[0])
        assert 20 * math.log10(g_near / g_far) == pytest.approx(6.0206, abs=1e-3)


class TestPropagate:
    def test_repeatable_bit_for_bit(self):
        model = ChannelModel(los_scenario(ripple_db=-28.0), seed=3)
        awv = model.codebook.beam(11)
        x = np.ones(256, complex)
        a = model.propagate(x, awv, awv, tx_beam=11, rx_beam=11, frame_index=4)
        b = model.propagate(x, awv, awv, tx_beam=11, rx_beam=11, frame_index=4)
        assert np.array_equal(a.samples, b.samples)

    def test_noise_varies_with_frame_index(self):
        model = ChannelModel(los_scenario(), seed=3)
        awv = model.codebook.beam(11)
        x = np.ones(256, complex)
        a = model.propagate(x, awv, awv, frame_index=0)
        b = model.propagate(x, awv, awv, frame_index=1)
        assert not np.array_equal(a.samples, b.samples)

    def test_noiseless_is_pure_convolution(self):
        model = ChannelModel(los_scenario(), seed=0)
        awv = model.codebook.beam(11)
        x = np.ones(8, complex)
        y = model.propagate(x, awv, awv, include_noise=False)
        g = model.path_gains(awv, awv)[0]
        assert np.allclose(y.samples, g * x)

    def test_end_to_end_payload_through_cabinet_scene(self):
        model = ChannelModel(load_scenario("tabletop-4p5m-cabinet"), seed=0)
        rng = np.random.default_rng(4)
        bits = rng.integers(0, 2, 512, dtype=np.uint8)
        buf, _ = build_ppdu(bits, 4)
        awv = model.codebook.beam(11)
        cap = model.propagate(buf, awv, awv, tx_beam=11, rx_beam=11)
        rep = demod_decode(cap)
        assert rep.decode_ok
        assert np.array_equal(rep.payload_bits, bits)


class TestAwgnHelper:
    def test_measured_snr_matches_request(self):
        rng = np.random.default_rng(6)
        bits = rng.integers(0, 2, 1024, dtype=np.uint8)
        buf, _ = build_ppdu(bits, 4)
        snrs = [demod_decode(awgn(buf, 20.0, seed=k)).snr_db for k in range(8)]
        assert float(np.mean(snrs)) == pytest.approx(20.0, abs=0.5)

    def test_seeded_determinism(self):
        x = np.ones(64, complex)
        a = awgn(x, 10.0, seed=9)
        b = awgn(x, 10.0, seed=9)
        c = awgn(x, 10.0, seed=10)
        assert np.array_equal(a.samples, b.samples)
        assert not np.array_equal(a.samples, c.samples)


class TestScenarioFiles:
    def test_builtins_present(self):
        names = builtin_scenarios()
        assert "tabletop-4p5m" in names
        assert "tabletop-4p5m-cabinet" in names

    def test_dict_roundtrip(self):
        scn = los_scenario(ripple_db=-28.0, target_snr_db=27.0)
        assert Scenario.from_dict(scn.to_dict()) == scn

    def test_save_load_roundtrip(self, tmp_path):
        scn = los_scenario()
        p = tmp_path / "scene.json"
        save_scenario(scn, p)
        assert load_scenario(p) == scn
        assert json.loads(p.read_text())["name"] == scn.name

    def test_unknown_name_lists_builtins(self):
        with pytest.raises(ChannelError, match="tabletop-4p5m"):
            load_scenario("no-such-scene")
