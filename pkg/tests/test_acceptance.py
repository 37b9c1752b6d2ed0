"""Release acceptance gate.

One test per release criterion. Each criterion times itself against its
runtime budget and prints a single ``criterion N (...): PASS/FAIL`` line
(visible with ``pytest -s``; under plain ``pytest -v`` the per-test result
lines carry the same verdicts).
"""

from __future__ import annotations

import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from sda_twin.beamforming import (
    PatternReference,
    build_codebook,
    compute_pattern,
    make_steering_awv,
    pattern_metrics,
)
from sda_twin.channel import ChannelModel, awgn, load_scenario
from sda_twin.cli import main
from sda_twin.comet import (
    ArrayUnderTest,
    calibrate,
    gen_codes,
    sweep_phase_settings,
)
from sda_twin.control import ControlClient, serve
from sda_twin.linkbudget import LinkBudgetParams, RateParams, data_rate_bps, fspl_db, solve_range
from sda_twin.modem import (
    PpduConfig,
    build_ppdu,
    bytes_to_bits,
    demod_decode,
)
from sda_twin.modem.mapping import hard_demap, map_symbols
from sda_twin.sweep import run_sweep


@contextmanager
def criterion(number: int, title: str, budget_s: float):
    """Time one criterion and print exactly one pass/fail line for it."""
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        elapsed = time.perf_counter() - start
        print(f"criterion {number} ({title}): FAIL ({elapsed:.2f} s)")
        raise
    elapsed = time.perf_counter() - start
    if elapsed >= budget_s:
        print(f"criterion {number} ({title}): FAIL ({elapsed:.2f} s over {budget_s:g} s budget)")
        raise AssertionError(
            f"criterion {number} exceeded its {budget_s:g} s runtime budget: {elapsed:.2f} s"
        )
    print(f"criterion {number} ({title}): PASS ({elapsed:.2f} s)")


def q_function(x: float) -> float:
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def remove_gauge(reference: np.ndarray, estimate: np.ndarray) -> np.ndarray:
    """Rotate out the single global phase the calibration cannot observe."""
    gauge = estimate[0] / reference[0]
    return estimate * np.conj(gauge) / abs(gauge)


class TestAcceptance:
    def test_criterion_1_throughput_identities(self, tmp_path, capsys):
        FOUR_SIG_FIGS = 5e-4
        with criterion(1, "throughput identities", budget_s=1.0):
            assert main(["linkbudget", "--out-dir", str(tmp_path), "--no-plot"]) == 0
            capsys.readouterr()
            artifact = next(tmp_path.glob("linkbudget-*.csv"))
            table = {}
            for line in artifact.read_text().splitlines():
                if line.startswith("#") or line == "quantity,value":
                    continue
                key, value = line.split(",")
                table[key] = float(value)
            assert table["data_rate_mbps_2"] == pytest.approx(268.8, rel=FOUR_SIG_FIGS)
            assert table["data_rate_mbps_4"] == pytest.approx(537.6, rel=FOUR_SIG_FIGS)
            assert table["data_rate_mbps_16"] == pytest.approx(1075.2, rel=FOUR_SIG_FIGS)
            assert table["data_rate_mbps_64"] == pytest.approx(1612.8, rel=FOUR_SIG_FIGS)
            assert table["symbol_duration_ns"] == pytest.approx(208.33, rel=FOUR_SIG_FIGS)
            assert table["bandwidth_hz"] == pytest.approx(1.2e9, rel=FOUR_SIG_FIGS)
            # Same identities straight from the library.
            rates = RateParams()
            assert data_rate_bps(64, rates) == pytest.approx(1612.8e6, rel=1e-9)

    def test_criterion_2_link_budget(self):
        with criterion(2, "link budget", budget_s=1.0):
            params = LinkBudgetParams()
            assert fspl_db(128.0, params.wavelength_m) == pytest.approx(103.5, abs=0.1)
            result = solve_range(params)
            assert result.range_m == pytest.approx(128.0, rel=0.02)

    def test_criterion_3_beam_patterns(self):
        with criterion(3, "beam patterns", budget_s=10.0):
            book = build_codebook()
            assert book.n_beams == 21
            assert book.angle(1) == pytest.approx(-45.0)
            assert book.angle(21) == pytest.approx(45.0)
            for index in range(1, 22):
                nominal = book.angle(index)
                assert nominal == pytest.approx(-45.0 + 4.5 * (index - 1))
                pattern = compute_pattern(
                    book.beam(index), reference=PatternReference.NORMALIZED
                )
                peak = pattern_metrics(pattern).peak_angle_deg
                assert abs(peak - nominal) <= 2.25, f"beam {index} peak {peak}"
            broadside = pattern_metrics(compute_pattern(make_steering_awv(0.0)))
            assert broadside.first_sidelobe_db == pytest.approx(-12.8, abs=0.3)
            assert broadside.hpbw_deg == pytest.approx(12.8, abs=0.5)

    def test_criterion_4_modem(self):
        with criterion(4, "modem", budget_s=120.0):
            cfg = PpduConfig()
            rng = np.random.default_rng(2026)

            # Noiseless loopback is bit-exact: >= 200 random payload sizes.
            cases = 0
            for modulation in (2, 4, 16, 64):
                lengths = [0, 4096] + list(rng.integers(1, 4096, size=50))
                for n_bits in lengths:
                    bits = rng.integers(0, 2, size=int(n_bits), dtype=np.uint8)
                    tx, _ = build_ppdu(bits, modulation, cfg)
                    report = demod_decode(tx, cfg)
                    assert report.decode_ok, (modulation, n_bits)
                    assert np.array_equal(report.payload_bits, bits), (modulation, n_bits)
                    cases += 1
            assert cases >= 200

            # Received EVM tracks -SNR within 0.5 dB across 10..30 dB.
            bits = rng.integers(0, 2, size=4096, dtype=np.uint8)
            tx, _ = build_ppdu(bits, 4, cfg)
            for snr_db in range(10, 31, 2):
                for seed in (1, 2, 3):
                    rx = awgn(tx, float(snr_db), seed=seed, config=cfg)
                    report = demod_decode(rx, cfg)
                    assert report.evm_db == pytest.approx(-snr_db, abs=0.5), (
                        snr_db, seed, report.evm_db,
                    )

            # Uncoded BPSK hard decisions match Q(sqrt(2*SNR)) within 3 sigma.
            n_bits = 100_000
            bits = rng.integers(0, 2, size=n_bits, dtype=np.uint8)
            symbols = map_symbols(bits, 2)
            for snr_db in (0.0, 4.0, 8.0):
                noise_var = 10.0 ** (-snr_db / 10.0)
                noise_rng = np.random.default_rng(int(snr_db) + 17)
                noise = math.sqrt(noise_var / 2.0) * (
                    noise_rng.standard_normal(n_bits)
                    + 1j * noise_rng.standard_normal(n_bits)
                )
                decided = hard_demap(symbols + noise, 2)
                errors = int(np.count_nonzero(decided != bits))
                p = q_function(math.sqrt(2.0 * 10.0 ** (snr_db / 10.0)))
                sigma = math.sqrt(n_bits * p * (1.0 - p))
                assert abs(errors - n_bits * p) <= 3.0 * sigma, (snr_db, errors, n_bits * p)

            # A dense-constellation ASCII payload survives a 30 dB channel.
            message = b"the quick brown fox jumps over the lazy dog"
            tx, _ = build_ppdu(bytes_to_bits(message), 64, cfg)
            report = demod_decode(awgn(tx, 30.0, seed=7, config=cfg), cfg)
            assert report.decode_ok
            recovered = report.payload_bytes()
            assert recovered == message
            assert recovered.decode("ascii") == message.decode("ascii")

    def test_criterion_5_beam_sweep(self):
        with criterion(5, "beam sweep", budget_s=300.0):
            los = ChannelModel(load_scenario("tabletop-4p5m"), seed=0)
            sequential = run_sweep(los, frames_per_position=3)
            assert sequential.matrix.values.shape == (21, 21)
            tx_beam, rx_beam, peak = sequential.best
            assert (tx_beam, rx_beam) == (los.aligned_tx_beam, los.aligned_rx_beam)
            assert (tx_beam, rx_beam) == (11, 11)
            assert peak == pytest.approx(30.0, abs=1.0)

            # Fixed seed: byte-for-byte reproducible, sequential == parallel.
            repeat = run_sweep(los, frames_per_position=3)
            assert repeat.matrix.to_csv() == sequential.matrix.to_csv()
            parallel = run_sweep(los, frames_per_position=3, parallel=True)
            assert parallel.matrix.to_csv() == sequential.matrix.to_csv()

            cabinet = ChannelModel(load_scenario("tabletop-4p5m-cabinet"), seed=0)
            cab_seq = run_sweep(cabinet, frames_per_position=3)
            peaks = cab_seq.secondary_peaks()
            assert len(peaks) == 1, peaks
            sec_tx, sec_rx, _ = peaks[0]
            assert 3 <= sec_tx <= 8, peaks
            assert 15 <= sec_rx <= 18, peaks
            cab_par = run_sweep(cabinet, frames_per_position=3, parallel=True)
            assert cab_par.matrix.to_csv() == cab_seq.matrix.to_csv()

    def test_criterion_6_calibration(self):
        with criterion(6, "per-element calibration", budget_s=120.0):
            codes = gen_codes(16)
            rng = np.random.default_rng(2026)
            for _ in range(1000):
                gains = 10.0 ** (rng.uniform(-3.0, 3.0, 16) / 20.0) * np.exp(
                    2j * np.pi * rng.random(16)
                )
                estimate = remove_gauge(gains, calibrate(gains, codes).gains)
                err_db = 20.0 * np.log10(np.abs(estimate) / np.abs(gains))
                err_deg = np.degrees(np.angle(estimate / gains))
                assert np.max(np.abs(err_db)) <= 1e-6
                assert np.max(np.abs(err_deg)) <= 1e-4

            # Injected 4.5 dB element spread is recovered within 0.1 dB.
            array = ArrayUnderTest.perturbed(16, spread_db=4.5, seed=0)
            at_zero = [
                r.extracted_gain_db
                for r in sweep_phase_settings(array, np.array([0.0]), codes)
                if r.commanded_phase_deg == 0.0
            ]
            assert max(at_zero) - min(at_zero) == pytest.approx(4.5, abs=0.1)

            # Quantized-interpolator ripple peaks on the four DAC axes.
            table = sweep_phase_settings(array, codes=codes)
            per_element: dict[int, list[tuple[float, float]]] = {}
            for row in table:
                per_element.setdefault(row.element_id, []).append(
                    (row.commanded_phase_deg, row.extracted_gain_db)
                )
            for rows in per_element.values():
                phases = np.array([p for p, _ in rows])
                gains_db = np.array([g for _, g in rows])
                peak_phase = phases[int(np.argmax(gains_db))]
                distance = min(peak_phase % 90.0, 90.0 - peak_phase % 90.0)
                assert distance <= 5.625, peak_phase

    def test_criterion_7_control_plane(self, tmp_path):
        with criterion(7, "control plane", budget_s=60.0):
            payload = "00112233445566778899aabbccddeeff"

            def two_client_session(out_dir) -> tuple[list[str], str]:
                server = serve(
                    "tabletop-4p5m", seed=0, out_dir=out_dir,
                    bind="127.0.0.1:0", background=True,
                )
                host, port = server.server_address[:2]
                try:
                    with ControlClient(host, port) as alice, \
                            ControlClient(host, port) as bob:
                        alice.expect_ok("set_mode", {"node": "tx0", "mode": "tx"})
                        alice.expect_ok("set_beam", {"node": "tx0", "index": 11})
                        bob.expect_ok("set_mode", {"node": "rx0", "mode": "rx"})
                        bob.expect_ok("set_beam", {"node": "rx0", "index": 11})
                        alice.expect_ok("tx_frame", {"node": "tx0", "payload_hex": payload})
                        capture = bob.expect_ok("rx_capture", {"node": "rx0"})
                        sweep = bob.expect_ok("run_sweep", {"frames_per_position": 1})
                        return (
                            [capture["artifact"], sweep["artifact"]],
                            capture["payload_hex"],
                        )
                finally:
                    server.shutdown()
                    server.server_close()

            first, recovered = two_client_session(tmp_path / "run1")
            second, _ = two_client_session(tmp_path / "run2")
            assert recovered == payload
            for a, b in zip(first, second):
                assert a.split("/")[-1] == b.split("/")[-1]
                with open(a, "rb") as fa, open(b, "rb") as fb:
                    assert fa.read() == fb.read()

            # Malformed frames and bad verbs answer in-band without
            # corrupting node state or killing the connection.
            server = serve(
                "tabletop-4p5m", seed=0, out_dir=tmp_path / "err",
                bind="127.0.0.1:0", background=True,
            )
            host, port = server.server_address[:2]
            try:
                with ControlClient(host, port) as client:
                    client.expect_ok("set_beam", {"node": "tx0", "index": 11})
                    client.send_raw(b"\x00garbage that is not json\xff")
                    garbled = client.read_reply()
                    assert garbled["status"] == "error"
                    assert garbled["id"] is None

                    error_cases = [
                        ("no_such_verb", {}),
                        ("set_beam", {"node": "tx0", "index": 22}),
                        ("set_beam", {"node": "tx9", "index": 1}),
                        ("set_mode", {"node": "tx0", "mode": "duplex"}),
                        ("set_awv", {"node": "tx0", "amplitudes": [1.0], "phases_rad": [0.0]}),
                        ("set_gain", {"node": "tx0", "gain_db": float("inf")}),
                        ("load_iq", {"node": "tx0", "path": str(tmp_path / "missing.iq")}),
                        ("tx_frame", {"node": "rx0", "payload_hex": "aa"}),
                        ("rx_capture", {"node": "rx0"}),
                        ("run_sweep", {"frames_per_position": 0}),
                    ]
                    for cmd, args in error_cases:
                        reply = client.request(cmd, args)
                        assert reply["status"] == "error", (cmd, reply)
                        assert reply["error"], (cmd, reply)

                    state = client.expect_ok("get_status", {"node": "tx0"})["state"]
                    assert state["beam_index"] == 11  # untouched by any failure
            finally:
                server.shutdown()
                server.server_close()
