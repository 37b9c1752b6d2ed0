"""``sda-twin``: one executable over every module of the twin.

Subcommands: ``pattern``, ``codebook``, ``linkbudget``, ``ppdu-encode``,
``ppdu-decode``, ``loopback``, ``sweep``, ``comet``, ``serve``.

Conventions shared by all subcommands:

* Results print to stdout as ``key: value`` lines (machine-parsable); errors
  print one ``error: ...`` line to stderr.
* Exit codes: 0 success, 2 usage, 3 input/output failure, 4 simulation
  failure.
* Delimited artifacts are content-addressed: ``<subcommand>-<seed>-<hash>``
  with a ten-hex-digit SHA-256 prefix, written under ``--out-dir``.  Each
  embeds the tool version, seed, and the run's configuration as leading
  ``#`` comment lines (JSON sidecars embed the same fields inline), so a
  re-run with the same inputs produces byte-identical files under identical
  names.
* Subcommands with a delimited artifact also render a PNG figure alongside
  it (same stem); ``--no-plot`` skips the figure.
* ``--payload -`` reads payload bytes from stdin.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .beamforming import (
    BeamformingError,
    build_codebook,
    compute_pattern,
    make_steering_awv,
    pattern_metrics,
    PatternReference,
)
from .channel import ChannelError, ChannelModel, awgn, load_scenario
from .comet import (
    ArrayUnderTest,
    CometError,
    Interpolator,
    export_gain_table,
    gen_codes,
    sweep_phase_settings,
)
from .control import ControlError, resolve_bind_address, serve
from .linkbudget import (
    LinkBudgetError,
    LinkBudgetParams,
    RateParams,
    SUPPORTED_MODULATIONS,
    data_rate_bps,
    fspl_db,
    solve_range,
)
from .modem import (
    FrameError,
    IqFormatError,
    MappingError,
    ModemError,
    PpduConfig,
    build_ppdu,
    bytes_to_bits,
    demod_decode,
    parse_modulation,
    read_iq,
    write_iq,
)
from .sweep import SweepError, run_sweep

_USAGE_EXIT = 2
_IO_EXIT = 3
_SIM_EXIT = 4

_IO_ERRORS = (OSError, IqFormatError)
_SIM_ERRORS = (
    BeamformingError,
    LinkBudgetError,
    ModemError,
    FrameError,
    MappingError,
    ChannelError,
    SweepError,
    CometError,
    ControlError,
    ValueError,
)


def _metadata(subcommand: str, seed: int, config: dict) -> str:
    cfg = json.dumps(config, sort_keys=True, default=str)
    return (
        f"# tool: sda-twin {__version__}\n"
        f"# subcommand: {subcommand}\n"
        f"# seed: {seed}\n"
        f"# config: {cfg}\n"
    )


def _write_artifact(
    out_dir: Path, subcommand: str, seed: int, data: bytes | str, ext: str
) -> Path:
    if isinstance(data, str):
        data = data.encode("utf-8")
    digest = hashlib.sha256(data).hexdigest()[:10]
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{subcommand}-{seed}-{digest}.{ext}"
    path.write_bytes(data)
    return path


def _emit(key: str, value) -> None:
    print(f"{key}: {value}")


def _read_payload(args) -> bytes:
    if args.payload_hex is not None:
        try:
            return bytes.fromhex(args.payload_hex)
        except ValueError as exc:
            raise MappingError(f"payload hex is invalid: {exc}") from exc
    if args.payload is None:
        return b""
    if args.payload == "-":
        return sys.stdin.buffer.read()
    return Path(args.payload).read_bytes()


# -- subcommand bodies --------------------------------------------------------


def _cmd_pattern(args) -> int:
    awv = make_steering_awv(args.angle, dac_bits=args.dac_bits)
    reference = (
        PatternReference.NORMALIZED if args.normalized else PatternReference.ABSOLUTE_DBI
    )
    pattern = compute_pattern(awv, reference=reference)
    metrics = pattern_metrics(pattern)
    text = _metadata(
        "pattern",
        args.seed,
        {"angle_deg": args.angle, "dac_bits": args.dac_bits, "normalized": args.normalized},
    ) + pattern.to_csv()
    path = _write_artifact(args.out_dir, "pattern", args.seed, text, "csv")
    _emit("artifact_csv", path)
    _emit("peak_angle_deg", f"{metrics.peak_angle_deg:.2f}")
    _emit("peak_gain_db", f"{metrics.peak_gain_db:.3f}")
    _emit("hpbw_deg", f"{metrics.hpbw_deg:.3f}")
    if metrics.first_sidelobe_db is not None:
        _emit("first_sidelobe_db", f"{metrics.first_sidelobe_db:.3f}")
    if metrics.peak_to_null_db is not None:
        _emit("peak_to_null_db", f"{metrics.peak_to_null_db:.3f}")
    if args.plot:
        from .plotting import save_pattern_figure

        png = save_pattern_figure(
            pattern, path.with_suffix(".png"), title=f"steered to {args.angle:g} deg"
        )
        _emit("artifact_png", png)
    return 0


def _cmd_codebook(args) -> int:
    book = build_codebook(dac_bits=args.dac_bits)
    text = _metadata(
        "codebook", args.seed, {"dac_bits": args.dac_bits, "n_beams": book.n_beams}
    ) + book.to_csv()
    path = _write_artifact(args.out_dir, "codebook", args.seed, text, "csv")
    _emit("artifact_csv", path)
    _emit("n_beams", book.n_beams)
    _emit("angle_first_deg", f"{book.angle(1):.1f}")
    _emit("angle_last_deg", f"{book.angle(book.n_beams):.1f}")
    _emit("broadside_index", (book.n_beams + 1) // 2)
    if args.plot:
        from .plotting import save_codebook_figure

        patterns = [
            compute_pattern(awv, reference=PatternReference.NORMALIZED)
            for awv in book.entries
        ]
        png = save_codebook_figure(book, patterns, path.with_suffix(".png"))
        _emit("artifact_png", png)
    return 0


def _cmd_linkbudget(args) -> int:
    params = LinkBudgetParams(
        eirp_dbm=args.eirp,
        rx_gain_dbi=args.rx_gain,
        noise_figure_db=args.nf,
        bandwidth_hz=args.bw,
        required_snr_db=args.required_snr,
        link_margin_db=args.margin,
        atmospheric_loss_db=args.loss,
        carrier_hz=args.carrier,
    )
    result = solve_range(params)
    report = result.report()
    cfg = PpduConfig()
    rates = RateParams()
    for order in SUPPORTED_MODULATIONS:
        report[f"data_rate_mbps_{order}"] = data_rate_bps(order, rates) / 1e6
    report["symbol_duration_ns"] = rates.symbol_duration_s * 1e9
    report["occupied_bandwidth_hz"] = cfg.occupied_bandwidth_hz
    if args.at_range is not None:
        report["fspl_at_range_db"] = fspl_db(args.at_range, params.wavelength_m)
    lines = [f"{k},{v:.6f}" for k, v in report.items()]
    text = (
        _metadata("linkbudget", args.seed, {k: getattr(args, k) for k in (
            "eirp", "rx_gain", "nf", "bw", "required_snr", "margin", "loss", "carrier"
        )})
        + "quantity,value\n"
        + "\n".join(lines)
        + "\n"
    )
    path = _write_artifact(args.out_dir, "linkbudget", args.seed, text, "csv")
    for k, v in report.items():
        _emit(k, f"{v:.4f}" if isinstance(v, float) else v)
    _emit("artifact_csv", path)
    if args.plot:
        from .plotting import save_range_figure

        png = save_range_figure(params, path.with_suffix(".png"))
        _emit("artifact_png", png)
    return 0


def _cmd_ppdu_encode(args) -> int:
    payload = _read_payload(args)
    modulation = parse_modulation(args.mod)
    cfg = PpduConfig()
    buf, frame = build_ppdu(bytes_to_bits(payload), modulation, cfg)
    inter = np.empty(2 * buf.samples.size, dtype="<f4")
    inter[0::2] = buf.samples.real.astype(np.float32)
    inter[1::2] = buf.samples.imag.astype(np.float32)
    digest = hashlib.sha256(inter.tobytes()).hexdigest()[:10]
    args.out_dir.mkdir(parents=True, exist_ok=True)
    path = args.out_dir / f"ppdu-encode-{args.seed}-{digest}.iq"
    write_iq(path, buf)
    sidecar = json.loads(frame.to_json())
    sidecar.update(
        {"tool": f"sda-twin {__version__}", "seed": args.seed,
         "config": {"modulation": modulation, "payload_bytes": len(payload)}}
    )
    side_path = path.with_suffix(".json")
    side_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    _emit("artifact_iq", path)
    _emit("artifact_json", side_path)
    _emit("n_samples", buf.samples.size)
    _emit("n_symbols", frame.n_symbols)
    _emit("payload_len_bits", frame.payload_len_bits)
    return 0


def _cmd_ppdu_decode(args) -> int:
    buf = read_iq(args.iq)
    report = demod_decode(buf, PpduConfig())
    summary = report.summary()
    for k, v in summary.items():
        _emit(k, v)
    recovered = report.payload_bytes()
    if recovered is not None:
        _emit("payload_hex", recovered.hex())
    record = dict(summary)
    record.update(
        {"tool": f"sda-twin {__version__}", "seed": args.seed,
         "config": {"iq": str(args.iq)},
         "payload_hex": recovered.hex() if recovered is not None else None}
    )
    path = _write_artifact(
        args.out_dir, "ppdu-decode", args.seed,
        json.dumps(record, indent=2, sort_keys=True) + "\n", "json",
    )
    _emit("artifact_json", path)
    return 0 if report.decode_ok else _SIM_EXIT


def _cmd_loopback(args) -> int:
    payload = _read_payload(args)
    if args.random_bits is not None:
        rng = np.random.default_rng(np.random.SeedSequence((args.seed, 0x10B)))
        bits = rng.integers(0, 2, size=args.random_bits, dtype=np.uint8)
    else:
        bits = bytes_to_bits(payload)
    modulation = parse_modulation(args.mod)
    cfg = PpduConfig()
    tx, frame = build_ppdu(bits, modulation, cfg)
    rx = tx if args.snr_db is None else awgn(tx, args.snr_db, seed=args.seed, config=cfg)
    report = demod_decode(rx, cfg)
    recovered = bool(
        report.decode_ok
        and report.payload_bits.size == bits.size
        and np.array_equal(report.payload_bits, bits)
    )
    _emit("payload recovered", "true" if recovered else "false")
    _emit("modulation", modulation)
    _emit("payload_len_bits", int(bits.size))
    _emit("snr_db_measured", f"{report.snr_db:.2f}")
    if not np.isnan(report.evm_db):
        _emit("evm_db", f"{report.evm_db:.2f}")
    record = {
        "tool": f"sda-twin {__version__}",
        "seed": args.seed,
        "config": {
            "modulation": modulation,
            "snr_db": args.snr_db,
            "payload_len_bits": int(bits.size),
        },
        "recovered": recovered,
        "report": report.summary(),
    }
    path = _write_artifact(
        args.out_dir, "loopback", args.seed,
        json.dumps(record, indent=2, sort_keys=True) + "\n", "json",
    )
    _emit("artifact_json", path)
    return 0 if recovered else _SIM_EXIT


def _cmd_sweep(args) -> int:
    scenario = load_scenario(args.scenario)
    model = ChannelModel(scenario, seed=args.seed)
    result = run_sweep(
        model, frames_per_position=args.frames, parallel=args.parallel
    )
    text = _metadata(
        "sweep",
        args.seed,
        {
            "scenario": scenario.name,
            "frames_per_position": args.frames,
            "parallel": args.parallel,
        },
    ) + result.matrix.to_csv()
    path = _write_artifact(args.out_dir, "sweep", args.seed, text, "csv")
    tx_b, rx_b, snr = result.best
    _emit("artifact_csv", path)
    _emit("scenario", scenario.name)
    _emit("best_tx_beam", tx_b)
    _emit("best_rx_beam", rx_b)
    _emit("best_snr_db", f"{snr:.2f}")
    peaks = result.secondary_peaks(args.threshold_db)
    _emit("secondary_peaks", len(peaks))
    for i, (t, r, v) in enumerate(peaks):
        _emit(f"secondary_{i}", f"tx={t} rx={r} snr_db={v:.2f}")
    if args.plot:
        from .plotting import save_sweep_figure

        png = save_sweep_figure(result.matrix, path.with_suffix(".png"))
        _emit("artifact_png", png)
    return 0


def _cmd_comet(args) -> int:
    interp = Interpolator(
        dac_bits=args.dac_bits,
        compression_db=args.compression_db,
        axis_mismatch_db=args.mismatch_db,
        ideal=args.ideal,
    )
    array = ArrayUnderTest.perturbed(
        n_elements=args.elements,
        spread_db=args.spread_db,
        seed=args.seed,
        interpolator=interp,
    )
    codes = gen_codes(args.elements)
    grid = np.arange(0.0, 360.0, args.grid_step)
    responses = sweep_phase_settings(
        array, grid, codes, noise_sigma=args.noise_sigma, seed=args.seed
    )
    text = _metadata(
        "comet",
        args.seed,
        {
            "elements": args.elements,
            "spread_db": args.spread_db,
            "grid_step": args.grid_step,
            "noise_sigma": args.noise_sigma,
            "ideal": args.ideal,
            "compression_db": args.compression_db,
        },
    ) + export_gain_table(responses)
    path = _write_artifact(args.out_dir, "comet", args.seed, text, "csv")
    first = [r for r in responses if r.commanded_phase_deg == 0.0]
    gains = [r.extracted_gain_db for r in first]
    _emit("artifact_csv", path)
    _emit("code_length", codes.length)
    _emit("n_elements", args.elements)
    if gains:
        _emit("extracted_spread_db", f"{max(gains) - min(gains):.3f}")
    if args.plot:
        from .plotting import save_gain_table_figure

        png = save_gain_table_figure(responses, path.with_suffix(".png"))
        _emit("artifact_png", png)
    return 0


def _cmd_serve(args) -> int:
    host, port = resolve_bind_address(args.bind)
    _emit("listening", f"{host}:{port}")
    _emit("scenario", args.scenario)
    _emit("seed", args.seed)
    try:
        serve(
            scenario=args.scenario,
            seed=args.seed,
            out_dir=args.out_dir,
            bind=f"{host}:{port}",
        )
    except KeyboardInterrupt:
        pass
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sda-twin",
        description="software digital twin of a 16-element mmWave beamforming link",
    )
    parser.add_argument("--version", action="version", version=f"sda-twin {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p: argparse.ArgumentParser, plot: bool = True) -> None:
        p.add_argument("--seed", type=int, default=0, help="root seed recorded in artifacts")
        p.add_argument("--out-dir", type=Path, default=Path("."), help="artifact directory")
        if plot:
            p.add_argument(
                "--no-plot", dest="plot", action="store_false",
                help="skip the PNG figure next to the delimited artifact",
            )

    p = sub.add_parser("pattern", help="compute one steered pattern and its metrics")
    common(p)
    p.add_argument("--angle", type=float, default=0.0, help="steering angle, degrees")
    p.add_argument("--dac-bits", type=int, default=6)
    p.add_argument("--normalized", action="store_true", help="peak-normalized instead of dBi")
    p.set_defaults(func=_cmd_pattern)

    p = sub.add_parser("codebook", help="export the 21-beam codebook")
    common(p)
    p.add_argument("--dac-bits", type=int, default=6)
    p.set_defaults(func=_cmd_codebook)

    p = sub.add_parser("linkbudget", help="range solve + throughput identities")
    common(p)
    p.add_argument("--eirp", type=float, default=32.0, help="EIRP, dBm")
    p.add_argument("--rx-gain", type=float, default=14.0, help="receive array gain, dBi")
    p.add_argument("--nf", type=float, default=6.0, help="receiver noise figure, dB")
    p.add_argument("--bw", type=float, default=1.2e9, help="noise bandwidth, Hz")
    p.add_argument("--required-snr", type=float, default=-0.33, help="required SNR, dB")
    p.add_argument("--margin", type=float, default=20.0, help="link margin, dB")
    p.add_argument("--loss", type=float, default=0.0, help="extra path loss, dB")
    p.add_argument("--carrier", type=float, default=28e9, help="carrier, Hz")
    p.add_argument("--at-range", type=float, default=None, help="also report FSPL here, m")
    p.set_defaults(func=_cmd_linkbudget)

    def payload_args(p: argparse.ArgumentParser) -> None:
        p.add_argument("--payload", help="payload file path, or '-' for stdin")
        p.add_argument("--payload-hex", help="payload as a hex string")

    p = sub.add_parser("ppdu-encode", help="build a transmit frame from payload bytes")
    common(p, plot=False)
    payload_args(p)
    p.add_argument("--mod", default="qpsk", help="2/4/16/64 or bpsk/qpsk/16qam/64qam")
    p.set_defaults(func=_cmd_ppdu_encode)

    p = sub.add_parser("ppdu-decode", help="decode a frame from an IQ file")
    common(p, plot=False)
    p.add_argument("--iq", required=True, type=Path, help="IQ capture to decode")
    p.set_defaults(func=_cmd_ppdu_decode)

    p = sub.add_parser("loopback", help="encode, optionally add noise, decode, compare")
    common(p, plot=False)
    payload_args(p)
    p.add_argument("--random-bits", type=int, default=None, help="use N seeded random bits")
    p.add_argument("--mod", default="qpsk")
    p.add_argument("--snr-db", type=float, default=None, help="omit for a noiseless run")
    p.set_defaults(func=_cmd_loopback)

    p = sub.add_parser("sweep", help="21x21 beam-pair acquisition sweep")
    common(p)
    p.add_argument("--scenario", default="tabletop-4p5m", help="built-in name or JSON path")
    p.add_argument("--frames", type=int, default=3, help="probe frames per beam pair")
    p.add_argument("--parallel", action="store_true", help="thread-pool the cells")
    p.add_argument("--threshold-db", type=float, default=12.0,
                   help="secondary peaks within this of the maximum")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("comet", help="per-element calibration sweep / gain table")
    common(p)
    p.add_argument("--elements", type=int, default=16)
    p.add_argument("--spread-db", type=float, default=4.5, help="injected gain spread")
    p.add_argument("--grid-step", type=float, default=5.625, help="phase grid step, deg")
    p.add_argument("--noise-sigma", type=float, default=0.0, help="detector noise std dev")
    p.add_argument("--dac-bits", type=int, default=6)
    p.add_argument("--compression-db", type=float, default=3.0)
    p.add_argument("--mismatch-db", type=float, default=0.0)
    p.add_argument("--ideal", action="store_true", help="ideal interpolator (flat gain)")
    p.set_defaults(func=_cmd_comet)

    p = sub.add_parser("serve", help="run the TCP control plane in the foreground")
    common(p, plot=False)
    p.add_argument("--scenario", default="tabletop-4p5m")
    p.add_argument("--bind", default=None, help="host:port (default env or 127.0.0.1:5225)")
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "plot"):
        args.plot = False
    try:
        return args.func(args)
    except _IO_ERRORS as exc:  # before _SIM_ERRORS: IqFormatError is a ValueError
        print(f"error: {exc}", file=sys.stderr)
        return _IO_EXIT
    except _SIM_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _SIM_EXIT


if __name__ == "__main__":
    sys.exit(main())
