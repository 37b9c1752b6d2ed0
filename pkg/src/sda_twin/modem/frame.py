"""OFDM frame (PPDU) construction.

Numerology (fixed by :class:`PpduConfig` defaults):

    IDFT size          256
    cyclic prefix      64 samples  (320-sample symbols, 208.33 ns)
    sample rate        1.536 GS/s
    occupied tones     200 (offsets -100..+99)  ->  1.2 GHz occupied width
    DC nulls           8  (offsets -4..+3)
    active tones       192 = 128 data + 64 pilot
    pilots             every third active tone, fixed QPSK values
    chest interval     a wideband pilot symbol before every 16th payload symbol

Frame layout, one OFDM symbol each unless noted:

    [0] sync      — pilots on even-offset active tones only, so the symbol
                    body repeats after 128 samples (timing/CFO acquisition)
    [1] wideband pilot — all 192 active tones known (initial channel estimate)
    [2] header    — one BPSK rate-1/2 codeword on the data tones
    [3..]         — payload symbols, a chest (wideband pilot) field inserted
                    before payload symbol i whenever i % 16 == 0

Header record, 64 bits MSB-first: modulation id (3) | payload bit length (24)
| pre-pad (16) | post-pad (13) | CRC-8 (8).  The header always rides BPSK at
rate 1/2 so it is decodable before the payload modulation is known.

Time-domain scaling: each symbol body is ifft(tones) * N / sqrt(n_occupied),
giving unit mean power for unit-energy tone values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bits as bitops
from . import mapping, polar
from .iqfile import IqBuffer

__all__ = [
    "PpduConfig",
    "Frame",
    "TonePlan",
    "build_ppdu",
    "build_header_bits",
    "parse_header_bits",
    "tones_to_symbol",
    "symbol_to_tones",
    "sync_symbol_tones",
    "wideband_pilot_tones",
    "pilot_values",
    "FrameError",
    "MODULATION_IDS",
]

MODULATION_IDS = {2: 0, 4: 1, 16: 2, 64: 3}
_ID_TO_MODULATION = {v: k for k, v in MODULATION_IDS.items()}

_HDR_MOD_BITS = 3
_HDR_LEN_BITS = 24
_HDR_PRE_BITS = 16
_HDR_POST_BITS = 13

#: Fixed seeds for the deterministic pilot/sync tone values (shared
#: transmit/receive knowledge, stable across runs).
_PILOT_SEED = 0x5DA7
_SYNC_SEED = 0x5DA0


class FrameError(ValueError):
    """Raised for malformed frame parameters or header records."""


@dataclass(frozen=True)
class PpduConfig:
    """OFDM numerology; defaults model the hardware's 1.2 GHz mode."""

    idft_size: int = 256
    cp_len: int = 64
    n_occupied: int = 200
    n_dc_null: int = 8
    pilot_stride: int = 3
    chest_interval: int = 16
    sample_rate_hz: float = 1.536e9

    def __post_init__(self) -> None:
        if self.n_occupied > self.idft_size:
            raise FrameError("occupied tones exceed IDFT size")
        if self.n_dc_null >= self.n_occupied:
            raise FrameError("DC null band swallows all occupied tones")
        if (self.n_occupied - self.n_dc_null) % self.pilot_stride:
            raise FrameError("active tone count must divide by the pilot stride")

    @property
    def n_active(self) -> int:
        return self.n_occupied - self.n_dc_null

    @property
    def n_pilot(self) -> int:
        return self.n_active // self.pilot_stride

    @property
    def n_data(self) -> int:
        return self.n_active - self.n_pilot

    @property
    def symbol_len(self) -> int:
        return self.idft_size + self.cp_len

    @property
    def symbol_duration_s(self) -> float:
        return self.symbol_len / self.sample_rate_hz

    @property
    def occupied_bandwidth_hz(self) -> float:
        return self.sample_rate_hz * self.n_occupied / self.idft_size


@dataclass(frozen=True)
class TonePlan:
    """Index bookkeeping for one numerology.

    Offsets are signed tone indices relative to DC; ``*_bins`` are the
    corresponding FFT bin numbers (offset mod IDFT size).  Data tones are
    filled in ascending-offset order.
    """

    config: PpduConfig
    active_offsets: np.ndarray
    pilot_offsets: np.ndarray
    data_offsets: np.ndarray
    dc_null_offsets: np.ndarray

    @classmethod
    def for_config(cls, config: PpduConfig) -> "TonePlan":
        half = config.n_occupied // 2
        occupied = np.arange(-half, config.n_occupied - half)
        null_lo = -(config.n_dc_null // 2)
        nulls = np.arange(null_lo, null_lo + config.n_dc_null)
        active = np.array([o for o in occupied if o not in set(nulls)])
        pilots = active[:: config.pilot_stride]
        data = np.array(sorted(set(active) - set(pilots)))
        return cls(config, active, pilots, data, nulls)

    def bins(self, offsets: np.ndarray) -> np.ndarray:
        return np.mod(offsets, self.config.idft_size)

    @property
    def active_bins(self) -> np.ndarray:
        return self.bins(self.active_offsets)

    @property
    def pilot_bins(self) -> np.ndarray:
        return self.bins(self.pilot_offsets)

    @property
    def data_bins(self) -> np.ndarray:
        return self.bins(self.data_offsets)

    @property
    def pilot_positions_in_active(self) -> np.ndarray:
        """Indices of pilot tones within the ascending active-tone order."""
        lookup = {off: i for i, off in enumerate(self.active_offsets)}
        return np.array([lookup[o] for o in self.pilot_offsets])

    @property
    def data_positions_in_active(self) -> np.ndarray:
        lookup = {off: i for i, off in enumerate(self.active_offsets)}
        return np.array([lookup[o] for o in self.data_offsets])


_PLAN_CACHE: dict[PpduConfig, TonePlan] = {}


def tone_plan(config: PpduConfig) -> TonePlan:
    plan = _PLAN_CACHE.get(config)
    if plan is None:
        plan = TonePlan.for_config(config)
        _PLAN_CACHE[config] = plan
    return plan


def _qpsk(rng: np.random.Generator, n: int) -> np.ndarray:
    return (
        (1.0 - 2.0 * rng.integers(0, 2, n)) + 1j * (1.0 - 2.0 * rng.integers(0, 2, n))
    ) / np.sqrt(2.0)


def pilot_values(config: PpduConfig) -> np.ndarray:
    """Known QPSK values over all active tones (ascending offset order).

    Chest/wideband-pilot symbols transmit the whole vector; payload and
    header symbols transmit its entries at the pilot-tone positions.
    """
    return _qpsk(np.random.default_rng(_PILOT_SEED), config.n_active)


def sync_symbol_tones(config: PpduConfig) -> np.ndarray:
    """Tone vector of the repeated-half sync symbol (even offsets only)."""
    plan = tone_plan(config)
    even = plan.active_offsets[plan.active_offsets % 2 == 0]
    vals = _qpsk(np.random.default_rng(_SYNC_SEED), even.size)
    tones = np.zeros(config.idft_size, dtype=complex)
    tones[plan.bins(even)] = vals
    return tones


def wideband_pilot_tones(config: PpduConfig) -> np.ndarray:
    """Tone vector of a chest / initial-estimate symbol (all actives known)."""
    plan = tone_plan(config)
    tones = np.zeros(config.idft_size, dtype=complex)
    tones[plan.active_bins] = pilot_values(config)
    return tones


def tones_to_symbol(tones: np.ndarray, config: PpduConfig) -> np.ndarray:
    """One OFDM symbol (CP + body) from a full IDFT-size tone vector."""
    occupied = np.count_nonzero(tones)
    scale = config.idft_size / np.sqrt(max(occupied, 1))
    body = np.fft.ifft(tones) * scale
    return np.concatenate([body[-config.cp_len :], body])


def symbol_to_tones(body: np.ndarray, config: PpduConfig, n_occupied: int) -> np.ndarray:
    """Inverse of :func:`tones_to_symbol` for a CP-stripped body."""
    return np.fft.fft(body) * np.sqrt(n_occupied) / config.idft_size


@dataclass(frozen=True)
class Frame:
    """Metadata describing one built (or decoded) PPDU."""

    modulation: int
    payload_len_bits: int
    pre_pad: int
    post_pad: int
    n_codewords: int
    n_payload_symbols: int
    chest_symbol_indices: tuple[int, ...]
    n_symbols: int
    sample_rate_hz: float
    symbol_len: int = 320

    @property
    def n_samples(self) -> int:
        return self.n_symbols * self.symbol_len

    def to_json(self) -> str:
        d = {
            "modulation": self.modulation,
            "payload_len_bits": self.payload_len_bits,
            "pre_pad": self.pre_pad,
            "post_pad": self.post_pad,
            "n_codewords": self.n_codewords,
            "n_payload_symbols": self.n_payload_symbols,
            "chest_symbol_indices": list(self.chest_symbol_indices),
            "n_symbols": self.n_symbols,
            "sample_rate_hz": self.sample_rate_hz,
            "symbol_len": self.symbol_len,
        }
        return json.dumps(d, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Frame":
        d = json.loads(text)
        return cls(
            modulation=d["modulation"],
            payload_len_bits=d["payload_len_bits"],
            pre_pad=d["pre_pad"],
            post_pad=d["post_pad"],
            n_codewords=d["n_codewords"],
            n_payload_symbols=d["n_payload_symbols"],
            chest_symbol_indices=tuple(d["chest_symbol_indices"]),
            n_symbols=d["n_symbols"],
            sample_rate_hz=d["sample_rate_hz"],
            symbol_len=d.get("symbol_len", 320),
        )

    def write_sidecar(self, iq_path: str | Path) -> Path:
        side = Path(iq_path).with_suffix(".json")
        side.write_text(self.to_json())
        return side


def build_header_bits(
    modulation: int, payload_len_bits: int, pre_pad: int, post_pad: int
) -> np.ndarray:
    """64-bit header record with its CRC-8 tag."""
    if modulation not in MODULATION_IDS:
        raise FrameError(f"unsupported modulation order {modulation}")
    fields = np.concatenate(
        [
            bitops.pack_uint(MODULATION_IDS[modulation], _HDR_MOD_BITS),
            bitops.pack_uint(payload_len_bits, _HDR_LEN_BITS),
            bitops.pack_uint(pre_pad, _HDR_PRE_BITS),
            bitops.pack_uint(post_pad, _HDR_POST_BITS),
        ]
    )
    tag = bitops.pack_uint(bitops.crc8(fields), bitops.CRC_BITS)
    return np.concatenate([fields, tag])


def parse_header_bits(header: np.ndarray) -> tuple[int, int, int, int]:
    """(modulation, payload_len_bits, pre_pad, post_pad) from a 64-bit record.

    Raises:
        FrameError: on CRC mismatch or an unknown modulation id.
    """
    header = np.asarray(header, dtype=np.uint8)
    if header.size != polar.MESSAGE_BITS:
        raise FrameError("header record must be 64 bits")
    if bitops.crc8(header) != 0:
        raise FrameError("header CRC mismatch")
    mod_id = bitops.unpack_uint(header[:_HDR_MOD_BITS])
    if mod_id not in _ID_TO_MODULATION:
        raise FrameError(f"unknown modulation id {mod_id}")
    pos = _HDR_MOD_BITS
    length = bitops.unpack_uint(header[pos : pos + _HDR_LEN_BITS]); pos += _HDR_LEN_BITS
    pre = bitops.unpack_uint(header[pos : pos + _HDR_PRE_BITS]); pos += _HDR_PRE_BITS
    post = bitops.unpack_uint(header[pos : pos + _HDR_POST_BITS])
    return _ID_TO_MODULATION[mod_id], length, pre, post


def payload_symbol_layout(
    n_payload_symbols: int, config: PpduConfig
) -> tuple[tuple[int, ...], int]:
    """(absolute chest symbol indices, total symbol count) for a frame."""
    chest: list[int] = []
    pos = 3  # after sync, wideband pilot, header
    for i in range(n_payload_symbols):
        if i % config.chest_interval == 0:
            chest.append(pos)
            pos += 1
        pos += 1
    return tuple(chest), pos


def build_ppdu(
    payload_bits: np.ndarray,
    modulation: int,
    config: PpduConfig | None = None,
) -> tuple[IqBuffer, Frame]:
    """Assemble a transmit-ready PPDU from raw payload bits.

    Pipeline: pad -> 56-bit chunks + CRC -> polar encode -> Gray map ->
    data tones (pilots interleaved) -> IFFT + CP, with sync / wideband pilot /
    header symbols in front and chest fields refreshing the channel estimate
    every 16 payload symbols.
    """
    cfg = config or PpduConfig()
    plan = tone_plan(cfg)
    padded = bitops.pad_payload(payload_bits, modulation)
    coded = polar.encode_stream(padded.bits)
    symbols = mapping.map_symbols(coded, modulation)
    per_symbol = cfg.n_data
    if symbols.size % per_symbol:
        raise FrameError("padding rule failed to fill the last OFDM symbol")
    n_payload_symbols = symbols.size // per_symbol

    header_bits = build_header_bits(
        modulation, padded.payload_bits, padded.pre_pad, padded.post_pad
    )
    header_coded = polar.polar_encode(header_bits)
    header_syms = mapping.map_symbols(header_coded, 2)

    pilots = pilot_values(cfg)
    pilot_tone_vals = pilots[plan.pilot_positions_in_active]

    def data_symbol(data_vals: np.ndarray) -> np.ndarray:
        tones = np.zeros(cfg.idft_size, dtype=complex)
        tones[plan.pilot_bins] = pilot_tone_vals
        tones[plan.data_bins] = data_vals
        return tones_to_symbol(tones, cfg)

    chest_symbol = tones_to_symbol(wideband_pilot_tones(cfg), cfg)
    chest_positions, n_symbols = payload_symbol_layout(n_payload_symbols, cfg)
    out: list[np.ndarray] = [
        tones_to_symbol(sync_symbol_tones(cfg), cfg),
        chest_symbol,
        data_symbol(header_syms),
    ]
    payload_iter = iter(range(n_payload_symbols))
    for pos in range(3, n_symbols):
        if pos in chest_positions:
            out.append(chest_symbol)
        else:
            i = next(payload_iter)
            out.append(data_symbol(symbols[i * per_symbol : (i + 1) * per_symbol]))

    frame = Frame(
        modulation=modulation,
        payload_len_bits=padded.payload_bits,
        pre_pad=padded.pre_pad,
        post_pad=padded.post_pad,
        n_codewords=padded.n_codewords,
        n_payload_symbols=n_payload_symbols,
        chest_symbol_indices=chest_positions,
        n_symbols=n_symbols,
        sample_rate_hz=cfg.sample_rate_hz,
        symbol_len=cfg.symbol_len,
    )
    return IqBuffer(np.concatenate(out), cfg.sample_rate_hz, "tx"), frame
