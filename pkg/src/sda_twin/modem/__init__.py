"""OFDM modem: framing, coding, mapping, I/Q file format, and receiver."""

from .bits import (
    INFO_BITS_PER_CODEWORD,
    MAX_PAYLOAD_BITS,
    PaddedPayload,
    bits_to_bytes,
    bytes_to_bits,
    crc8,
    pad_payload,
    unpad_payload,
)
from .frame import (
    MODULATION_IDS,
    Frame,
    FrameError,
    PpduConfig,
    build_header_bits,
    build_ppdu,
    parse_header_bits,
    payload_symbol_layout,
    pilot_values,
    sync_symbol_tones,
    symbol_to_tones,
    tone_plan,
    tones_to_symbol,
    wideband_pilot_tones,
)
from .iqfile import IqBuffer, IqFormatError, read_iq, write_iq
from .mapping import (
    BITS_PER_SYMBOL,
    MODULATION_NAMES,
    MappingError,
    constellation,
    demap_llrs,
    hard_demap,
    map_symbols,
    nearest_points,
    parse_modulation,
)
from .polar import (
    CODEWORD_BITS,
    FROZEN_INDICES,
    MESSAGE_BITS,
    PolarDecodeResult,
    StreamDecodeResult,
    attach_crc,
    bhattacharyya_frozen_mask,
    decode_stream,
    encode_stream,
    polar_decode,
    polar_encode,
)
from .receiver import (
    EQUALIZER_CIR_SPAN,
    FFT_BACKOFF,
    SNR_CAP_DB,
    DecodeReport,
    ModemError,
    SyncError,
    SyncResult,
    demod_decode,
    estimate_channel,
    synchronize,
    track_cpe,
)

__all__ = [
    "INFO_BITS_PER_CODEWORD",
    "MAX_PAYLOAD_BITS",
    "PaddedPayload",
    "bits_to_bytes",
    "bytes_to_bits",
    "crc8",
    "pad_payload",
    "unpad_payload",
    "MODULATION_IDS",
    "Frame",
    "FrameError",
    "PpduConfig",
    "build_header_bits",
    "build_ppdu",
    "parse_header_bits",
    "payload_symbol_layout",
    "pilot_values",
    "sync_symbol_tones",
    "symbol_to_tones",
    "tone_plan",
    "tones_to_symbol",
    "wideband_pilot_tones",
    "IqBuffer",
    "IqFormatError",
    "read_iq",
    "write_iq",
    "BITS_PER_SYMBOL",
    "MODULATION_NAMES",
    "MappingError",
    "constellation",
    "demap_llrs",
    "hard_demap",
    "map_symbols",
    "nearest_points",
    "parse_modulation",
    "CODEWORD_BITS",
    "FROZEN_INDICES",
    "MESSAGE_BITS",
    "PolarDecodeResult",
    "StreamDecodeResult",
    "attach_crc",
    "bhattacharyya_frozen_mask",
    "decode_stream",
    "encode_stream",
    "polar_decode",
    "polar_encode",
    "EQUALIZER_CIR_SPAN",
    "FFT_BACKOFF",
    "SNR_CAP_DB",
    "DecodeReport",
    "ModemError",
    "SyncError",
    "SyncResult",
    "demod_decode",
    "estimate_channel",
    "synchronize",
    "track_cpe",
]
