"""Bit-level plumbing: CRC-8, byte/bit packing, payload padding.

Bit order is MSB-first everywhere: byte 0xA1 becomes bits 1,0,1,0,0,0,0,1.

The integrity tag is CRC-8 with generator polynomial 0x07
(x^8 + x^2 + x + 1), init 0x00, no reflection, no final XOR, computed over
arbitrary-length bit strings.  A message followed by its own CRC divides the
generator exactly, so ``crc8(message || crc) == 0``.

Padding rule (the frame contract, conveyed per frame in the header):

* ``pre_pad``  — smallest count of leading zero bits making the info stream a
  whole number of 56-bit codeword payloads (0..55).
* ``post_pad`` — whole extra zero codeword payloads (multiples of 56 bits) so
  the coded stream fills the last OFDM symbol's 128 data tones exactly, i.e.
  the codeword count is a multiple of log2(M); at least one full OFDM symbol
  of codewords is always present (an empty payload yields a minimal frame of
  pure padding).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "crc8",
    "bytes_to_bits",
    "bits_to_bytes",
    "pack_uint",
    "unpack_uint",
    "pad_payload",
    "unpad_payload",
    "PaddedPayload",
    "INFO_BITS_PER_CODEWORD",
    "CRC_POLY",
    "CRC_BITS",
]

CRC_POLY = 0x07
CRC_BITS = 8

#: Info bits carried by one codeword before the CRC-8 tag is appended.
INFO_BITS_PER_CODEWORD = 56

#: Hard ceiling on payload size (the header length field is wider, but the
#: twin caps frames at 2**20 payload bits).
MAX_PAYLOAD_BITS = 1 << 20

_BITS_PER_MOD = {2: 1, 4: 2, 16: 4, 64: 6}


def crc8(bits: np.ndarray | list[int]) -> int:
    """CRC-8 (poly 0x07, init 0, no reflect/xorout) of an MSB-first bit string."""
    reg = 0
    for b in np.asarray(bits, dtype=np.uint8):
        fb = ((reg >> 7) & 1) ^ int(b)
        reg = ((reg << 1) & 0xFF) ^ (CRC_POLY if fb else 0)
    return reg


def bytes_to_bits(data: bytes) -> np.ndarray:
    """MSB-first bit expansion of a byte string."""
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8))


def bits_to_bytes(bits: np.ndarray) -> bytes:
    """Inverse of :func:`bytes_to_bits`; requires a multiple of 8 bits."""
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size % 8:
        raise ValueError(f"bit count {bits.size} is not a whole number of bytes")
    return np.packbits(bits).tobytes()


def pack_uint(value: int, width: int) -> np.ndarray:
    """Fixed-width MSB-first unsigned integer bits."""
    if value < 0 or value >= (1 << width):
        raise ValueError(f"{value} does not fit in {width} bits")
    return np.array([(value >> (width - 1 - i)) & 1 for i in range(width)], dtype=np.uint8)


def unpack_uint(bits: np.ndarray) -> int:
    """MSB-first unsigned integer from bits."""
    v = 0
    for b in np.asarray(bits, dtype=np.uint8):
        v = (v << 1) | int(b)
    return v


@dataclass(frozen=True)
class PaddedPayload:
    """Padded info-bit stream plus the pad counts the header must carry."""

    bits: np.ndarray
    pre_pad: int
    post_pad: int
    payload_bits: int

    @property
    def n_codewords(self) -> int:
        return self.bits.size // INFO_BITS_PER_CODEWORD


def pad_payload(payload: np.ndarray, modulation_order: int) -> PaddedPayload:
    """Apply the pre/post padding rule for a modulation order.

    The result length is a multiple of 56 * log2(M) bits, so the coded stream
    (each 56-bit group becomes a 128-bit codeword) fills whole OFDM symbols.

    Raises:
        ValueError: for unsupported modulation orders or oversized payloads.
    """
    if modulation_order not in _BITS_PER_MOD:
        raise ValueError(f"unsupported modulation order {modulation_order}")
    payload = np.asarray(payload, dtype=np.uint8)
    if payload.ndim != 1:
        raise ValueError("payload must be a 1-D bit array")
    if payload.size > MAX_PAYLOAD_BITS:
        raise ValueError(f"payload of {payload.size} bits exceeds {MAX_PAYLOAD_BITS}")
    q = _BITS_PER_MOD[modulation_order]
    pre = (-payload.size) % INFO_BITS_PER_CODEWORD
    n_cw = (payload.size + pre) // INFO_BITS_PER_CODEWORD
    extra_cw = (-n_cw) % q
    if n_cw + extra_cw == 0:  # empty payload: one full OFDM symbol of padding
        extra_cw = q
    post = extra_cw * INFO_BITS_PER_CODEWORD
    bits = np.concatenate(
        [np.zeros(pre, np.uint8), payload, np.zeros(post, np.uint8)]
    )
    return PaddedPayload(bits, pre, post, payload.size)


def unpad_payload(bits: np.ndarray, pre_pad: int, payload_bits: int) -> np.ndarray:
    """Strip the padding recorded in a frame header."""
    bits = np.asarray(bits, dtype=np.uint8)
    if pre_pad + payload_bits > bits.size:
        raise ValueError("pad counts exceed decoded stream length")
    return bits[pre_pad : pre_pad + payload_bits]
