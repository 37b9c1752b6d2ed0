"""Rate-1/2 polar code, N=128, K=64, with successive-cancellation decoding.

Encoding is the natural-order butterfly x = u * F^(x7) over GF(2) with
F = [[1, 0], [1, 1]]; frozen positions carry zeros.  Each 64-bit message is
56 payload bits followed by their CRC-8 tag, so a decode can self-check.

The frozen set ranks synthetic-channel Bhattacharyya parameters at a design
point of Eb/N0 = 2 dB (initialised with Es/N0 = R * Eb/N0), computed once and
kept as the constant table below; :func:`bhattacharyya_frozen_mask` re-derives
it for tests.

The decoder is a batch min-sum successive-cancellation pass: f-step
``sign(a)*sign(b)*min(|a|,|b|)``, g-step ``b + (1-2*u)*a``.  LLRs are
positive-for-zero, so any positive scaling of the inputs leaves decisions
unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bits import CRC_BITS, INFO_BITS_PER_CODEWORD, crc8

__all__ = [
    "CODEWORD_BITS",
    "MESSAGE_BITS",
    "FROZEN_INDICES",
    "bhattacharyya_frozen_mask",
    "polar_encode",
    "polar_decode",
    "PolarDecodeResult",
    "attach_crc",
    "encode_stream",
    "decode_stream",
    "StreamDecodeResult",
]

CODEWORD_BITS = 128
MESSAGE_BITS = 64
DESIGN_EBN0_DB = 2.0

#: Frozen (zero-forced) input positions, worst 64 synthetic channels by
#: Bhattacharyya parameter at the design point.  Derived once; see
#: :func:`bhattacharyya_frozen_mask`.
FROZEN_INDICES = (
    0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15,
    16, 17, 18, 19, 20, 21, 22, 23, 24, 25, 26, 27, 28, 29, 30, 32,
    33, 34, 35, 36, 37, 38, 39, 40, 41, 42, 43, 44, 48, 49, 50, 52,
    56, 64, 65, 66, 67, 68, 69, 70, 72, 73, 74, 76, 80, 81, 82, 96,
)

_FROZEN_MASK = np.zeros(CODEWORD_BITS, dtype=bool)
_FROZEN_MASK[list(FROZEN_INDICES)] = True
_INFO_POSITIONS = np.flatnonzero(~_FROZEN_MASK)


def bhattacharyya_frozen_mask(
    n_bits: int = CODEWORD_BITS,
    k_bits: int = MESSAGE_BITS,
    design_ebn0_db: float = DESIGN_EBN0_DB,
) -> np.ndarray:
    """Boolean frozen mask from the Bhattacharyya doubling recursion.

    z -> (2z - z^2, z^2) per polarization level, seeded with
    exp(-(K/N) * 10**(EbN0/10)); the K best channels carry information.
    """
    if n_bits & (n_bits - 1):
        raise ValueError("codeword length must be a power of two")
    rate = k_bits / n_bits
    z = np.array([np.exp(-rate * 10.0 ** (design_ebn0_db / 10.0))])
    while len(z) < n_bits:
        nxt = np.empty(2 * len(z))
        nxt[0::2] = 2.0 * z - z * z
        nxt[1::2] = z * z
        z = nxt
    order = np.argsort(-z, kind="stable")  # worst channels first
    mask = np.zeros(n_bits, dtype=bool)
    mask[order[: n_bits - k_bits]] = True
    return mask


def _transform(bits: np.ndarray) -> np.ndarray:
    """Butterfly x = u * F^(xlog2(N)) over GF(2), batched on axis 0."""
    x = bits.copy()
    batch, n = x.shape
    h = 1
    while h < n:
        x = x.reshape(batch, n // (2 * h), 2, h)
        x[:, :, 0, :] ^= x[:, :, 1, :]
        x = x.reshape(batch, n)
        h *= 2
    return x


def polar_encode(message: np.ndarray) -> np.ndarray:
    """Encode 64-bit message(s) (56 payload + 8 CRC) into 128-bit codeword(s).

    Accepts shape (64,) or (batch, 64); returns matching codeword shape.
    """
    msg = np.asarray(message, dtype=np.uint8)
    single = msg.ndim == 1
    msg = np.atleast_2d(msg)
    if msg.shape[1] != MESSAGE_BITS:
        raise ValueError(f"message must be {MESSAGE_BITS} bits, got {msg.shape[1]}")
    u = np.zeros((msg.shape[0], CODEWORD_BITS), dtype=np.uint8)
    u[:, _INFO_POSITIONS] = msg
    x = _transform(u)
    return x[0] if single else x


@dataclass(frozen=True)
class PolarDecodeResult:
    """Decoded message bits plus the CRC self-check verdict."""

    message: np.ndarray
    crc_ok: np.ndarray  # bool per codeword


def polar_decode(llrs: np.ndarray) -> PolarDecodeResult:
    """Successive-cancellation decode of channel LLRs (positive => bit 0).

    Accepts shape (128,) or (batch, 128).  ``crc_ok`` holds the CRC-8
    self-check of each decoded 64-bit message (payload||tag divides the
    generator exactly when intact).
    """
    llr = np.asarray(llrs, dtype=np.float64)
    single = llr.ndim == 1
    llr = np.atleast_2d(llr)
    if llr.shape[1] != CODEWORD_BITS:
        raise ValueError(f"decoder expects {CODEWORD_BITS} LLRs per codeword")
    u = _sc_decode(llr)
    msg = u[:, _INFO_POSITIONS]
    ok = np.array([crc8(m) == 0 for m in msg], dtype=bool)
    if single:
        return PolarDecodeResult(msg[0], ok)
    return PolarDecodeResult(msg, ok)


def _sc_decode(llr: np.ndarray) -> np.ndarray:
    batch = llr.shape[0]

    def rec(l: np.ndarray, lo: int) -> tuple[np.ndarray, np.ndarray]:
        width = l.shape[1]
        if width == 1:
            if _FROZEN_MASK[lo]:
                u = np.zeros((batch, 1), dtype=np.uint8)
            else:
                u = (l < 0).astype(np.uint8)
            return u, u.copy()
        half = width // 2
        la, lb = l[:, :half], l[:, half:]
        sign = np.where(la < 0, -1.0, 1.0) * np.where(lb < 0, -1.0, 1.0)
        u1, x1 = rec(sign * np.minimum(np.abs(la), np.abs(lb)), lo)
        u2, x2 = rec(lb + (1.0 - 2.0 * x1) * la, lo + half)
        return np.concatenate([u1, u2], 1), np.concatenate([x1 ^ x2, x2], 1)

    u, _ = rec(llr, 0)
    return u


def attach_crc(info_chunks: np.ndarray) -> np.ndarray:
    """Append the CRC-8 tag to each 56-bit chunk -> (batch, 64) messages."""
    chunks = np.atleast_2d(np.asarray(info_chunks, dtype=np.uint8))
    if chunks.shape[1] != INFO_BITS_PER_CODEWORD:
        raise ValueError(f"chunks must be {INFO_BITS_PER_CODEWORD} bits")
    out = np.zeros((chunks.shape[0], MESSAGE_BITS), dtype=np.uint8)
    out[:, :INFO_BITS_PER_CODEWORD] = chunks
    for i, c in enumerate(chunks):
        tag = crc8(c)
        out[i, INFO_BITS_PER_CODEWORD:] = [(tag >> (CRC_BITS - 1 - b)) & 1 for b in range(CRC_BITS)]
    return out


def encode_stream(padded_bits: np.ndarray) -> np.ndarray:
    """Padded info stream -> concatenated codeword bits.

    The stream length must be a multiple of 56 (the padding rule guarantees
    this); each 56-bit group gains its CRC tag and becomes one codeword.
    """
    bits = np.asarray(padded_bits, dtype=np.uint8)
    if bits.size % INFO_BITS_PER_CODEWORD:
        raise ValueError("stream is not a whole number of codeword payloads")
    chunks = bits.reshape(-1, INFO_BITS_PER_CODEWORD)
    return polar_encode(attach_crc(chunks)).reshape(-1)


@dataclass(frozen=True)
class StreamDecodeResult:
    """Concatenated decoded info bits and per-codeword CRC verdicts."""

    info_bits: np.ndarray
    crc_ok: np.ndarray


def decode_stream(llrs: np.ndarray) -> StreamDecodeResult:
    """Decode a concatenated-LLR stream back to info bits (CRC stripped)."""
    llr = np.asarray(llrs, dtype=np.float64)
    if llr.size % CODEWORD_BITS:
        raise ValueError("LLR stream is not a whole number of codewords")
    res = polar_decode(llr.reshape(-1, CODEWORD_BITS))
    msgs = np.atleast_2d(res.message)
    return StreamDecodeResult(
        msgs[:, :INFO_BITS_PER_CODEWORD].reshape(-1), np.atleast_1d(res.crc_ok)
    )
