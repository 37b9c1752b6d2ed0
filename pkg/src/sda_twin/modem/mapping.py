"""Gray-coded square-QAM mapping and exact max-log LLR demapping.

Supported orders: 2 (BPSK), 4, 16, 64.  Constellations are normalized to
unit average energy (scale 1/sqrt(2*(M-1)/3) for the square grids).

Per-symbol bit layout (MSB-first stream order): the first half of the bits
selects the I level, the second half the Q level; BPSK uses its single bit on
the I axis (0 -> +1, 1 -> -1).  Each axis is Gray-coded: adjacent amplitude
levels differ in exactly one bit.

LLRs follow the positive-for-zero convention used by the decoder:

    LLR_k = (min_{s: b_k=1} |y-s|^2 - min_{s: b_k=0} |y-s|^2) / noise_var

computed exactly per axis (Gray square QAM separates I and Q).
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "BITS_PER_SYMBOL",
    "MODULATION_NAMES",
    "constellation",
    "map_symbols",
    "demap_llrs",
    "hard_demap",
    "nearest_points",
    "parse_modulation",
    "MappingError",
]


class MappingError(ValueError):
    """Raised for unsupported orders or misaligned bit streams."""


BITS_PER_SYMBOL = {2: 1, 4: 2, 16: 4, 64: 6}

#: Human-readable aliases accepted wherever a modulation order is an input.
MODULATION_NAMES = {
    "bpsk": 2,
    "qpsk": 4,
    "4qam": 4,
    "16qam": 16,
    "64qam": 64,
}


def parse_modulation(value: int | str) -> int:
    """Normalize a modulation given as an order (2/4/16/64) or a name."""
    if isinstance(value, str):
        key = value.strip().lower().replace("-", "")
        if key in MODULATION_NAMES:
            return MODULATION_NAMES[key]
        if key.isdigit() and int(key) in BITS_PER_SYMBOL:
            return int(key)
    elif not isinstance(value, bool) and int(value) in BITS_PER_SYMBOL:
        return int(value)
    raise MappingError(
        f"unsupported modulation {value!r}; use one of "
        f"{sorted(BITS_PER_SYMBOL)} or {sorted(MODULATION_NAMES)}"
    )

# Gray code for 1..3 axis bits -> amplitude level index (0 is most negative).
# E.g. 3-bit Gray sequence by level: 000,001,011,010,110,111,101,100.
_GRAY_TO_LEVEL = {
    1: {0: 0, 1: 1},
    2: {0b00: 0, 0b01: 1, 0b11: 2, 0b10: 3},
    3: {0b000: 0, 0b001: 1, 0b011: 2, 0b010: 3, 0b110: 4, 0b111: 5, 0b101: 6, 0b100: 7},
}


def _axis_tables(order: int) -> tuple[np.ndarray, np.ndarray, float]:
    """(levels per gray word, level amplitudes, scale) for one axis."""
    q = BITS_PER_SYMBOL[order]
    if order == 2:
        # single bit on I: 0 -> +1, 1 -> -1
        amps = np.array([1.0, -1.0])
        return np.array([0, 1]), amps, 1.0
    axis_bits = q // 2
    n_levels = 1 << axis_bits
    # amplitudes -(n-1), ..., -1, +1, ..., +(n-1) in steps of 2
    amps = np.arange(-(n_levels - 1), n_levels, 2, dtype=float)
    scale = 1.0 / np.sqrt(2.0 * (order - 1) / 3.0)
    gray = _GRAY_TO_LEVEL[axis_bits]
    word_to_level = np.empty(n_levels, dtype=int)
    for word, level in gray.items():
        word_to_level[word] = level
    return word_to_level, amps * scale, scale


def constellation(order: int) -> np.ndarray:
    """All constellation points of an order, indexed by the symbol's bit word."""
    if order not in BITS_PER_SYMBOL:
        raise MappingError(f"unsupported modulation order {order}")
    q = BITS_PER_SYMBOL[order]
    words = np.arange(order)
    bits = ((words[:, None] >> np.arange(q - 1, -1, -1)[None, :]) & 1).astype(np.uint8)
    return map_symbols(bits.reshape(-1), order)


def map_symbols(bits: np.ndarray, order: int) -> np.ndarray:
    """Map an MSB-first bit stream to unit-energy complex symbols."""
    if order not in BITS_PER_SYMBOL:
        raise MappingError(f"unsupported modulation order {order}")
    bits = np.asarray(bits, dtype=np.uint8)
    q = BITS_PER_SYMBOL[order]
    if bits.size % q:
        raise MappingError(f"bit count {bits.size} not a multiple of {q}")
    groups = bits.reshape(-1, q)
    word_to_level, amps, _ = _axis_tables(order)
    if order == 2:
        return (1.0 - 2.0 * groups[:, 0].astype(float)) + 0j
    half = q // 2
    weights = 1 << np.arange(half - 1, -1, -1)
    i_words = (groups[:, :half] * weights).sum(axis=1)
    q_words = (groups[:, half:] * weights).sum(axis=1)
    return amps[word_to_level[i_words]] + 1j * amps[word_to_level[q_words]]


def _axis_llrs(y_axis: np.ndarray, order: int, noise_var: float) -> np.ndarray:
    """Exact max-log LLRs for one axis: shape (n_symbols, axis_bits)."""
    q = BITS_PER_SYMBOL[order]
    axis_bits = 1 if order == 2 else q // 2
    word_to_level, amps, _ = _axis_tables(order)
    # bit pattern of each level's Gray word
    level_bits = np.empty((len(amps), axis_bits), dtype=bool)
    for word in range(len(amps)):
        level = word_to_level[word]
        for b in range(axis_bits):
            level_bits[level, b] = (word >> (axis_bits - 1 - b)) & 1
    d2 = (y_axis[:, None] - amps[None, :]) ** 2  # (n, levels)
    out = np.empty((y_axis.size, axis_bits))
    for b in range(axis_bits):
        ones = level_bits[:, b]
        out[:, b] = d2[:, ones].min(axis=1) - d2[:, ~ones].min(axis=1)
    return out / noise_var


def demap_llrs(symbols: np.ndarray, order: int, noise_var: float) -> np.ndarray:
    """Exact max-log LLRs (positive => bit 0), MSB-first per symbol.

    ``noise_var`` is the complex noise variance per symbol; it must be
    positive (the decoder only needs a common positive scale, but the value
    is reported in diagnostics so it is validated here).
    """
    if order not in BITS_PER_SYMBOL:
        raise MappingError(f"unsupported modulation order {order}")
    if noise_var <= 0:
        raise MappingError("noise variance must be positive")
    y = np.asarray(symbols, dtype=complex)
    if order == 2:
        return 4.0 * y.real / noise_var
    i_llrs = _axis_llrs(y.real, order, noise_var)
    q_llrs = _axis_llrs(y.imag, order, noise_var)
    return np.concatenate([i_llrs, q_llrs], axis=1).reshape(-1)


def hard_demap(symbols: np.ndarray, order: int) -> np.ndarray:
    """Nearest-point hard decisions, returned as an MSB-first bit stream."""
    llrs = demap_llrs(symbols, order, 1.0)
    return (llrs < 0).astype(np.uint8)


def nearest_points(symbols: np.ndarray, order: int) -> np.ndarray:
    """Nearest constellation point for each input symbol."""
    pts = constellation(order)
    y = np.asarray(symbols, dtype=complex).reshape(-1)
    idx = np.abs(y[:, None] - pts[None, :]).argmin(axis=1)
    return pts[idx]
