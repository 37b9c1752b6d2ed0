"""Baseband sample container and the on-disk IQ interchange format.

File layout (little-endian):

    offset  size  field
    0       6     magic "SDAIQ\\0"
    6       1     version (currently 1)
    7       1     flags (reserved, 0)
    8       8     sample_rate_hz, unsigned 64-bit
    16      ...   interleaved float32 I, Q pairs

Frame metadata travels in a JSON sidecar next to the file (same stem,
``.json`` suffix) written by the callers that have a frame to describe.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["IqBuffer", "write_iq", "read_iq", "IqFormatError", "IQ_MAGIC", "IQ_VERSION"]

IQ_MAGIC = b"SDAIQ\x00"
IQ_VERSION = 1
_HEADER = struct.Struct("<6sBBQ")


class IqFormatError(ValueError):
    """Raised for bad magic, version or truncated sample data."""


@dataclass
class IqBuffer:
    """Complex baseband samples at a given rate.

    ``origin`` is a free-form provenance tag ("tx", "capture:rx0", ...).
    """

    samples: np.ndarray
    sample_rate_hz: float
    origin: str = ""

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.complex128)
        if self.samples.ndim != 1:
            raise IqFormatError("IQ buffers are 1-D")
        if self.sample_rate_hz <= 0:
            raise IqFormatError("sample rate must be positive")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz

    def power(self) -> float:
        """Mean |x|^2 over the buffer (0.0 for an empty buffer)."""
        if not self.samples.size:
            return 0.0
        return float(np.mean(np.abs(self.samples) ** 2))


def write_iq(path: str | Path, buf: IqBuffer) -> None:
    """Serialize a buffer to the binary interchange format."""
    path = Path(path)
    inter = np.empty(2 * len(buf), dtype="<f4")
    inter[0::2] = buf.samples.real.astype(np.float32)
    inter[1::2] = buf.samples.imag.astype(np.float32)
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(IQ_MAGIC, IQ_VERSION, 0, int(round(buf.sample_rate_hz))))
        fh.write(inter.tobytes())


def read_iq(path: str | Path, origin: str | None = None) -> IqBuffer:
    """Parse an IQ file; raises :class:`IqFormatError` on any malformation."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise IqFormatError(f"{path}: truncated header")
    magic, version, _flags, rate = _HEADER.unpack_from(raw)
    if magic != IQ_MAGIC:
        raise IqFormatError(f"{path}: bad magic {magic!r}")
    if version != IQ_VERSION:
        raise IqFormatError(f"{path}: unsupported version {version}")
    body = raw[_HEADER.size :]
    if len(body) % 8:
        raise IqFormatError(f"{path}: sample payload is not whole float32 I/Q pairs")
    inter = np.frombuffer(body, dtype="<f4")
    samples = inter[0::2].astype(np.float64) + 1j * inter[1::2].astype(np.float64)
    return IqBuffer(samples, float(rate), origin or f"file:{path.name}")
