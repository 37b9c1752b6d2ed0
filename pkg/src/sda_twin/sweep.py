"""Exhaustive beam-pair acquisition sweep over both codebooks.

The transmitter steps through all 21 codebook beams while the receiver does
the same, yielding a 21 x 21 grid of beam pairs.  Every grid position sends
``frames_per_position`` probe frames whose payload identifies the transmit
beam, so the receiver files each measurement under the *decoded* transmit
index — the way a real split system must — and only falls back to the
schedule position when the payload cannot be recovered.

Per-cell SNR is the dB-domain mean of the per-frame measurements.  Frames
whose sync or header fails contribute the scenario's analytic expected SNR
instead (clamped at ``min_snr_floor_db``), keeping dark cells finite without
inventing measurements.

Determinism: the noise of every simulated frame is keyed by (seed, tx_beam,
rx_beam, frame_index), so a sequential run and a thread-pool run produce
byte-identical matrices, and re-running any single cell reproduces it.
"""

from __future__ import annotations

import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import channel as chan
from .modem import bits as bitops
from .modem.frame import PpduConfig, build_ppdu
from .modem.receiver import ModemError, demod_decode

__all__ = [
    "SweepError",
    "PROBE_MAGIC",
    "PROBE_MODULATION",
    "probe_payload",
    "parse_probe_payload",
    "CellRecord",
    "SnrMatrix",
    "SweepResult",
    "run_sweep",
    "select_best",
    "detect_secondary_peaks",
]

#: Tag marking a payload as a sweep probe.
PROBE_MAGIC = 0x5357

#: Probe frames use QPSK: decodable far below the peak without stretching
#: the frame beyond one payload symbol.
PROBE_MODULATION = 4

#: Secondary reflections closer than this to the main peak (in dB) are
#: reported; weaker bumps are treated as sidelobe/noise texture.
DEFAULT_SECONDARY_THRESHOLD_DB = 12.0


class SweepError(RuntimeError):
    """Raised for malformed sweep artifacts or inputs."""


def probe_payload(tx_beam: int, frame_index: int) -> np.ndarray:
    """56-bit probe payload: magic(16) | tx_beam(8) | frame(16) | zeros(16)."""
    return np.concatenate(
        [
            bitops.pack_uint(PROBE_MAGIC, 16),
            bitops.pack_uint(tx_beam, 8),
            bitops.pack_uint(frame_index, 16),
            np.zeros(16, dtype=np.uint8),
        ]
    )


def parse_probe_payload(bits: np.ndarray) -> tuple[int, int]:
    """(tx_beam, frame_index) from a decoded probe payload.

    Raises:
        SweepError: when the payload is not a probe.
    """
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size != 56 or bitops.unpack_uint(bits[:16]) != PROBE_MAGIC:
        raise SweepError("payload is not a sweep probe")
    return bitops.unpack_uint(bits[16:24]), bitops.unpack_uint(bits[24:40])


@dataclass(frozen=True)
class CellRecord:
    """One simulated probe frame and where its measurement was filed."""

    tx_beam: int
    rx_beam: int
    frame_index: int
    snr_db: float
    measured: bool
    decoded_tx: int | None


@dataclass
class SnrMatrix:
    """21 x 21 grid of per-beam-pair SNR (dB), transmit beams as rows."""

    values: np.ndarray
    n_decoded: np.ndarray
    frames_per_position: int
    scenario: str
    seed: int

    @property
    def n_tx(self) -> int:
        return self.values.shape[0]

    @property
    def n_rx(self) -> int:
        return self.values.shape[1]

    def to_csv(self, path: str | Path | None = None) -> str:
        """Render as delimited text (0.01 dB precision, receive-index header)."""
        out = io.StringIO()
        header = ["tx_beam"] + [f"rx{j:02d}" for j in range(1, self.n_rx + 1)]
        out.write(",".join(header) + "\n")
        for i in range(self.n_tx):
            cells = [f"{i + 1:d}"] + [f"{v:.2f}" for v in self.values[i]]
            out.write(",".join(cells) + "\n")
        text = out.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @staticmethod
    def from_csv(
        text: str, frames_per_position: int = 0, scenario: str = "", seed: int = 0
    ) -> "SnrMatrix":
        lines = [
            ln
            for ln in text.strip().splitlines()
            if ln.strip() and not ln.lstrip().startswith("#")
        ]
        if not lines or not lines[0].startswith("tx_beam"):
            raise SweepError("not a sweep matrix: missing receive-index header")
        rows = []
        for ln in lines[1:]:
            parts = ln.split(",")
            rows.append([float(v) for v in parts[1:]])
        values = np.array(rows, dtype=float)
        return SnrMatrix(
            values=values,
            n_decoded=np.zeros(values.shape, dtype=int),
            frames_per_position=frames_per_position,
            scenario=scenario,
            seed=seed,
        )


@dataclass(frozen=True)
class SweepResult:
    """A finished sweep: the grid plus every per-frame record."""

    matrix: SnrMatrix
    records: tuple[CellRecord, ...]

    @property
    def best(self) -> tuple[int, int, float]:
        return select_best(self.matrix)

    def secondary_peaks(
        self, threshold_db: float = DEFAULT_SECONDARY_THRESHOLD_DB
    ) -> list[tuple[int, int, float]]:
        return detect_secondary_peaks(self.matrix, threshold_db)


def _simulate_cell(
    model: chan.ChannelModel,
    waveforms: dict[tuple[int, int], "np.ndarray"],
    tx_beam: int,
    rx_beam: int,
    frames_per_position: int,
    config: PpduConfig,
) -> list[CellRecord]:
    tx_awv = model.codebook.beam(tx_beam)
    rx_awv = model.codebook.beam(rx_beam)
    records = []
    for f in range(frames_per_position):
        buf = model.propagate(
            waveforms[(tx_beam, f)],
            tx_awv,
            rx_awv,
            tx_beam=tx_beam,
            rx_beam=rx_beam,
            frame_index=f,
        )
        decoded_tx: int | None = None
        snr = None
        measured = False
        try:
            report = demod_decode(buf, config)
        except ModemError:
            report = None
        if report is not None and report.decode_ok:
            try:
                decoded_tx, _ = parse_probe_payload(report.payload_bits)
                snr, measured = report.snr_db, True
            except SweepError:
                decoded_tx = None
        if snr is None and report is not None and report.header_ok:
            snr, measured = report.snr_db, True
        if snr is None:
            snr = max(
                model.expected_snr_db(tx_beam, rx_beam),
                model.scenario.min_snr_floor_db,
            )
        records.append(
            CellRecord(tx_beam, rx_beam, f, float(snr), measured, decoded_tx)
        )
    return records


def run_sweep(
    model: chan.ChannelModel,
    frames_per_position: int = 3,
    parallel: bool = False,
    max_workers: int | None = None,
    progress: Callable[[int, int], None] | None = None,
    config: PpduConfig | None = None,
) -> SweepResult:
    """Measure the full transmit x receive beam grid.

    Args:
        model: calibrated scene simulator (carries the codebook and seed).
        frames_per_position: probe frames per beam pair, dB-averaged.
        parallel: simulate cells on a thread pool; results are byte-identical
            to the sequential path because every frame's noise is keyed by
            its (tx, rx, frame) coordinates.
        progress: optional callback ``(cells_done, cells_total)`` invoked
            after each completed transmit row.

    Raises:
        SweepError: if ``frames_per_position`` is not a positive count.
    """
    if frames_per_position < 1:
        raise SweepError("frames_per_position must be at least 1")
    cfg = config or model.config
    n_beams = model.codebook.n_beams
    waveforms = {
        (t, f): build_ppdu(probe_payload(t, f), PROBE_MODULATION, cfg)[0]
        for t in range(1, n_beams + 1)
        for f in range(frames_per_position)
    }
    cells = [(t, r) for t in range(1, n_beams + 1) for r in range(1, n_beams + 1)]

    def job(cell: tuple[int, int]) -> list[CellRecord]:
        return _simulate_cell(
            model, waveforms, cell[0], cell[1], frames_per_position, cfg
        )

    per_cell: list[list[CellRecord]]
    if parallel:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            per_cell = list(pool.map(job, cells))
        if progress is not None:
            progress(len(cells), len(cells))
    else:
        per_cell = []
        for idx, cell in enumerate(cells, start=1):
            per_cell.append(job(cell))
            if progress is not None and idx % n_beams == 0:
                progress(idx, len(cells))

    # File measurements under the decoded transmit index; schedule position
    # is the fallback when the probe payload did not survive.
    bucket: dict[tuple[int, int], list[float]] = {}
    decoded_count = np.zeros((n_beams, n_beams), dtype=int)
    records: list[CellRecord] = []
    for (t, r), recs in zip(cells, per_cell):
        for rec in recs:
            records.append(rec)
            t_eff = rec.decoded_tx if rec.decoded_tx is not None else rec.tx_beam
            if not (1 <= t_eff <= n_beams):
                t_eff = rec.tx_beam
            bucket.setdefault((t_eff, r), []).append(rec.snr_db)
            if rec.decoded_tx is not None:
                decoded_count[t_eff - 1, r - 1] += 1

    values = np.full((n_beams, n_beams), np.nan)
    for t in range(1, n_beams + 1):
        for r in range(1, n_beams + 1):
            vals = bucket.get((t, r))
            if vals:
                values[t - 1, r - 1] = float(np.mean(vals))
            else:  # every frame was filed elsewhere; fall back to analytics
                values[t - 1, r - 1] = max(
                    model.expected_snr_db(t, r), model.scenario.min_snr_floor_db
                )
    matrix = SnrMatrix(
        values=values,
        n_decoded=decoded_count,
        frames_per_position=frames_per_position,
        scenario=model.scenario.name,
        seed=model.seed,
    )
    return SweepResult(matrix=matrix, records=tuple(records))


def select_best(matrix: SnrMatrix) -> tuple[int, int, float]:
    """Strongest beam pair; ties break to the lowest (tx, rx) indices."""
    flat = int(np.argmax(matrix.values))
    t, r = divmod(flat, matrix.n_rx)
    return t + 1, r + 1, float(matrix.values[t, r])


def detect_secondary_peaks(
    matrix: SnrMatrix,
    threshold_db: float = DEFAULT_SECONDARY_THRESHOLD_DB,
) -> list[tuple[int, int, float]]:
    """Local maxima within ``threshold_db`` of the peak, away from it.

    A cell qualifies when it is >= all of its 8-neighborhood, lies more than
    one cell (Chebyshev) from the global peak, and is within ``threshold_db``
    of the peak value.  Sorted strongest first.
    """
    v = matrix.values
    bt, br, best = select_best(matrix)
    peaks = []
    for t in range(matrix.n_tx):
        for r in range(matrix.n_rx):
            if max(abs(t - (bt - 1)), abs(r - (br - 1))) <= 1:
                continue
            if best - v[t, r] > threshold_db:
                continue
            window = v[
                max(t - 1, 0) : t + 2,
                max(r - 1, 0) : r + 2,
            ]
            if v[t, r] >= window.max():
                peaks.append((t + 1, r + 1, float(v[t, r])))
    peaks.sort(key=lambda p: (-p[2], p[0], p[1]))
    return peaks
