"""Code-multiplexed element testing: per-element calibration from one detector.

Each array element is toggled on/off by a binary code derived from a Walsh
row, all elements radiate together, and a single square-law power detector
samples the superposition.  Because a product of two Walsh rows is again a
Walsh row (index = XOR of the factor indices), the detector trace

    P(t) = sum_n |z_n|^2 c_n(t) + 2 sum_{n<m} Re{z_n conj(z_m)} c_n(t) c_m(t),
    c_n = (1 + w_{a_n}) / 2,

projects onto the Walsh basis with every unknown in its own bin — provided
the code assignment ``a_n`` is chosen so element indices and all pairwise
XORs are mutually distinct (a XOR-Sidon set).  The projection at bin
``a_n ^ a_m`` is Re{z_n conj(z_m)}/2, and the bin at ``a_n`` combines
|z_n|^2/2 with half the row-sum of its real cross terms, which the extractor
subtracts back out.

Imaginary parts come from quadrature traces: re-running the detector with a
90-degree offset applied to a *subset* of elements turns the real part of a
split pair into (minus) its imaginary part.  Offsetting the subsets whose
element index has bit b set, for each bit b, splits every pair at least
once, so ``1 + ceil(log2 n)`` traces suffice (5 for a 16-element array).

Code capacity: distinctness needs n + n(n-1)/2 separate nonzero bins, so a
16-element array needs a 256-chip code (the smallest power of two with at
least 136 usable bins); a greedy search finds the assignment once and the
constructor re-validates it.

Element solving is reference-factorization: magnitudes from the diagonal,
phases from ``arg(z_n conj(z_ref))`` against the strongest element (pinned
to phase 0), then one weighted linear least-squares pass over every pairwise
phase difference.  A dead reference (zero diagonal) falls back to the next
strongest, with a note in the result.

The phase-sweep harness drives every element's commanded phase across a
grid through an impairment model of the RF vector interpolator (I/Q DAC
quantization, diagonal gain compression, optional per-axis mismatch) and
runs the full pipeline at each setting, producing per-element gain/phase
tables whose maxima sit on the 0/90/180/270-degree axes for a realistically
compressed interpolator and which are flat for an ideal one.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .beamforming import (
    DEFAULT_DAC_BITS,
    dequantize_iq,
    quantize_iq,
    weight_to_iq,
)

__all__ = [
    "CometError",
    "CodeSet",
    "gen_codes",
    "simulate_detector",
    "quadrature_masks",
    "run_campaign",
    "extract_correlations",
    "ElementEstimate",
    "solve_elements",
    "calibrate",
    "Interpolator",
    "ArrayUnderTest",
    "ElementResponse",
    "sweep_phase_settings",
    "export_gain_table",
]

#: Largest code length the assignment search will attempt.
MAX_CODE_LENGTH = 1 << 14

_DEAD_RELATIVE_FLOOR = 1e-9


class CometError(RuntimeError):
    """Raised for invalid code sets, traces, or unsolvable correlation data."""


def _parity(x: np.ndarray) -> np.ndarray:
    """Bitwise parity (popcount mod 2) of non-negative integers."""
    x = np.asarray(x, dtype=np.uint64).copy()
    for shift in (32, 16, 8, 4, 2, 1):
        x ^= x >> np.uint64(shift)
    return (x & np.uint64(1)).astype(np.int64)


def walsh_row(index: int, length: int) -> np.ndarray:
    """Walsh row ``w_index(t) = (-1)^popcount(index & t)``, values +/-1."""
    if length & (length - 1) or length <= 0:
        raise CometError("code length must be a power of two")
    if not 0 <= index < length:
        raise CometError(f"Walsh index {index} outside 0..{length - 1}")
    return 1 - 2 * _parity(index & np.arange(length))


@dataclass(frozen=True)
class CodeSet:
    """On/off element codes built from distinct-XOR Walsh rows.

    ``assignment[n]`` is the Walsh index of element n; the on/off code is
    ``c_n = (1 + w_{a_n}) / 2``.  Construction validates the separability
    invariant: all assigned indices and all pairwise XORs are nonzero and
    mutually distinct, so every correlation lands in its own projection bin.
    """

    assignment: tuple[int, ...]
    length: int

    def __post_init__(self):
        a = self.assignment
        if len(set(a)) != len(a) or any(not 0 < k < self.length for k in a):
            raise CometError("code indices must be distinct, nonzero, in range")
        bins = set(a)
        for i in range(len(a)):
            for j in range(i + 1, len(a)):
                x = a[i] ^ a[j]
                if x in bins:
                    raise CometError(
                        "singular projection system: code products collide "
                        f"(elements {i},{j} share bin {x})"
                    )
                bins.add(x)

    @property
    def n_elements(self) -> int:
        return len(self.assignment)

    def codes(self) -> np.ndarray:
        """The n x L on/off chip matrix (entries 0/1)."""
        return np.array(
            [(1 + walsh_row(a, self.length)) // 2 for a in self.assignment]
        )

    def projection(self, trace: np.ndarray, index: int) -> float:
        """Normalized Walsh projection (1/L) sum P(t) w_index(t)."""
        trace = np.asarray(trace, dtype=float)
        if trace.size != self.length:
            raise CometError(
                f"trace length {trace.size} does not match code length {self.length}"
            )
        return float(np.mean(trace * walsh_row(index, self.length)))


def gen_codes(n_elements: int, length: int | None = None) -> CodeSet:
    """Find the smallest valid code set for ``n_elements`` (greedy search).

    The returned assignment is deterministic: candidate indices are tried in
    increasing order and kept when they collide with no previously used bin.

    Raises:
        CometError: when no valid assignment exists up to the capacity limit
            (or within ``length`` when given).
    """
    if n_elements < 1:
        raise CometError("need at least one element")
    # Distinctness requires n + C(n,2) separate nonzero bins.
    need = n_elements + n_elements * (n_elements - 1) // 2
    start = max(4, 1 << (need + 1).bit_length())
    if need + 1 <= (start >> 1):
        start >>= 1
    lengths = [length] if length is not None else []
    if length is None:
        l = start
        while l <= MAX_CODE_LENGTH:
            lengths.append(l)
            l <<= 1
    for cap in lengths:
        chosen: list[int] = []
        bins: set[int] = set()
        for cand in range(1, cap):
            xors = [cand ^ c for c in chosen]
            if cand in bins or any(x in bins or x == cand for x in xors):
                continue
            trial = set(xors)
            if len(trial) != len(xors) or cand in trial:
                continue
            chosen.append(cand)
            bins.add(cand)
            bins.update(xors)
            if len(chosen) == n_elements:
                return CodeSet(tuple(chosen), cap)
    raise CometError(
        f"no separable code assignment for {n_elements} elements "
        f"within capacity {lengths[-1] if lengths else 0}"
    )


def simulate_detector(
    element_gains: np.ndarray,
    codes: CodeSet,
    quarter_mask: int = 0,
    noise_sigma: float = 0.0,
    seed: int = 0,
) -> np.ndarray:
    """Square-law detector trace of the code-modulated superposition.

    ``quarter_mask`` selects elements (by index bit) whose drive is rotated
    +90 degrees for this trace — the quadrature runs used to recover
    imaginary correlation parts.  Additive measurement noise (std dev
    ``noise_sigma``) is drawn deterministically from ``(seed, quarter_mask)``
    and the output is clamped at zero like a physical power detector.
    """
    z = np.asarray(element_gains, dtype=complex)
    if z.shape != (codes.n_elements,):
        raise CometError(
            f"expected {codes.n_elements} element gains, got shape {z.shape}"
        )
    rot = np.where((quarter_mask >> np.arange(z.size)) & 1, 1j, 1.0)
    chips = codes.codes()  # n x L
    trace = np.abs((z * rot) @ chips.astype(float)) ** 2
    if noise_sigma > 0:
        rng = np.random.default_rng(
            np.random.SeedSequence((int(seed), int(quarter_mask), 0xC0DE))
        )
        trace = trace + noise_sigma * rng.standard_normal(trace.size)
        trace = np.maximum(trace, 0.0)
    return trace


def quadrature_masks(n_elements: int) -> tuple[int, ...]:
    """Masks whose quadrature traces split every element pair at least once.

    Mask b selects the elements whose index has bit b set; any two distinct
    indices differ in some bit, so each pair is split by at least one mask.
    """
    n_bits = max(1, (n_elements - 1).bit_length())
    masks = []
    for b in range(n_bits):
        masks.append(
            sum(1 << n for n in range(n_elements) if (n >> b) & 1)
        )
    return tuple(masks)


def run_campaign(
    element_gains: np.ndarray,
    codes: CodeSet,
    noise_sigma: float = 0.0,
    seed: int = 0,
) -> dict[int, np.ndarray]:
    """All detector traces needed for full complex extraction, keyed by mask."""
    masks = (0,) + quadrature_masks(codes.n_elements)
    return {
        m: simulate_detector(element_gains, codes, m, noise_sigma, seed)
        for m in masks
    }


def extract_correlations(
    traces: Mapping[int, np.ndarray] | np.ndarray,
    codes: CodeSet,
) -> np.ndarray:
    """Hermitian matrix of ``z_n conj(z_m)`` estimates from detector traces.

    Accepts either the mask-keyed trace dictionary from ``run_campaign`` or a
    single base trace (mask 0 only), in which case imaginary parts are
    unavailable and an error is raised for multi-element code sets needing
    them.

    The base trace yields, per the Walsh expansion, Re{z_n conj(z_m)} = 2 *
    projection(a_n ^ a_m) and |z_n|^2 = 2 * projection(a_n) minus the real
    cross-term row sum.  Each quadrature trace re-measures the split pairs
    with one factor rotated 90 degrees, turning the same bins into +/-
    Im{z_n conj(z_m)}.
    """
    if isinstance(traces, np.ndarray):
        traces = {0: traces}
    if 0 not in traces:
        raise CometError("campaign must include the unrotated (mask 0) trace")
    n = codes.n_elements
    a = codes.assignment
    base = np.asarray(traces[0], dtype=float)

    re_cross = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            re_cross[i, j] = re_cross[j, i] = 2.0 * codes.projection(
                base, a[i] ^ a[j]
            )
    diag = np.array(
        [2.0 * codes.projection(base, a[i]) - re_cross[i].sum() for i in range(n)]
    )

    im_cross = np.zeros((n, n))
    if n > 1:
        masks = [m for m in traces if m != 0]
        for i in range(n):
            for j in range(i + 1, n):
                mask = next(
                    (m for m in masks if ((m >> i) ^ (m >> j)) & 1), None
                )
                if mask is None:
                    raise CometError(
                        f"no quadrature trace separates elements {i} and {j}"
                    )
                r = 2.0 * codes.projection(
                    np.asarray(traces[mask], dtype=float), a[i] ^ a[j]
                )
                # element i rotated: Re{(j z_i) conj(z_j)} = -Im{z_i conj(z_j)}
                im = -r if (mask >> i) & 1 else r
                im_cross[i, j] = im
                im_cross[j, i] = -im

    corr = re_cross + 1j * im_cross
    corr[np.arange(n), np.arange(n)] = diag
    return corr


@dataclass(frozen=True)
class ElementEstimate:
    """Solved per-element complex gains (reference phase pinned to zero)."""

    gains: np.ndarray
    reference: int
    notes: tuple[str, ...] = ()

    @property
    def magnitudes_db(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 20.0 * np.log10(np.abs(self.gains))

    @property
    def phases_deg(self) -> np.ndarray:
        return np.degrees(np.angle(self.gains)) % 360.0


def solve_elements(
    correlations: np.ndarray, reference: int = 0
) -> ElementEstimate:
    """Per-element complex gains from a pairwise correlation matrix.

    Magnitudes are square roots of the diagonal; phases start from the
    factorization against the reference element (pinned to phase zero) and
    are refined by weighted linear least squares over all pairwise
    differences.  Dead elements (vanishing diagonal) come back with
    magnitude 0 and phase 0; a dead *reference* is replaced by the
    strongest element, with a note.
    """
    c = np.asarray(correlations, dtype=complex)
    n = c.shape[0]
    if c.shape != (n, n):
        raise CometError("correlation matrix must be square")
    if not 0 <= reference < n:
        raise CometError(f"reference element {reference} outside 0..{n - 1}")
    if not np.allclose(c, c.conj().T, atol=1e-6 * max(1.0, np.abs(c).max())):
        raise CometError("correlation matrix is not Hermitian")
    diag = np.real(np.diag(c))
    mags = np.sqrt(np.clip(diag, 0.0, None))
    notes: list[str] = []
    if mags.max() <= 0.0:
        return ElementEstimate(np.zeros(n, dtype=complex), 0, ("all elements dead",))
    alive = mags > _DEAD_RELATIVE_FLOOR * mags.max()
    ref = int(reference)
    if not alive[ref]:
        ref = int(np.argmax(mags))
        notes.append(
            f"reference element {reference} is dead; using element {ref}"
        )
    dead = np.flatnonzero(~alive)
    if dead.size:
        notes.append(
            "dead elements reported with magnitude 0: "
            + ", ".join(str(d) for d in dead)
        )

    # initial phases from the reference column; c[n, ref] = z_n conj(z_ref)
    phases = np.where(alive, np.angle(c[:, ref]), 0.0)
    phases[ref] = 0.0

    # weighted LS refinement over all alive pairs, unwrapped near the init
    rows = [(i, j) for i in range(n) for j in range(i + 1, n) if alive[i] and alive[j]]
    if rows:
        free = [i for i in range(n) if alive[i] and i != ref]
        col = {e: k for k, e in enumerate(free)}
        a_mat = np.zeros((len(rows), len(free)))
        b_vec = np.zeros(len(rows))
        w = np.zeros(len(rows))
        for r, (i, j) in enumerate(rows):
            theta = np.angle(c[i, j])  # = phi_i - phi_j (mod 2pi)
            guess = phases[i] - phases[j]
            theta += 2.0 * math.pi * round((guess - theta) / (2.0 * math.pi))
            if i != ref:
                a_mat[r, col[i]] = 1.0
            if j != ref:
                a_mat[r, col[j]] = -1.0
            b_vec[r] = theta
            w[r] = abs(c[i, j])
        if free:
            sw = np.sqrt(w)
            sol, *_ = np.linalg.lstsq(a_mat * sw[:, None], b_vec * sw, rcond=None)
            for e, k in col.items():
                phases[e] = sol[k]

    gains = mags * np.exp(1j * phases)
    gains[~alive] = 0.0
    return ElementEstimate(gains, ref, tuple(notes))


def calibrate(
    element_gains: np.ndarray,
    codes: CodeSet | None = None,
    noise_sigma: float = 0.0,
    seed: int = 0,
) -> ElementEstimate:
    """Full pipeline: simulate campaign -> extract correlations -> solve."""
    z = np.asarray(element_gains, dtype=complex)
    cs = codes or gen_codes(z.size)
    traces = run_campaign(z, cs, noise_sigma, seed)
    return solve_elements(extract_correlations(traces, cs))


# -- phase-sweep harness ----------------------------------------------------


@dataclass(frozen=True)
class Interpolator:
    """RF vector-interpolator impairment model.

    A commanded phase programs quantized I/Q DAC codes (I = cos, Q = sin at
    ``dac_bits``); the realized weight additionally suffers a diagonal gain
    compression of ``compression_db * sin^2(2 phi)`` — zero on the I/Q axes,
    maximal at the diagonals, which is what puts the gain maxima at
    0/90/180/270 degrees — plus an optional static I/Q gain mismatch.  With
    ``ideal=True`` the response is exactly ``exp(j phi)``.
    """

    dac_bits: int = DEFAULT_DAC_BITS
    compression_db: float = 3.0
    axis_mismatch_db: float = 0.0
    ideal: bool = False

    def realized(self, phase_rad: float) -> complex:
        if self.ideal:
            return complex(math.cos(phase_rad), math.sin(phase_rad))
        i, q = weight_to_iq(1.0, phase_rad)
        qiq = quantize_iq(i, q, self.dac_bits)
        w = dequantize_iq(qiq.i_code, qiq.q_code, self.dac_bits)
        gi = 10.0 ** (+self.axis_mismatch_db / 40.0)
        gq = 10.0 ** (-self.axis_mismatch_db / 40.0)
        w = complex(w.real * gi, w.imag * gq)
        comp = 10.0 ** (
            -self.compression_db * math.sin(2.0 * phase_rad) ** 2 / 20.0
        )
        return comp * w


def _spread_gains(n: int, spread_db: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x51E7)))
    raw = rng.uniform(size=n)
    if n > 1:
        raw = (raw - raw.min()) / (raw.max() - raw.min())
    db = -spread_db / 2.0 + spread_db * raw
    phases = rng.uniform(0.0, 2.0 * math.pi, size=n)
    return 10.0 ** (db / 20.0) * np.exp(1j * phases)


@dataclass(frozen=True)
class ArrayUnderTest:
    """Static per-element gains plus the shared interpolator model."""

    element_gains: np.ndarray
    interpolator: Interpolator = field(default_factory=Interpolator)

    @staticmethod
    def uniform(n_elements: int = 16, interpolator: Interpolator | None = None):
        return ArrayUnderTest(
            np.ones(n_elements, dtype=complex),
            interpolator or Interpolator(),
        )

    @staticmethod
    def perturbed(
        n_elements: int = 16,
        spread_db: float = 4.5,
        seed: int = 0,
        interpolator: Interpolator | None = None,
    ) -> "ArrayUnderTest":
        """Elements with a gain spread of exactly ``spread_db`` (max - min)."""
        return ArrayUnderTest(
            _spread_gains(n_elements, spread_db, seed),
            interpolator or Interpolator(),
        )

    def realized_gains(self, commanded_phase_rad: float) -> np.ndarray:
        w = self.interpolator.realized(commanded_phase_rad)
        return self.element_gains * w


@dataclass(frozen=True)
class ElementResponse:
    """One extracted point of the gain/phase-versus-setting table."""

    element_id: int
    commanded_phase_deg: float
    extracted_gain_db: float
    extracted_phase_deg: float


def sweep_phase_settings(
    array: ArrayUnderTest,
    phase_grid_deg: np.ndarray | None = None,
    codes: CodeSet | None = None,
    noise_sigma: float = 0.0,
    seed: int = 0,
) -> list[ElementResponse]:
    """Extract every element's gain/phase across a commanded-phase grid.

    At each grid point all elements are commanded to the same phase through
    the interpolator model, the detector campaign runs, and the solver's
    output is recorded.  Dead extractions report -inf gain.
    """
    grid = (
        np.arange(0.0, 360.0, 5.625)
        if phase_grid_deg is None
        else np.asarray(phase_grid_deg, dtype=float)
    )
    n = array.element_gains.size
    cs = codes or gen_codes(n)
    out: list[ElementResponse] = []
    for phi in grid:
        gains = array.realized_gains(math.radians(float(phi)))
        est = calibrate(gains, cs, noise_sigma, seed)
        mags_db = est.magnitudes_db
        phases = est.phases_deg
        for e in range(n):
            out.append(
                ElementResponse(
                    element_id=e,
                    commanded_phase_deg=float(phi) % 360.0,
                    extracted_gain_db=float(mags_db[e]),
                    extracted_phase_deg=float(phases[e]),
                )
            )
    return out


def export_gain_table(
    responses: list[ElementResponse], path: str | Path | None = None
) -> str:
    """Delimited gain table: element_id, commanded_phase_deg, gain_db, phase_deg."""
    out = io.StringIO()
    out.write("element_id,commanded_phase_deg,gain_db,phase_deg\n")
    for r in responses:
        out.write(
            f"{r.element_id},{r.commanded_phase_deg:.4f},"
            f"{r.extracted_gain_db:.6f},{r.extracted_phase_deg:.6f}\n"
        )
    text = out.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text
