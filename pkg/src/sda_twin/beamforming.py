"""Phased-array weight vectors, far-field patterns and the 21-beam codebook.

The array under test is an 8 x 2 rectangular patch array (azimuth x elevation)
driven by per-element vector interpolators: each element weight is a complex
number programmed as Cartesian (I, Q) DAC codes.  Everything here is plain
geometry and linear algebra:

* array factor        AF(theta) = sum_n A_n * exp(j*(2*pi*n*(d/lambda)*sin(theta) - phi_n))
* steering weights    phi_n = 2*pi*n*(d/lambda)*sin(steer_angle)
* I/Q programming     I = A*cos(phi),  Q = A*sin(phi)

Angles are measured from broadside (boresight) in the azimuth plane, positive
counter-clockwise, in degrees at the API surface.  The two elevation rows are
always programmed identically; at zero elevation they add in phase, so the
full 16-element sum is used everywhere.

Absolute gain anchoring: the uniform broadside array is assigned a peak gain
of 14.0 dBi, so a single element carries 14 - 20*log10(16) = -10.08 dBi of
field gain.  Pattern floors are clamped at -100 dB.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, NamedTuple, Sequence

import numpy as np

__all__ = [
    "ArrayGeometry",
    "ElementWeight",
    "Awv",
    "Codebook",
    "Pattern",
    "PatternMetrics",
    "ElementModel",
    "PatternReference",
    "QuantizedIq",
    "weight_to_iq",
    "quantize_iq",
    "dequantize_iq",
    "make_steering_awv",
    "array_factor",
    "compute_pattern",
    "pattern_metrics",
    "build_codebook",
    "BeamformingError",
]

SPEED_OF_LIGHT = 299_792_458.0

#: Band edges of the hardware this twin models.
BAND_MIN_HZ = 24.0e9
BAND_MAX_HZ = 29.5e9

DEFAULT_CARRIER_HZ = 28.0e9

#: Peak gain assigned to the uniform broadside array, dBi.
ARRAY_PEAK_GAIN_DBI = 14.0

#: Field gain of a single element so that 16 coherent elements hit the anchor.
ELEMENT_PEAK_GAIN_DBI = ARRAY_PEAK_GAIN_DBI - 20.0 * math.log10(16.0)

#: Clamp for log-domain pattern values (nulls would otherwise be -inf).
PATTERN_FLOOR_DB = -100.0

#: Codebook grid: 21 beams, -45 deg to +45 deg in 4.5 deg steps.
CODEBOOK_SIZE = 21
CODEBOOK_STEP_DEG = 4.5
CODEBOOK_FIRST_DEG = -45.0

DEFAULT_DAC_BITS = 6
MIN_DAC_BITS = 2
MAX_DAC_BITS = 12


class BeamformingError(ValueError):
    """Raised for out-of-range angles, bad geometry or degenerate patterns."""


class ElementModel(str, Enum):
    """Per-element radiation model applied on top of the array factor."""

    ISOTROPIC = "isotropic"
    COSINE = "cosine"


class PatternReference(str, Enum):
    """How pattern gain values are referenced."""

    ABSOLUTE_DBI = "absolute_dbi"
    NORMALIZED = "normalized"


@dataclass(frozen=True)
class ArrayGeometry:
    """Rectangular array layout.

    Attributes:
        n_azimuth: elements along the steering axis.
        n_elevation: identical rows stacked in elevation.
        element_spacing: spacing in wavelengths at ``carrier_hz`` (d/lambda).
        carrier_hz: carrier frequency, must sit inside the supported band.
    """

    n_azimuth: int = 8
    n_elevation: int = 2
    element_spacing: float = 0.5
    carrier_hz: float = DEFAULT_CARRIER_HZ

    def __post_init__(self) -> None:
        if self.n_azimuth < 1 or self.n_elevation < 1:
            raise BeamformingError("array needs at least one element per axis")
        if not (BAND_MIN_HZ <= self.carrier_hz <= BAND_MAX_HZ):
            raise BeamformingError(
                f"carrier {self.carrier_hz/1e9:.3f} GHz outside "
                f"{BAND_MIN_HZ/1e9:.1f}-{BAND_MAX_HZ/1e9:.1f} GHz"
            )
        if self.element_spacing <= 0:
            raise BeamformingError("element spacing must be positive")

    @property
    def n_elements(self) -> int:
        return self.n_azimuth * self.n_elevation

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz


class QuantizedIq(NamedTuple):
    """Result of DAC quantization; ``saturated`` flags out-of-range input."""

    i_code: int
    q_code: int
    saturated: bool


def _quantize_axis(x: float, bits: int) -> tuple[int, bool]:
    """Mid-rise quantization of one axis on [-1, 1].

    Code ``k`` represents level ``(k + 0.5) * lsb`` with ``lsb = 2**(1-bits)``;
    codes run from ``-2**(bits-1)`` to ``2**(bits-1) - 1``.  Inputs exactly on
    a decision boundary round half away from zero (0.0 maps to code 0).
    Inputs strictly outside [-1, 1] clamp to the end codes and raise the
    saturation flag; +/-1.0 themselves clamp silently (they sit half an LSB
    from the end levels, which is the best any in-range input gets).
    """
    half = 1 << (bits - 1)
    lsb = 2.0 ** (1 - bits)
    scaled = x / lsb
    floor = math.floor(scaled)
    if x == 0.0:
        k = 0
    elif scaled == floor:  # decision boundary: round half away from zero
        k = floor if x > 0 else floor - 1
    else:
        k = floor
    k = min(max(k, -half), half - 1)
    return k, bool(x > 1.0 or x < -1.0)


def quantize_iq(i: float, q: float, bits: int = DEFAULT_DAC_BITS) -> QuantizedIq:
    """Quantize Cartesian weight components to signed DAC codes.

    Nearest-level mid-rise quantization on [-1, 1], ties rounding half away
    from zero.  Out-of-range inputs saturate (flagged, never an error).
    """
    if not (MIN_DAC_BITS <= bits <= MAX_DAC_BITS):
        raise BeamformingError(f"DAC width {bits} outside {MIN_DAC_BITS}..{MAX_DAC_BITS} bits")
    ik, isat = _quantize_axis(float(i), bits)
    qk, qsat = _quantize_axis(float(q), bits)
    return QuantizedIq(ik, qk, isat or qsat)


def dequantize_iq(i_code: int, q_code: int, bits: int = DEFAULT_DAC_BITS) -> complex:
    """Reconstruct the complex weight a pair of DAC codes realizes."""
    lsb = 2.0 ** (1 - bits)
    return complex((i_code + 0.5) * lsb, (q_code + 0.5) * lsb)


def weight_to_iq(amplitude: float, phase_rad: float) -> tuple[float, float]:
    """Cartesian components of a polar weight: I = A cos(phi), Q = A sin(phi)."""
    if amplitude < 0:
        raise BeamformingError("amplitude must be non-negative")
    return amplitude * math.cos(phase_rad), amplitude * math.sin(phase_rad)


@dataclass(frozen=True)
class ElementWeight:
    """One element's complex excitation plus its DAC programming.

    ``amplitude``/``phase_rad`` hold the commanded (continuous) weight; the
    code pair is its mid-rise quantization at ``dac_bits``.
    """

    amplitude: float
    phase_rad: float
    i_code: int
    q_code: int
    dac_bits: int = DEFAULT_DAC_BITS

    @classmethod
    def from_polar(
        cls, amplitude: float, phase_rad: float, dac_bits: int = DEFAULT_DAC_BITS
    ) -> "ElementWeight":
        i, q = weight_to_iq(amplitude, phase_rad)
        codes = quantize_iq(i, q, dac_bits)
        return cls(amplitude, phase_rad, codes.i_code, codes.q_code, dac_bits)

    @property
    def weight(self) -> complex:
        """Commanded complex weight."""
        return self.amplitude * complex(math.cos(self.phase_rad), math.sin(self.phase_rad))

    @property
    def realized_weight(self) -> complex:
        """Complex weight actually realized by the quantized DAC codes."""
        return dequantize_iq(self.i_code, self.q_code, self.dac_bits)


@dataclass(frozen=True)
class Awv:
    """Antenna weight vector: one ``ElementWeight`` per element.

    Elements are ordered elevation-row-major: indices ``0..n_az-1`` are row 0,
    ``n_az..2*n_az-1`` are row 1, and so on.
    """

    weights: tuple[ElementWeight, ...]
    label: str = ""

    def __post_init__(self) -> None:
        if not self.weights:
            raise BeamformingError("empty weight vector")

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def amplitudes(self) -> np.ndarray:
        return np.array([w.amplitude for w in self.weights])

    @property
    def phases_rad(self) -> np.ndarray:
        return np.array([w.phase_rad for w in self.weights])

    @property
    def complex_weights(self) -> np.ndarray:
        return np.array([w.weight for w in self.weights])


def make_steering_awv(
    angle_deg: float,
    geometry: ArrayGeometry | None = None,
    dac_bits: int = DEFAULT_DAC_BITS,
    label: str | None = None,
) -> Awv:
    """Uniform-amplitude progressive-phase steering vector.

    phi_n = 2*pi*n*(d/lambda)*sin(angle) along the azimuth axis, so the array
    factor peaks at ``angle_deg``.  Both elevation rows receive identical
    phases.  Steering is limited to +/-90 deg of broadside.
    """
    geo = geometry or ArrayGeometry()
    if not (-90.0 <= angle_deg <= 90.0):
        raise BeamformingError(f"steer angle {angle_deg} deg outside +/-90 deg")
    step = 2.0 * math.pi * geo.element_spacing * math.sin(math.radians(angle_deg))
    row = [
        ElementWeight.from_polar(1.0, (n * step) % (2.0 * math.pi), dac_bits)
        for n in range(geo.n_azimuth)
    ]
    weights = tuple(row * geo.n_elevation)
    return Awv(weights, label or f"steer{angle_deg:+.1f}deg")


def _element_field(theta_rad: np.ndarray, model: ElementModel) -> np.ndarray:
    if model is ElementModel.ISOTROPIC:
        return np.ones_like(theta_rad)
    return np.cos(theta_rad)


def array_factor(
    awv: Awv,
    geometry: ArrayGeometry | None = None,
    angles_deg: float | Sequence[float] | np.ndarray = 0.0,
) -> np.ndarray:
    """Complex array factor at the given azimuth angle(s), elevation 0.

    AF(theta) = sum over elements of A_n * exp(j*(2*pi*n*(d/lambda)*sin(theta) - phi_n))
    where n is the element's azimuth index.  At elevation 0 both rows
    contribute identically, so the sum runs over all elements.
    """
    geo = geometry or ArrayGeometry()
    if len(awv) != geo.n_elements:
        raise BeamformingError(f"AWV has {len(awv)} weights, geometry expects {geo.n_elements}")
    theta = np.radians(np.atleast_1d(np.asarray(angles_deg, dtype=float)))
    n_az = np.tile(np.arange(geo.n_azimuth), geo.n_elevation)
    amps = awv.amplitudes
    phases = awv.phases_rad
    # (angles, elements)
    spatial = 2.0 * np.pi * geo.element_spacing * np.sin(theta)[:, None] * n_az[None, :]
    af = (amps[None, :] * np.exp(1j * (spatial - phases[None, :]))).sum(axis=1)
    return af


@dataclass(frozen=True)
class Pattern:
    """Sampled power pattern over an azimuth grid.

    ``gains_db`` are absolute (dBi) or peak-normalized depending on
    ``reference``; values are clamped at ``PATTERN_FLOOR_DB``.
    """

    angles_deg: np.ndarray
    gains_db: np.ndarray
    reference: PatternReference
    element_model: ElementModel
    label: str = ""

    def __post_init__(self) -> None:
        if self.angles_deg.shape != self.gains_db.shape:
            raise BeamformingError("angle and gain grids differ in length")
        if np.any(np.diff(self.angles_deg) <= 0):
            raise BeamformingError("angle grid must be strictly increasing")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["angle_deg", "gain_db"])
        for a, g in zip(self.angles_deg, self.gains_db):
            w.writerow([f"{a:.4f}", f"{g:.4f}"])
        return buf.getvalue()


def compute_pattern(
    awv: Awv,
    geometry: ArrayGeometry | None = None,
    angles_deg: np.ndarray | None = None,
    element_model: ElementModel = ElementModel.ISOTROPIC,
    reference: PatternReference = PatternReference.ABSOLUTE_DBI,
) -> Pattern:
    """Power pattern |AF(theta) * E(theta)|^2 on an angle grid, in dB.

    Args:
        awv: weight vector to evaluate.
        geometry: array layout (default 8x2 half-wave at 28 GHz).
        angles_deg: strictly increasing grid; default -90..90 in 0.1 deg steps.
        element_model: isotropic or cosine element factor.
        reference: absolute dBi (anchored at 14 dBi for the uniform broadside
            array) or normalized to the pattern's own peak.
    """
    geo = geometry or ArrayGeometry()
    if angles_deg is None:
        angles_deg = np.linspace(-90.0, 90.0, 1801)
    angles_deg = np.asarray(angles_deg, dtype=float)
    theta = np.radians(angles_deg)
    field = array_factor(awv, geo, angles_deg) * _element_field(theta, element_model)
    power = np.abs(field) ** 2
    with np.errstate(divide="ignore"):
        gains = 10.0 * np.log10(power)
    if reference is PatternReference.ABSOLUTE_DBI:
        gains = gains + ELEMENT_PEAK_GAIN_DBI
    else:
        gains = gains - gains.max()
    gains = np.maximum(gains, PATTERN_FLOOR_DB)
    return Pattern(angles_deg, gains, reference, element_model, awv.label)


@dataclass(frozen=True)
class PatternMetrics:
    """Descriptors of a sampled pattern's main lobe and sidelobe structure.

    ``first_sidelobe_db`` is relative to the peak (negative); it and
    ``peak_to_null_db`` are ``None`` when the grid shows no sidelobe.
    """

    peak_angle_deg: float
    peak_gain_db: float
    hpbw_deg: float
    peak_to_null_db: float | None
    first_sidelobe_db: float | None


def pattern_metrics(pattern: Pattern) -> PatternMetrics:
    """Peak, half-power beamwidth (interpolated), first null and sidelobe.

    The -3 dB crossings are linearly interpolated on the grid.  The first
    sidelobe is the higher of the first local maxima beyond the first null on
    either side; the null figure is the deeper of the two minima between the
    peak and those sidelobes.

    Raises:
        BeamformingError: if no -3 dB crossing lies inside the grid.
    """
    ang = pattern.angles_deg
    g = pattern.gains_db
    if len(ang) < 3:
        raise BeamformingError("grid too coarse for metrics")
    ipk = int(np.argmax(g))
    peak = float(g[ipk])
    half = peak - 3.0103

    def crossing(direction: int) -> float:
        i = ipk
        while 0 <= i + direction < len(g):
            j = i + direction
            if g[j] <= half:
                # interpolate between i and j
                return float(ang[i] + (half - g[i]) * (ang[j] - ang[i]) / (g[j] - g[i]))
            i = j
        raise BeamformingError("no -3 dB crossing inside the angle grid")

    left = crossing(-1)
    right = crossing(+1)
    hpbw = right - left

    def first_lobe(direction: int) -> tuple[float | None, float | None]:
        """(null depth, sidelobe level) rel peak, scanning one direction."""
        i = ipk
        # descend to the first local minimum
        while 0 <= i + direction < len(g) and g[i + direction] <= g[i]:
            i += direction
        if not (0 <= i + direction < len(g)):
            return None, None
        null = float(g[i])
        # ascend to the following local maximum
        while 0 <= i + direction < len(g) and g[i + direction] >= g[i]:
            i += direction
        if g[i] <= null:
            return None, None
        return null, float(g[i])

    nulls, lobes = [], []
    for d in (-1, +1):
        nd, sd = first_lobe(d)
        if sd is not None:
            nulls.append(nd)
            lobes.append(sd)
    if lobes:
        sidelobe = max(lobes) - peak
        peak_to_null = peak - min(nulls)
    else:
        sidelobe = None
        peak_to_null = None
    return PatternMetrics(float(ang[ipk]), peak, hpbw, peak_to_null, sidelobe)


@dataclass(frozen=True)
class Codebook:
    """An indexed set of steering vectors; beam_index runs 1..len(entries)."""

    entries: tuple[Awv, ...]
    angles_deg: tuple[float, ...]
    geometry: ArrayGeometry = field(default_factory=ArrayGeometry)
    dac_bits: int = DEFAULT_DAC_BITS

    def __post_init__(self) -> None:
        if len(self.entries) != len(self.angles_deg):
            raise BeamformingError("entry/angle count mismatch")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def n_beams(self) -> int:
        return len(self.entries)

    def beam(self, beam_index: int) -> Awv:
        """Look up a beam by its 1-based index."""
        if not (1 <= beam_index <= len(self.entries)):
            raise BeamformingError(
                f"beam index {beam_index} outside 1..{len(self.entries)}"
            )
        return self.entries[beam_index - 1]

    def angle(self, beam_index: int) -> float:
        self.beam(beam_index)  # range check
        return self.angles_deg[beam_index - 1]

    def to_csv(self) -> str:
        """One row per beam: index, angle, then per-element I/Q codes."""
        buf = io.StringIO()
        w = csv.writer(buf)
        n = len(self.entries[0])
        head = ["beam_index", "angle_deg"]
        for e in range(n):
            head += [f"i{e:02d}", f"q{e:02d}"]
        w.writerow(head)
        for idx, (awv, ang) in enumerate(zip(self.entries, self.angles_deg), start=1):
            row: list[object] = [idx, f"{ang:.2f}"]
            for el in awv.weights:
                row += [el.i_code, el.q_code]
            w.writerow(row)
        return buf.getvalue()

    def to_json(self) -> str:
        data = {
            "dac_bits": self.dac_bits,
            "geometry": {
                "n_azimuth": self.geometry.n_azimuth,
                "n_elevation": self.geometry.n_elevation,
                "element_spacing": self.geometry.element_spacing,
                "carrier_hz": self.geometry.carrier_hz,
            },
            "beams": [
                {
                    "beam_index": idx,
                    "angle_deg": ang,
                    "i_codes": [el.i_code for el in awv.weights],
                    "q_codes": [el.q_code for el in awv.weights],
                }
                for idx, (awv, ang) in enumerate(
                    zip(self.entries, self.angles_deg), start=1
                )
            ],
        }
        return json.dumps(data, indent=2)


def build_codebook(
    geometry: ArrayGeometry | None = None,
    dac_bits: int = DEFAULT_DAC_BITS,
    n_beams: int = CODEBOOK_SIZE,
    first_deg: float = CODEBOOK_FIRST_DEG,
    step_deg: float = CODEBOOK_STEP_DEG,
) -> Codebook:
    """The default azimuth codebook: 21 beams, -45..+45 deg in 4.5 deg steps.

    Beam index k points at ``first + step*(k-1)``; index 11 is broadside.
    """
    geo = geometry or ArrayGeometry()
    angles = tuple(first_deg + step_deg * k for k in range(n_beams))
    entries = tuple(
        make_steering_awv(a, geo, dac_bits, label=f"beam{idx:02d}")
        for idx, a in enumerate(angles, start=1)
    )
    return Codebook(entries, angles, geo, dac_bits)
