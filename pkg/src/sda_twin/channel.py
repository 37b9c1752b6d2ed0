"""Geometric two-dimensional propagation model between two arrays.

Scenes are planar: each node has a position and a boresight heading, and
every propagation path is either the direct line-of-sight ray or a single
bounce off a point reflector with a fixed reflection loss.  A path's complex
amplitude is

    g = F_tx(theta_dep) * F_rx(theta_arr) * (lambda / (4 pi R)) *
        exp(-j 2 pi R / lambda) * 10^(-L_refl / 20)

where ``F`` is a node's complex field response (array factor times the
cosine element field, on an absolute scale whose squared magnitude is dBi).
Path delays are rounded to whole samples relative to the earliest path.

Noise calibration: a scenario declares ``target_snr_db``, the post-FFT SNR
over the active tones when both nodes select their best-aligned codebook
beams for the line-of-sight ray.  The model back-solves the time-domain
noise variance once from the aligned LOS gain:

    sigma_t^2 = |g_los|^2 * (idft_size / n_active) / 10^(target/10)

so misaligned beams see the same noise floor and proportionally less signal.
Absolute transmit power never enters: the link-budget module handles dBm
bookkeeping, while the channel works in calibrated SNR terms.

Optionally a scenario adds weak diffuse ripple: a few extra taps trailing
the direct ray, drawn once per model seed, with total power ``ripple_db``
relative to the direct tap and co-directional with it (so misaligned beams
attenuate ripple and signal alike).

Determinism: noise for a frame is drawn from ``SeedSequence((seed, tx_beam,
rx_beam, frame_index))``, so any execution order — or a parallel pool —
produces byte-identical captures.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .beamforming import (
    Awv,
    ArrayGeometry,
    DEFAULT_CARRIER_HZ,
    ELEMENT_PEAK_GAIN_DBI,
    SPEED_OF_LIGHT,
    array_factor,
    build_codebook,
)
from .modem.frame import PpduConfig
from .modem.iqfile import IqBuffer

__all__ = [
    "ChannelError",
    "NodePose",
    "Reflector",
    "Scenario",
    "PropagationPath",
    "ChannelModel",
    "node_field",
    "awgn",
    "load_scenario",
    "save_scenario",
    "builtin_scenarios",
]

_RIPPLE_STREAM = 0x52495050  # namespace tag for the diffuse-tap draw


class ChannelError(RuntimeError):
    """Raised for geometrically or numerically unusable scenes."""


@dataclass(frozen=True)
class NodePose:
    """Planar position (meters) plus boresight heading (degrees)."""

    x_m: float
    y_m: float
    heading_deg: float

    def look_angle_deg(self, x_m: float, y_m: float) -> float:
        """Angle of (x, y) relative to this node's boresight, in (-180, 180]."""
        world = math.degrees(math.atan2(y_m - self.y_m, x_m - self.x_m))
        rel = (world - self.heading_deg) % 360.0
        return rel - 360.0 if rel > 180.0 else rel


@dataclass(frozen=True)
class Reflector:
    """Point scatterer with a one-bounce reflection loss in dB."""

    x_m: float
    y_m: float
    loss_db: float


@dataclass(frozen=True)
class Scenario:
    """A complete scene description, loadable from JSON."""

    name: str
    tx: NodePose
    rx: NodePose
    reflectors: tuple[Reflector, ...] = ()
    target_snr_db: float = 30.0
    ripple_db: float | None = None
    min_snr_floor_db: float = -45.0
    carrier_hz: float = DEFAULT_CARRIER_HZ

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "tx": {"x_m": self.tx.x_m, "y_m": self.tx.y_m, "heading_deg": self.tx.heading_deg},
            "rx": {"x_m": self.rx.x_m, "y_m": self.rx.y_m, "heading_deg": self.rx.heading_deg},
            "reflectors": [
                {"x_m": r.x_m, "y_m": r.y_m, "loss_db": r.loss_db} for r in self.reflectors
            ],
            "target_snr_db": self.target_snr_db,
            "ripple_db": self.ripple_db,
            "min_snr_floor_db": self.min_snr_floor_db,
            "carrier_hz": self.carrier_hz,
        }

    @staticmethod
    def from_dict(d: dict) -> "Scenario":
        try:
            return Scenario(
                name=str(d["name"]),
                tx=NodePose(**d["tx"]),
                rx=NodePose(**d["rx"]),
                reflectors=tuple(Reflector(**r) for r in d.get("reflectors", [])),
                target_snr_db=float(d.get("target_snr_db", 30.0)),
                ripple_db=None if d.get("ripple_db") is None else float(d["ripple_db"]),
                min_snr_floor_db=float(d.get("min_snr_floor_db", -45.0)),
                carrier_hz=float(d.get("carrier_hz", DEFAULT_CARRIER_HZ)),
            )
        except (KeyError, TypeError) as exc:
            raise ChannelError(f"malformed scenario description: {exc}") from exc


@dataclass(frozen=True)
class PropagationPath:
    """One resolved ray: total length, relative tap delay, and endpoints' angles."""

    length_m: float
    delay_samples: int
    departure_deg: float
    arrival_deg: float
    extra_loss_db: float
    label: str


def node_field(awv: Awv, angles_deg, geometry: ArrayGeometry) -> np.ndarray:
    """Complex field response of a beamformed node on an absolute scale.

    ``|node_field|**2`` expressed in dB is the node's realized gain in dBi
    (array factor times cosine element power pattern); angles beyond +/-90
    degrees fall outside the element field of view and return 0.
    """
    angles = np.atleast_1d(np.asarray(angles_deg, dtype=float))
    af = array_factor(awv, geometry, angles)
    el = np.sqrt(np.maximum(np.cos(np.radians(np.clip(angles, -180.0, 180.0))), 0.0))
    el = np.where(np.abs(angles) > 90.0, 0.0, el)
    return af * el * 10.0 ** (ELEMENT_PEAK_GAIN_DBI / 20.0)


def _path_geometry(scenario: Scenario, fs_hz: float) -> list[PropagationPath]:
    tx, rx = scenario.tx, scenario.rx
    lengths = [math.hypot(rx.x_m - tx.x_m, rx.y_m - tx.y_m)]
    raw = [
        (
            lengths[0],
            tx.look_angle_deg(rx.x_m, rx.y_m),
            rx.look_angle_deg(tx.x_m, tx.y_m),
            0.0,
            "los",
        )
    ]
    for i, ref in enumerate(scenario.reflectors):
        leg1 = math.hypot(ref.x_m - tx.x_m, ref.y_m - tx.y_m)
        leg2 = math.hypot(rx.x_m - ref.x_m, rx.y_m - ref.y_m)
        raw.append(
            (
                leg1 + leg2,
                tx.look_angle_deg(ref.x_m, ref.y_m),
                rx.look_angle_deg(ref.x_m, ref.y_m),
                ref.loss_db,
                f"reflector[{i}]",
            )
        )
    if min(r[0] for r in raw) <= 0.0:
        raise ChannelError("node/reflector separations must be positive")
    shortest = min(r[0] for r in raw)
    paths = []
    for length, dep, arr, loss, label in raw:
        delay = round((length - shortest) / SPEED_OF_LIGHT * fs_hz)
        paths.append(PropagationPath(length, int(delay), dep, arr, loss, label))
    return paths


class ChannelModel:
    """Deterministic scene simulator binding a scenario to a waveform config.

    Args:
        scenario: scene description (poses, reflectors, SNR target).
        seed: root seed; all randomness (ripple draw, per-frame noise)
            derives from it.
        config: waveform numerology used for sample-rate and SNR bookkeeping.
    """

    def __init__(
        self,
        scenario: Scenario,
        seed: int = 0,
        config: PpduConfig | None = None,
    ):
        self.scenario = scenario
        self.seed = int(seed)
        self.config = config or PpduConfig()
        self.geometry = ArrayGeometry(carrier_hz=scenario.carrier_hz)
        self.codebook = build_codebook(self.geometry)
        self.paths = tuple(_path_geometry(scenario, self.config.sample_rate_hz))

        # diffuse ripple taps, drawn once per model
        if scenario.ripple_db is None:
            self._ripple_delays = np.zeros(0, dtype=int)
            self._ripple_amps = np.zeros(0, dtype=complex)
        else:
            rng = np.random.default_rng(
                np.random.SeedSequence((self.seed, _RIPPLE_STREAM))
            )
            n_taps = 6
            self._ripple_delays = 1 + rng.permutation(12)[:n_taps]
            power = 10.0 ** (scenario.ripple_db / 10.0)
            amps = rng.standard_normal(n_taps) + 1j * rng.standard_normal(n_taps)
            self._ripple_amps = amps * math.sqrt(power / 2.0 / n_taps)

        self.aligned_tx_beam = self._nearest_beam(self.paths[0].departure_deg)
        self.aligned_rx_beam = self._nearest_beam(self.paths[0].arrival_deg)
        g_los = self._los_gain(
            self.codebook.beam(self.aligned_tx_beam),
            self.codebook.beam(self.aligned_rx_beam),
        )
        if abs(g_los) <= 0.0:
            raise ChannelError(
                "direct ray lies outside an array's field of view; "
                "the SNR target cannot be calibrated"
            )
        ratio = self.config.idft_size / self.config.n_active
        self.noise_power = (
            abs(g_los) ** 2 * ratio / 10.0 ** (scenario.target_snr_db / 10.0)
        )

    # -- geometry / gains ------------------------------------------------

    def _nearest_beam(self, angle_deg: float) -> int:
        angles = np.array(
            [self.codebook.angle(i) for i in range(1, self.codebook.n_beams + 1)]
        )
        return int(np.argmin(np.abs(angles - angle_deg))) + 1

    def _los_gain(self, tx_awv: Awv, rx_awv: Awv) -> complex:
        return self.path_gains(tx_awv, rx_awv)[0]

    def path_gains(self, tx_awv: Awv, rx_awv: Awv) -> np.ndarray:
        """Complex amplitude of each deterministic path for the given beams."""
        lam = SPEED_OF_LIGHT / self.scenario.carrier_hz
        gains = np.zeros(len(self.paths), dtype=complex)
        for i, p in enumerate(self.paths):
            f_tx = node_field(tx_awv, p.departure_deg, self.geometry)[0]
            f_rx = node_field(rx_awv, p.arrival_deg, self.geometry)[0]
            spread = lam / (4.0 * math.pi * p.length_m)
            phase = np.exp(-2j * math.pi * p.length_m / lam)
            gains[i] = (
                f_tx * f_rx * spread * phase * 10.0 ** (-p.extra_loss_db / 20.0)
            )
        return gains

    def taps(self, tx_awv: Awv, rx_awv: Awv) -> tuple[np.ndarray, np.ndarray]:
        """(delays_samples, complex_gains) including diffuse ripple taps."""
        gains = self.path_gains(tx_awv, rx_awv)
        delays = np.array([p.delay_samples for p in self.paths], dtype=int)
        if self._ripple_amps.size:
            delays = np.concatenate(
                [delays, self.paths[0].delay_samples + self._ripple_delays]
            )
            gains = np.concatenate([gains, gains[0] * self._ripple_amps])
        return delays, gains

    def expected_snr_db(self, tx_beam: int, rx_beam: int) -> float:
        """Analytic post-FFT SNR for a codebook beam pair (power sum of taps)."""
        _, gains = self.taps(
            self.codebook.beam(tx_beam), self.codebook.beam(rx_beam)
        )
        signal = float(np.sum(np.abs(gains) ** 2))
        noise = self.noise_power * self.config.n_active / self.config.idft_size
        if signal <= 0.0:
            return -math.inf
        return 10.0 * math.log10(signal / noise)

    # -- simulation -------------------------------------------------------

    def propagate(
        self,
        iq: IqBuffer | np.ndarray,
        tx_awv: Awv,
        rx_awv: Awv,
        *,
        tx_beam: int = 0,
        rx_beam: int = 0,
        frame_index: int = 0,
        include_noise: bool = True,
    ) -> IqBuffer:
        """Apply the scene's taps and calibrated noise to a transmit capture.

        The (tx_beam, rx_beam, frame_index) triple selects the noise draw, so
        repeating a call reproduces its output bit for bit regardless of what
        ran before it.
        """
        x = iq.samples if isinstance(iq, IqBuffer) else np.asarray(iq, dtype=complex)
        delays, gains = self.taps(tx_awv, rx_awv)
        n = x.size + int(delays.max(initial=0))
        y = np.zeros(n, dtype=complex)
        for d, g in zip(delays, gains):
            if g != 0:
                y[d : d + x.size] += g * x
        if include_noise and self.noise_power > 0:
            rng = np.random.default_rng(
                np.random.SeedSequence(
                    (self.seed, int(tx_beam), int(rx_beam), int(frame_index))
                )
            )
            sigma = math.sqrt(self.noise_power / 2.0)
            y += sigma * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
        return IqBuffer(y, self.config.sample_rate_hz)


def awgn(
    iq: IqBuffer | np.ndarray,
    snr_db: float,
    seed: int = 0,
    config: PpduConfig | None = None,
) -> IqBuffer:
    """Add white noise to a unit-power capture at a post-FFT active-tone SNR.

    For transmit waveforms produced by this package (unit mean sample power)
    the added time-domain variance is (idft_size / n_active) / SNR_linear.
    """
    cfg = config or PpduConfig()
    x = iq.samples if isinstance(iq, IqBuffer) else np.asarray(iq, dtype=complex)
    fs = iq.sample_rate_hz if isinstance(iq, IqBuffer) else cfg.sample_rate_hz
    var = (cfg.idft_size / cfg.n_active) / 10.0 ** (snr_db / 10.0)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x4E5E)))
    noise = math.sqrt(var / 2.0) * (
        rng.standard_normal(x.size) + 1j * rng.standard_normal(x.size)
    )
    return IqBuffer(x + noise, fs)


# -- scenario I/O ----------------------------------------------------------


def builtin_scenarios() -> tuple[str, ...]:
    """Names of the scenario files shipped with the package."""
    root = resources.files("sda_twin") / "scenarios"
    return tuple(
        sorted(p.name[: -len(".json")] for p in root.iterdir() if p.name.endswith(".json"))
    )


def load_scenario(name_or_path: str | Path) -> Scenario:
    """Load a scenario by built-in name or filesystem path."""
    path = Path(name_or_path)
    if path.suffix == ".json" and path.exists():
        text = path.read_text()
    else:
        candidate = resources.files("sda_twin") / "scenarios" / f"{name_or_path}.json"
        try:
            text = candidate.read_text()
        except (FileNotFoundError, OSError):
            raise ChannelError(
                f"unknown scenario {name_or_path!r}; "
                f"built-ins: {', '.join(builtin_scenarios())}"
            ) from None
    try:
        return Scenario.from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise ChannelError(f"scenario file is not valid JSON: {exc}") from exc


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario.to_dict(), indent=2) + "\n")
