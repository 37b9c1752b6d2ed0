"""Link-budget and throughput arithmetic for the array twin.

All budget math is done in the dB domain:

* free-space path loss      FSPL = 20*log10(4*pi*R/lambda)
* receiver sensitivity      P_sens = -174 dBm/Hz + 10*log10(BW) + NF + SNR_req
* closed-form range solve   FSPL_max = EIRP + G_r - L_a - P_sens - margin
                            R = lambda/(4*pi) * 10**(FSPL_max/20)

The shipped default parameter set (32 dBm EIRP, 14 dBi receive gain, 6 dB
noise figure, 1.2 GHz noise bandwidth, 20 dB link margin, 28 GHz carrier)
closes at 128 m.  The required-SNR default of -0.33 dB is the value
back-solved once from that target; it is a budget-closing constant, not a
demodulator threshold.

Throughput follows the frame numerology (128 data tones per OFDM symbol,
320-sample symbols at 1.536 GS/s, rate-1/2 codewords of 128 bits carrying an
8-bit integrity tag):

    R_data = N_sub * log2(M) / T_sym * (r_code - L_crc / L_codeword)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .beamforming import SPEED_OF_LIGHT

__all__ = [
    "LinkBudgetParams",
    "LinkBudgetResult",
    "RateParams",
    "fspl_db",
    "sensitivity_dbm",
    "solve_range",
    "data_rate_bps",
    "LinkBudgetError",
    "DEFAULT_REQUIRED_SNR_DB",
    "SUPPORTED_MODULATIONS",
]

THERMAL_NOISE_DBM_HZ = -174.0

#: Back-solved so the default budget (EIRP 32 dBm, G_r 14 dBi, NF 6 dB,
#: BW 1.2 GHz, margin 20 dB, 28 GHz) closes at 128 m.
DEFAULT_REQUIRED_SNR_DB = -0.33

SUPPORTED_MODULATIONS = (2, 4, 16, 64)


class LinkBudgetError(ValueError):
    """Raised for non-physical budget inputs."""


def fspl_db(range_m: float, wavelength_m: float) -> float:
    """Free-space path loss, dB.  Requires positive range and wavelength."""
    if range_m <= 0 or wavelength_m <= 0:
        raise LinkBudgetError("range and wavelength must be positive")
    return 20.0 * math.log10(4.0 * math.pi * range_m / wavelength_m)


def sensitivity_dbm(
    noise_figure_db: float,
    bandwidth_hz: float,
    required_snr_db: float = DEFAULT_REQUIRED_SNR_DB,
) -> float:
    """Receiver sensitivity: thermal floor + noise figure + required SNR."""
    if bandwidth_hz <= 0:
        raise LinkBudgetError("bandwidth must be positive")
    return THERMAL_NOISE_DBM_HZ + 10.0 * math.log10(bandwidth_hz) + noise_figure_db + required_snr_db


@dataclass(frozen=True)
class LinkBudgetParams:
    """Inputs to the closed-form range solve (all dB/dBm/dBi domain)."""

    eirp_dbm: float = 32.0
    rx_gain_dbi: float = 14.0
    noise_figure_db: float = 6.0
    bandwidth_hz: float = 1.2e9
    required_snr_db: float = DEFAULT_REQUIRED_SNR_DB
    link_margin_db: float = 20.0
    atmospheric_loss_db: float = 0.0
    carrier_hz: float = 28.0e9

    def __post_init__(self) -> None:
        if self.carrier_hz <= 0:
            raise LinkBudgetError("carrier must be positive")
        if self.bandwidth_hz <= 0:
            raise LinkBudgetError("bandwidth must be positive")

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz


@dataclass(frozen=True)
class LinkBudgetResult:
    """Solved budget: the supportable range and its intermediate terms."""

    range_m: float
    fspl_db: float
    sensitivity_dbm: float
    params: LinkBudgetParams

    def report(self) -> dict[str, float]:
        """Flat key/value view used by the CLI artifact writer."""
        return {
            "eirp_dbm": self.params.eirp_dbm,
            "rx_gain_dbi": self.params.rx_gain_dbi,
            "noise_figure_db": self.params.noise_figure_db,
            "bandwidth_hz": self.params.bandwidth_hz,
            "required_snr_db": self.params.required_snr_db,
            "link_margin_db": self.params.link_margin_db,
            "atmospheric_loss_db": self.params.atmospheric_loss_db,
            "carrier_hz": self.params.carrier_hz,
            "sensitivity_dbm": self.sensitivity_dbm,
            "fspl_db": self.fspl_db,
            "range_m": self.range_m,
        }


def solve_range(params: LinkBudgetParams | None = None) -> LinkBudgetResult:
    """Largest range at which the budget still closes with the given margin.

    EIRP + G_r - FSPL(R) - L_a = P_sens + margin, solved for R in closed form.

    Raises:
        LinkBudgetError: if the budget cannot close at any positive range
            (allowed path loss <= 0 dB).
    """
    p = params or LinkBudgetParams()
    sens = sensitivity_dbm(p.noise_figure_db, p.bandwidth_hz, p.required_snr_db)
    allowed_fspl = p.eirp_dbm + p.rx_gain_dbi - p.atmospheric_loss_db - sens - p.link_margin_db
    if allowed_fspl <= 0:
        raise LinkBudgetError(
            f"budget does not close: allowed path loss {allowed_fspl:.1f} dB"
        )
    r = p.wavelength_m / (4.0 * math.pi) * 10.0 ** (allowed_fspl / 20.0)
    return LinkBudgetResult(r, allowed_fspl, sens, p)


@dataclass(frozen=True)
class RateParams:
    """Frame numerology feeding the throughput identity."""

    n_data_tones: int = 128
    symbol_duration_s: float = 320.0 / 1.536e9  # (256 IDFT + 64 CP) samples
    code_rate: float = 0.5
    crc_bits: int = 8
    codeword_bits: int = 128

    def __post_init__(self) -> None:
        if self.symbol_duration_s <= 0:
            raise LinkBudgetError("symbol duration must be positive")


def data_rate_bps(modulation_order: int, params: RateParams | None = None) -> float:
    """Payload data rate for a square-QAM order, bits/second.

    R = N_sub * log2(M) / T_sym * (r_code - L_crc / L_codeword).  The bracket
    is the effective code rate once each codeword donates its integrity tag.
    """
    p = params or RateParams()
    if modulation_order not in SUPPORTED_MODULATIONS:
        raise LinkBudgetError(
            f"modulation order {modulation_order} not in {SUPPORTED_MODULATIONS}"
        )
    eff_rate = p.code_rate - p.crc_bits / p.codeword_bits
    return p.n_data_tones * math.log2(modulation_order) / p.symbol_duration_s * eff_rate
