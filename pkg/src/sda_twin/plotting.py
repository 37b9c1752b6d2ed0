"""Figure rendering for the command-line report path (headless Agg backend).

Every helper writes a PNG next to the delimited artifact it illustrates and
returns the path.  Figures are deliberately plain: one axes, labeled units,
no interactivity — they exist so a sweep or calibration run leaves something
a human can glance at without loading the CSV.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

__all__ = [
    "save_pattern_figure",
    "save_codebook_figure",
    "save_sweep_figure",
    "save_constellation_figure",
    "save_gain_table_figure",
    "save_range_figure",
]

_DPI = 150


def save_pattern_figure(pattern, path: str | Path, title: str = "Array pattern") -> Path:
    """Gain-versus-angle line plot of one computed pattern."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(pattern.angles_deg, pattern.gains_db, lw=1.2)
    ax.set_xlabel("azimuth (deg)")
    ax.set_ylabel("gain (dB)")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    top = float(np.max(pattern.gains_db))
    ax.set_ylim(top - 50.0, top + 3.0)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def save_codebook_figure(codebook, patterns, path: str | Path) -> Path:
    """All codebook beams overlaid (normalized), one line per beam."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for idx, pattern in enumerate(patterns, start=1):
        ax.plot(pattern.angles_deg, pattern.gains_db, lw=0.9, alpha=0.8)
    ax.set_xlabel("azimuth (deg)")
    ax.set_ylabel("normalized gain (dB)")
    ax.set_title(f"{len(patterns)}-beam codebook")
    ax.set_ylim(-40.0, 2.0)
    ax.set_xlim(-90.0, 90.0)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def save_sweep_figure(matrix, path: str | Path) -> Path:
    """Heatmap of the beam-pair SNR grid (transmit beams on the y axis)."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6.4, 5.4))
    im = ax.imshow(
        matrix.values,
        origin="lower",
        aspect="equal",
        extent=(0.5, matrix.n_rx + 0.5, 0.5, matrix.n_tx + 0.5),
        cmap="viridis",
    )
    fig.colorbar(im, ax=ax, label="SNR (dB)")
    ax.set_xlabel("receive beam index")
    ax.set_ylabel("transmit beam index")
    ax.set_title(f"beam sweep: {matrix.scenario} (seed {matrix.seed})")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def save_constellation_figure(symbols, order: int, path: str | Path) -> Path:
    """Scatter of equalized payload symbols over the ideal constellation."""
    from .modem.mapping import constellation

    path = Path(path)
    pts = np.asarray(symbols, dtype=complex)
    ideal = constellation(order)
    fig, ax = plt.subplots(figsize=(5.2, 5.2))
    ax.scatter(pts.real, pts.imag, s=3, alpha=0.4, label="received")
    ax.scatter(ideal.real, ideal.imag, s=40, marker="x", color="red", label="ideal")
    ax.set_xlabel("I")
    ax.set_ylabel("Q")
    ax.set_title(f"{order}-point constellation")
    ax.set_aspect("equal")
    ax.grid(True, alpha=0.3)
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def save_gain_table_figure(responses, path: str | Path) -> Path:
    """Per-element extracted gain versus commanded phase setting."""
    path = Path(path)
    by_element: dict[int, list] = {}
    for r in responses:
        by_element.setdefault(r.element_id, []).append(
            (r.commanded_phase_deg, r.extracted_gain_db)
        )
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for element, rows in sorted(by_element.items()):
        rows.sort()
        phases = [p for p, _ in rows]
        gains = [g for _, g in rows]
        ax.plot(phases, gains, lw=0.9, alpha=0.85, label=f"el{element:02d}")
    ax.set_xlabel("commanded phase (deg)")
    ax.set_ylabel("extracted gain (dB)")
    ax.set_title("per-element gain vs phase setting")
    ax.grid(True, alpha=0.3)
    if len(by_element) <= 16:
        ax.legend(fontsize=6, ncol=4, loc="lower center")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def save_range_figure(params, path: str | Path, max_range_m: float = 400.0) -> Path:
    """Link margin versus distance, with the closing range marked."""
    from .linkbudget import LinkBudgetParams, fspl_db, sensitivity_dbm, solve_range

    assert isinstance(params, LinkBudgetParams)
    path = Path(path)
    ranges = np.linspace(1.0, max_range_m, 800)
    fspl = np.array([fspl_db(r, params.wavelength_m) for r in ranges])
    rx_power = params.eirp_dbm + params.rx_gain_dbi - fspl - params.atmospheric_loss_db
    sens = sensitivity_dbm(
        params.noise_figure_db, params.bandwidth_hz, params.required_snr_db
    )
    margin = rx_power - sens - params.link_margin_db
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(ranges, margin, lw=1.2)
    ax.axhline(0.0, color="red", lw=0.8, ls="--")
    solved = solve_range(params)
    ax.axvline(solved.range_m, color="gray", lw=0.8, ls=":")
    ax.annotate(
        f"{solved.range_m:.1f} m",
        (solved.range_m, 0.0),
        textcoords="offset points",
        xytext=(6, 8),
        fontsize=9,
    )
    ax.set_xlabel("range (m)")
    ax.set_ylabel("excess margin (dB)")
    ax.set_title("link closure vs distance")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path
