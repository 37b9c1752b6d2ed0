"""Software digital twin of a 16-element millimeter-wave beamforming link.

The package models the full chain of a two-node 24-29.5 GHz testbed:

* :mod:`sda_twin.beamforming` — array geometry, I/Q DAC quantization,
  steering vectors, pattern math, and the 21-beam codebook.
* :mod:`sda_twin.linkbudget` — dB-domain budget/range solving and the
  throughput identities of the frame numerology.
* :mod:`sda_twin.modem` — OFDM framing, polar coding, Gray QAM mapping,
  the binary I/Q interchange format, and the complete receiver.
* :mod:`sda_twin.channel` — planar geometric propagation with calibrated
  noise and deterministic seeding.
* :mod:`sda_twin.sweep` — exhaustive beam-pair acquisition sweeps.
* :mod:`sda_twin.comet` — code-multiplexed per-element calibration.
* :mod:`sda_twin.control` — the TCP control plane binding nodes + channel.
* :mod:`sda_twin.cli` — the ``sda-twin`` command-line entry point.
"""

__version__ = "0.1.0"

__all__ = ["__version__"]
