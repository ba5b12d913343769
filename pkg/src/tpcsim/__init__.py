"""Simulator and analysis toolkit for time-to-polarization-conversion
spin-photon entanglement: protocol evolution, synthetic detector records,
and correlation / fidelity-bound analysis."""

from . import analysis, cli, config, emitter, events, optics, protocol, qsim, rates

__all__ = [
    "analysis",
    "cli",
    "config",
    "emitter",
    "events",
    "optics",
    "protocol",
    "qsim",
    "rates",
]

__version__ = "0.1.0"
