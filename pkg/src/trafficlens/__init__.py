"""trafficlens: intersection analytics from probe trajectories and signal
logs, with interruption detection and parallel signal-timing sweeps."""

__version__ = "0.1.0"

from . import analytics, detect, geo, ingest, masks, orchestrate, signal, simkit, synth  # noqa: F401
