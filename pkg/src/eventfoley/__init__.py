"""Temporal-event-guided Foley sound synthesis with a waveform diffusion U-Net."""

__version__ = "0.1.0"
