"""Permittivity inversion from sparse radar waveforms with physics-informed networks."""

__version__ = "0.1.0"
