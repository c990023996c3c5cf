"""Plug-and-play recovery of signals from 1-bit measurements with diffusion-style priors."""

__version__ = "0.1.0"
