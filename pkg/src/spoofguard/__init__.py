"""Spoofing detection for satellite downlinks from IQ constellation images."""

__version__ = "0.1.0"
