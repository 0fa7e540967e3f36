"""Deterministic edge/cloud IoT simulation framework."""
__version__ = "0.1.0"
