"""Optimal-control synthesis of CNOT pulses for two Rydberg-coupled atoms."""

__version__ = "0.1.0"
