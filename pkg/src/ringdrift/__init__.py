"""Photonic tensor-core drift simulator with calibration, remapping and a remediation controller."""

__version__ = "0.1.0"
