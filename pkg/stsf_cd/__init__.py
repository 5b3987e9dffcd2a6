"""Optical/SAR semantic change detection with prior-guided dual-path fusion."""

__version__ = "0.1.0"
