"""Bounds, estimators and link-level metrics for calibrating RIS-aided localization and communication."""

__version__ = "0.1.0"
