"""Adversarial spatio-temporal attention for EEG seizure forecasting."""

__version__ = "0.1.0"
