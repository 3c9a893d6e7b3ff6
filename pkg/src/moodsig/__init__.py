"""Signature features and elastic-net models for weekly mood self-reports."""

__version__ = "0.1.0"
