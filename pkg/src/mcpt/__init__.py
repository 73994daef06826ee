"""Discrepancy-guided optical-to-SAR prior transfer at desk scale."""

__version__ = "0.1.0"
