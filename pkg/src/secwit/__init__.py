"""Checking security-preservation witnesses for program transformations."""

__version__ = "0.1.0"
