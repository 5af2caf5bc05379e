"""Acoustic drone detection toolkit."""

__version__ = "0.1.0"
