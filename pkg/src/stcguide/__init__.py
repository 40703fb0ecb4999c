"""Powered-descent guidance with continuous-time state-triggered constraints."""

__version__ = "0.1.0"
