"""Pulse-level simulator of an NV-center electron-nuclear spin register."""

__version__ = "0.1.0"
