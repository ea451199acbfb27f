"""Decentralized cooperative localization and DOP-aware planning for robot swarms."""

__version__ = "0.1.0"
