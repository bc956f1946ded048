"""Perception and planning toolkit for robotic brick-wall construction."""

__version__ = "0.1.0"
