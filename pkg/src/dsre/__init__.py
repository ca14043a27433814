"""Distantly-supervised relation extraction with a transformer sentence encoder."""

__version__ = "0.1.0"
