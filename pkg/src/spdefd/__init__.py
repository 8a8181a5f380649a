"""Localised finite-difference solver for linear degenerate parabolic SPDEs."""
__version__ = "0.1.0"
