"""Numerical laboratory for parabolic BMO, chains of parabolic rectangles,
John-Nirenberg decay and supersolutions of the doubly nonlinear equation."""

__version__ = "0.1.0"
