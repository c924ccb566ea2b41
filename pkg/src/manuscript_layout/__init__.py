"""Instance-level layout parsing toolkit for historical manuscript images."""

__version__ = "0.1.0"
