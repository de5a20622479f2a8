"""Semiclassical Dirac resonances, spectral shift function and parametrix tools."""

__version__ = "0.1.0"
