"""Pseudo-spectral laboratory for generalised SQG with Kraichnan transport noise."""

__version__ = "0.1.0"
