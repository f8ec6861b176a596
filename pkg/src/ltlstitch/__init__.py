"""Offline temporal-logic planning over latent graphs stitched from
task-agnostic trajectory data."""

__version__ = "0.1.0"
