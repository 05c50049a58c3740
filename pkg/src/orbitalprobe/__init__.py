"""Stabilizer measurement with mobile probe spins under donor misplacement."""

from . import decoder, geometry, montecarlo, noise, physics, planar, superop  # noqa: F401

__version__ = "0.1.0"
