"""Numerical laboratory for replicator heteroclinic channels and saddle-center return maps."""

__version__ = "0.1.0"
