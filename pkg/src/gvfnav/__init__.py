"""Guiding vector field navigation in unknown cluttered worlds."""
