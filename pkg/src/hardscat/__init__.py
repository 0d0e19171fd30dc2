"""High-frequency acoustic multiple scattering off sound-hard convex obstacles."""

__version__ = "0.1.0"
