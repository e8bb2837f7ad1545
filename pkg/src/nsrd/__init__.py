"""Super-resolution of rendered sequences via radiance demodulation, at desk scale."""

__version__ = "0.1.0"
