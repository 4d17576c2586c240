"""Point-cloud reconstruction of statues from single line-drawing sketches."""

__version__ = "0.1.0"
