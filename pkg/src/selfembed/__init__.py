"""Point-set self-embedding: encode a dense cloud into a sparse, visually
faithful cloud carrying small offsets, and restore the dense cloud from it."""

__version__ = "0.1.0"
