"""Conditional GAN for synthetic rosette plant images."""
__version__ = "0.1.0"
