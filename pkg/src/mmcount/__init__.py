"""Multimodal crowd counting with GAN-generated thermal images."""

__version__ = "0.1.0"
