"""Attention-sink intervention lab on a toy joint-attention diffusion transformer."""

__version__ = "0.1.0"
