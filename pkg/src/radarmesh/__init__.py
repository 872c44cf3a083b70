"""Radar-camera fusion for articulated body mesh recovery.

A self-contained pipeline: a differentiable array core, a synthetic paired
radar/camera world, modality encoders, a token-fusion model with training-time
modality masking, a trainer, and a benchmark matrix over scene corruptions.
"""

from .version import __version__

__all__ = ["__version__"]
