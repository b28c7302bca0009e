"""Desk-scale video-language pre-training with transcript sorting.

Subpackages: ``numcore`` (tensors, autodiff, AdamW), ``videnc`` / ``textenc``
(encoders), ``sampling``, ``objectives``, ``synthdata``, ``evalkit`` and
``cli``.
"""

__version__ = "0.1.0"
