"""Desk-scale asymmetric dense retrieval.

A small online query encoder is aligned to a larger frozen offline document
encoder in two stages (self-contrastive alignment, then joint fine-tuning),
with a diversity-aware data curation pipeline and a retrieval evaluation
suite around it.
"""

from ._kernels import available_backends, get_backend, set_backend

__version__ = "0.1.0"

__all__ = ["available_backends", "get_backend", "set_backend", "__version__"]
